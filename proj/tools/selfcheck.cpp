#include "selfcheck.hpp"

#include <cstdio>
#include <functional>

#include "rom/model.hpp"
#include "rom/optim.hpp"
#include "rom/rom_layer.hpp"

namespace {

using namespace rom;

int failures = 0;

void report(const char* name, bool ok, const std::string& detail = "") {
  std::printf("[%s] %s%s%s\n", ok ? "ok" : "FAIL", name, detail.empty() ? "" : ": ",
              detail.c_str());
  if (!ok) ++failures;
}

template <class T>
double rel_err(T a, T b) {
  const double aa = std::abs(static_cast<double>(a));
  const double bb = std::abs(static_cast<double>(b));
  return std::abs(static_cast<double>(a) - static_cast<double>(b)) / std::max({aa, bb, 1e-8});
}

template <class T>
double max_rel_err(const Tensor<T>& a, const Tensor<T>& b) {
  double worst = 0;
  for (int64_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a.data()[i], b.data()[i]));
  return worst;
}

void check_softmax() {
  auto x = Tensor<double>::from_vector({4}, {2, 1, 0, -1});
  auto y = softmax(x);
  const double expect[4] = {0.6439142598879722, 0.23688281808991013, 0.08714431874203257,
                            0.032058603280084995};
  bool ok = true;
  double sum = 0;
  for (int i = 0; i < 4; ++i) {
    ok = ok && rel_err(y.data()[i], expect[i]) < 1e-12;
    sum += y.data()[i];
  }
  ok = ok && std::abs(sum - 1.0) < 1e-6;
  auto big = softmax(Tensor<double>::from_vector({2}, {1000, 0}));
  ok = ok && big.data()[0] == 1.0 && big.data()[1] == 0.0;
  report("softmax values, normalization, overflow", ok);
}

void check_zoh() {
  auto a = Tensor<double>::from_vector({1, 1}, {-1.0});
  auto b = Tensor<double>::from_vector({1, 1}, {1.0});
  auto delta = Tensor<double>::from_vector({1, 1}, {0.1});
  auto [abar, bbar] = discretize_zoh(a, b, delta);
  const bool ok = rel_err(abar.data()[0], std::exp(-0.1)) < 1e-12 &&
                  rel_err(bbar.data()[0], 1.0 - std::exp(-0.1)) < 1e-12;
  report("zero-order hold scalar case", ok);
}

void check_scan_equivalence() {
  Rng rng(11);
  const int64_t L = 32, de = 3, ds = 4;
  auto mk = [&](Shape s, double lo, double hi) {
    std::vector<double> v(static_cast<size_t>(shape_numel(s)));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor<double>::from_vector(s, std::move(v));
  };
  auto u = mk({L, de}, -1, 1);
  auto abar = mk({L, de, ds}, 0.1, 0.99);
  auto bbar = mk({L, de, ds}, -1, 1);
  auto c = mk({L, ds}, -1, 1);
  auto ref = selective_scan_sequential(u, abar, bbar, c);
  double worst = 0;
  for (int64_t chunk = 1; chunk <= L; ++chunk)
    worst = std::max(worst, max_rel_err(ref, selective_scan_chunked(u, abar, bbar, c, nullptr, chunk)));
  report("chunked scan matches sequential", worst < 1e-10,
         "max rel err " + std::to_string(worst));
}

void check_gradient_spot() {
  auto x = Tensor<double>::from_vector({3}, {0.3, -0.8, 1.2}).set_requires_grad(true);
  auto forward = [&]() {
    return sum(mul(silu(x), softplus(x)));
  };
  Tensor<double> loss;
  {
    Tape<double> tape;
    loss = forward();
    tape.backward(loss);
  }
  std::vector<double> analytic = x.grad();
  bool ok = true;
  const double h = 1e-6;
  for (int i = 0; i < 3; ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = forward().item();
    x.data()[i] = keep - h;
    const double dn = forward().item();
    x.data()[i] = keep;
    const double numeric = (up - dn) / (2 * h);
    ok = ok && rel_err(analytic[static_cast<size_t>(i)], numeric) < 1e-5;
  }
  report("finite-difference gradient spot check", ok);
}

void check_dense_reduction() {
  const MambaDims dims = MambaDims::defaults(16);
  auto rw = init_rom_weights<float>(dims, 1, ExpertizedSet::of({Proj::conv, Proj::gate, Proj::out}),
                                    RoutingMode::shared, 5);
  MambaWeights<float> mw;
  mw.dims = dims;
  mw.w_in = rw.w_in[0];
  mw.w_g = rw.w_g[0];
  mw.w_out = rw.w_out[0];
  mw.conv_w = rw.conv_w;
  mw.conv_b = rw.conv_b;
  mw.inner.w_x = rw.w_x[0];
  mw.inner.w_dt = rw.w_dt[0];
  mw.inner.dt_bias = rw.dt_bias[0];
  mw.inner.a_log = rw.a_log;
  mw.inner.d_skip = rw.d_skip;
  RouterConfig rc;
  rc.num_experts = 1;
  rc.top_k = 1;
  rc.renormalize = true;
  Rng rng(6);
  std::vector<float> xv(8 * 16);
  for (auto& v : xv) v = static_cast<float>(rng.uniform(-1, 1));
  auto x = Tensor<float>::from_vector({8, 16}, std::move(xv));
  auto dense = mamba_forward(x, mw);
  auto routed = rom_forward(x, rw, rc, RoutingMode::shared, false, 3);
  const double worst = max_rel_err(dense, routed.out);
  report("N=1 routed layer reduces to dense", worst < 1e-6, "max rel err " + std::to_string(worst));
}

void check_sparse_dense() {
  const MambaDims dims = MambaDims::defaults(16);
  RouterConfig rc;
  rc.num_experts = 4;
  rc.top_k = 2;
  double worst = 0;
  for (RoutingMode mode : {RoutingMode::shared, RoutingMode::independent}) {
    auto rw = init_rom_weights<float>(dims, 4, ExpertizedSet::of({Proj::conv, Proj::gate, Proj::out}),
                                      mode, 9);
    Rng rng(10);
    std::vector<float> xv(8 * 16);
    for (auto& v : xv) v = static_cast<float>(rng.uniform(-1, 1));
    auto x = Tensor<float>::from_vector({8, 16}, std::move(xv));
    auto sparse = rom_forward(x, rw, rc, mode, false, 3);
    auto dense = rom_forward_dense_reference(x, rw, rc, mode, false, 3);
    worst = std::max(worst, max_rel_err(sparse.out, dense));
  }
  report("sparse dispatch matches dense-masked oracle", worst < 1e-5,
         "max rel err " + std::to_string(worst));
}

void check_balance_formula() {
  RouterConfig rc;
  rc.num_experts = 4;
  rc.top_k = 1;
  rc.balance_alpha = 1e-3;
  auto probs = Tensor<double>::full({8, 4}, 0.25);
  std::vector<int32_t> idx = {0, 1, 2, 3, 0, 1, 2, 3};
  auto uniform = balance_loss<double>({probs, probs}, {&idx, &idx}, rc);
  bool ok = uniform.item() == 1e-3 * 2.0;
  std::vector<double> hot(8 * 4, 0.0);
  for (int t = 0; t < 8; ++t) hot[static_cast<size_t>(t * 4)] = 1.0;
  auto hot_probs = Tensor<double>::from_vector({8, 4}, std::move(hot));
  std::vector<int32_t> hot_idx(8, 0);
  auto degenerate = balance_loss<double>({hot_probs}, {&hot_idx}, rc);
  ok = ok && degenerate.item() == 1e-3 * 4.0;
  report("balance loss uniform/degenerate hand values", ok);
}

void check_causality() {
  const MambaDims dims = MambaDims::defaults(8);
  auto mw = init_mamba_weights<float>(dims, 17);
  Rng rng(18);
  std::vector<float> xv(6 * 8);
  for (auto& v : xv) v = static_cast<float>(rng.uniform(-1, 1));
  auto x = Tensor<float>::from_vector({6, 8}, xv);
  auto y0 = mamba_forward(x, mw);
  xv[5 * 8 + 3] += 10.0f;
  auto y1 = mamba_forward(Tensor<float>::from_vector({6, 8}, xv), mw);
  bool ok = true;
  for (int64_t i = 0; i < 5 * 8; ++i) ok = ok && y0.data()[i] == y1.data()[i];
  report("mamba layer is causal", ok);
}

void check_adamw() {
  ParamRegistry<double> params;
  auto theta = Tensor<double>::from_vector({1}, {1.0});
  params.add("theta", theta, true);
  params.items()[0].tensor.grad()[0] = 1.0;
  AdamState<double> st;
  st.init(params);
  adamw_step(params, st, 1e-3, 0.9, 0.95, 1e-8, 0.1);
  const double expect = 1.0 - 1e-4 - 1e-3 * (1.0 / (1.0 + 1e-8));
  report("adamw single-step hand value", rel_err(params.items()[0].tensor.data()[0], expect) < 1e-12);
}

void check_lr_schedule() {
  TrainConfig cfg;
  cfg.total_tokens = 2000;  // warmup + total even, so the midpoint lands exactly
  cfg.batch_tokens = 10;
  cfg.seq_len = 5;
  cfg.peak_lr = 4e-4;
  cfg.warmup_ratio = 0.01;
  const int64_t warmup = cfg.warmup_steps();
  const int64_t total = cfg.total_steps();
  bool ok = lr_at(warmup, cfg) == cfg.peak_lr && lr_at(total, cfg) < 1e-18;
  const double mid = lr_at((warmup + total) / 2, cfg);
  ok = ok && std::abs(mid - cfg.peak_lr / 2) < 1e-9;
  report("cosine schedule endpoints", ok);
}

}  // namespace

int run_selfcheck() {
  failures = 0;
  check_softmax();
  check_zoh();
  check_scan_equivalence();
  check_gradient_spot();
  check_dense_reduction();
  check_sparse_dense();
  check_balance_formula();
  check_causality();
  check_adamw();
  check_lr_schedule();
  std::printf("%s\n", failures == 0 ? "selfcheck: all checks passed" : "selfcheck: FAILURES");
  return failures == 0 ? 0 : 2;
}
