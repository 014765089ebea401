#include <doctest.h>

#include "rom/ssm.hpp"
#include "support/test_util.hpp"

using namespace rom;
using test_util::check_gradients;
using test_util::max_rel_err;
using test_util::random_tensor;

namespace {

// Direct unrolled recurrence, independent of the scan op.
Tensor<double> scan_oracle(const Tensor<double>& u, const Tensor<double>& abar,
                           const Tensor<double>& bbar, const Tensor<double>& c,
                           const Tensor<double>* d_skip) {
  const int64_t L = u.dim(0), de = u.dim(1), ds = c.dim(1);
  std::vector<double> h(static_cast<size_t>(de * ds), 0.0);
  Tensor<double> y = Tensor<double>::zeros({L, de});
  for (int64_t t = 0; t < L; ++t)
    for (int64_t d = 0; d < de; ++d) {
      double acc = 0;
      for (int64_t s = 0; s < ds; ++s) {
        const size_t p = static_cast<size_t>(d * ds + s);
        h[p] = abar.at({t, d, s}) * h[p] + bbar.at({t, d, s}) * u.at({t, d});
        acc += c.at({t, s}) * h[p];
      }
      if (d_skip) acc += d_skip->data()[d] * u.at({t, d});
      y.data()[t * de + d] = acc;
    }
  return y;
}

template <class T>
struct ScanInputs {
  Tensor<T> u, abar, bbar, c;
};

template <class T>
ScanInputs<T> random_scan_inputs(int64_t L, int64_t de, int64_t ds, Rng& rng) {
  ScanInputs<T> in;
  in.u = random_tensor<T>({L, de}, rng);
  in.abar = random_tensor<T>({L, de, ds}, rng, 0.05, 0.98);
  in.bbar = random_tensor<T>({L, de, ds}, rng);
  in.c = random_tensor<T>({L, ds}, rng);
  return in;
}

}  // namespace

TEST_CASE("MambaDims defaults follow the stated rules") {
  MambaDims d = MambaDims::defaults(768);
  CHECK(d.d_expand == 1536);
  CHECK(d.dt_rank == 48);
  CHECK(d.d_state == 16);
  CHECK(d.conv_kernel == 4);
  CHECK(MambaDims::defaults(8).dt_rank == 1);  // max(1, d_model/16)
}

TEST_CASE("ssm_inputs at zero input yields softplus(0) and zero B, C") {
  const MambaDims dims = MambaDims::defaults(8);  // d_e=16, d_r=1, d_s=16
  Rng rng(3);
  SsmInnerWeights<double> w = init_ssm_inner<double>(dims, rng);
  w.dt_bias = Tensor<double>::zeros({dims.d_expand});
  auto u = Tensor<double>::zeros({5, dims.d_expand});
  auto [delta, b, c] = ssm_inputs(u, w, dims);
  for (int64_t i = 0; i < delta.size(); ++i)
    CHECK(delta.data()[i] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  for (int64_t i = 0; i < b.size(); ++i) CHECK(b.data()[i] == 0.0);
  for (int64_t i = 0; i < c.size(); ++i) CHECK(c.data()[i] == 0.0);
}

TEST_CASE("ssm_inputs shapes and positivity") {
  MambaDims dims;
  dims.d_model = 4;
  dims.d_expand = 4;
  dims.d_state = 3;
  dims.dt_rank = 2;
  dims.conv_kernel = 4;
  Rng rng(4);
  SsmInnerWeights<double> w = init_ssm_inner<double>(dims, rng);
  // mismatched w_x width is given by dims; rebuild for these dims
  auto u = random_tensor<double>({5, 4}, rng, -3, 3);
  auto [delta, b, c] = ssm_inputs(u, w, dims);
  CHECK(delta.shape() == Shape{5, 4});
  CHECK(b.shape() == Shape{5, 3});
  CHECK(c.shape() == Shape{5, 3});
  for (int64_t i = 0; i < delta.size(); ++i) CHECK(delta.data()[i] > 0.0);
}

TEST_CASE("discretize_zoh scalar hand value and limits") {
  auto a = Tensor<double>::from_vector({1, 1}, {-1.0});
  auto b = Tensor<double>::from_vector({1, 1}, {1.0});
  auto delta = Tensor<double>::from_vector({1, 1}, {0.1});
  auto [abar, bbar] = discretize_zoh(a, b, delta);
  CHECK(abar.item() == doctest::Approx(0.90484).epsilon(1e-5));
  CHECK(bbar.item() == doctest::Approx(0.09516).epsilon(1e-4));

  // A -> 0: series fallback gives bbar -> delta * B
  auto tiny_a = Tensor<double>::from_vector({1, 1}, {-1e-7});
  auto [abar2, bbar2] = discretize_zoh(tiny_a, b, delta);
  CHECK(bbar2.item() == doctest::Approx(0.1).epsilon(1e-7));
  CHECK(abar2.item() == doctest::Approx(1.0).epsilon(1e-7));

  // delta -> 0: abar -> 1, bbar -> 0
  auto zero_d = Tensor<double>::from_vector({1, 1}, {0.0});
  auto [abar3, bbar3] = discretize_zoh(a, b, zero_d);
  CHECK(abar3.item() == 1.0);
  CHECK(bbar3.item() == 0.0);
}

TEST_CASE("series fallback agrees with the exact quotient at the threshold") {
  // just above and below |delta*A| = 1e-4 the two branches must agree closely
  for (double x : {9e-5, 1.1e-4}) {
    auto a = Tensor<double>::from_vector({1, 1}, {-1.0});
    auto b = Tensor<double>::from_vector({1, 1}, {1.0});
    auto delta = Tensor<double>::from_vector({1, 1}, {x});
    auto [abar, bbar] = discretize_zoh(a, b, delta);
    const double exact = (std::exp(-x) - 1.0) / -1.0;
    CHECK(bbar.item() == doctest::Approx(exact).epsilon(1e-9));
  }
}

TEST_CASE("contractive recurrence: |abar| < 1 for any positive delta") {
  Rng rng(8);
  auto a_log = init_a_log<double>(4, 5);
  Tensor<double> a = neg(exp(a_log));
  auto delta = random_tensor<double>({6, 4}, rng, 1e-4, 10.0);
  auto b = random_tensor<double>({6, 5}, rng);
  auto [abar, bbar] = discretize_zoh(a, b, delta);
  for (int64_t i = 0; i < abar.size(); ++i) {
    CHECK(abar.data()[i] > 0.0);
    CHECK(abar.data()[i] < 1.0);
  }
}

TEST_CASE("scan telescopes to a running sum") {
  auto u = Tensor<double>::from_vector({3, 1}, {1, 2, 3});
  auto ones3 = Tensor<double>::full({3, 1, 1}, 1.0);
  auto c = Tensor<double>::full({3, 1}, 1.0);
  auto y = selective_scan_sequential(u, ones3, ones3, c);
  CHECK(y.data()[0] == 1.0);
  CHECK(y.data()[1] == 3.0);
  CHECK(y.data()[2] == 6.0);
}

TEST_CASE("scan with abar = 0 is memoryless") {
  Rng rng(12);
  const int64_t L = 5, de = 2, ds = 3;
  auto in = random_scan_inputs<double>(L, de, ds, rng);
  auto zero_a = Tensor<double>::zeros({L, de, ds});
  auto y = selective_scan_sequential(in.u, zero_a, in.bbar, in.c);
  for (int64_t t = 0; t < L; ++t)
    for (int64_t d = 0; d < de; ++d) {
      double expect = 0;
      for (int64_t s = 0; s < ds; ++s) expect += in.c.at({t, s}) * in.bbar.at({t, d, s}) * in.u.at({t, d});
      CHECK(y.at({t, d}) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("scan matches the unrolled oracle") {
  Rng rng(13);
  auto in = random_scan_inputs<double>(16, 2, 4, rng);
  auto skip = random_tensor<double>({2}, rng);
  auto y = selective_scan_sequential(in.u, in.abar, in.bbar, in.c, &skip);
  auto ref = scan_oracle(in.u, in.abar, in.bbar, in.c, &skip);
  CHECK(max_rel_err(y, ref) < 1e-6);
}

TEST_CASE("chunked scan equals sequential for every chunk size") {
  Rng rng(14);
  const int64_t L = 64;
  auto fin = random_scan_inputs<float>(L, 3, 4, rng);
  auto fref = selective_scan_sequential(fin.u, fin.abar, fin.bbar, fin.c);
  Rng rng2(14);
  auto din = random_scan_inputs<double>(L, 3, 4, rng2);
  auto dref = selective_scan_sequential(din.u, din.abar, din.bbar, din.c);
  for (int64_t chunk = 1; chunk <= L; ++chunk) {
    auto fy = selective_scan_chunked(fin.u, fin.abar, fin.bbar, fin.c, nullptr, chunk);
    CHECK(max_rel_err(fref, fy) < 1e-5);
    auto dy = selective_scan_chunked(din.u, din.abar, din.bbar, din.c, nullptr, chunk);
    CHECK(max_rel_err(dref, dy) < 1e-10);
  }
  // chunk == L and chunk == 1 collapse to a single pass
  auto full = selective_scan_chunked(din.u, din.abar, din.bbar, din.c, nullptr, L);
  CHECK(max_rel_err(dref, full) == 0.0);
}

TEST_CASE("scan causality: a future perturbation cannot reach the past") {
  Rng rng(15);
  auto in = random_scan_inputs<double>(8, 2, 2, rng);
  auto y0 = selective_scan_sequential(in.u, in.abar, in.bbar, in.c);
  auto u2 = in.u.clone();
  u2.data()[6 * 2 + 1] += 5.0;
  auto y1 = selective_scan_sequential(u2, in.abar, in.bbar, in.c);
  for (int64_t t = 0; t < 6; ++t)
    for (int64_t d = 0; d < 2; ++d) CHECK(y0.at({t, d}) == y1.at({t, d}));
}

TEST_CASE("scan and discretization gradients pass finite differences") {
  Rng rng(16);
  const int64_t L = 6, de = 3, ds = 2;
  auto u = random_tensor<double>({L, de}, rng);
  auto a_log = random_tensor<double>({de, ds}, rng, -1.0, 0.5);
  auto bmat = random_tensor<double>({L, ds}, rng);
  auto delta_raw = random_tensor<double>({L, de}, rng, 0.01, 0.6);
  auto c = random_tensor<double>({L, ds}, rng);
  auto skip = random_tensor<double>({de}, rng);

  const double worst = check_gradients({u, a_log, bmat, delta_raw, c, skip}, [&]() {
    auto a = neg(exp(a_log));
    auto delta = softplus(delta_raw);
    auto [abar, bbar] = discretize_zoh(a, bmat, delta);
    return mean(selective_scan_sequential(u, abar, bbar, c, &skip));
  });
  CHECK(worst < 1e-5);

  const double worst_chunked = check_gradients({u, a_log, bmat, delta_raw, c}, [&]() {
    auto a = neg(exp(a_log));
    auto delta = softplus(delta_raw);
    auto [abar, bbar] = discretize_zoh(a, bmat, delta);
    return mean(selective_scan_chunked(u, abar, bbar, c, nullptr, 3));
  });
  CHECK(worst_chunked < 1e-5);
}
