#include <doctest.h>

#include "rom/tensor.hpp"
#include "support/test_util.hpp"

using namespace rom;
using test_util::check_gradients;
using test_util::random_tensor;
using test_util::rel_err;

namespace {

// Triple-loop reference product, independent of the gemm kernels.
Tensor<double> matmul_oracle(const Tensor<double>& a, const Tensor<double>& b) {
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<double> out = Tensor<double>::zeros({m, n});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0;
      for (int64_t p = 0; p < k; ++p) acc += a.at({i, p}) * b.at({p, j});
      out.data()[i * n + j] = acc;
    }
  return out;
}

}  // namespace

TEST_CASE("matmul identity and zero cases") {
  auto eye = Tensor<double>::from_vector({2, 2}, {1, 0, 0, 1});
  auto b = Tensor<double>::from_vector({2, 2}, {3, 4, 5, 6});
  auto y = matmul(eye, b);
  for (int64_t i = 0; i < 4; ++i) CHECK(y.data()[i] == b.data()[i]);

  auto a = Tensor<double>::from_vector({1, 2}, {1, 2});
  auto zero = Tensor<double>::zeros({2, 1});
  CHECK(matmul(a, zero).item() == 0.0);
}

TEST_CASE("matmul matches the triple-loop oracle exactly") {
  Rng rng(42);
  auto a = random_tensor<double>({3, 4}, rng);
  auto b = random_tensor<double>({4, 2}, rng);
  auto y = matmul(a, b);
  auto ref = matmul_oracle(a, b);
  for (int64_t i = 0; i < y.size(); ++i) CHECK(y.data()[i] == ref.data()[i]);
}

TEST_CASE("matmul reports both shapes on mismatch") {
  auto a = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::zeros({4, 2});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), ShapeError);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[4,2]"), ShapeError);
}

TEST_CASE("batched matmul applies the matrix per batch") {
  Rng rng(7);
  auto a = random_tensor<double>({2, 3, 4}, rng);
  auto b = random_tensor<double>({4, 5}, rng);
  auto y = matmul(a, b);
  REQUIRE(y.shape() == Shape{2, 3, 5});
  for (int64_t g = 0; g < 2; ++g) {
    auto slice = Tensor<double>::from_vector(
        {3, 4}, std::vector<double>(a.data() + g * 12, a.data() + (g + 1) * 12));
    auto ref = matmul_oracle(slice, b);
    for (int64_t i = 0; i < 15; ++i) CHECK(y.data()[g * 15 + i] == ref.data()[i]);
  }
}

TEST_CASE("softmax hand values") {
  auto sym = softmax(Tensor<double>::from_vector({2}, {0, 0}));
  CHECK(sym.data()[0] == doctest::Approx(0.5));
  CHECK(sym.data()[1] == doctest::Approx(0.5));

  auto big = softmax(Tensor<double>::from_vector({2}, {1000, 0}));
  CHECK(big.data()[0] == 1.0);
  CHECK(big.data()[1] == 0.0);

  auto y = softmax(Tensor<double>::from_vector({4}, {2, 1, 0, -1}));
  CHECK(y.data()[0] == doctest::Approx(0.6439).epsilon(1e-4));
  CHECK(y.data()[1] == doctest::Approx(0.2369).epsilon(1e-4));
  CHECK(y.data()[2] == doctest::Approx(0.0871).epsilon(1e-3));
  CHECK(y.data()[3] == doctest::Approx(0.0321).epsilon(1e-3));
}

TEST_CASE("softmax rows sum to one and are permutation equivariant") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t n = 2 + static_cast<int64_t>(rng.next_u64() % 7);
    auto x = random_tensor<double>({4, n}, rng, -5, 5);
    auto y = softmax(x, -1);
    for (int64_t r = 0; r < 4; ++r) {
      double sum = 0;
      for (int64_t j = 0; j < n; ++j) sum += y.at({r, j});
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
    // permute columns
    std::vector<int64_t> perm(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j) perm[static_cast<size_t>(j)] = j;
    for (int64_t j = n - 1; j > 0; --j)
      std::swap(perm[static_cast<size_t>(j)],
                perm[static_cast<size_t>(rng.next_u64() % static_cast<uint64_t>(j + 1))]);
    Tensor<double> xp = Tensor<double>::zeros({4, n});
    for (int64_t r = 0; r < 4; ++r)
      for (int64_t j = 0; j < n; ++j) xp.data()[r * n + j] = x.at({r, perm[static_cast<size_t>(j)]});
    // summation order differs after permuting, so equality is to rounding
    auto yp = softmax(xp, -1);
    for (int64_t r = 0; r < 4; ++r)
      for (int64_t j = 0; j < n; ++j)
        CHECK(yp.at({r, j}) ==
              doctest::Approx(y.at({r, perm[static_cast<size_t>(j)]})).epsilon(1e-12));
  }
}

TEST_CASE("elementwise op hand values") {
  CHECK(silu(Tensor<double>::scalar(0.0)).item() == 0.0);
  CHECK(softplus(Tensor<double>::scalar(0.0)).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(softplus(Tensor<double>::scalar(30.0)).item() == 30.0);  // overflow-safe branch

  auto ones = Tensor<double>::full({5}, 1.0);
  auto w = Tensor<double>::full({5}, 1.0);
  auto y = rmsnorm(ones, w, 0.0);
  for (int64_t i = 0; i < 5; ++i) CHECK(y.data()[i] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("broadcasting follows trailing-suffix rules only") {
  auto a = Tensor<double>::zeros({3, 4});
  auto row = Tensor<double>::full({4}, 2.0);
  auto y = add(a, row);
  for (int64_t i = 0; i < 12; ++i) CHECK(y.data()[i] == 2.0);
  auto one = Tensor<double>::scalar(7.0);
  auto z = add(a, one);
  for (int64_t i = 0; i < 12; ++i) CHECK(z.data()[i] == 7.0);

  auto bad = Tensor<double>::zeros({3});
  CHECK_THROWS_AS(add(a, bad), ShapeError);
  CHECK_THROWS_AS(add(a, Tensor<double>::zeros({3, 1})), ShapeError);
}

TEST_CASE("causal depthwise conv hand values") {
  auto h = Tensor<double>::from_vector({3, 1}, {1, 2, 3});
  auto ident = depthwise_conv1d_causal(h, Tensor<double>::full({1, 1}, 1.0),
                                       Tensor<double>::zeros({1}));
  for (int64_t i = 0; i < 3; ++i) CHECK(ident.data()[i] == h.data()[i]);

  auto w2 = Tensor<double>::full({2, 1}, 1.0);
  auto y = depthwise_conv1d_causal(h, w2, Tensor<double>::zeros({1}));
  CHECK(y.data()[0] == 1.0);
  CHECK(y.data()[1] == 3.0);
  CHECK(y.data()[2] == 5.0);
}

TEST_CASE("causal conv output is bitwise invariant to future perturbation") {
  Rng rng(9);
  auto h = random_tensor<double>({6, 3}, rng);
  auto w = random_tensor<double>({4, 3}, rng);
  auto b = random_tensor<double>({3}, rng);
  auto y0 = depthwise_conv1d_causal(h, w, b);
  auto h2 = h.clone();
  h2.data()[5 * 3 + 1] += 123.0;
  auto y1 = depthwise_conv1d_causal(h2, w, b);
  for (int64_t t = 0; t < 5; ++t)
    for (int64_t d = 0; d < 3; ++d) CHECK(y0.at({t, d}) == y1.at({t, d}));
  // kernel longer than the sequence is allowed
  auto longk = depthwise_conv1d_causal(Tensor<double>::full({2, 1}, 1.0),
                                       Tensor<double>::full({5, 1}, 1.0), Tensor<double>::zeros({1}));
  CHECK(longk.data()[0] == 1.0);
  CHECK(longk.data()[1] == 2.0);
}

TEST_CASE("backward hand values") {
  auto x = Tensor<double>::from_vector({3}, {1, 2, 3}).set_requires_grad(true);
  {
    Tape<double> tape;
    tape.backward(sum(x));
  }
  for (int64_t i = 0; i < 3; ++i) CHECK(x.grad()[static_cast<size_t>(i)] == 1.0);

  auto z = Tensor<double>::scalar(0.0).set_requires_grad(true);
  {
    Tape<double> tape;
    tape.backward(sum(silu(z)));
  }
  CHECK(z.grad()[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("backward rejects non-scalar losses") {
  auto x = Tensor<double>::zeros({3}).set_requires_grad(true);
  Tape<double> tape;
  auto y = silu(x);
  CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("composite graphs pass the finite-difference oracle") {
  Rng rng(1234);
  auto a = random_tensor<double>({2, 3}, rng);
  auto b = random_tensor<double>({3, 2}, rng);
  auto c = random_tensor<double>({2}, rng, 0.2, 1.0);
  const double worst = check_gradients({a, b, c}, [&]() {
    auto y = matmul(a, b);                   // [2,2]
    auto g = silu(add(y, c));                // broadcast row
    auto s = softmax(mul(g, g), -1);
    return sum(mul(s, exp(scale(g, 0.3))));
  });
  CHECK(worst < 1e-5);
}

TEST_CASE("indexing ops pass the finite-difference oracle") {
  Rng rng(77);
  auto x = random_tensor<double>({5, 4}, rng);
  std::vector<int32_t> rows = {3, 0, 3, 2};
  std::vector<int32_t> cols = {1, 0, 2, 3, 1, 0, 3, 2, 0, 1};  // 5 rows * k=2
  auto s = random_tensor<double>({4}, rng, 0.5, 1.5);
  const double worst = check_gradients({x, s}, [&]() {
    auto picked = gather_rows(x, rows);                   // [4,4]
    auto scaled = scale_rows(picked, s);                  // [4,4]
    auto spread = scatter_add_rows(scaled, rows, 5);      // [5,4]
    auto pr = gather_per_row(spread, cols, 2);            // [5,2]
    auto norm = normalize_rows(exp(pr));
    auto back = scatter_per_row(norm, cols, 4);           // [5,4]
    return mean(mul(back, back));
  });
  CHECK(worst < 1e-5);
}

TEST_CASE("cross entropy and embedding pass the finite-difference oracle") {
  Rng rng(5);
  auto table = random_tensor<double>({7, 3}, rng);
  auto proj = random_tensor<double>({3, 7}, rng);
  std::vector<int32_t> ids = {1, 4, 6, 0};
  std::vector<int32_t> targets = {4, 6, 0, 2};
  const double worst = check_gradients({table, proj}, [&]() {
    auto h = embedding(ids, table);
    return cross_entropy_mean(matmul(h, proj), targets);
  });
  CHECK(worst < 1e-5);

  CHECK_THROWS_AS(embedding({9}, table), ContractError);
}

TEST_CASE("ops replay identically from the same seed") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    auto a = random_tensor<float>({8, 8}, rng);
    auto b = random_tensor<float>({8, 8}, rng);
    return mul(softmax(matmul(a, b), -1), silu(a));
  };
  auto y0 = run(99);
  auto y1 = run(99);
  for (int64_t i = 0; i < y0.size(); ++i) CHECK(y0.data()[i] == y1.data()[i]);
}

TEST_CASE("gradients accumulate across reuse of a tensor") {
  auto x = Tensor<double>::scalar(0.7).set_requires_grad(true);
  {
    Tape<double> tape;
    auto y = mul(x, x);  // x^2, dy/dx = 2x
    tape.backward(sum(y));
  }
  CHECK(x.grad()[0] == doctest::Approx(1.4).epsilon(1e-12));
}
