#pragma once

// Dense row-major tensors (float or double) with reverse-mode autodiff.
//
// Ops run eagerly. When a Tape is active and at least one input participates
// in gradients, the op appends a pull closure to the tape; Tape::backward
// replays the closures in reverse recording order, which is a valid reverse
// topological order by construction.
//
// Broadcasting is restricted to trailing dimensions: the right operand must
// have the exact trailing shape of the left operand (e.g. [D] against [L,D])
// or be a single element. Anything else is a shape error.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rom {

using Shape = std::vector<int64_t>;

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

template <class T>
struct Node {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "tensors are single or double precision");
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first touched; then same length as value
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
};

template <class T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;

  static Tensor zeros(Shape shape) {
    Tensor t;
    const int64_t n = shape_numel(shape);
    t.n_ = std::make_shared<Node<T>>();
    t.n_->shape = std::move(shape);
    t.n_->value.assign(static_cast<size_t>(n), T(0));
    return t;
  }

  static Tensor full(Shape shape, T fill) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.n_->value.begin(), t.n_->value.end(), fill);
    return t;
  }

  static Tensor from_vector(Shape shape, std::vector<T> data) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      throw ShapeError("from_vector: shape " + shape_str(shape) + " does not hold " +
                       std::to_string(data.size()) + " values");
    Tensor t;
    t.n_ = std::make_shared<Node<T>>();
    t.n_->shape = std::move(shape);
    t.n_->value = std::move(data);
    return t;
  }

  static Tensor scalar(T v) { return from_vector({}, {v}); }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int64_t rank() const { return static_cast<int64_t>(n_->shape.size()); }
  int64_t size() const { return static_cast<int64_t>(n_->value.size()); }
  int64_t dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }

  T* data() { return n_->value.data(); }
  const T* data() const { return n_->value.data(); }
  std::vector<T>& value() { return n_->value; }
  const std::vector<T>& value() const { return n_->value; }

  T item() const {
    if (size() != 1) throw ContractError("item: tensor has " + std::to_string(size()) + " elements");
    return n_->value[0];
  }

  T at(std::initializer_list<int64_t> idx) const {
    int64_t flat = 0;
    size_t i = 0;
    for (int64_t v : idx) flat = flat * n_->shape[i++] + v;
    return n_->value[static_cast<size_t>(flat)];
  }

  bool requires_grad() const { return n_->requires_grad; }
  Tensor& set_requires_grad(bool b = true) {
    n_->requires_grad = b;
    return *this;
  }

  bool has_grad() const { return !n_->grad.empty(); }
  // Allocates a zero gradient on first access.
  std::vector<T>& grad() {
    n_->ensure_grad();
    return n_->grad;
  }
  const std::vector<T>& grad() const {
    n_->ensure_grad();
    return n_->grad;
  }
  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
  }

  Tensor clone() const {
    Tensor t;
    t.n_ = std::make_shared<Node<T>>();
    t.n_->shape = n_->shape;
    t.n_->value = n_->value;
    return t;
  }

  std::shared_ptr<Node<T>> node() const { return n_; }

 private:
  std::shared_ptr<Node<T>> n_;
};

template <class T>
class Tape {
 public:
  struct Entry {
    std::vector<std::shared_ptr<Node<T>>> outputs;
    std::function<void()> pull;
  };

  Tape() : prev_(active_ref()) { active_ref() = this; }
  ~Tape() { active_ref() = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_ref(); }

  void record(std::vector<std::shared_ptr<Node<T>>> outputs, std::function<void()> pull) {
    entries_.push_back(Entry{std::move(outputs), std::move(pull)});
  }

  size_t size() const { return entries_.size(); }

  // Seeds d(loss)/d(loss) = 1 and pulls gradients back through every recorded
  // op whose outputs were reached.
  void backward(const Tensor<T>& loss) {
    if (loss.size() != 1)
      throw ContractError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
    auto ln = loss.node();
    ln->ensure_grad();
    ln->grad[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      bool reached = false;
      for (const auto& out : it->outputs)
        if (!out->grad.empty()) {
          reached = true;
          break;
        }
      if (reached) it->pull();
    }
  }

 private:
  static Tape*& active_ref() {
    thread_local Tape* t = nullptr;
    return t;
  }
  Tape* prev_;
  std::vector<Entry> entries_;
};

namespace detail {

template <class T>
inline bool trace(std::initializer_list<const Tensor<T>*> ins) {
  if (Tape<T>::active() == nullptr) return false;
  for (const Tensor<T>* t : ins)
    if ((*t).requires_grad()) return true;
  return false;
}

template <class T>
inline void mark_output(Tensor<T>& out) {
  out.node()->requires_grad = true;
}

// Right operand broadcasts against the left under trailing-dimension rules:
// identical shape, exact trailing suffix, or a single element. Returns the
// modulo period for flat indexing (row-major layout makes a trailing suffix
// a contiguous repeating block).
template <class T>
inline int64_t broadcast_period(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (b.size() == 1) return 1;
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (bs.size() > as.size())
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(bs) + " against " + shape_str(as));
  for (size_t i = 0; i < bs.size(); ++i)
    if (bs[bs.size() - 1 - i] != as[as.size() - 1 - i])
      throw ShapeError(std::string(op) + ": shape " + shape_str(bs) +
                       " is not a trailing suffix of " + shape_str(as));
  return b.size();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// GEMM kernels. Row-major. Accumulating, so they serve both forward and
// gradient passes. Parallel variants split output rows; every output element
// keeps a fixed reduction order, so results are bitwise independent of the
// thread count.
// ---------------------------------------------------------------------------

namespace detail {

// Desk-scale matmuls lose to fork/join overhead; only the vocab-width head
// projections clear this bar.
constexpr int64_t kGemmParallelWork = 1 << 22;

// C[m,n] += A[m,k] * B[k,n]
template <class T>
void gemm_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
#if defined(ROM_USE_OPENMP)
#pragma omp parallel for schedule(static) if (m * k * n > kGemmParallelWork)
#endif
  for (int64_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,k] += A[m,n] * B[k,n]^T
// Eight independent accumulator lanes folded in a fixed order: vectorizes
// without relaxing FP semantics and stays bitwise deterministic.
template <class T>
void gemm_nt_acc(const T* a, const T* b, T* c, int64_t m, int64_t n, int64_t k) {
  constexpr int64_t kLanes = 8;
#if defined(ROM_USE_OPENMP)
#pragma omp parallel for schedule(static) if (m * k * n > kGemmParallelWork)
#endif
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * n;
    T* crow = c + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      T lanes[kLanes] = {};
      int64_t j = 0;
      for (; j + kLanes <= n; j += kLanes)
        for (int64_t l = 0; l < kLanes; ++l) lanes[l] += arow[j + l] * brow[j + l];
      T acc = T(0);
      for (int64_t l = 0; l < kLanes; ++l) acc += lanes[l];
      for (; j < n; ++j) acc += arow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
template <class T>
void gemm_tn_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
#if defined(ROM_USE_OPENMP)
#pragma omp parallel for schedule(static) if (m * k * n > kGemmParallelWork)
#endif
  for (int64_t p = 0; p < k; ++p) {
    T* crow = c + p * n;
    for (int64_t i = 0; i < m; ++i) {
      const T av = a[i * k + p];
      const T* brow = b + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// matmul(a, b): a is [m,k] or [batch,m,k]; b is [k,n].
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (b.rank() != 2)
    throw ShapeError("matmul: right operand must be a matrix, got " + shape_str(b.shape()));
  if (a.rank() != 2 && a.rank() != 3)
    throw ShapeError("matmul: left operand must be rank 2 or 3, got " + shape_str(a.shape()));
  const int64_t batch = a.rank() == 3 ? a.dim(0) : 1;
  const int64_t m = a.dim(a.rank() == 3 ? 1 : 0);
  const int64_t k = a.dim(a.rank() == 3 ? 2 : 1);
  const int64_t n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));

  Shape out_shape = a.rank() == 3 ? Shape{batch, m, n} : Shape{m, n};
  Tensor<T> out = Tensor<T>::zeros(std::move(out_shape));
  for (int64_t g = 0; g < batch; ++g)
    detail::gemm_acc(a.data() + g * m * k, b.data(), out.data() + g * m * n, m, k, n);

  if (detail::trace<T>({&a, &b})) {
    detail::mark_output(out);
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape<T>::active()->record({on}, [an, bn, on, batch, m, k, n] {
      const T* dy = on->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        for (int64_t g = 0; g < batch; ++g)
          detail::gemm_nt_acc(dy + g * m * n, bn->value.data(), an->grad.data() + g * m * k, m, n, k);
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int64_t g = 0; g < batch; ++g)
          detail::gemm_tn_acc(an->value.data() + g * m * k, dy + g * m * n, bn->grad.data(), m, k, n);
      }
    });
  }
  return out;
}

// matmul_nt(a, b): a[m,k] * b[n,k]^T -> [m,n]. Used for tied output heads.
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul_nt: expects matrices, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k)
    throw ShapeError("matmul_nt: inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  Tensor<T> out = Tensor<T>::zeros({m, n});
  detail::gemm_nt_acc(a.data(), b.data(), out.data(), m, k, n);

  if (detail::trace<T>({&a, &b})) {
    detail::mark_output(out);
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape<T>::active()->record({on}, [an, bn, on, m, k, n] {
      const T* dy = on->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        detail::gemm_acc(dy, bn->value.data(), an->grad.data(), m, n, k);
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        detail::gemm_tn_acc(dy, an->value.data(), bn->grad.data(), m, n, k);
      }
    });
  }
  return out;
}

namespace detail {

enum class BinOp { add, sub, mul, div };

template <class T>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, BinOp which, const char* name) {
  const int64_t period = broadcast_period(a, b, name);
  const int64_t n = a.size();
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* av = a.data();
  const T* bv = b.data();
  T* ov = out.data();
  switch (which) {
    case BinOp::add:
      for (int64_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i % period];
      break;
    case BinOp::sub:
      for (int64_t i = 0; i < n; ++i) ov[i] = av[i] - bv[i % period];
      break;
    case BinOp::mul:
      for (int64_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i % period];
      break;
    case BinOp::div:
      for (int64_t i = 0; i < n; ++i) ov[i] = av[i] / bv[i % period];
      break;
  }

  if (trace<T>({&a, &b})) {
    mark_output(out);
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape<T>::active()->record({on}, [an, bn, on, which, period, n] {
      const T* dy = on->grad.data();
      const T* av = an->value.data();
      const T* bv = bn->value.data();
      if (an->requires_grad) {
        an->ensure_grad();
        T* da = an->grad.data();
        switch (which) {
          case BinOp::add:
            for (int64_t i = 0; i < n; ++i) da[i] += dy[i];
            break;
          case BinOp::sub:
            for (int64_t i = 0; i < n; ++i) da[i] += dy[i];
            break;
          case BinOp::mul:
            for (int64_t i = 0; i < n; ++i) da[i] += dy[i] * bv[i % period];
            break;
          case BinOp::div:
            for (int64_t i = 0; i < n; ++i) da[i] += dy[i] / bv[i % period];
            break;
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        T* db = bn->grad.data();
        switch (which) {
          case BinOp::add:
            for (int64_t i = 0; i < n; ++i) db[i % period] += dy[i];
            break;
          case BinOp::sub:
            for (int64_t i = 0; i < n; ++i) db[i % period] -= dy[i];
            break;
          case BinOp::mul:
            for (int64_t i = 0; i < n; ++i) db[i % period] += dy[i] * av[i];
            break;
          case BinOp::div: {
            for (int64_t i = 0; i < n; ++i) {
              const T bb = bv[i % period];
              db[i % period] -= dy[i] * av[i] / (bb * bb);
            }
            break;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(a, b, detail::BinOp::add, "add");
}
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(a, b, detail::BinOp::sub, "sub");
}
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(a, b, detail::BinOp::mul, "mul");
}
template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(a, b, detail::BinOp::div, "div");
}

namespace detail {

// y = f(x); pull computes dy/dx from (x, y).
template <class T, class Fwd, class Bwd>
Tensor<T> unary_op(const Tensor<T>& x, Fwd fwd, Bwd dfdx) {
  const int64_t n = x.size();
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* xv = x.data();
  T* ov = out.data();
  for (int64_t i = 0; i < n; ++i) ov[i] = fwd(xv[i]);

  if (trace<T>({&x})) {
    mark_output(out);
    auto xn = x.node(), on = out.node();
    Tape<T>::active()->record({on}, [xn, on, dfdx, n] {
      xn->ensure_grad();
      const T* dy = on->grad.data();
      const T* xv = xn->value.data();
      const T* yv = on->value.data();
      T* dx = xn->grad.data();
      for (int64_t i = 0; i < n; ++i) dx[i] += dy[i] * dfdx(xv[i], yv[i]);
    });
  }
  return out;
}

template <class T>
inline T sigmoid_scalar(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

// log(1 + e^x); linear branch above 20 where e^-x underflows the sum anyway.
template <class T>
inline T softplus_scalar(T x) {
  if (x > T(20)) return x;
  return std::log1p(std::exp(x));
}

}  // namespace detail

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return detail::sigmoid_scalar(v); },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> silu(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return v * detail::sigmoid_scalar(v); },
      [](T v, T) {
        const T s = detail::sigmoid_scalar(v);
        return s * (T(1) + v * (T(1) - s));
      });
}

template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return detail::softplus_scalar(v); },
      [](T v, T) { return detail::sigmoid_scalar(v); });
}

// Multiply by a plain constant (not a tape value).
template <class T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  return detail::unary_op(
      x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

// Stabilized softmax along `axis`; each slice sums to 1.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis = -1) {
  const int64_t r = x.rank();
  if (r == 0) throw ShapeError("softmax: scalar input");
  if (axis < 0) axis += static_cast<int>(r);
  if (axis < 0 || axis >= r)
    throw ShapeError("softmax: axis out of range for shape " + shape_str(x.shape()));
  int64_t outer = 1, inner = 1;
  const int64_t n = x.dim(axis);
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int64_t i = axis + 1; i < r; ++i) inner *= x.dim(static_cast<int>(i));

  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* xv = x.data();
  T* ov = out.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * n * inner + in;
      T mx = xv[base];
      for (int64_t j = 1; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
      T sum = T(0);
      for (int64_t j = 0; j < n; ++j) {
        const T e = std::exp(xv[base + j * inner] - mx);
        ov[base + j * inner] = e;
        sum += e;
      }
      const T inv = T(1) / sum;
      for (int64_t j = 0; j < n; ++j) ov[base + j * inner] *= inv;
    }
  }

  if (detail::trace<T>({&x})) {
    detail::mark_output(out);
    auto xn = x.node(), on = out.node();
    Tape<T>::active()->record({on}, [xn, on, outer, n, inner] {
      xn->ensure_grad();
      const T* dy = on->grad.data();
      const T* y = on->value.data();
      T* dx = xn->grad.data();
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
          const int64_t base = o * n * inner + in;
          T dot = T(0);
          for (int64_t j = 0; j < n; ++j) dot += dy[base + j * inner] * y[base + j * inner];
          for (int64_t j = 0; j < n; ++j) {
            const int64_t p = base + j * inner;
            dx[p] += (dy[p] - dot) * y[p];
          }
        }
      }
    });
  }
  return out;
}

// RMS normalization over the last dimension with a learned elementwise weight.
template <class T>
Tensor<T> rmsnorm(const Tensor<T>& x, const Tensor<T>& weight, T eps) {
  if (x.rank() < 1) throw ShapeError("rmsnorm: scalar input");
  const int64_t d = x.dim(static_cast<int>(x.rank() - 1));
  if (weight.rank() != 1 || weight.dim(0) != d)
    throw ShapeError("rmsnorm: weight " + shape_str(weight.shape()) + " does not match last dim of " +
                     shape_str(x.shape()));
  const int64_t rows = x.size() / d;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  std::vector<T> inv_rms(static_cast<size_t>(rows));
  const T* xv = x.data();
  const T* wv = weight.data();
  T* ov = out.data();
  for (int64_t i = 0; i < rows; ++i) {
    const T* row = xv + i * d;
    T ss = T(0);
    for (int64_t j = 0; j < d; ++j) ss += row[j] * row[j];
    const T inv = T(1) / std::sqrt(ss / static_cast<T>(d) + eps);
    inv_rms[static_cast<size_t>(i)] = inv;
    T* orow = ov + i * d;
    for (int64_t j = 0; j < d; ++j) orow[j] = row[j] * inv * wv[j];
  }

  if (detail::trace<T>({&x, &weight})) {
    detail::mark_output(out);
    auto xn = x.node(), wn = weight.node(), on = out.node();
    Tape<T>::active()->record({on}, [xn, wn, on, rows, d, inv_rms = std::move(inv_rms)] {
      const T* dy = on->grad.data();
      const T* xv = xn->value.data();
      const T* wv = wn->value.data();
      if (xn->requires_grad) {
        xn->ensure_grad();
        T* dx = xn->grad.data();
        for (int64_t i = 0; i < rows; ++i) {
          const T inv = inv_rms[static_cast<size_t>(i)];
          const T* row = xv + i * d;
          const T* dyr = dy + i * d;
          T dot = T(0);
          for (int64_t j = 0; j < d; ++j) dot += dyr[j] * wv[j] * row[j];
          const T c = dot * inv * inv * inv / static_cast<T>(d);
          T* dxr = dx + i * d;
          for (int64_t j = 0; j < d; ++j) dxr[j] += dyr[j] * wv[j] * inv - row[j] * c;
        }
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        T* dw = wn->grad.data();
        for (int64_t i = 0; i < rows; ++i) {
          const T inv = inv_rms[static_cast<size_t>(i)];
          const T* row = xv + i * d;
          const T* dyr = dy + i * d;
          for (int64_t j = 0; j < d; ++j) dw[j] += dyr[j] * row[j] * inv;
        }
      }
    });
  }
  return out;
}

// Causal depthwise conv over the sequence dimension; left-padded with zeros,
// so out[t] depends only on positions <= t.
template <class T>
Tensor<T> depthwise_conv1d_causal(const Tensor<T>& h, const Tensor<T>& w, const Tensor<T>& bias) {
  if (h.rank() != 2 || w.rank() != 2)
    throw ShapeError("depthwise_conv1d_causal: expects h [L,D] and w [k,D], got " +
                     shape_str(h.shape()) + " and " + shape_str(w.shape()));
  const int64_t L = h.dim(0), d = h.dim(1), k = w.dim(0);
  if (w.dim(1) != d || bias.rank() != 1 || bias.dim(0) != d)
    throw ShapeError("depthwise_conv1d_causal: channel mismatch between " + shape_str(h.shape()) +
                     ", " + shape_str(w.shape()) + ", " + shape_str(bias.shape()));
  if (k < 1) throw ShapeError("depthwise_conv1d_causal: kernel must be >= 1");

  Tensor<T> out = Tensor<T>::zeros({L, d});
  const T* hv = h.data();
  const T* wv = w.data();
  const T* bv = bias.data();
  T* ov = out.data();
  for (int64_t t = 0; t < L; ++t) {
    T* orow = ov + t * d;
    for (int64_t j = 0; j < d; ++j) orow[j] = bv[j];
    for (int64_t q = 0; q < k; ++q) {
      const int64_t src = t - k + 1 + q;
      if (src < 0) continue;
      const T* hrow = hv + src * d;
      const T* wrow = wv + q * d;
      for (int64_t j = 0; j < d; ++j) orow[j] += wrow[j] * hrow[j];
    }
  }

  if (detail::trace<T>({&h, &w, &bias})) {
    detail::mark_output(out);
    auto hn = h.node(), wn = w.node(), bn = bias.node(), on = out.node();
    Tape<T>::active()->record({on}, [hn, wn, bn, on, L, d, k] {
      const T* dy = on->grad.data();
      if (hn->requires_grad) {
        hn->ensure_grad();
        T* dh = hn->grad.data();
        const T* wv = wn->value.data();
        for (int64_t t = 0; t < L; ++t) {
          const T* dyr = dy + t * d;
          for (int64_t q = 0; q < k; ++q) {
            const int64_t src = t - k + 1 + q;
            if (src < 0) continue;
            T* dhr = dh + src * d;
            const T* wrow = wv + q * d;
            for (int64_t j = 0; j < d; ++j) dhr[j] += wrow[j] * dyr[j];
          }
        }
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        T* dw = wn->grad.data();
        const T* hv = hn->value.data();
        for (int64_t t = 0; t < L; ++t) {
          const T* dyr = dy + t * d;
          for (int64_t q = 0; q < k; ++q) {
            const int64_t src = t - k + 1 + q;
            if (src < 0) continue;
            const T* hrow = hv + src * d;
            T* dwr = dw + q * d;
            for (int64_t j = 0; j < d; ++j) dwr[j] += hrow[j] * dyr[j];
          }
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        T* db = bn->grad.data();
        for (int64_t t = 0; t < L; ++t) {
          const T* dyr = dy + t * d;
          for (int64_t j = 0; j < d; ++j) db[j] += dyr[j];
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros({});
  T acc = T(0);
  const T* xv = x.data();
  for (int64_t i = 0; i < x.size(); ++i) acc += xv[i];
  out.data()[0] = acc;
  if (detail::trace<T>({&x})) {
    detail::mark_output(out);
    auto xn = x.node(), on = out.node();
    Tape<T>::active()->record({on}, [xn, on] {
      xn->ensure_grad();
      const T dy = on->grad[0];
      for (auto& g : xn->grad) g += dy;
    });
  }
  return out;
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

// Column mean of a [L,N] matrix -> [N].
template <class T>
Tensor<T> mean_axis0(const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("mean_axis0: expects a matrix, got " + shape_str(x.shape()));
  const int64_t L = x.dim(0), n = x.dim(1);
  Tensor<T> out = Tensor<T>::zeros({n});
  const T* xv = x.data();
  T* ov = out.data();
  for (int64_t i = 0; i < L; ++i)
    for (int64_t j = 0; j < n; ++j) ov[j] += xv[i * n + j];
  const T inv = T(1) / static_cast<T>(L);
  for (int64_t j = 0; j < n; ++j) ov[j] *= inv;

  if (detail::trace<T>({&x})) {
    detail::mark_output(out);
    auto xn = x.node(), on = out.node();
    Tape<T>::active()->record({on}, [xn, on, L, n, inv] {
      xn->ensure_grad();
      const T* dy = on->grad.data();
      T* dx = xn->grad.data();
      for (int64_t i = 0; i < L; ++i)
        for (int64_t j = 0; j < n; ++j) dx[i * n + j] += dy[j] * inv;
    });
  }
  return out;
}

// Columns [begin, end) of a [L,C] matrix.
template <class T>
Tensor<T> slice_cols(const Tensor<T>& x, int64_t begin, int64_t end) {
  if (x.rank() != 2) throw ShapeError("slice_cols: expects a matrix, got " + shape_str(x.shape()));
  const int64_t L = x.dim(0), c = x.dim(1);
  if (begin < 0 || end > c || begin >= end)
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + shape_str(x.shape()));
  const int64_t w = end - begin;
  Tensor<T> out = Tensor<T>::zeros({L, w});
  const T* xv = x.data();
  T* ov = out.data();
  for (int64_t i = 0; i < L; ++i)
    std::copy(xv + i * c + begin, xv + i * c + end, ov + i * w);

  if (detail::trace<T>({&x})) {
    detail::mark_output(out);
    auto xn = x.node(), on = out.node();
    Tape<T>::active()->record({on}, [xn, on, L, c, begin, w] {
      xn->ensure_grad();
      const T* dy = on->grad.data();
      T* dx = xn->grad.data();
      for (int64_t i = 0; i < L; ++i)
        for (int64_t j = 0; j < w; ++j) dx[i * c + begin + j] += dy[i * w + j];
    });
  }
  return out;
}

// Rows of x selected by idx, in idx order.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<int32_t>& idx) {
  if (x.rank() != 2) throw ShapeError("gather_rows: expects a matrix, got " + shape_str(x.shape()));
  const int64_t L = x.dim(0), d = x.dim(1);
  for (int32_t i : idx)
    if (i < 0 || i >= L)
      throw ContractError("gather_rows: row index " + std::to_string(i) + " out of range [0," +
                          std::to_string(L) + ")");
  const int64_t n = static_cast<int64_t>(idx.size());
  Tensor<T> out = Tensor<T>::zeros({n, d});
  const T* xv = x.data();
  T* ov = out.data();
  for (int64_t i = 0; i < n; ++i)
    std::copy(xv + idx[static_cast<size_t>(i)] * d, xv + (idx[static_cast<size_t>(i)] + 1) * d,
              ov + i * d);

  if (detail::trace<T>({&x})) {
    detail::mark_output(out);
    auto xn = x.node(), on = out.node();
    Tape<T>::active()->record({on}, [xn, on, idx, n, d] {
      xn->ensure_grad();
      const T* dy = on->grad.data();
      T* dx = xn->grad.data();
      for (int64_t i = 0; i < n; ++i) {
        T* dst = dx + idx[static_cast<size_t>(i)] * d;
        const T* src = dy + i * d;
        for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

// Rows of x accumulated into a fresh [rows,d] tensor at positions idx.
// Duplicate indices add in idx order.
template <class T>
Tensor<T> scatter_add_rows(const Tensor<T>& x, const std::vector<int32_t>& idx, int64_t rows) {
  if (x.rank() != 2) throw ShapeError("scatter_add_rows: expects a matrix, got " + shape_str(x.shape()));
  const int64_t n = x.dim(0), d = x.dim(1);
  if (static_cast<int64_t>(idx.size()) != n)
    throw ShapeError("scatter_add_rows: " + std::to_string(idx.size()) + " indices for " +
                     std::to_string(n) + " rows");
  for (int32_t i : idx)
    if (i < 0 || i >= rows)
      throw ContractError("scatter_add_rows: row index " + std::to_string(i) + " out of range [0," +
                          std::to_string(rows) + ")");
  Tensor<T> out = Tensor<T>::zeros({rows, d});
  const T* xv = x.data();
  T* ov = out.data();
  for (int64_t i = 0; i < n; ++i) {
    T* dst = ov + idx[static_cast<size_t>(i)] * d;
    const T* src = xv + i * d;
    for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
  }

  if (detail::trace<T>({&x})) {
    detail::mark_output(out);
    auto xn = x.node(), on = out.node();
    Tape<T>::active()->record({on}, [xn, on, idx, n, d] {
      xn->ensure_grad();
      const T* dy = on->grad.data();
      T* dx = xn->grad.data();
      for (int64_t i = 0; i < n; ++i) {
        const T* src = dy + idx[static_cast<size_t>(i)] * d;
        T* dst = dx + i * d;
        for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

// out[t,j] = x[t, idx[t*k + j]] for a [L,N] matrix and per-row index lists.
template <class T>
Tensor<T> gather_per_row(const Tensor<T>& x, const std::vector<int32_t>& idx, int64_t k) {
  if (x.rank() != 2) throw ShapeError("gather_per_row: expects a matrix, got " + shape_str(x.shape()));
  const int64_t L = x.dim(0), n = x.dim(1);
  if (static_cast<int64_t>(idx.size()) != L * k)
    throw ShapeError("gather_per_row: need " + std::to_string(L * k) + " indices, got " +
                     std::to_string(idx.size()));
  for (int32_t i : idx)
    if (i < 0 || i >= n)
      throw ContractError("gather_per_row: column index " + std::to_string(i) + " out of range [0," +
                          std::to_string(n) + ")");
  Tensor<T> out = Tensor<T>::zeros({L, k});
  const T* xv = x.data();
  T* ov = out.data();
  for (int64_t t = 0; t < L; ++t)
    for (int64_t j = 0; j < k; ++j) ov[t * k + j] = xv[t * n + idx[static_cast<size_t>(t * k + j)]];

  if (detail::trace<T>({&x})) {
    detail::mark_output(out);
    auto xn = x.node(), on = out.node();
    Tape<T>::active()->record({on}, [xn, on, idx, L, n, k] {
      xn->ensure_grad();
      const T* dy = on->grad.data();
      T* dx = xn->grad.data();
      for (int64_t t = 0; t < L; ++t)
        for (int64_t j = 0; j < k; ++j)
          dx[t * n + idx[static_cast<size_t>(t * k + j)]] += dy[t * k + j];
    });
  }
  return out;
}

// Same data, new shape. Row-major layout is preserved, so this is free.
template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " cannot view as " + shape_str(shape));
  Tensor<T> out = Tensor<T>::from_vector(std::move(shape), x.value());
  if (detail::trace<T>({&x})) {
    detail::mark_output(out);
    auto xn = x.node(), on = out.node();
    Tape<T>::active()->record({on}, [xn, on] {
      xn->ensure_grad();
      const T* dy = on->grad.data();
      T* dx = xn->grad.data();
      for (size_t i = 0; i < xn->grad.size(); ++i) dx[i] += dy[i];
    });
  }
  return out;
}

// Inverse of gather_per_row: values [L,K] accumulated into a fresh [L,N]
// matrix at per-row column indices.
template <class T>
Tensor<T> scatter_per_row(const Tensor<T>& values, const std::vector<int32_t>& idx, int64_t n) {
  if (values.rank() != 2)
    throw ShapeError("scatter_per_row: expects a matrix, got " + shape_str(values.shape()));
  const int64_t L = values.dim(0), k = values.dim(1);
  if (static_cast<int64_t>(idx.size()) != L * k)
    throw ShapeError("scatter_per_row: need " + std::to_string(L * k) + " indices, got " +
                     std::to_string(idx.size()));
  for (int32_t i : idx)
    if (i < 0 || i >= n)
      throw ContractError("scatter_per_row: column index " + std::to_string(i) + " out of range [0," +
                          std::to_string(n) + ")");
  Tensor<T> out = Tensor<T>::zeros({L, n});
  const T* vv = values.data();
  T* ov = out.data();
  for (int64_t t = 0; t < L; ++t)
    for (int64_t j = 0; j < k; ++j) ov[t * n + idx[static_cast<size_t>(t * k + j)]] += vv[t * k + j];

  if (detail::trace<T>({&values})) {
    detail::mark_output(out);
    auto vn = values.node(), on = out.node();
    Tape<T>::active()->record({on}, [vn, on, idx, L, n, k] {
      vn->ensure_grad();
      const T* dy = on->grad.data();
      T* dv = vn->grad.data();
      for (int64_t t = 0; t < L; ++t)
        for (int64_t j = 0; j < k; ++j)
          dv[t * k + j] += dy[t * n + idx[static_cast<size_t>(t * k + j)]];
    });
  }
  return out;
}

// Rows rescaled to sum to 1.
template <class T>
Tensor<T> normalize_rows(const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("normalize_rows: expects a matrix, got " + shape_str(x.shape()));
  const int64_t L = x.dim(0), k = x.dim(1);
  Tensor<T> out = Tensor<T>::zeros({L, k});
  std::vector<T> inv_sum(static_cast<size_t>(L));
  const T* xv = x.data();
  T* ov = out.data();
  for (int64_t t = 0; t < L; ++t) {
    T s = T(0);
    for (int64_t j = 0; j < k; ++j) s += xv[t * k + j];
    if (s == T(0)) throw NumericError("normalize_rows: row " + std::to_string(t) + " sums to zero");
    inv_sum[static_cast<size_t>(t)] = T(1) / s;
    // divide, not multiply-by-reciprocal: a single entry must normalize to 1.0 exactly
    for (int64_t j = 0; j < k; ++j) ov[t * k + j] = xv[t * k + j] / s;
  }

  if (detail::trace<T>({&x})) {
    detail::mark_output(out);
    auto xn = x.node(), on = out.node();
    Tape<T>::active()->record({on}, [xn, on, L, k, inv_sum = std::move(inv_sum)] {
      xn->ensure_grad();
      const T* dy = on->grad.data();
      const T* y = on->value.data();
      T* dx = xn->grad.data();
      for (int64_t t = 0; t < L; ++t) {
        T dot = T(0);
        for (int64_t j = 0; j < k; ++j) dot += dy[t * k + j] * y[t * k + j];
        const T inv = inv_sum[static_cast<size_t>(t)];
        for (int64_t j = 0; j < k; ++j) dx[t * k + j] += (dy[t * k + j] - dot) * inv;
      }
    });
  }
  return out;
}

// Row i of x scaled by s[i].
template <class T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& s) {
  if (x.rank() != 2 || s.rank() != 1 || s.dim(0) != x.dim(0))
    throw ShapeError("scale_rows: expects x [n,D] and s [n], got " + shape_str(x.shape()) + " and " +
                     shape_str(s.shape()));
  const int64_t n = x.dim(0), d = x.dim(1);
  Tensor<T> out = Tensor<T>::zeros({n, d});
  const T* xv = x.data();
  const T* sv = s.data();
  T* ov = out.data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) ov[i * d + j] = xv[i * d + j] * sv[i];

  if (detail::trace<T>({&x, &s})) {
    detail::mark_output(out);
    auto xn = x.node(), sn = s.node(), on = out.node();
    Tape<T>::active()->record({on}, [xn, sn, on, n, d] {
      const T* dy = on->grad.data();
      if (xn->requires_grad) {
        xn->ensure_grad();
        const T* sv = sn->value.data();
        T* dx = xn->grad.data();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < d; ++j) dx[i * d + j] += dy[i * d + j] * sv[i];
      }
      if (sn->requires_grad) {
        sn->ensure_grad();
        const T* xv = xn->value.data();
        T* ds = sn->grad.data();
        for (int64_t i = 0; i < n; ++i) {
          T acc = T(0);
          for (int64_t j = 0; j < d; ++j) acc += dy[i * d + j] * xv[i * d + j];
          ds[i] += acc;
        }
      }
    });
  }
  return out;
}

// Row lookup of an embedding table; gradient scatter-adds into the table.
template <class T>
Tensor<T> embedding(const std::vector<int32_t>& ids, const Tensor<T>& table) {
  if (table.rank() != 2) throw ShapeError("embedding: expects a [V,D] table, got " + shape_str(table.shape()));
  const int64_t v = table.dim(0), d = table.dim(1);
  for (int32_t id : ids)
    if (id < 0 || id >= v)
      throw ContractError("embedding: token id " + std::to_string(id) + " out of range [0," +
                          std::to_string(v) + ")");
  const int64_t L = static_cast<int64_t>(ids.size());
  Tensor<T> out = Tensor<T>::zeros({L, d});
  const T* tv = table.data();
  T* ov = out.data();
  for (int64_t i = 0; i < L; ++i)
    std::copy(tv + ids[static_cast<size_t>(i)] * d, tv + (ids[static_cast<size_t>(i)] + 1) * d,
              ov + i * d);

  if (detail::trace<T>({&table})) {
    detail::mark_output(out);
    auto tn = table.node(), on = out.node();
    Tape<T>::active()->record({on}, [tn, on, ids, L, d] {
      tn->ensure_grad();
      const T* dy = on->grad.data();
      T* dt = tn->grad.data();
      for (int64_t i = 0; i < L; ++i) {
        T* dst = dt + ids[static_cast<size_t>(i)] * d;
        const T* src = dy + i * d;
        for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

// Mean next-token negative log likelihood over rows of [L,V] logits.
template <class T>
Tensor<T> cross_entropy_mean(const Tensor<T>& logits, const std::vector<int32_t>& targets) {
  if (logits.rank() != 2)
    throw ShapeError("cross_entropy_mean: expects [L,V] logits, got " + shape_str(logits.shape()));
  const int64_t L = logits.dim(0), v = logits.dim(1);
  if (static_cast<int64_t>(targets.size()) != L)
    throw ShapeError("cross_entropy_mean: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(L) + " rows");
  for (int32_t t : targets)
    if (t < 0 || t >= v)
      throw ContractError("cross_entropy_mean: target " + std::to_string(t) + " out of range [0," +
                          std::to_string(v) + ")");

  const T* xv = logits.data();
  T acc = T(0);
  for (int64_t i = 0; i < L; ++i) {
    const T* row = xv + i * v;
    T mx = row[0];
    for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (int64_t j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
    acc += mx + std::log(sum) - row[targets[static_cast<size_t>(i)]];
  }
  Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(L));

  if (detail::trace<T>({&logits})) {
    detail::mark_output(out);
    auto xn = logits.node(), on = out.node();
    Tape<T>::active()->record({on}, [xn, on, targets, L, v] {
      xn->ensure_grad();
      const T dy = on->grad[0] / static_cast<T>(L);
      const T* xv = xn->value.data();
      T* dx = xn->grad.data();
      for (int64_t i = 0; i < L; ++i) {
        const T* row = xv + i * v;
        T mx = row[0];
        for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        T sum = T(0);
        for (int64_t j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
        const T inv = T(1) / sum;
        T* dxr = dx + i * v;
        for (int64_t j = 0; j < v; ++j) dxr[j] += dy * std::exp(row[j] - mx) * inv;
        dxr[targets[static_cast<size_t>(i)]] -= dy;
      }
    });
  }
  return out;
}

template <class T>
bool all_finite(const Tensor<T>& t) {
  for (int64_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(t.data()[i])) return false;
  return true;
}

}  // namespace rom
