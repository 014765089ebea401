#pragma once

// Multi-head causal attention restricted to a sliding window of preceding
// tokens, with rotary position encoding on queries and keys. One tape op;
// the pull re-derives the softmax Jacobian from saved probabilities.

#include "rom/rng.hpp"
#include "rom/tensor.hpp"

namespace rom {

template <class T>
struct AttnWeights {
  int n_heads = 1;
  Tensor<T> w_q;  // [D_m, D_m]
  Tensor<T> w_k;
  Tensor<T> w_v;
  Tensor<T> w_o;
};

template <class T>
AttnWeights<T> init_attn_weights(int64_t d_model, int n_heads, uint64_t seed) {
  if (n_heads < 1 || d_model % n_heads != 0)
    throw ContractError("init_attn_weights: d_model must divide into heads");
  if ((d_model / n_heads) % 2 != 0)
    throw ContractError("init_attn_weights: head dim must be even for rotary encoding");
  Rng rng(seed);
  AttnWeights<T> w;
  w.n_heads = n_heads;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_model));
  w.w_q = init_uniform<T>({d_model, d_model}, rng, bound);
  w.w_k = init_uniform<T>({d_model, d_model}, rng, bound);
  w.w_v = init_uniform<T>({d_model, d_model}, rng, bound);
  w.w_o = init_uniform<T>({d_model, d_model}, rng, bound);
  return w;
}

namespace detail {

// Interleaved rotary tables: pair i of each head rotates by t * theta^(-2i/hd).
template <class T>
void rope_tables(int64_t L, int64_t head_dim, double theta, std::vector<T>& cos_t,
                 std::vector<T>& sin_t) {
  const int64_t half = head_dim / 2;
  cos_t.resize(static_cast<size_t>(L * half));
  sin_t.resize(static_cast<size_t>(L * half));
  for (int64_t t = 0; t < L; ++t)
    for (int64_t i = 0; i < half; ++i) {
      const double freq =
          std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
      const double ang = static_cast<double>(t) * freq;
      cos_t[static_cast<size_t>(t * half + i)] = static_cast<T>(std::cos(ang));
      sin_t[static_cast<size_t>(t * half + i)] = static_cast<T>(std::sin(ang));
    }
}

template <class T>
void rope_apply(const T* x, T* out, int64_t L, int n_heads, int64_t head_dim,
                const std::vector<T>& cos_t, const std::vector<T>& sin_t, bool inverse) {
  const int64_t half = head_dim / 2;
  const int64_t d = n_heads * head_dim;
  for (int64_t t = 0; t < L; ++t)
    for (int h = 0; h < n_heads; ++h)
      for (int64_t i = 0; i < half; ++i) {
        const T c = cos_t[static_cast<size_t>(t * half + i)];
        const T s = sin_t[static_cast<size_t>(t * half + i)];
        const int64_t p0 = t * d + h * head_dim + 2 * i;
        const T x0 = x[p0], x1 = x[p0 + 1];
        if (!inverse) {
          out[p0] = x0 * c - x1 * s;
          out[p0 + 1] = x0 * s + x1 * c;
        } else {
          out[p0] = x0 * c + x1 * s;
          out[p0 + 1] = -x0 * s + x1 * c;
        }
      }
}

}  // namespace detail

// q, k, v: [L, D]; token t attends to positions max(0, t-window+1)..t.
template <class T>
Tensor<T> swa_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int n_heads,
                        int64_t window, double rope_theta = 10000.0) {
  if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape())
    throw ShapeError("swa_attention: q/k/v must share a [L,D] shape");
  if (window < 1) throw ContractError("swa_attention: window must be >= 1");
  const int64_t L = q.dim(0), d = q.dim(1);
  if (n_heads < 1 || d % n_heads != 0 || (d / n_heads) % 2 != 0)
    throw ContractError("swa_attention: D must split into heads of even dim");
  const int64_t hd = d / n_heads;
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

  std::vector<T> cos_t, sin_t;
  detail::rope_tables<T>(L, hd, rope_theta, cos_t, sin_t);
  std::vector<T> qr(static_cast<size_t>(L * d)), kr(static_cast<size_t>(L * d));
  detail::rope_apply(q.data(), qr.data(), L, n_heads, hd, cos_t, sin_t, false);
  detail::rope_apply(k.data(), kr.data(), L, n_heads, hd, cos_t, sin_t, false);

  // Variable spans: position t sees span(t) = min(t+1, window) keys.
  std::vector<int64_t> span_off(static_cast<size_t>(L + 1), 0);
  for (int64_t t = 0; t < L; ++t)
    span_off[static_cast<size_t>(t + 1)] =
        span_off[static_cast<size_t>(t)] + std::min<int64_t>(t + 1, window);
  const int64_t total_span = span_off[static_cast<size_t>(L)];
  std::vector<T> probs(static_cast<size_t>(n_heads) * static_cast<size_t>(total_span));

  Tensor<T> out = Tensor<T>::zeros({L, d});
  T* ov = out.data();
  const T* vv = v.data();
  for (int h = 0; h < n_heads; ++h) {
    const int64_t hoff = static_cast<int64_t>(h) * hd;
    for (int64_t t = 0; t < L; ++t) {
      const int64_t lo = std::max<int64_t>(0, t - window + 1);
      const int64_t n = t - lo + 1;
      T* p = probs.data() + static_cast<size_t>(h) * total_span + span_off[static_cast<size_t>(t)];
      const T* qrow = qr.data() + t * d + hoff;
      T mx = std::numeric_limits<T>::lowest();
      for (int64_t j = 0; j < n; ++j) {
        const T* krow = kr.data() + (lo + j) * d + hoff;
        T s = T(0);
        for (int64_t e = 0; e < hd; ++e) s += qrow[e] * krow[e];
        p[j] = s * inv_sqrt;
        mx = std::max(mx, p[j]);
      }
      T sum = T(0);
      for (int64_t j = 0; j < n; ++j) {
        p[j] = std::exp(p[j] - mx);
        sum += p[j];
      }
      const T inv = T(1) / sum;
      T* orow = ov + t * d + hoff;
      for (int64_t j = 0; j < n; ++j) {
        p[j] *= inv;
        const T* vrow = vv + (lo + j) * d + hoff;
        for (int64_t e = 0; e < hd; ++e) orow[e] += p[j] * vrow[e];
      }
    }
  }

  if (detail::trace<T>({&q, &k, &v})) {
    detail::mark_output(out);
    auto qn = q.node(), kn = k.node(), vn = v.node(), on = out.node();
    Tape<T>::active()->record(
        {on}, [qn, kn, vn, on, L, d, hd, n_heads, window, inv_sqrt, total_span,
               span_off = std::move(span_off), probs = std::move(probs), qr = std::move(qr),
               kr = std::move(kr), cos_t = std::move(cos_t), sin_t = std::move(sin_t)] {
          const T* dy = on->grad.data();
          const T* vv = vn->value.data();
          std::vector<T> dqr(static_cast<size_t>(L * d), T(0));
          std::vector<T> dkr(static_cast<size_t>(L * d), T(0));
          if (vn->requires_grad) vn->ensure_grad();
          std::vector<T> dp;
          for (int h = 0; h < n_heads; ++h) {
            const int64_t hoff = static_cast<int64_t>(h) * hd;
            for (int64_t t = 0; t < L; ++t) {
              const int64_t lo = std::max<int64_t>(0, t - window + 1);
              const int64_t n = t - lo + 1;
              const T* p =
                  probs.data() + static_cast<size_t>(h) * total_span + span_off[static_cast<size_t>(t)];
              const T* dyr = dy + t * d + hoff;
              dp.assign(static_cast<size_t>(n), T(0));
              T dot = T(0);
              for (int64_t j = 0; j < n; ++j) {
                const T* vrow = vv + (lo + j) * d + hoff;
                T acc = T(0);
                for (int64_t e = 0; e < hd; ++e) acc += dyr[e] * vrow[e];
                dp[static_cast<size_t>(j)] = acc;
                dot += acc * p[j];
                if (vn->requires_grad) {
                  T* dvrow = vn->grad.data() + (lo + j) * d + hoff;
                  for (int64_t e = 0; e < hd; ++e) dvrow[e] += p[j] * dyr[e];
                }
              }
              const T* qrow = qr.data() + t * d + hoff;
              T* dqrow = dqr.data() + t * d + hoff;
              for (int64_t j = 0; j < n; ++j) {
                const T ds = (dp[static_cast<size_t>(j)] - dot) * p[j] * inv_sqrt;
                const T* krow = kr.data() + (lo + j) * d + hoff;
                T* dkrow = dkr.data() + (lo + j) * d + hoff;
                for (int64_t e = 0; e < hd; ++e) {
                  dqrow[e] += ds * krow[e];
                  dkrow[e] += ds * qrow[e];
                }
              }
            }
          }
          // Undo the rotation: the transpose of a rotation is its inverse.
          if (qn->requires_grad) {
            qn->ensure_grad();
            std::vector<T> dq(static_cast<size_t>(L * d));
            detail::rope_apply(dqr.data(), dq.data(), L, n_heads, hd, cos_t, sin_t, true);
            for (size_t i = 0; i < dq.size(); ++i) qn->grad[i] += dq[i];
          }
          if (kn->requires_grad) {
            kn->ensure_grad();
            std::vector<T> dk(static_cast<size_t>(L * d));
            detail::rope_apply(dkr.data(), dk.data(), L, n_heads, hd, cos_t, sin_t, true);
            for (size_t i = 0; i < dk.size(); ++i) kn->grad[i] += dk[i];
          }
        });
  }
  return out;
}

template <class T>
Tensor<T> swa_forward(const Tensor<T>& x, const AttnWeights<T>& w, int64_t window,
                      double rope_theta = 10000.0) {
  Tensor<T> q = matmul(x, w.w_q);
  Tensor<T> k = matmul(x, w.w_k);
  Tensor<T> v = matmul(x, w.w_v);
  return matmul(swa_attention(q, k, v, w.n_heads, window, rope_theta), w.w_o);
}

}  // namespace rom
