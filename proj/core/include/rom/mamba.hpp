#pragma once

// Dense Mamba layer: input expansion, causal depthwise conv + SiLU, selective
// scan, and the gated output projection. Also the N=1 reduction target for
// the routed layer.

#include "rom/ssm.hpp"

namespace rom {

template <class T>
struct MambaWeights {
  MambaDims dims;
  Tensor<T> w_in;    // [D_m, D_e] Conv Proj
  Tensor<T> w_g;     // [D_m, D_e] Gate Proj
  Tensor<T> conv_w;  // [k, D_e]
  Tensor<T> conv_b;  // [D_e]
  SsmInnerWeights<T> inner;
  Tensor<T> w_out;   // [D_e, D_m] Out Proj
};

template <class T>
MambaWeights<T> init_mamba_weights(const MambaDims& dims, uint64_t seed, bool use_d_skip = true) {
  dims.validate();
  Rng rng(seed);
  MambaWeights<T> w;
  w.dims = dims;
  const double in_bound = 1.0 / std::sqrt(static_cast<double>(dims.d_model));
  w.w_in = init_uniform<T>({dims.d_model, dims.d_expand}, rng, in_bound);
  w.w_g = init_uniform<T>({dims.d_model, dims.d_expand}, rng, in_bound);
  w.conv_w = init_uniform<T>({dims.conv_kernel, dims.d_expand}, rng,
                             1.0 / std::sqrt(static_cast<double>(dims.conv_kernel)));
  w.conv_b = Tensor<T>::zeros({dims.d_expand});
  w.inner = init_ssm_inner<T>(dims, rng, use_d_skip);
  w.w_out = init_uniform<T>({dims.d_expand, dims.d_model}, rng,
                            1.0 / std::sqrt(static_cast<double>(dims.d_expand)));
  return w;
}

// x [L,D_m] -> [L,D_m]. Strictly causal: the only cross-token paths are the
// left-padded conv and the scan.
template <class T>
Tensor<T> mamba_forward(const Tensor<T>& x, const MambaWeights<T>& w) {
  if (x.rank() != 2 || x.dim(1) != w.dims.d_model)
    throw ShapeError("mamba_forward: input " + shape_str(x.shape()) + " does not match d_model " +
                     std::to_string(w.dims.d_model));
  Tensor<T> h = matmul(x, w.w_in);                                  // [L, D_e]
  Tensor<T> u = silu(depthwise_conv1d_causal(h, w.conv_w, w.conv_b));
  auto [delta, b, c] = ssm_inputs(u, w.inner, w.dims);
  Tensor<T> a = neg(exp(w.inner.a_log));
  auto [abar, bbar] = discretize_zoh(a, b, delta);
  const Tensor<T>* skip = w.inner.d_skip.defined() ? &w.inner.d_skip : nullptr;
  Tensor<T> y = selective_scan_sequential(u, abar, bbar, c, skip);
  Tensor<T> gate = silu(matmul(x, w.w_g));
  return matmul(mul(y, gate), w.w_out);
}

}  // namespace rom
