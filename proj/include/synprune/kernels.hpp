#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "synprune/tensor.hpp"

// Parallel forward/backward primitives. Loops are OpenMP-parallel over
// disjoint output slices only (no atomics, no cross-thread reductions), so
// results are bitwise identical for any thread count. The serial oracles
// live in reference.hpp.
namespace synprune {

struct ConvGeom {
  int stride = 1;
  int pad = 0;
};

std::array<std::size_t, 2> conv_output_hw(std::size_t in_h, std::size_t in_w, std::size_t kh,
                                          std::size_t kw, ConvGeom g);

// Zero-pads every image plane of an NCHW tensor by pad on all four sides.
template <typename T>
TensorT<T> pad_nchw(const TensorT<T>& x, long pad);

// Accumulates one channel-plane convolution into an output plane. xc points
// into an already padded input plane with row stride pw; yk is out_h*out_w.
// No bounds checks; 3x3 stride-1 takes a fused fast path.
template <typename T>
void conv_plane_accumulate(const T* xc, const T* wkc, T* yk, long pw, long out_h, long out_w,
                           long kh, long kw, long stride);

// y[n,k] = sum_c x[n,c] * w[k,c]  (cross-correlation, zero padding, no bias)
template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, ConvGeom g);

// gx = dL/dx given dL/dy; in_hw is the spatial shape of x.
template <typename T>
TensorT<T> conv2d_backward_input(const TensorT<T>& w, const TensorT<T>& gy, ConvGeom g,
                                 std::array<std::size_t, 2> in_hw);

// gw = dL/dw given dL/dy.
template <typename T>
TensorT<T> conv2d_backward_weight(const TensorT<T>& x, const TensorT<T>& gy, ConvGeom g,
                                  std::array<std::size_t, 2> khkw);

// Per-channel batch statistics (biased variance over N*H*W).
template <typename T>
struct BnStats {
  TensorT<T> mean;
  TensorT<T> var;
};

// Train-mode forward. gamma may be null (scale fixed to 1). xhat is saved
// for backward.
template <typename T>
void batchnorm_forward_train(const TensorT<T>& x, const TensorT<T>* gamma, const TensorT<T>& beta,
                             T eps, TensorT<T>& y, TensorT<T>& xhat, BnStats<T>& stats);

template <typename T>
TensorT<T> batchnorm_forward_eval(const TensorT<T>& x, const TensorT<T>* gamma,
                                  const TensorT<T>& beta, const TensorT<T>& run_mean,
                                  const TensorT<T>& run_var, T eps);

// Full train-mode backward through the batch statistics.
template <typename T>
void batchnorm_backward(const TensorT<T>& gy, const TensorT<T>& xhat, const BnStats<T>& stats,
                        const TensorT<T>* gamma, T eps, TensorT<T>& gx, TensorT<T>* ggamma,
                        TensorT<T>& gbeta);

template <typename T>
TensorT<T> relu(const TensorT<T>& x);

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& gy, const TensorT<T>& x);

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);

// NCHW -> NC mean over spatial positions.
template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& x);

template <typename T>
TensorT<T> global_avg_pool_backward(const TensorT<T>& gy, std::array<std::size_t, 2> in_hw);

// y = x * W^T + b with x: N x in, W: out x in.
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b);

template <typename T>
void linear_backward(const TensorT<T>& gy, const TensorT<T>& x, const TensorT<T>& w, TensorT<T>& gx,
                     TensorT<T>& gw, TensorT<T>& gb);

// Mean over batch of -log softmax(logits)[label], max-subtracted.
template <typename T>
T softmax_cross_entropy(const TensorT<T>& logits, const std::vector<int>& labels);

// d(mean CE)/dlogits = (softmax - onehot) / batch.
template <typename T>
TensorT<T> softmax_cross_entropy_backward(const TensorT<T>& logits, const std::vector<int>& labels);

// Frobenius norm decomposition k = r * k'. A zero kernel reports zero=true
// and yields the canonical unit kernel (delta at the spatial center).
template <typename T>
struct KernelNorm {
  T norm = 0;
  TensorT<T> unit;
  bool zero = false;
};

template <typename T>
KernelNorm<T> normalize_kernel(const TensorT<T>& k);

// Number of threads the parallel kernels will use.
int kernel_threads();

}  // namespace synprune
