#pragma once

#include "synprune/tensor.hpp"

// Serial reference kernels. Naive textbook loops, no OpenMP, no layout
// tricks. These are the oracles the parallel kernels are tested against and
// the baseline the kernel benchmark compares with. Keep them independent of
// kernels.cpp.
namespace synprune::ref {

// Cross-correlation, zero padding: y[n,k,oh,ow] = sum_c,kh,kw x*w.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, int stride, int pad);

// Train-mode batch norm with biased batch statistics over N*H*W per channel.
// gamma may be null (scale fixed to 1).
template <typename T>
TensorT<T> batchnorm_train(const TensorT<T>& x, const TensorT<T>* gamma,
                           const TensorT<T>& beta, T eps);

template <typename T>
TensorT<T> relu(const TensorT<T>& x);

// Mean over the batch of -log softmax(logits)[label], evaluated in double
// via the direct formula.
double softmax_cross_entropy(const TensorT<double>& logits, const std::vector<int>& labels);

}  // namespace synprune::ref
