#include "synprune/reference.hpp"

#include <cmath>

namespace synprune::ref {

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, int stride, int pad) {
  check(x.rank() == 4 && w.rank() == 4, "conv2d: rank-4 input and weights expected");
  const std::size_t n_batch = x.dim(0), c_in = x.dim(1), in_h = x.dim(2), in_w = x.dim(3);
  const std::size_t k_out = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  check(w.dim(1) == c_in, "conv2d: channel mismatch");
  const long oh_l = (long(in_h) + 2 * pad - long(kh)) / stride + 1;
  const long ow_l = (long(in_w) + 2 * pad - long(kw)) / stride + 1;
  check(oh_l > 0 && ow_l > 0, "conv2d: non-positive output extent");
  const std::size_t out_h = std::size_t(oh_l), out_w = std::size_t(ow_l);

  TensorT<T> y({n_batch, k_out, out_h, out_w});
  for (std::size_t n = 0; n < n_batch; ++n)
    for (std::size_t k = 0; k < k_out; ++k)
      for (std::size_t oh = 0; oh < out_h; ++oh)
        for (std::size_t ow = 0; ow < out_w; ++ow) {
          T acc = 0;
          for (std::size_t c = 0; c < c_in; ++c)
            for (std::size_t r = 0; r < kh; ++r)
              for (std::size_t s = 0; s < kw; ++s) {
                const long ih = long(oh) * stride + long(r) - pad;
                const long iw = long(ow) * stride + long(s) - pad;
                if (ih < 0 || iw < 0 || ih >= long(in_h) || iw >= long(in_w)) continue;
                acc += x.at4(n, c, std::size_t(ih), std::size_t(iw)) *
                       w.at4(k, c, r, s);
              }
          y.at4(n, k, oh, ow) = acc;
        }
  return y;
}

template <typename T>
TensorT<T> batchnorm_train(const TensorT<T>& x, const TensorT<T>* gamma,
                           const TensorT<T>& beta, T eps) {
  check(x.rank() == 4, "batchnorm: rank-4 input expected");
  const std::size_t n_batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  check(beta.size() == ch, "batchnorm: channel mismatch");
  TensorT<T> y(x.shape());
  const T m = T(n_batch * h * w);
  for (std::size_t c = 0; c < ch; ++c) {
    T mean = 0;
    for (std::size_t n = 0; n < n_batch; ++n)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) mean += x.at4(n, c, i, j);
    mean /= m;
    T var = 0;
    for (std::size_t n = 0; n < n_batch; ++n)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const T d = x.at4(n, c, i, j) - mean;
          var += d * d;
        }
    var /= m;
    const T inv = T(1) / std::sqrt(var + eps);
    const T g = gamma ? (*gamma)[c] : T(1);
    for (std::size_t n = 0; n < n_batch; ++n)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
          y.at4(n, c, i, j) = g * (x.at4(n, c, i, j) - mean) * inv + beta[c];
  }
  return y;
}

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
  TensorT<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return y;
}

double softmax_cross_entropy(const TensorT<double>& logits, const std::vector<int>& labels) {
  check(logits.rank() == 2, "softmax_cross_entropy: rank-2 logits expected");
  const std::size_t n = logits.dim(0), classes = logits.dim(1);
  check(labels.size() == n, "softmax_cross_entropy: batch mismatch");
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    check(labels[i] >= 0 && std::size_t(labels[i]) < classes,
          "softmax_cross_entropy: label out of range");
    double denom = 0;
    for (std::size_t j = 0; j < classes; ++j) denom += std::exp(logits.at2(i, j));
    total += -std::log(std::exp(logits.at2(i, std::size_t(labels[i]))) / denom);
  }
  return total / double(n);
}

template TensorT<float> conv2d(const TensorT<float>&, const TensorT<float>&, int, int);
template TensorT<double> conv2d(const TensorT<double>&, const TensorT<double>&, int, int);
template TensorT<float> batchnorm_train(const TensorT<float>&, const TensorT<float>*,
                                        const TensorT<float>&, float);
template TensorT<double> batchnorm_train(const TensorT<double>&, const TensorT<double>*,
                                         const TensorT<double>&, double);
template TensorT<float> relu(const TensorT<float>&);
template TensorT<double> relu(const TensorT<double>&);

}  // namespace synprune::ref
