#include "synprune/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace synprune {

int kernel_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

std::array<std::size_t, 2> conv_output_hw(std::size_t in_h, std::size_t in_w, std::size_t kh,
                                          std::size_t kw, ConvGeom g) {
  check(g.stride > 0, "conv2d: stride must be positive");
  check(g.pad >= 0, "conv2d: padding must be non-negative");
  const long oh = (long(in_h) + 2 * g.pad - long(kh)) / g.stride + 1;
  const long ow = (long(in_w) + 2 * g.pad - long(kw)) / g.stride + 1;
  check(oh > 0 && ow > 0, "conv2d: non-positive output extent");
  return {std::size_t(oh), std::size_t(ow)};
}

// Zero-pads every image plane so the conv loops below never bounds-check.
template <typename T>
TensorT<T> pad_nchw(const TensorT<T>& x, long pad) {
  const long n_batch = long(x.dim(0)), c_in = long(x.dim(1));
  const long in_h = long(x.dim(2)), in_w = long(x.dim(3));
  const long ph = in_h + 2 * pad, pw = in_w + 2 * pad;
  TensorT<T> out({std::size_t(n_batch), std::size_t(c_in), std::size_t(ph), std::size_t(pw)});
  const long planes = n_batch * c_in;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long p = 0; p < planes; ++p) {
    const T* src = x.data() + p * in_h * in_w;
    T* dst = out.data() + p * ph * pw + pad * pw + pad;
    for (long h = 0; h < in_h; ++h) std::copy(src + h * in_w, src + (h + 1) * in_w, dst + h * pw);
  }
  return out;
}

namespace {

// Crops the interior back out of a padded gradient plane.
template <typename T>
TensorT<T> crop_nchw(const TensorT<T>& x, long pad, std::array<std::size_t, 2> hw) {
  const long n_batch = long(x.dim(0)), c_in = long(x.dim(1));
  const long ph = long(x.dim(2)), pw = long(x.dim(3));
  const long in_h = long(hw[0]), in_w = long(hw[1]);
  TensorT<T> out({std::size_t(n_batch), std::size_t(c_in), hw[0], hw[1]});
  const long planes = n_batch * c_in;
  for (long p = 0; p < planes; ++p) {
    const T* src = x.data() + p * ph * pw + pad * pw + pad;
    T* dst = out.data() + p * in_h * in_w;
    for (long h = 0; h < in_h; ++h) std::copy(src + h * pw, src + h * pw + in_w, dst + h * in_w);
  }
  return out;
}

}  // namespace

// y[k] += sum over one channel plane, padded input, no bounds checks.
template <typename T>
void conv_plane_accumulate(const T* xc, const T* wkc, T* yk, long pw, long out_h, long out_w,
                           long kh, long kw, long stride) {
  if (kh == 3 && kw == 3 && stride == 1) {
    const T w00 = wkc[0], w01 = wkc[1], w02 = wkc[2];
    const T w10 = wkc[3], w11 = wkc[4], w12 = wkc[5];
    const T w20 = wkc[6], w21 = wkc[7], w22 = wkc[8];
    for (long oh = 0; oh < out_h; ++oh) {
      const T* x0 = xc + oh * pw;
      const T* x1 = x0 + pw;
      const T* x2 = x1 + pw;
      T* yrow = yk + oh * out_w;
      for (long ow = 0; ow < out_w; ++ow) {
        yrow[ow] += w00 * x0[ow] + w01 * x0[ow + 1] + w02 * x0[ow + 2] + w10 * x1[ow] +
                    w11 * x1[ow + 1] + w12 * x1[ow + 2] + w20 * x2[ow] + w21 * x2[ow + 1] +
                    w22 * x2[ow + 2];
      }
    }
    return;
  }
  for (long oh = 0; oh < out_h; ++oh) {
    T* yrow = yk + oh * out_w;
    for (long r = 0; r < kh; ++r) {
      const T* xrow = xc + (oh * stride + r) * pw;
      for (long s = 0; s < kw; ++s) {
        const T wv = wkc[r * kw + s];
        if (stride == 1) {
          const T* xoff = xrow + s;
          for (long ow = 0; ow < out_w; ++ow) yrow[ow] += wv * xoff[ow];
        } else {
          for (long ow = 0; ow < out_w; ++ow) yrow[ow] += wv * xrow[ow * stride + s];
        }
      }
    }
  }
}

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, ConvGeom g) {
  check(x.rank() == 4 && w.rank() == 4, "conv2d: rank-4 input and weights expected");
  const long n_batch = long(x.dim(0)), c_in = long(x.dim(1));
  const long in_h = long(x.dim(2)), in_w = long(x.dim(3));
  const long k_out = long(w.dim(0)), kh = long(w.dim(2)), kw = long(w.dim(3));
  check(long(w.dim(1)) == c_in, "conv2d: channel mismatch");
  const auto [out_h_u, out_w_u] = conv_output_hw(in_h, in_w, kh, kw, g);
  const long out_h = long(out_h_u), out_w = long(out_w_u);

  TensorT<T> xpad;
  if (g.pad > 0) xpad = pad_nchw(x, g.pad);
  const long pw = in_w + 2 * g.pad;
  const long plane = (in_h + 2 * g.pad) * pw;

  TensorT<T> y({std::size_t(n_batch), std::size_t(k_out), out_h_u, out_w_u});
  const T* xp = g.pad > 0 ? xpad.data() : x.data();
  const T* wp = w.data();
  T* yp = y.data();

#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static)
#endif
  for (long n = 0; n < n_batch; ++n)
    for (long k = 0; k < k_out; ++k) {
      T* yk = yp + (n * k_out + k) * out_h * out_w;
      std::fill(yk, yk + out_h * out_w, T(0));
      for (long c = 0; c < c_in; ++c)
        conv_plane_accumulate(xp + (n * c_in + c) * plane, wp + (k * c_in + c) * kh * kw, yk, pw,
                              out_h, out_w, kh, kw, g.stride);
    }
  return y;
}

template <typename T>
TensorT<T> conv2d_backward_input(const TensorT<T>& w, const TensorT<T>& gy, ConvGeom g,
                                 std::array<std::size_t, 2> in_hw) {
  const long n_batch = long(gy.dim(0)), k_out = long(gy.dim(1));
  const long out_h = long(gy.dim(2)), out_w = long(gy.dim(3));
  const long c_in = long(w.dim(1)), kh = long(w.dim(2)), kw = long(w.dim(3));
  check(long(w.dim(0)) == k_out, "conv2d_backward_input: filter mismatch");
  const long stride = g.stride, pad = g.pad;
  const long ph = long(in_hw[0]) + 2 * pad, pw = long(in_hw[1]) + 2 * pad;

  // Scatter into a padded buffer, then crop the border away.
  TensorT<T> gxp_t({std::size_t(n_batch), std::size_t(c_in), std::size_t(ph), std::size_t(pw)});
  const T* wp = w.data();
  const T* gyp = gy.data();
  T* gxp = gxp_t.data();

#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static)
#endif
  for (long n = 0; n < n_batch; ++n)
    for (long c = 0; c < c_in; ++c) {
      T* gxc = gxp + (n * c_in + c) * ph * pw;
      for (long k = 0; k < k_out; ++k) {
        const T* gyk = gyp + (n * k_out + k) * out_h * out_w;
        const T* wkc = wp + (k * c_in + c) * kh * kw;
        for (long oh = 0; oh < out_h; ++oh) {
          const T* gyrow = gyk + oh * out_w;
          for (long r = 0; r < kh; ++r) {
            T* gxrow = gxc + (oh * stride + r) * pw;
            for (long s = 0; s < kw; ++s) {
              const T wv = wkc[r * kw + s];
              if (stride == 1) {
                T* gxoff = gxrow + s;
                for (long ow = 0; ow < out_w; ++ow) gxoff[ow] += wv * gyrow[ow];
              } else {
                for (long ow = 0; ow < out_w; ++ow) gxrow[ow * stride + s] += wv * gyrow[ow];
              }
            }
          }
        }
      }
    }
  if (pad == 0) return gxp_t;
  return crop_nchw(gxp_t, pad, in_hw);
}

template <typename T>
TensorT<T> conv2d_backward_weight(const TensorT<T>& x, const TensorT<T>& gy, ConvGeom g,
                                  std::array<std::size_t, 2> khkw) {
  const long n_batch = long(x.dim(0)), c_in = long(x.dim(1));
  const long in_h = long(x.dim(2)), in_w = long(x.dim(3));
  const long k_out = long(gy.dim(1)), out_h = long(gy.dim(2)), out_w = long(gy.dim(3));
  check(long(gy.dim(0)) == n_batch, "conv2d_backward_weight: batch mismatch");
  const long kh = long(khkw[0]), kw = long(khkw[1]);
  const long stride = g.stride;

  TensorT<T> xpad;
  if (g.pad > 0) xpad = pad_nchw(x, g.pad);
  const long pw = in_w + 2 * g.pad;
  const long plane = (in_h + 2 * g.pad) * pw;

  TensorT<T> gw({std::size_t(k_out), std::size_t(c_in), khkw[0], khkw[1]});
  const T* xp = g.pad > 0 ? xpad.data() : x.data();
  const T* gyp = gy.data();
  T* gwp = gw.data();

#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static)
#endif
  for (long k = 0; k < k_out; ++k)
    for (long c = 0; c < c_in; ++c) {
      T* gwkc = gwp + (k * c_in + c) * kh * kw;
      for (long n = 0; n < n_batch; ++n) {
        const T* xc = xp + (n * c_in + c) * plane;
        const T* gyk = gyp + (n * k_out + k) * out_h * out_w;
        for (long oh = 0; oh < out_h; ++oh) {
          const T* gyrow = gyk + oh * out_w;
          for (long r = 0; r < kh; ++r) {
            const T* xrow = xc + (oh * stride + r) * pw;
            for (long s = 0; s < kw; ++s) {
              T acc = 0;
              if (stride == 1) {
                const T* xoff = xrow + s;
                for (long ow = 0; ow < out_w; ++ow) acc += gyrow[ow] * xoff[ow];
              } else {
                for (long ow = 0; ow < out_w; ++ow) acc += gyrow[ow] * xrow[ow * stride + s];
              }
              gwkc[r * kw + s] += acc;
            }
          }
        }
      }
    }
  return gw;
}

template <typename T>
void batchnorm_forward_train(const TensorT<T>& x, const TensorT<T>* gamma, const TensorT<T>& beta,
                             T eps, TensorT<T>& y, TensorT<T>& xhat, BnStats<T>& stats) {
  check(x.rank() == 4, "batchnorm: rank-4 input expected");
  const long n_batch = long(x.dim(0)), ch = long(x.dim(1));
  const long hw = long(x.dim(2) * x.dim(3));
  check(beta.size() == x.dim(1), "batchnorm: channel mismatch");
  if (gamma) check(gamma->size() == x.dim(1), "batchnorm: gamma channel mismatch");
  y = TensorT<T>(x.shape());
  xhat = TensorT<T>(x.shape());
  stats.mean = TensorT<T>({x.dim(1)});
  stats.var = TensorT<T>({x.dim(1)});
  const T m = T(n_batch * hw);
  const T* xp = x.data();
  T* yp = y.data();
  T* xhp = xhat.data();

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long c = 0; c < ch; ++c) {
    T mean = 0;
    for (long n = 0; n < n_batch; ++n) {
      const T* xc = xp + (n * ch + c) * hw;
      for (long i = 0; i < hw; ++i) mean += xc[i];
    }
    mean /= m;
    T var = 0;
    for (long n = 0; n < n_batch; ++n) {
      const T* xc = xp + (n * ch + c) * hw;
      for (long i = 0; i < hw; ++i) {
        const T d = xc[i] - mean;
        var += d * d;
      }
    }
    var /= m;
    stats.mean[std::size_t(c)] = mean;
    stats.var[std::size_t(c)] = var;
    const T inv = T(1) / std::sqrt(var + eps);
    const T gsc = gamma ? (*gamma)[std::size_t(c)] : T(1);
    const T bsc = beta[std::size_t(c)];
    for (long n = 0; n < n_batch; ++n) {
      const T* xc = xp + (n * ch + c) * hw;
      T* yc = yp + (n * ch + c) * hw;
      T* xhc = xhp + (n * ch + c) * hw;
      for (long i = 0; i < hw; ++i) {
        const T h = (xc[i] - mean) * inv;
        xhc[i] = h;
        yc[i] = gsc * h + bsc;
      }
    }
  }
}

template <typename T>
TensorT<T> batchnorm_forward_eval(const TensorT<T>& x, const TensorT<T>* gamma,
                                  const TensorT<T>& beta, const TensorT<T>& run_mean,
                                  const TensorT<T>& run_var, T eps) {
  check(x.rank() == 4, "batchnorm: rank-4 input expected");
  const long n_batch = long(x.dim(0)), ch = long(x.dim(1));
  const long hw = long(x.dim(2) * x.dim(3));
  check(beta.size() == x.dim(1), "batchnorm: channel mismatch");
  TensorT<T> y(x.shape());
  const T* xp = x.data();
  T* yp = y.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long c = 0; c < ch; ++c) {
    const T inv = T(1) / std::sqrt(run_var[std::size_t(c)] + eps);
    const T gsc = gamma ? (*gamma)[std::size_t(c)] : T(1);
    const T mean = run_mean[std::size_t(c)];
    const T bsc = beta[std::size_t(c)];
    for (long n = 0; n < n_batch; ++n) {
      const T* xc = xp + (n * ch + c) * hw;
      T* yc = yp + (n * ch + c) * hw;
      for (long i = 0; i < hw; ++i) yc[i] = gsc * (xc[i] - mean) * inv + bsc;
    }
  }
  return y;
}

template <typename T>
void batchnorm_backward(const TensorT<T>& gy, const TensorT<T>& xhat, const BnStats<T>& stats,
                        const TensorT<T>* gamma, T eps, TensorT<T>& gx, TensorT<T>* ggamma,
                        TensorT<T>& gbeta) {
  const long n_batch = long(gy.dim(0)), ch = long(gy.dim(1));
  const long hw = long(gy.dim(2) * gy.dim(3));
  gx = TensorT<T>(gy.shape());
  gbeta = TensorT<T>({gy.dim(1)});
  if (ggamma) *ggamma = TensorT<T>({gy.dim(1)});
  const T m = T(n_batch * hw);
  const T* gyp = gy.data();
  const T* xhp = xhat.data();
  T* gxp = gx.data();

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long c = 0; c < ch; ++c) {
    T sum_gy = 0, sum_gy_xhat = 0;
    for (long n = 0; n < n_batch; ++n) {
      const T* gc = gyp + (n * ch + c) * hw;
      const T* hc = xhp + (n * ch + c) * hw;
      for (long i = 0; i < hw; ++i) {
        sum_gy += gc[i];
        sum_gy_xhat += gc[i] * hc[i];
      }
    }
    gbeta[std::size_t(c)] = sum_gy;
    if (ggamma) (*ggamma)[std::size_t(c)] = sum_gy_xhat;
    const T gsc = gamma ? (*gamma)[std::size_t(c)] : T(1);
    const T inv = T(1) / std::sqrt(stats.var[std::size_t(c)] + eps);
    const T scale = gsc * inv / m;
    for (long n = 0; n < n_batch; ++n) {
      const T* gc = gyp + (n * ch + c) * hw;
      const T* hc = xhp + (n * ch + c) * hw;
      T* oc = gxp + (n * ch + c) * hw;
      for (long i = 0; i < hw; ++i)
        oc[i] = scale * (m * gc[i] - sum_gy - hc[i] * sum_gy_xhat);
    }
  }
}

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
  TensorT<T> y(x.shape());
  const T* xp = x.data();
  T* yp = y.data();
  const long n = long(x.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long i = 0; i < n; ++i) yp[i] = xp[i] > T(0) ? xp[i] : T(0);
  return y;
}

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& gy, const TensorT<T>& x) {
  TensorT<T> gx(x.shape());
  const T* xp = x.data();
  const T* gp = gy.data();
  T* op = gx.data();
  const long n = long(x.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long i = 0; i < n; ++i) op[i] = xp[i] > T(0) ? gp[i] : T(0);
  return gx;
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  check(a.same_shape(b), "add: shape mismatch");
  TensorT<T> y(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
  return y;
}

template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& x) {
  check(x.rank() == 4, "global_avg_pool: rank-4 input expected");
  const std::size_t n_batch = x.dim(0), ch = x.dim(1), hw = x.dim(2) * x.dim(3);
  TensorT<T> y({n_batch, ch});
  const T inv = T(1) / T(hw);
  for (std::size_t n = 0; n < n_batch; ++n)
    for (std::size_t c = 0; c < ch; ++c) {
      const T* xc = x.data() + (n * ch + c) * hw;
      T acc = 0;
      for (std::size_t i = 0; i < hw; ++i) acc += xc[i];
      y.at2(n, c) = acc * inv;
    }
  return y;
}

template <typename T>
TensorT<T> global_avg_pool_backward(const TensorT<T>& gy, std::array<std::size_t, 2> in_hw) {
  const std::size_t n_batch = gy.dim(0), ch = gy.dim(1), hw = in_hw[0] * in_hw[1];
  TensorT<T> gx({n_batch, ch, in_hw[0], in_hw[1]});
  const T inv = T(1) / T(hw);
  for (std::size_t n = 0; n < n_batch; ++n)
    for (std::size_t c = 0; c < ch; ++c) {
      const T g = gy.at2(n, c) * inv;
      T* xc = gx.data() + (n * ch + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) xc[i] = g;
    }
  return gx;
}

template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
  check(x.rank() == 2 && w.rank() == 2, "linear: rank-2 input and weights expected");
  const long n_batch = long(x.dim(0)), in = long(x.dim(1)), out = long(w.dim(0));
  check(long(w.dim(1)) == in, "linear: feature mismatch");
  check(b.size() == w.dim(0), "linear: bias mismatch");
  TensorT<T> y({std::size_t(n_batch), std::size_t(out)});
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long n = 0; n < n_batch; ++n) {
    const T* xr = x.data() + n * in;
    T* yr = y.data() + n * out;
    for (long o = 0; o < out; ++o) {
      const T* wr = w.data() + o * in;
      T acc = b[std::size_t(o)];
      for (long i = 0; i < in; ++i) acc += xr[i] * wr[i];
      yr[o] = acc;
    }
  }
  return y;
}

template <typename T>
void linear_backward(const TensorT<T>& gy, const TensorT<T>& x, const TensorT<T>& w, TensorT<T>& gx,
                     TensorT<T>& gw, TensorT<T>& gb) {
  const long n_batch = long(x.dim(0)), in = long(x.dim(1)), out = long(w.dim(0));
  gx = TensorT<T>(x.shape());
  gw = TensorT<T>(w.shape());
  gb = TensorT<T>({w.dim(0)});
  for (long n = 0; n < n_batch; ++n) {
    const T* gr = gy.data() + n * out;
    T* xr = gx.data() + n * in;
    for (long o = 0; o < out; ++o) {
      const T g = gr[o];
      const T* wr = w.data() + o * in;
      for (long i = 0; i < in; ++i) xr[i] += g * wr[i];
    }
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long o = 0; o < out; ++o) {
    T* wr = gw.data() + o * in;
    T acc = 0;
    for (long n = 0; n < n_batch; ++n) {
      const T g = gy.data()[n * out + o];
      acc += g;
      const T* xr = x.data() + n * in;
      for (long i = 0; i < in; ++i) wr[i] += g * xr[i];
    }
    gb[std::size_t(o)] = acc;
  }
}

template <typename T>
T softmax_cross_entropy(const TensorT<T>& logits, const std::vector<int>& labels) {
  check(logits.rank() == 2, "softmax_cross_entropy: rank-2 logits expected");
  const std::size_t n = logits.dim(0), classes = logits.dim(1);
  check(labels.size() == n, "softmax_cross_entropy: batch mismatch");
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    check(labels[i] >= 0 && std::size_t(labels[i]) < classes,
          "softmax_cross_entropy: label out of range");
    const T* row = logits.data() + i * classes;
    T zmax = row[0];
    for (std::size_t j = 1; j < classes; ++j) zmax = std::max(zmax, row[j]);
    T denom = 0;
    for (std::size_t j = 0; j < classes; ++j) denom += std::exp(row[j] - zmax);
    total += std::log(denom) - (row[std::size_t(labels[i])] - zmax);
  }
  return total / T(n);
}

template <typename T>
TensorT<T> softmax_cross_entropy_backward(const TensorT<T>& logits, const std::vector<int>& labels) {
  const std::size_t n = logits.dim(0), classes = logits.dim(1);
  TensorT<T> gx(logits.shape());
  const T invn = T(1) / T(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.data() + i * classes;
    T* gr = gx.data() + i * classes;
    T zmax = row[0];
    for (std::size_t j = 1; j < classes; ++j) zmax = std::max(zmax, row[j]);
    T denom = 0;
    for (std::size_t j = 0; j < classes; ++j) denom += std::exp(row[j] - zmax);
    for (std::size_t j = 0; j < classes; ++j) gr[j] = std::exp(row[j] - zmax) / denom * invn;
    gr[std::size_t(labels[i])] -= invn;
  }
  return gx;
}

template <typename T>
KernelNorm<T> normalize_kernel(const TensorT<T>& k) {
  check(k.rank() == 2, "normalize_kernel: rank-2 kernel expected");
  KernelNorm<T> out;
  T sq = 0;
  for (std::size_t i = 0; i < k.size(); ++i) sq += k[i] * k[i];
  out.norm = std::sqrt(sq);
  if (out.norm == T(0)) {
    out.zero = true;
    out.unit = TensorT<T>(k.shape());
    out.unit.at2(k.dim(0) / 2, k.dim(1) / 2) = T(1);
    return out;
  }
  out.unit = TensorT<T>(k.shape());
  const T inv = T(1) / out.norm;
  for (std::size_t i = 0; i < k.size(); ++i) out.unit[i] = k[i] * inv;
  return out;
}

#define SYNPRUNE_INSTANTIATE(T)                                                                    \
  template TensorT<T> pad_nchw(const TensorT<T>&, long);                                           \
  template void conv_plane_accumulate(const T*, const T*, T*, long, long, long, long, long, long); \
  template TensorT<T> conv2d(const TensorT<T>&, const TensorT<T>&, ConvGeom);                      \
  template TensorT<T> conv2d_backward_input(const TensorT<T>&, const TensorT<T>&, ConvGeom,        \
                                            std::array<std::size_t, 2>);                           \
  template TensorT<T> conv2d_backward_weight(const TensorT<T>&, const TensorT<T>&, ConvGeom,       \
                                             std::array<std::size_t, 2>);                          \
  template void batchnorm_forward_train(const TensorT<T>&, const TensorT<T>*, const TensorT<T>&,   \
                                        T, TensorT<T>&, TensorT<T>&, BnStats<T>&);                 \
  template TensorT<T> batchnorm_forward_eval(const TensorT<T>&, const TensorT<T>*,                 \
                                             const TensorT<T>&, const TensorT<T>&,                 \
                                             const TensorT<T>&, T);                                \
  template void batchnorm_backward(const TensorT<T>&, const TensorT<T>&, const BnStats<T>&,        \
                                   const TensorT<T>*, T, TensorT<T>&, TensorT<T>*, TensorT<T>&);   \
  template TensorT<T> relu(const TensorT<T>&);                                                     \
  template TensorT<T> relu_backward(const TensorT<T>&, const TensorT<T>&);                         \
  template TensorT<T> add(const TensorT<T>&, const TensorT<T>&);                                   \
  template TensorT<T> global_avg_pool(const TensorT<T>&);                                          \
  template TensorT<T> global_avg_pool_backward(const TensorT<T>&, std::array<std::size_t, 2>);     \
  template TensorT<T> linear(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&);             \
  template void linear_backward(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,           \
                                TensorT<T>&, TensorT<T>&, TensorT<T>&);                            \
  template T softmax_cross_entropy(const TensorT<T>&, const std::vector<int>&);                    \
  template TensorT<T> softmax_cross_entropy_backward(const TensorT<T>&, const std::vector<int>&);  \
  template KernelNorm<T> normalize_kernel(const TensorT<T>&);

SYNPRUNE_INSTANTIATE(float)
SYNPRUNE_INSTANTIATE(double)
#undef SYNPRUNE_INSTANTIATE

}  // namespace synprune
