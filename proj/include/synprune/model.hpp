#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "synprune/autodiff.hpp"
#include "synprune/tensor.hpp"

namespace synprune {

// Ordered layer descriptors. Networks are a flat walk over these; residual
// groupings are marked with begin/end descriptors around identically shaped
// segments.
struct LayerDesc {
  enum class Kind { kConv, kBatchNorm, kRelu, kGlobalAvgPool, kLinear, kResidualBegin, kResidualEnd };
  Kind kind = Kind::kConv;
  std::size_t out_channels = 0;  // conv
  std::size_t ksize = 3;         // conv
  int stride = 1;                // conv
  int pad = 1;                   // conv
  std::size_t out_features = 0;  // linear
};

struct ModelSpec {
  std::string name;
  std::size_t in_channels = 0;
  std::size_t num_classes = 0;
  std::vector<LayerDesc> layers;
};

// Parameterization variants. The full method fixes the BN scale to 1 and
// trains unit directions with explicit strengths; the two ablations flip one
// flag each, and {false, false} is a standard conv + scaled-BN model (the
// source side of equivalence_transform).
struct VariantFlags {
  bool fix_gamma = true;
  bool kernel_norm = true;
};

// Conv(in->32, 3x3) -> five BN-ReLU-Conv(32) blocks (block 1 stride 2, blocks
// 3-4 wrapped in a residual pair) -> BN-ReLU -> GAP -> linear classifier.
ModelSpec desknet_spec(std::size_t in_channels, std::size_t num_classes);
// Two convs at width 8; the smallest structure exercising BN-f-Conv order.
ModelSpec tinynet_spec(std::size_t in_channels, std::size_t num_classes);
ModelSpec spec_by_name(const std::string& name, std::size_t in_channels, std::size_t num_classes);

// Throws std::invalid_argument when channel extents do not chain, a non-first
// conv lacks a preceding BN, or residual markers are unbalanced/misplaced.
void validate_spec(const ModelSpec& spec);

// For each conv ordinal, the ordinal of the BN feeding it (-1 for the stem).
std::vector<int> bn_feeding_conv(const ModelSpec& spec);
// The BN ordinal feeding the global pool / classifier (-1 if none).
int bn_feeding_classifier(const ModelSpec& spec);

template <typename T>
class ModelT {
 public:
  struct ConvLayer {
    ad::ParamT<T> weights;    // directions when kernel_norm, raw kernels otherwise
    ad::ParamT<T> strengths;  // present (nonempty) only when kernel_norm
    ad::KernelMask mask;      // K*C, 1 = connected
    ConvGeom geom;
    std::size_t in_channels = 0, out_channels = 0, ksize = 3;
  };
  struct BnLayer {
    ad::ParamT<T> beta;
    ad::ParamT<T> log_gamma;  // present (nonempty) only when !fix_gamma
    ad::BnRunning<T> running;
    std::size_t channels = 0;
  };
  struct LinearLayer {
    ad::ParamT<T> w;
    ad::ParamT<T> b;
  };

  ModelT(ModelSpec spec, VariantFlags flags, std::uint32_t init_seed);

  typename ad::TapeT<T>::Var forward(ad::TapeT<T>& tape, TensorT<T> x, ad::BnMode bn_mode);

  // Every trainable tensor, in a fixed documented order.
  std::vector<ad::ParamT<T>*> params();
  void zero_grads();
  // Projects every unmasked direction back to unit Frobenius norm. The
  // forward pass divides by the norm, so this never changes the function.
  void renormalize_directions();
  // Eval-mode argmax predictions.
  std::vector<int> predict(const TensorT<T>& x);

  const ModelSpec& spec() const { return spec_; }
  VariantFlags flags() const { return flags_; }

  template <typename U>
  ModelT<U> cast() const {
    ModelT<U> out(spec_, flags_, 0);
    for (std::size_t i = 0; i < convs.size(); ++i) {
      out.convs[i].weights = convs[i].weights.template cast<U>();
      out.convs[i].strengths = convs[i].strengths.template cast<U>();
      out.convs[i].mask = convs[i].mask;
    }
    for (std::size_t i = 0; i < bns.size(); ++i) {
      out.bns[i].beta = bns[i].beta.template cast<U>();
      out.bns[i].log_gamma = bns[i].log_gamma.template cast<U>();
      out.bns[i].running.mean = bns[i].running.mean.template cast<U>();
      out.bns[i].running.var = bns[i].running.var.template cast<U>();
    }
    out.fc.w = fc.w.template cast<U>();
    out.fc.b = fc.b.template cast<U>();
    return out;
  }

  std::vector<ConvLayer> convs;
  std::vector<BnLayer> bns;
  LinearLayer fc;

 private:
  ModelSpec spec_;
  VariantFlags flags_;
};

using Model = ModelT<float>;
using ModelD = ModelT<double>;

// Rewrites a standard conv + scaled-BN model (flags {false, false}) into the
// reparameterized form (flags {true, true}): strengths absorb the preceding
// BN scale (s = gamma_c * |k|_F), BN shifts become beta/gamma, and the final
// BN's scale folds into the classifier columns. Eval outputs agree with the
// source on all inputs. Throws std::invalid_argument if any gamma <= 0.
Model equivalence_transform(const Model& source);

}  // namespace synprune
