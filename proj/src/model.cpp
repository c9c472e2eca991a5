#include "synprune/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <utility>

namespace synprune {

namespace {

LayerDesc conv_desc(std::size_t out, int stride) {
  LayerDesc d;
  d.kind = LayerDesc::Kind::kConv;
  d.out_channels = out;
  d.ksize = 3;
  d.stride = stride;
  d.pad = 1;
  return d;
}

LayerDesc plain_desc(LayerDesc::Kind k) {
  LayerDesc d;
  d.kind = k;
  return d;
}

LayerDesc linear_desc(std::size_t out) {
  LayerDesc d;
  d.kind = LayerDesc::Kind::kLinear;
  d.out_features = out;
  return d;
}

}  // namespace

ModelSpec desknet_spec(std::size_t in_channels, std::size_t num_classes) {
  using K = LayerDesc::Kind;
  ModelSpec s;
  s.name = "desknet";
  s.in_channels = in_channels;
  s.num_classes = num_classes;
  s.layers = {
      conv_desc(32, 1),                                             // stem
      plain_desc(K::kBatchNorm), plain_desc(K::kRelu), conv_desc(32, 2),
      plain_desc(K::kBatchNorm), plain_desc(K::kRelu), conv_desc(32, 1),
      plain_desc(K::kResidualBegin),
      plain_desc(K::kBatchNorm), plain_desc(K::kRelu), conv_desc(32, 1),
      plain_desc(K::kBatchNorm), plain_desc(K::kRelu), conv_desc(32, 1),
      plain_desc(K::kResidualEnd),
      plain_desc(K::kBatchNorm), plain_desc(K::kRelu), conv_desc(32, 1),
      plain_desc(K::kBatchNorm), plain_desc(K::kRelu),
      plain_desc(K::kGlobalAvgPool), linear_desc(num_classes),
  };
  return s;
}

ModelSpec tinynet_spec(std::size_t in_channels, std::size_t num_classes) {
  using K = LayerDesc::Kind;
  ModelSpec s;
  s.name = "tinynet";
  s.in_channels = in_channels;
  s.num_classes = num_classes;
  s.layers = {
      conv_desc(8, 1),
      plain_desc(K::kBatchNorm), plain_desc(K::kRelu), conv_desc(8, 1),
      plain_desc(K::kBatchNorm), plain_desc(K::kRelu),
      plain_desc(K::kGlobalAvgPool), linear_desc(num_classes),
  };
  return s;
}

ModelSpec spec_by_name(const std::string& name, std::size_t in_channels, std::size_t num_classes) {
  if (name == "desknet") return desknet_spec(in_channels, num_classes);
  if (name == "tinynet") return tinynet_spec(in_channels, num_classes);
  throw std::invalid_argument("unknown model spec: " + name);
}

void validate_spec(const ModelSpec& spec) {
  using K = LayerDesc::Kind;
  check(spec.in_channels > 0, "spec: in_channels must be positive");
  check(spec.num_classes > 0, "spec: num_classes must be positive");
  check(!spec.layers.empty(), "spec: no layers");

  std::size_t ch = spec.in_channels;
  bool bn_since_conv = false;
  bool seen_conv = false;
  bool after_gap = false;
  bool seen_linear = false;
  int residual_depth = 0;
  std::vector<std::size_t> residual_ch;
  K prev = K::kLinear;
  bool have_prev = false;

  for (const LayerDesc& d : spec.layers) {
    check(!seen_linear, "spec: no layers allowed after the classifier");
    switch (d.kind) {
      case K::kConv:
        check(!after_gap, "spec: conv after global pooling");
        check(d.out_channels > 0 && d.ksize > 0 && d.stride > 0 && d.pad >= 0,
              "spec: bad conv hyperparameters");
        check(!seen_conv || bn_since_conv,
              "spec: every conv except the first needs a preceding batchnorm");
        if (residual_depth > 0)
          check(d.stride == 1 && 2 * std::size_t(d.pad) + 1 == d.ksize,
                "spec: convs inside a residual pair must preserve spatial extents");
        ch = d.out_channels;
        seen_conv = true;
        bn_since_conv = false;
        break;
      case K::kBatchNorm:
        check(!after_gap, "spec: batchnorm after global pooling");
        bn_since_conv = true;
        break;
      case K::kRelu:
        check(!after_gap, "spec: relu after global pooling");
        break;
      case K::kResidualBegin:
        check(!after_gap, "spec: residual after global pooling");
        check(have_prev && (prev == K::kConv || prev == K::kResidualEnd),
              "spec: residual begin must tap a conv output");
        ++residual_depth;
        residual_ch.push_back(ch);
        break;
      case K::kResidualEnd:
        check(residual_depth > 0, "spec: residual end without begin");
        check(have_prev && prev == K::kConv, "spec: residual end must follow a conv output");
        check(residual_ch.back() == ch, "spec: residual branch channel mismatch");
        --residual_depth;
        residual_ch.pop_back();
        break;
      case K::kGlobalAvgPool:
        check(!after_gap, "spec: duplicate global pooling");
        after_gap = true;
        break;
      case K::kLinear:
        check(after_gap, "spec: classifier requires global pooling first");
        check(d.out_features == spec.num_classes, "spec: classifier width != num_classes");
        seen_linear = true;
        break;
    }
    prev = d.kind;
    have_prev = true;
  }
  check(residual_depth == 0, "spec: unbalanced residual markers");
  check(seen_linear, "spec: missing classifier");
}

template <typename T>
ModelT<T>::ModelT(ModelSpec spec, VariantFlags flags, std::uint32_t init_seed)
    : spec_(std::move(spec)), flags_(flags) {
  validate_spec(spec_);
  using K = LayerDesc::Kind;
  std::mt19937 rng(init_seed);
  std::normal_distribution<double> normal{0.0, 1.0};

  std::size_t ch = spec_.in_channels;
  std::size_t conv_i = 0, bn_i = 0;
  for (const LayerDesc& d : spec_.layers) {
    switch (d.kind) {
      case K::kConv: {
        ConvLayer layer;
        layer.in_channels = ch;
        layer.out_channels = d.out_channels;
        layer.ksize = d.ksize;
        layer.geom = ConvGeom{d.stride, d.pad};
        const std::size_t kcount = d.out_channels, cin = ch, kk = d.ksize * d.ksize;
        TensorT<T> w({kcount, cin, d.ksize, d.ksize});
        const double stdev = std::sqrt(2.0 / double(cin * kk));
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = T(normal(rng) * stdev);
        const std::string base = "conv" + std::to_string(conv_i);
        if (flags_.kernel_norm) {
          TensorT<T> s({kcount, cin});
          for (std::size_t sl = 0; sl < kcount * cin; ++sl) {
            double sq = 0;
            for (std::size_t i = 0; i < kk; ++i) {
              const double v = double(w[sl * kk + i]);
              sq += v * v;
            }
            s[sl] = T(std::sqrt(sq));
          }
          layer.weights = ad::ParamT<T>(base + ".dirs", ad::ParamKind::kWeight, std::move(w));
          layer.strengths = ad::ParamT<T>(base + ".strengths", ad::ParamKind::kStrength, std::move(s));
        } else {
          layer.weights = ad::ParamT<T>(base + ".kernels", ad::ParamKind::kGroupKernel, std::move(w));
        }
        layer.mask.assign(kcount * cin, 1);
        convs.push_back(std::move(layer));
        ch = d.out_channels;
        ++conv_i;
        break;
      }
      case K::kBatchNorm: {
        BnLayer layer;
        layer.channels = ch;
        const std::string base = "bn" + std::to_string(bn_i);
        layer.beta = ad::ParamT<T>(base + ".beta", ad::ParamKind::kPlain, TensorT<T>({ch}));
        if (!flags_.fix_gamma)
          layer.log_gamma = ad::ParamT<T>(base + ".log_gamma", ad::ParamKind::kPlain, TensorT<T>({ch}));
        layer.running = ad::BnRunning<T>(ch);
        bns.push_back(std::move(layer));
        ++bn_i;
        break;
      }
      case K::kLinear: {
        TensorT<T> w({d.out_features, ch});
        const double stdev = std::sqrt(2.0 / double(ch));
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = T(normal(rng) * stdev);
        fc.w = ad::ParamT<T>("fc.w", ad::ParamKind::kWeight, std::move(w));
        fc.b = ad::ParamT<T>("fc.b", ad::ParamKind::kBias, TensorT<T>({d.out_features}));
        break;
      }
      default:
        break;
    }
  }
}

template <typename T>
auto ModelT<T>::forward(ad::TapeT<T>& tape, TensorT<T> x, ad::BnMode bn_mode) ->
    typename ad::TapeT<T>::Var {
  using K = LayerDesc::Kind;
  auto h = tape.input(std::move(x));
  std::vector<typename ad::TapeT<T>::Var> taps;
  std::size_t conv_i = 0, bn_i = 0;
  for (const LayerDesc& d : spec_.layers) {
    switch (d.kind) {
      case K::kConv: {
        ConvLayer& layer = convs[conv_i++];
        if (flags_.kernel_norm) {
          h = tape.reparam_conv(h, tape.param(layer.weights), tape.param(layer.strengths),
                                layer.geom, &layer.mask);
        } else {
          h = tape.conv(h, tape.param(layer.weights), layer.geom, &layer.mask);
        }
        break;
      }
      case K::kBatchNorm: {
        BnLayer& layer = bns[bn_i++];
        if (flags_.fix_gamma) {
          h = tape.batchnorm(h, nullptr, tape.param(layer.beta), &layer.running, bn_mode);
        } else {
          auto gamma = tape.exp(tape.param(layer.log_gamma));
          h = tape.batchnorm(h, &gamma, tape.param(layer.beta), &layer.running, bn_mode);
        }
        break;
      }
      case K::kRelu:
        h = tape.relu(h);
        break;
      case K::kGlobalAvgPool:
        h = tape.global_avg_pool(h);
        break;
      case K::kLinear:
        h = tape.linear(h, tape.param(fc.w), tape.param(fc.b));
        break;
      case K::kResidualBegin:
        taps.push_back(h);
        break;
      case K::kResidualEnd:
        h = tape.add(h, taps.back());
        taps.pop_back();
        break;
    }
  }
  return h;
}

template <typename T>
std::vector<ad::ParamT<T>*> ModelT<T>::params() {
  std::vector<ad::ParamT<T>*> out;
  for (ConvLayer& c : convs) {
    out.push_back(&c.weights);
    if (!c.strengths.value.empty()) out.push_back(&c.strengths);
  }
  for (BnLayer& b : bns) {
    out.push_back(&b.beta);
    if (!b.log_gamma.value.empty()) out.push_back(&b.log_gamma);
  }
  out.push_back(&fc.w);
  out.push_back(&fc.b);
  return out;
}

template <typename T>
void ModelT<T>::zero_grads() {
  for (ad::ParamT<T>* p : params()) p->zero_grad();
}

template <typename T>
void ModelT<T>::renormalize_directions() {
  if (!flags_.kernel_norm) return;
  for (ConvLayer& layer : convs) {
    const std::size_t kk = layer.ksize * layer.ksize;
    const std::size_t slices = layer.out_channels * layer.in_channels;
    for (std::size_t sl = 0; sl < slices; ++sl) {
      if (!layer.mask[sl]) continue;
      T* w = layer.weights.value.data() + sl * kk;
      double sq = 0;
      for (std::size_t i = 0; i < kk; ++i) sq += double(w[i]) * double(w[i]);
      const double norm = std::sqrt(sq);
      if (norm == 0.0) continue;
      for (std::size_t i = 0; i < kk; ++i) w[i] = T(double(w[i]) / norm);
    }
  }
}

template <typename T>
std::vector<int> ModelT<T>::predict(const TensorT<T>& x) {
  ad::TapeT<T> tape;
  auto logits = forward(tape, x, ad::BnMode::kEval);
  const TensorT<T>& v = logits.value();
  const std::size_t n = v.dim(0), classes = v.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < classes; ++j)
      if (v.at2(i, j) > v.at2(i, best)) best = j;
    out[i] = int(best);
  }
  return out;
}

template class ModelT<float>;
template class ModelT<double>;

namespace {

struct BnConsumers {
  std::vector<int> before_conv;  // per conv ordinal, -1 for the stem
  int before_classifier = -1;
};

BnConsumers map_bn_consumers(const ModelSpec& spec) {
  using K = LayerDesc::Kind;
  BnConsumers out;
  int pending_bn = -1;
  std::size_t bn_i = 0;
  for (const LayerDesc& d : spec.layers) {
    if (d.kind == K::kBatchNorm) {
      check(pending_bn < 0, "model: batchnorm without a consumer");
      pending_bn = int(bn_i++);
    } else if (d.kind == K::kConv) {
      out.before_conv.push_back(pending_bn);
      pending_bn = -1;
    } else if (d.kind == K::kGlobalAvgPool) {
      out.before_classifier = pending_bn;
      pending_bn = -1;
    }
  }
  return out;
}

}  // namespace

std::vector<int> bn_feeding_conv(const ModelSpec& spec) {
  return map_bn_consumers(spec).before_conv;
}

int bn_feeding_classifier(const ModelSpec& spec) {
  return map_bn_consumers(spec).before_classifier;
}

Model equivalence_transform(const Model& source) {
  check(!source.flags().fix_gamma && !source.flags().kernel_norm,
        "equivalence_transform: source must be a standard conv + scaled-BN model");

  // Evaluate every BN scale and insist on positivity; pulling gamma through
  // the ReLU is only valid for gamma > 0.
  std::vector<std::vector<double>> gammas(source.bns.size());
  for (std::size_t i = 0; i < source.bns.size(); ++i) {
    const auto& lg = source.bns[i].log_gamma.value;
    gammas[i].resize(lg.size());
    for (std::size_t c = 0; c < lg.size(); ++c) {
      gammas[i][c] = std::exp(double(lg[c]));
      check(std::isfinite(gammas[i][c]) && gammas[i][c] > 0.0,
            "equivalence_transform: BN scale must be positive and finite");
    }
  }

  // Each BN feeds either the next conv (gamma folds into its strengths) or
  // the classifier (gamma folds into its columns).
  const ModelSpec& spec = source.spec();
  const std::vector<int> bn_before_conv = bn_feeding_conv(spec);
  const int fc_bn = bn_feeding_classifier(spec);
  check(bn_before_conv.size() == source.convs.size(),
        "equivalence_transform: conv/bn layout mismatch");

  Model out(spec, VariantFlags{true, true}, 0);

  for (std::size_t i = 0; i < source.convs.size(); ++i) {
    const auto& src = source.convs[i];
    auto& dst = out.convs[i];
    const std::size_t kk = src.ksize * src.ksize;
    const std::size_t cin = src.in_channels;
    const int bn = bn_before_conv[i];
    dst.weights.value = src.weights.value;
    dst.mask = src.mask;
    for (std::size_t k = 0; k < src.out_channels; ++k)
      for (std::size_t c = 0; c < cin; ++c) {
        const std::size_t sl = k * cin + c;
        double sq = 0;
        for (std::size_t t = 0; t < kk; ++t) {
          const double v = double(src.weights.value[sl * kk + t]);
          sq += v * v;
        }
        const double g = bn >= 0 ? gammas[std::size_t(bn)][c] : 1.0;
        dst.strengths.value[sl] = float(g * std::sqrt(sq));
      }
  }

  for (std::size_t i = 0; i < source.bns.size(); ++i) {
    const auto& src = source.bns[i];
    auto& dst = out.bns[i];
    for (std::size_t c = 0; c < src.channels; ++c)
      dst.beta.value[c] = float(double(src.beta.value[c]) / gammas[i][c]);
    dst.running.mean = src.running.mean;
    dst.running.var = src.running.var;
  }

  out.fc.w.value = source.fc.w.value;
  out.fc.b.value = source.fc.b.value;
  if (fc_bn >= 0) {
    const auto& g = gammas[std::size_t(fc_bn)];
    const std::size_t classes = out.fc.w.value.dim(0), feat = out.fc.w.value.dim(1);
    check(feat == g.size(), "equivalence_transform: classifier width mismatch");
    for (std::size_t j = 0; j < classes; ++j)
      for (std::size_t c = 0; c < feat; ++c)
        out.fc.w.value.at2(j, c) = float(double(source.fc.w.value.at2(j, c)) * g[c]);
  }
  out.renormalize_directions();
  return out;
}

}  // namespace synprune
