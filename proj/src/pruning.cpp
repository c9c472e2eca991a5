#include "synprune/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>

#include "synprune/kernels.hpp"

namespace synprune {

namespace {

// Per-channel BN scale feeding each conv; empty when the model fixes the
// scale at 1 (then the indicator reduces to the bare strength).
std::vector<std::vector<double>> feeding_scales(const Model& m) {
  std::vector<std::vector<double>> out(m.convs.size());
  if (m.flags().fix_gamma) return out;
  const std::vector<int> feeds = bn_feeding_conv(m.spec());
  for (std::size_t i = 0; i < m.convs.size(); ++i) {
    if (feeds[i] < 0) continue;
    const auto& lg = m.bns[std::size_t(feeds[i])].log_gamma.value;
    out[i].resize(lg.size());
    for (std::size_t c = 0; c < lg.size(); ++c) out[i][c] = std::exp(double(lg[c]));
  }
  return out;
}

double slice_norm(const float* w, std::size_t kk) {
  double sq = 0;
  for (std::size_t t = 0; t < kk; ++t) sq += double(w[t]) * double(w[t]);
  return std::sqrt(sq);
}

double slice_mean_abs(const float* w, std::size_t kk) {
  double s = 0;
  for (std::size_t t = 0; t < kk; ++t) s += std::abs(double(w[t]));
  return s / double(kk);
}

}  // namespace

IndicatorKind indicator_from_string(const std::string& name) {
  if (name == "synaptic") return IndicatorKind::kSynaptic;
  if (name == "ssl_mean_abs") return IndicatorKind::kSslMeanAbs;
  throw std::invalid_argument("unknown indicator: " + name);
}

std::string to_string(IndicatorKind kind) {
  return kind == IndicatorKind::kSynaptic ? "synaptic" : "ssl_mean_abs";
}

std::vector<StrengthRecord> collect_indicators(const Model& m, IndicatorKind kind) {
  const bool unit_kernels = m.flags().kernel_norm;
  const auto scales = feeding_scales(m);
  std::vector<StrengthRecord> out;
  for (std::size_t li = 0; li < m.convs.size(); ++li) {
    const auto& conv = m.convs[li];
    const std::size_t kk = conv.ksize * conv.ksize;
    for (std::size_t k = 0; k < conv.out_channels; ++k)
      for (std::size_t c = 0; c < conv.in_channels; ++c) {
        const std::size_t sl = k * conv.in_channels + c;
        if (!conv.mask[sl]) continue;
        const float* w = conv.weights.value.data() + sl * kk;
        const double gamma = scales[li].empty() ? 1.0 : scales[li][c];
        double value = 0;
        if (kind == IndicatorKind::kSynaptic) {
          const double mag = unit_kernels ? std::abs(double(conv.strengths.value[sl]))
                                          : slice_norm(w, kk);
          value = std::abs(gamma) * mag;
        } else {
          // Mean |w| over the kernel's effective weights.  With unit-norm
          // kernels the effective weight is strength * direction; a zero-norm
          // slice falls back to the center-delta direction the forward uses.
          if (unit_kernels) {
            const double norm = slice_norm(w, kk);
            const double s = std::abs(double(conv.strengths.value[sl]));
            value = norm > 0 ? s * slice_mean_abs(w, kk) / norm : s / double(kk);
          } else {
            value = slice_mean_abs(w, kk);
          }
        }
        out.push_back({li, k, c, value});
      }
  }
  return out;
}

PrunePlan global_threshold(const Model& m, const std::vector<StrengthRecord>& records,
                           double fraction, IndicatorKind kind) {
  check(fraction >= 0.0 && fraction <= 1.0, "global_threshold: fraction outside [0, 1]");

  PrunePlan plan;
  plan.kind = kind;
  plan.target_fraction = fraction;
  plan.candidate_count = records.size();
  plan.masks.reserve(m.convs.size());
  for (const auto& conv : m.convs) plan.masks.push_back(conv.mask);

  for (const StrengthRecord& r : records) {
    check(r.layer < m.convs.size(), "global_threshold: record layer out of range");
    const auto& conv = m.convs[r.layer];
    check(r.k < conv.out_channels && r.c < conv.in_channels,
          "global_threshold: record channel out of range");
    check(conv.mask[r.k * conv.in_channels + r.c] != 0,
          "global_threshold: record points at an already-pruned kernel");
  }

  // Exact count: floor(fraction * candidates), with a tiny guard so short
  // decimal fractions (0.7, 0.975, ...) floor to their mathematical value.
  std::size_t m_count = std::size_t(std::floor(fraction * double(records.size()) + 1e-9));
  m_count = std::min(m_count, records.size());
  plan.pruned_count = m_count;
  if (m_count == 0) return plan;

  std::vector<StrengthRecord> sorted = records;
  std::sort(sorted.begin(), sorted.end(), [](const StrengthRecord& a, const StrengthRecord& b) {
    return std::tie(a.value, a.layer, a.k, a.c) < std::tie(b.value, b.layer, b.k, b.c);
  });
  plan.threshold = sorted[m_count - 1].value;

  for (std::size_t i = 0; i < m_count; ++i) {
    const StrengthRecord& r = sorted[i];
    auto& mask = plan.masks[r.layer];
    const std::size_t sl = r.k * m.convs[r.layer].in_channels + r.c;
    check(mask[sl] != 0, "global_threshold: duplicate record");
    mask[sl] = 0;
  }
  return plan;
}

AccountingReport count_flops(const Model& m, std::array<std::size_t, 2> input_hw) {
  using K = LayerDesc::Kind;
  AccountingReport rep;
  std::size_t h = input_hw[0], w = input_hw[1];
  std::size_t conv_i = 0;
  for (const LayerDesc& d : m.spec().layers) {
    if (d.kind != K::kConv) continue;
    const auto& conv = m.convs[conv_i++];
    const auto out_hw =
        conv_output_hw(h, w, conv.ksize, conv.ksize, ConvGeom{d.stride, d.pad});
    const std::uint64_t positions = std::uint64_t(out_hw[0]) * out_hw[1];
    const std::size_t kk = conv.ksize * conv.ksize;

    LayerAccount acc;
    acc.kernels = conv.out_channels * conv.in_channels;
    for (std::size_t sl = 0; sl < acc.kernels; ++sl)
      if (!conv.mask[sl]) ++acc.kernels_pruned;
    acc.params_dense = acc.kernels * kk;
    acc.params_sparse = (acc.kernels - acc.kernels_pruned) * kk;
    acc.macs_dense = std::uint64_t(acc.kernels) * kk * positions;
    acc.macs_sparse = std::uint64_t(acc.kernels - acc.kernels_pruned) * kk * positions;
    rep.layers.push_back(acc);

    rep.total.kernels += acc.kernels;
    rep.total.kernels_pruned += acc.kernels_pruned;
    rep.total.params_dense += acc.params_dense;
    rep.total.params_sparse += acc.params_sparse;
    rep.total.macs_dense += acc.macs_dense;
    rep.total.macs_sparse += acc.macs_sparse;
    h = out_hw[0];
    w = out_hw[1];
  }
  rep.flops_dense = 2 * rep.total.macs_dense;
  rep.flops_sparse = 2 * rep.total.macs_sparse;
  if (rep.total.kernels > 0)
    rep.kernels_pruned_pct = 100.0 * double(rep.total.kernels_pruned) / double(rep.total.kernels);
  if (rep.total.macs_dense > 0)
    rep.flops_pruned_pct =
        100.0 * double(rep.total.macs_dense - rep.total.macs_sparse) / double(rep.total.macs_dense);
  return rep;
}

AccountingReport apply_prune(Model& m, const PrunePlan& plan,
                             std::array<std::size_t, 2> input_hw) {
  check(plan.masks.size() == m.convs.size(), "apply_prune: layer count mismatch");
  for (std::size_t li = 0; li < m.convs.size(); ++li) {
    auto& conv = m.convs[li];
    const auto& mask = plan.masks[li];
    check(mask.size() == conv.mask.size(), "apply_prune: mask shape mismatch");
    const std::size_t kk = conv.ksize * conv.ksize;
    for (std::size_t sl = 0; sl < mask.size(); ++sl) {
      check(!(mask[sl] && !conv.mask[sl]),
            "apply_prune: plan resurrects a pruned kernel");
      if (mask[sl]) continue;
      conv.mask[sl] = 0;
      if (!conv.strengths.value.empty()) conv.strengths.value[sl] = 0.0f;
      float* w = conv.weights.value.data() + sl * kk;
      std::fill(w, w + kk, 0.0f);
    }
  }
  return count_flops(m, input_hw);
}

}  // namespace synprune
