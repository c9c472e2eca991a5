#pragma once

// Kernel-level pruning: rank every input/output kernel slice by an importance
// indicator, pick a single global threshold that removes an exact fraction of
// the candidates, and zero + freeze the losers.  Accounting reports kernel,
// parameter, and FLOP totals before and after.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "synprune/model.hpp"

namespace synprune {

enum class IndicatorKind {
  kSynaptic,    // |strength| (times the feeding BN scale when one is learned)
  kSslMeanAbs,  // mean |w| over the kernel's kh*kw effective weights
};

IndicatorKind indicator_from_string(const std::string& name);
std::string to_string(IndicatorKind kind);

// One candidate kernel: conv ordinal, output channel, input channel.
struct StrengthRecord {
  std::size_t layer = 0;
  std::size_t k = 0;
  std::size_t c = 0;
  double value = 0.0;
};

// Importance of every *unmasked* kernel in the model, in (layer, k, c) order.
std::vector<StrengthRecord> collect_indicators(const Model& m, IndicatorKind kind);

struct PrunePlan {
  IndicatorKind kind = IndicatorKind::kSynaptic;
  double target_fraction = 0.0;  // requested fraction of candidates
  double threshold = 0.0;        // largest indicator value that gets pruned
  std::size_t candidate_count = 0;
  std::size_t pruned_count = 0;                 // exactly floor(fraction * candidates)
  std::vector<ad::KernelMask> masks;            // per conv layer; 1 = keep
};

// Chooses the weakest floor(fraction * records.size()) kernels.  Ties at the
// threshold are broken by ascending (layer, k, c) so the count is always
// exact and independent of record order.  Already-masked kernels are not
// candidates and stay pruned in the returned masks.
PrunePlan global_threshold(const Model& m, const std::vector<StrengthRecord>& records,
                           double fraction, IndicatorKind kind);

struct LayerAccount {
  std::size_t kernels = 0;        // K * C for the layer
  std::size_t kernels_pruned = 0;
  std::size_t params_dense = 0;   // kernel weights, all slices
  std::size_t params_sparse = 0;  // kernel weights, surviving slices
  std::uint64_t macs_dense = 0;   // conv multiply-accumulates at this resolution
  std::uint64_t macs_sparse = 0;
};

struct AccountingReport {
  std::vector<LayerAccount> layers;  // one per conv
  LayerAccount total;
  double kernels_pruned_pct = 0.0;
  double flops_pruned_pct = 0.0;
  // FLOPs = 2 * MACs (one multiply + one add per tap).
  std::uint64_t flops_dense = 0;
  std::uint64_t flops_sparse = 0;
};

// Conv-layer cost of the model on inputs of the given spatial size.  Counts
// kh*kw MACs per surviving kernel per output position; BN, activation, pool,
// and classifier costs are excluded so pruning ratios stay exact.
AccountingReport count_flops(const Model& m, std::array<std::size_t, 2> input_hw);

// Applies the plan: newly pruned kernels get strength 0 and an all-zero
// weight slice, and their mask bit freezes them for any later training.
// Throws std::invalid_argument if the plan does not match the model's layer
// shapes or tries to resurrect an already-pruned kernel.  Returns accounting
// at the given input resolution.
AccountingReport apply_prune(Model& m, const PrunePlan& plan,
                             std::array<std::size_t, 2> input_hw);

}  // namespace synprune
