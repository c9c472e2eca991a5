#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "synprune/autodiff.hpp"

namespace synprune {

struct FdOptions {
  double step = 1e-4;
  double rel_tol = 1e-3;
  std::size_t max_entries_per_param = 24;  // sampled when the tensor is larger
  std::uint32_t seed = 1;
};

struct FdRecord {
  std::string param;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_err = 0;
};

struct FdReport {
  std::size_t entries_checked = 0;
  FdRecord worst;
  std::vector<FdRecord> failures;  // entries with rel_err > rel_tol
  bool pass = true;
};

// Per-parameter entry selector (same length as the value tensor, 1 = check).
// Used to exclude pruned kernel entries, which are not trainable.
using FdEntryFilter = std::unordered_map<std::string, std::vector<std::uint8_t>>;

// Central-difference check of already-computed analytic gradients.
// `loss` must re-evaluate the scalar objective from the parameters' current
// values without side effects (64-bit forward, stateless BN). For each
// sampled entry the relative error |analytic - numeric| / max(1e-8,
// |analytic|) is reported; sampling is deterministic for a given seed.
FdReport finite_difference_check(const std::function<double()>& loss,
                                 const std::vector<ad::ParamD*>& params,
                                 const FdEntryFilter* active, const FdOptions& opt);

}  // namespace synprune
