#include "synprune/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <random>

namespace synprune {

namespace {

// Platform-stable FNV-1a so sampling does not depend on std::hash internals.
std::uint32_t fnv1a(const std::string& s) {
  std::uint32_t h = 2166136261u;
  for (unsigned char c : s) {
    h ^= c;
    h *= 16777619u;
  }
  return h;
}

}  // namespace

FdReport finite_difference_check(const std::function<double()>& loss,
                                 const std::vector<ad::ParamD*>& params,
                                 const FdEntryFilter* active, const FdOptions& opt) {
  check(opt.step > 0, "finite_difference_check: step must be positive");
  FdReport report;
  for (ad::ParamD* p : params) {
    check(p != nullptr, "finite_difference_check: null parameter");
    const std::vector<std::uint8_t>* filter = nullptr;
    if (active) {
      auto it = active->find(p->name);
      if (it != active->end()) {
        check(it->second.size() == p->value.size(),
              "finite_difference_check: filter size mismatch for " + p->name);
        filter = &it->second;
      }
    }
    std::vector<std::size_t> candidates;
    candidates.reserve(p->value.size());
    for (std::size_t i = 0; i < p->value.size(); ++i)
      if (!filter || (*filter)[i]) candidates.push_back(i);

    std::vector<std::size_t> chosen;
    if (candidates.size() <= opt.max_entries_per_param) {
      chosen = candidates;
    } else {
      std::mt19937 rng(opt.seed ^ fnv1a(p->name));
      std::sample(candidates.begin(), candidates.end(), std::back_inserter(chosen),
                  opt.max_entries_per_param, rng);
    }

    for (std::size_t idx : chosen) {
      const double saved = p->value[idx];
      p->value[idx] = saved + opt.step;
      const double up = loss();
      p->value[idx] = saved - opt.step;
      const double down = loss();
      p->value[idx] = saved;

      FdRecord rec;
      rec.param = p->name;
      rec.index = idx;
      rec.analytic = p->grad[idx];
      rec.numeric = (up - down) / (2.0 * opt.step);
      rec.rel_err = std::abs(rec.analytic - rec.numeric) / std::max(1e-8, std::abs(rec.analytic));
      ++report.entries_checked;
      if (rec.rel_err > report.worst.rel_err || report.entries_checked == 1) report.worst = rec;
      if (rec.rel_err > opt.rel_tol) {
        report.failures.push_back(rec);
        report.pass = false;
      }
    }
  }
  return report;
}

}  // namespace synprune
