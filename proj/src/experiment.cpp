#include "synprune/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

namespace synprune {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("config: bad value for '" + key + "': " + value);
  }
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return std::size_t(v);
  } catch (const std::exception&) {
    throw std::runtime_error("config: bad value for '" + key + "': " + value);
  }
}

void open_or_throw(std::ofstream& out, const std::string& path) {
  out.open(path, std::ios::binary);
  if (!out) throw std::runtime_error("csv: cannot open for writing: " + path);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

std::map<std::string, std::string> parse_kv_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: line " + std::to_string(lineno) + " has no '=': " +
                               stripped);
    const std::string key = trim(stripped.substr(0, eq));
    if (key.empty())
      throw std::runtime_error("config: line " + std::to_string(lineno) + " has an empty key");
    kv[key] = trim(stripped.substr(eq + 1));
  }
  return kv;
}

std::map<std::string, std::string> parse_kv_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("config: cannot open: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_kv_text(text);
}

VariantFlags variant_from_string(const std::string& name) {
  if (name == "full") return VariantFlags{true, true};
  if (name == "free-gamma") return VariantFlags{false, true};
  if (name == "raw-kernels") return VariantFlags{true, false};
  if (name == "standard") return VariantFlags{false, false};
  throw std::invalid_argument("unknown variant: " + name +
                              " (expected full, free-gamma, raw-kernels, or standard)");
}

std::string to_string(VariantFlags flags) {
  if (flags.fix_gamma && flags.kernel_norm) return "full";
  if (!flags.fix_gamma && flags.kernel_norm) return "free-gamma";
  if (flags.fix_gamma && !flags.kernel_norm) return "raw-kernels";
  return "standard";
}

TrainConfig train_config_from_kv(const std::map<std::string, std::string>& kv, TrainConfig base) {
  for (const auto& [key, value] : kv) {
    if (key == "lambda") {
      base.lambda = parse_double(key, value);
    } else if (key == "lr") {
      base.lr = parse_double(key, value);
    } else if (key == "momentum") {
      base.momentum = parse_double(key, value);
    } else if (key == "weight_decay") {
      base.weight_decay = parse_double(key, value);
    } else if (key == "batch_size") {
      base.batch_size = parse_size(key, value);
    } else if (key == "epochs") {
      base.epochs = parse_size(key, value);
    } else if (key == "seed") {
      base.seed = std::uint32_t(parse_size(key, value));
    } else if (key == "lr_drop_epochs") {
      base.lr_drop_epochs.clear();
      std::istringstream list(value);
      std::string item;
      while (std::getline(list, item, ',')) {
        const std::string entry = trim(item);
        if (!entry.empty()) base.lr_drop_epochs.push_back(parse_size(key, entry));
      }
    } else if (key == "precision") {
      if (value == "f32") {
        base.precision = Precision::kF32;
      } else if (value == "f64") {
        base.precision = Precision::kF64;
      } else {
        throw std::runtime_error("config: bad value for 'precision': " + value);
      }
    } else if (key == "variant") {
      try {
        base.variant = variant_from_string(value);
      } catch (const std::invalid_argument& e) {
        throw std::runtime_error(std::string("config: ") + e.what());
      }
    }
    // Other keys belong to the caller (dataset, paths, grids).
  }
  return base;
}

std::uint64_t config_hash(const std::map<std::string, std::string>& kv) {
  std::uint64_t h = 14695981039346656037ull;
  const auto mix = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
  };
  for (const auto& [key, value] : kv) {
    mix(key);
    mix("=");
    mix(value);
    mix("\n");
  }
  return h;
}

PruneOutcome prune_and_finetune(const Model& trained, double fraction, IndicatorKind kind,
                                const LabeledSet& train_set, const LabeledSet& test_set,
                                const TrainConfig& base_cfg, std::array<std::size_t, 2> input_hw,
                                const AugmentFn& augment) {
  const auto records = collect_indicators(trained, kind);
  PrunePlan plan = global_threshold(trained, records, fraction, kind);
  Model pruned = trained;
  AccountingReport report = apply_prune(pruned, plan, input_hw);
  const double acc_pruned = evaluate_accuracy(pruned, test_set);
  TrainResult recovered = finetune(pruned, train_set, test_set, base_cfg, augment);
  const double acc_finetuned = evaluate_accuracy(recovered.best, test_set);
  return PruneOutcome{std::move(recovered.best), std::move(plan), report, acc_pruned,
                      acc_finetuned};
}

LambdaSweep lambda_sweep(const ModelSpec& spec, VariantFlags flags, const LabeledSet& train_set,
                         const LabeledSet& test_set, TrainConfig cfg, double start_lambda,
                         double tolerance_points, std::size_t max_steps, const AugmentFn& augment) {
  check(start_lambda > 0, "lambda sweep: start_lambda must be positive");
  check(max_steps > 0, "lambda sweep: max_steps must be positive");
  cfg.variant = flags;
  const Model init(spec, flags, cfg.seed);

  cfg.lambda = 0.0;
  TrainResult base = train(init, train_set, test_set, cfg, augment);
  const double acc0 = evaluate_accuracy(base.best, test_set);
  const double floor_acc = acc0 - tolerance_points / 100.0;

  std::vector<LambdaPoint> points;
  double chosen_lambda = 0;
  double fallback_lambda = 0, fallback_acc = -1;
  Model chosen = base.best;
  double lam = start_lambda;
  for (std::size_t step = 0; step < max_steps; ++step) {
    cfg.lambda = lam;
    TrainResult run = train(init, train_set, test_set, cfg, augment);
    const double acc = evaluate_accuracy(run.best, test_set);
    points.push_back({lam, acc});
    if (acc > fallback_acc) {
      fallback_acc = acc;
      fallback_lambda = lam;
    }
    if (acc >= floor_acc) {
      chosen_lambda = lam;  // largest lambda within tolerance so far
      chosen = std::move(run.best);
    } else {
      break;  // performance started to decrease; the failing run is recorded
    }
    lam *= std::sqrt(10.0);
  }
  if (chosen_lambda == 0) {
    // Every run fell below tolerance: keep the highest-accuracy one.
    cfg.lambda = fallback_lambda;
    TrainResult run = train(init, train_set, test_set, cfg, augment);
    chosen_lambda = fallback_lambda;
    chosen = std::move(run.best);
  }
  return LambdaSweep{acc0, std::move(base.best), chosen_lambda, std::move(chosen),
                     std::move(points)};
}

void write_lambda_csv(const std::string& path, const LambdaSweep& sweep) {
  std::ofstream out;
  open_or_throw(out, path);
  out << "lambda,test_acc,chosen\n";
  out << "0," << format_double(sweep.baseline_accuracy) << ",0\n";
  for (const LambdaPoint& p : sweep.points)
    out << format_double(p.lambda) << ',' << format_double(p.test_accuracy) << ','
        << (p.lambda == sweep.chosen_lambda ? 1 : 0) << '\n';
  if (!out) throw std::runtime_error("csv: write failure: " + path);
}

std::vector<SensitivityRow> sensitivity_sweep(
    const std::vector<Model>& seed_models, const std::vector<double>& baseline_accuracies,
    const std::vector<double>& fractions, IndicatorKind kind, const LabeledSet& train_set,
    const LabeledSet& test_set, const TrainConfig& base_cfg, std::array<std::size_t, 2> input_hw,
    const AugmentFn& augment) {
  check(!seed_models.empty(), "sensitivity: no seed models");
  check(seed_models.size() == baseline_accuracies.size(),
        "sensitivity: one baseline accuracy per seed model expected");
  check(!fractions.empty(), "sensitivity: no fractions");

  std::vector<SensitivityRow> rows;
  for (double fraction : fractions) {
    SensitivityRow row;
    row.kind = kind;
    row.fraction = fraction;
    row.min_accuracy = 1.0;
    double sum = 0, drop_sum = 0;
    for (std::size_t s = 0; s < seed_models.size(); ++s) {
      const PruneOutcome out = prune_and_finetune(seed_models[s], fraction, kind, train_set,
                                                  test_set, base_cfg, input_hw, augment);
      sum += out.accuracy_finetuned;
      drop_sum += baseline_accuracies[s] - out.accuracy_finetuned;
      row.min_accuracy = std::min(row.min_accuracy, out.accuracy_finetuned);
      row.max_accuracy = std::max(row.max_accuracy, out.accuracy_finetuned);
    }
    row.mean_accuracy = sum / double(seed_models.size());
    row.mean_drop = drop_sum / double(seed_models.size());
    rows.push_back(row);
  }
  return rows;
}

void write_sensitivity_csv(const std::string& path, const std::vector<SensitivityRow>& rows) {
  std::ofstream out;
  open_or_throw(out, path);
  out << "indicator,fraction,mean_acc,min_acc,max_acc,mean_drop\n";
  for (const SensitivityRow& r : rows)
    out << to_string(r.kind) << ',' << format_double(r.fraction) << ','
        << format_double(r.mean_accuracy) << ',' << format_double(r.min_accuracy) << ','
        << format_double(r.max_accuracy) << ',' << format_double(r.mean_drop) << '\n';
  if (!out) throw std::runtime_error("csv: write failure: " + path);
}

ReportRow report_row(std::string label, double test_accuracy, const AccountingReport& report) {
  ReportRow row;
  row.model = std::move(label);
  row.error_pct = 100.0 * (1.0 - test_accuracy);
  row.kernels = report.total.kernels - report.total.kernels_pruned;
  row.pruned_pct = report.kernels_pruned_pct;
  row.flops = report.flops_sparse;
  row.flops_pruned_pct = report.flops_pruned_pct;
  return row;
}

void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows) {
  std::ofstream out;
  open_or_throw(out, path);
  out << "model,error%,kernels,pruned%,flops,flops_pruned%\n";
  for (const ReportRow& r : rows)
    out << r.model << ',' << format_double(r.error_pct) << ',' << r.kernels << ','
        << format_double(r.pruned_pct) << ',' << r.flops << ','
        << format_double(r.flops_pruned_pct) << '\n';
  if (!out) throw std::runtime_error("csv: write failure: " + path);
}

void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows) {
  std::ofstream out;
  open_or_throw(out, path);
  out << "path,layer,density,median_ns\n";
  for (const BenchRow& r : rows)
    out << r.path << ',' << r.layer << ',' << format_double(r.density) << ',' << r.median_ns
        << '\n';
  if (!out) throw std::runtime_error("csv: write failure: " + path);
}

void append_manifest(const std::string& manifest_path, const std::string& stage,
                     std::uint64_t hash, std::uint32_t seed, const std::string& artifact) {
  const bool fresh = !std::ifstream(manifest_path).good();
  std::ofstream out(manifest_path, std::ios::binary | std::ios::app);
  if (!out) throw std::runtime_error("manifest: cannot open for writing: " + manifest_path);
  if (fresh) out << "stage,config_hash,seed,artifact\n";
  char hex[32];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(hash));
  out << stage << ',' << hex << ',' << seed << ',' << artifact << '\n';
  if (!out) throw std::runtime_error("manifest: write failure: " + manifest_path);
}

}  // namespace synprune
