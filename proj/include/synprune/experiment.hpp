#pragma once

// Experiment orchestration shared by the command-line tool and the
// acceptance harness: flat key=value configuration, the geometric
// lambda-selection sweep, prune-then-finetune, the pruning-sensitivity
// grid, and fixed-format CSV emitters.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "synprune/pruning.hpp"
#include "synprune/sparse.hpp"
#include "synprune/training.hpp"

namespace synprune {

// Flat "key = value" UTF-8 text; "#" starts a comment, blank lines are
// skipped, later assignments win. Throws std::runtime_error on a line
// without '=' or with an empty key.
std::map<std::string, std::string> parse_kv_text(const std::string& text);
std::map<std::string, std::string> parse_kv_file(const std::string& path);

// full = fixed BN scale + unit kernels with strengths; free-gamma trains the
// BN scale too; raw-kernels drops the normalization; standard is a plain
// conv + scaled-BN model.
VariantFlags variant_from_string(const std::string& name);
std::string to_string(VariantFlags flags);

// Overrides the recognized training keys (lambda, lr, momentum,
// weight_decay, batch_size, epochs, seed, lr_drop_epochs as a comma list,
// precision, variant) on top of the given defaults. Unknown keys are left
// for the caller. Throws std::runtime_error naming a key whose value does
// not parse.
TrainConfig train_config_from_kv(const std::map<std::string, std::string>& kv, TrainConfig base);

// FNV-1a over the canonical sorted "key=value\n" listing; identifies a
// configuration in manifest rows.
std::uint64_t config_hash(const std::map<std::string, std::string>& kv);

struct PruneOutcome {
  Model model;  // pruned, then finetuned (best checkpoint)
  PrunePlan plan;
  AccountingReport report;
  double accuracy_pruned = 0;     // eval accuracy right after masking
  double accuracy_finetuned = 0;  // eval accuracy of the recovered model
};

// Indicator collection -> global threshold at the fraction -> mask ->
// finetune under the recovery schedule derived from base_cfg.
PruneOutcome prune_and_finetune(const Model& trained, double fraction, IndicatorKind kind,
                                const LabeledSet& train_set, const LabeledSet& test_set,
                                const TrainConfig& base_cfg, std::array<std::size_t, 2> input_hw,
                                const AugmentFn& augment = {});

struct LambdaPoint {
  double lambda = 0;
  double test_accuracy = 0;
};

struct LambdaSweep {
  double baseline_accuracy = 0;  // the lambda = 0 reference run
  Model baseline;
  double chosen_lambda = 0;
  Model chosen;
  std::vector<LambdaPoint> points;
};

// Automates the pick-the-sparsity-rate guideline: train a lambda = 0
// reference, then fresh runs at start_lambda, start_lambda*sqrt(10), ...
// until test accuracy falls more than tolerance_points below the reference
// (that run is still recorded) or max_steps runs finish. Chooses the
// largest lambda within tolerance; if every run is below it, the
// highest-accuracy run. All runs start from the same seeded
// initialization.
LambdaSweep lambda_sweep(const ModelSpec& spec, VariantFlags flags, const LabeledSet& train_set,
                         const LabeledSet& test_set, TrainConfig cfg, double start_lambda,
                         double tolerance_points = 0.5, std::size_t max_steps = 4,
                         const AugmentFn& augment = {});

void write_lambda_csv(const std::string& path, const LambdaSweep& sweep);

struct SensitivityRow {
  IndicatorKind kind = IndicatorKind::kSynaptic;
  double fraction = 0;
  double mean_accuracy = 0;
  double min_accuracy = 0;
  double max_accuracy = 0;
  double mean_drop = 0;  // mean of (per-seed baseline - finetuned accuracy)
};

// Prunes and finetunes every seed model at every fraction with one
// indicator kind, aggregating accuracy across seeds. baseline_accuracies
// pairs with seed_models and anchors the drop column.
std::vector<SensitivityRow> sensitivity_sweep(
    const std::vector<Model>& seed_models, const std::vector<double>& baseline_accuracies,
    const std::vector<double>& fractions, IndicatorKind kind, const LabeledSet& train_set,
    const LabeledSet& test_set, const TrainConfig& base_cfg, std::array<std::size_t, 2> input_hw,
    const AugmentFn& augment = {});

void write_sensitivity_csv(const std::string& path, const std::vector<SensitivityRow>& rows);

struct ReportRow {
  std::string model;            // run label
  double error_pct = 0;         // 100 * (1 - test accuracy)
  std::size_t kernels = 0;      // surviving kernels
  double pruned_pct = 0;        // share of kernels removed
  std::uint64_t flops = 0;      // conv FLOPs of the surviving network
  double flops_pruned_pct = 0;  // share of conv FLOPs removed
};

ReportRow report_row(std::string label, double test_accuracy, const AccountingReport& report);

// Columns exactly: model,error%,kernels,pruned%,flops,flops_pruned%.
void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows);

// Columns exactly: path,layer,density,median_ns.
void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows);

// Appends "stage,config_hash,seed,artifact" (with a header when the file is
// new) so every emitted artifact is attributable to its configuration.
void append_manifest(const std::string& manifest_path, const std::string& stage,
                     std::uint64_t hash, std::uint32_t seed, const std::string& artifact);

}  // namespace synprune
