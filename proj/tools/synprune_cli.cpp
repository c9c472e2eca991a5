// Command-line front end: dataset ingestion, training, lambda sweeps, kernel
// pruning and finetuning, sparse export/benchmarks, and a resumable
// experiment orchestrator that chains those stages into one artifact
// directory.
//
// Exit codes: 0 success, 2 configuration/usage, 3 dataset ingestion,
// 4 checkpoint/export serialization, 5 any other stage failure.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "synprune/checkpoint.hpp"
#include "synprune/data.hpp"
#include "synprune/experiment.hpp"
#include "synprune/gradcheck.hpp"
#include "synprune/model.hpp"
#include "synprune/pruning.hpp"
#include "synprune/sparse.hpp"
#include "synprune/training.hpp"

namespace fs = std::filesystem;
using namespace synprune;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitSerial = 4;
constexpr int kExitStage = 5;

int classify_error(const std::string& msg) {
  if (msg.find("config:") != std::string::npos) return kExitConfig;
  if (msg.find("idx:") != std::string::npos || msg.find("cifar10:") != std::string::npos ||
      msg.find("dataset:") != std::string::npos)
    return kExitData;
  if (msg.find("synp") != std::string::npos || msg.find("sbcr") != std::string::npos)
    return kExitSerial;
  return kExitStage;
}

using KvMap = std::map<std::string, std::string>;

// Every tunable is a key=value pair; command-line flags write into an overlay
// map that is applied on top of the (optional) config file, so a flag always
// wins and the merged map is what gets hashed into the manifest.
struct KvCli {
  std::string config_path;
  KvMap overlay;

  void add_config_flag(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value configuration file");
  }
  void add_key(CLI::App* cmd, const std::string& flag, const std::string& key,
               const std::string& help) {
    cmd->add_option_function<std::string>(
        flag, [this, key](const std::string& v) { overlay[key] = v; }, help);
  }
  void add_training_flags(CLI::App* cmd) {
    add_key(cmd, "--lambda", "lambda", "sparsity regularization weight");
    add_key(cmd, "--lr", "lr", "initial learning rate");
    add_key(cmd, "--momentum", "momentum", "SGD momentum");
    add_key(cmd, "--weight-decay", "weight_decay", "L2 weight decay");
    add_key(cmd, "--batch-size", "batch_size", "minibatch size");
    add_key(cmd, "--epochs", "epochs", "training epochs");
    add_key(cmd, "--seed", "seed", "RNG seed for init, shuffling, augmentation");
    add_key(cmd, "--lr-drop-epochs", "lr_drop_epochs",
            "comma list of epochs where the rate drops 10x");
    add_key(cmd, "--precision", "precision", "training arithmetic: f32 | f64");
    add_key(cmd, "--variant", "variant",
            "full | free-gamma | raw-kernels | standard");
  }
  void add_dataset_flags(CLI::App* cmd) {
    add_key(cmd, "--dataset", "dataset", "digits | mnist | cifar10 | blobs");
    add_key(cmd, "--data-dir", "data_dir", "directory holding mnist/cifar10 files");
    add_key(cmd, "--train-count", "train_count", "subsample the train split (0 = all)");
    add_key(cmd, "--test-count", "test_count", "subsample the test split (0 = all)");
    add_key(cmd, "--augment", "augment", "none | crop | flip-crop | auto");
    add_key(cmd, "--model", "model", "desknet | tinynet");
  }

  KvMap merged() const {
    KvMap kv;
    if (!config_path.empty()) kv = parse_kv_file(config_path);
    for (const auto& [k, v] : overlay) kv[k] = v;
    return kv;
  }
};

std::string kv_get(const KvMap& kv, const std::string& key, const std::string& fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

// train_config_from_kv, but when the user shortens the run without saying
// anything about the schedule, the default drop epochs shrink with it instead
// of tripping validation.
TrainConfig config_from(const KvMap& kv) {
  TrainConfig cfg = train_config_from_kv(kv, TrainConfig{});
  if (!kv.count("lr_drop_epochs")) {
    std::erase_if(cfg.lr_drop_epochs, [&](std::size_t e) { return e >= cfg.epochs; });
  }
  return cfg;
}

std::size_t kv_get_size(const KvMap& kv, const std::string& key, std::size_t fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(it->second);
    return std::size_t(v);
  } catch (const std::exception&) {
    throw std::runtime_error("config: bad value for '" + key + "': " + it->second);
  }
}

double kv_get_double(const KvMap& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(it->second);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("config: bad value for '" + key + "': " + it->second);
  }
}

std::vector<double> parse_percent_list(const std::string& text, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    const auto e = item.find_last_not_of(" \t");
    item = item.substr(b, e - b + 1);
    try {
      std::size_t pos = 0;
      const double v = std::stod(item, &pos);
      if (pos != item.size() || v < 0.0 || v >= 100.0)
        throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw std::runtime_error("config: bad value for '" + key + "': " + item);
    }
  }
  return out;
}

std::vector<std::uint32_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint32_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    const auto e = item.find_last_not_of(" \t");
    item = item.substr(b, e - b + 1);
    try {
      std::size_t pos = 0;
      const unsigned long v = std::stoul(item, &pos);
      if (pos != item.size()) throw std::invalid_argument(item);
      out.push_back(std::uint32_t(v));
    } catch (const std::exception&) {
      throw std::runtime_error("config: bad seed list entry: " + item);
    }
  }
  return out;
}

// A fully resolved dataset: normalized splits, geometry, and the train-time
// augmentation policy (the test split is never augmented anywhere).
struct Bundle {
  LabeledSet train;
  LabeledSet test;
  std::size_t channels = 1;
  std::size_t classes = 10;
  std::array<std::size_t, 2> hw{28, 28};
  AugmentFn augment;
  std::string name;
};

AugmentFn augment_policy(const std::string& mode, const std::string& dataset) {
  if (mode == "none") return {};
  if (mode == "crop") return make_augment(4, false);
  if (mode == "flip-crop") return make_augment(4, true);
  if (mode == "auto") {
    if (dataset == "cifar10") return make_augment(4, true);  // flip + pad-4 crop
    if (dataset == "digits" || dataset == "mnist") return make_augment(2, false);
    return {};  // blobs: none
  }
  throw std::runtime_error("config: bad value for 'augment': " + mode);
}

Bundle load_bundle(const KvMap& kv, std::uint32_t seed) {
  Bundle b;
  b.name = kv_get(kv, "dataset", "digits");
  const std::string dir = kv_get(kv, "data_dir", "data");
  const std::size_t want_train = kv_get_size(kv, "train_count", 0);
  const std::size_t want_test = kv_get_size(kv, "test_count", 0);

  if (b.name == "digits") {
    b.train = synthetic_digits(want_train ? want_train : 2000, seed);
    b.test = synthetic_digits(want_test ? want_test : 500, seed + 1000);
  } else if (b.name == "mnist") {
    b.train = load_idx(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte");
    b.test = load_idx(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte");
  } else if (b.name == "cifar10") {
    std::vector<std::string> batches;
    for (int i = 1; i <= 5; ++i)
      batches.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
    b.train = load_cifar10(batches);
    b.test = load_cifar10({dir + "/test_batch.bin"});
  } else if (b.name == "blobs") {
    b.train = synthetic_blobs(want_train ? want_train : 160, seed);
    b.test = synthetic_blobs(want_test ? want_test : 64, seed + 1000);
    b.classes = 2;
  } else {
    throw std::runtime_error("dataset: unknown dataset '" + b.name +
                             "' (expected digits | mnist | cifar10 | blobs)");
  }
  if (b.name == "mnist" || b.name == "cifar10") {
    if (want_train) b.train = subsample(b.train, want_train, seed);
    if (want_test) b.test = subsample(b.test, want_test, seed + 1000);
  }

  b.channels = b.train.images.dim(1);
  b.hw = {b.train.images.dim(2), b.train.images.dim(3)};
  const Normalization norm = compute_normalization(b.train);
  apply_normalization(b.train, norm);
  apply_normalization(b.test, norm);
  b.augment = augment_policy(kv_get(kv, "augment", "auto"), b.name);
  return b;
}

ModelSpec spec_from_kv(const KvMap& kv, const Bundle& b) {
  return spec_by_name(kv_get(kv, "model", "desknet"), b.channels, b.classes);
}

std::string format_pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Subcommand bodies. Each throws on failure; main() maps that to exit codes.
// ---------------------------------------------------------------------------

int cmd_train(const KvCli& cli, const std::string& out, const std::string& history) {
  const KvMap kv = cli.merged();
  TrainConfig cfg = config_from(kv);
  const Bundle b = load_bundle(kv, cfg.seed);
  Model model(spec_from_kv(kv, b), cfg.variant, cfg.seed);

  TrainResult res = train(model, b.train, b.test, cfg, b.augment);
  const double acc = evaluate_accuracy(res.best, b.test);
  std::cout << "train: " << b.name << " x " << model.spec().name << ", best test accuracy "
            << acc << " (error " << format_pct(100.0 * (1.0 - acc)) << "%)\n";
  if (!history.empty()) {
    write_history_csv(history, res.history);
    std::cout << "train: wrote " << history << "\n";
  }
  save_checkpoint(res.best, out);
  std::cout << "train: wrote " << out << "\n";
  return 0;
}

int cmd_sweep(const KvCli& cli, const std::string& out, const std::string& csv,
              double start_lambda, double tolerance, std::size_t max_steps) {
  const KvMap kv = cli.merged();
  TrainConfig cfg = config_from(kv);
  const Bundle b = load_bundle(kv, cfg.seed);
  const ModelSpec spec = spec_from_kv(kv, b);

  LambdaSweep sweep = lambda_sweep(spec, cfg.variant, b.train, b.test, cfg, start_lambda,
                                   tolerance, max_steps, b.augment);
  std::cout << "sweep-lambda: baseline accuracy " << sweep.baseline_accuracy
            << ", chose lambda " << sweep.chosen_lambda << " at accuracy ";
  for (const auto& p : sweep.points)
    if (p.lambda == sweep.chosen_lambda) std::cout << p.test_accuracy;
  std::cout << "\n";
  if (!csv.empty()) {
    write_lambda_csv(csv, sweep);
    std::cout << "sweep-lambda: wrote " << csv << "\n";
  }
  if (!out.empty()) {
    save_checkpoint(sweep.chosen, out);
    std::cout << "sweep-lambda: wrote " << out << "\n";
  }
  return 0;
}

int cmd_prune(const KvCli& cli, const std::string& in, const std::string& out,
              double percent, const std::string& indicator) {
  const KvMap kv = cli.merged();
  const TrainConfig cfg = config_from(kv);
  const Bundle b = load_bundle(kv, cfg.seed);

  Model model = load_checkpoint(in);
  const IndicatorKind kind = indicator_from_string(indicator);
  const auto records = collect_indicators(model, kind);
  const PrunePlan plan = global_threshold(model, records, percent / 100.0, kind);
  const AccountingReport report = apply_prune(model, plan, b.hw);
  const double acc = evaluate_accuracy(model, b.test);

  std::cout << "prune: removed " << plan.pruned_count << "/" << plan.candidate_count
            << " kernels (" << format_pct(report.kernels_pruned_pct) << "% of kernels, "
            << format_pct(report.flops_pruned_pct) << "% of conv flops), test accuracy "
            << acc << "\n";
  save_checkpoint(model, out);
  std::cout << "prune: wrote " << out << "\n";
  return 0;
}

int cmd_finetune(const KvCli& cli, const std::string& in, const std::string& out,
                 const std::string& history) {
  const KvMap kv = cli.merged();
  TrainConfig cfg = config_from(kv);
  const Bundle b = load_bundle(kv, cfg.seed);

  Model pruned = load_checkpoint(in);
  TrainResult res = finetune(pruned, b.train, b.test, cfg, b.augment);
  const double acc = evaluate_accuracy(res.best, b.test);
  std::cout << "finetune: best test accuracy " << acc << " (error "
            << format_pct(100.0 * (1.0 - acc)) << "%)\n";
  if (!history.empty()) {
    write_history_csv(history, res.history);
    std::cout << "finetune: wrote " << history << "\n";
  }
  save_checkpoint(res.best, out);
  std::cout << "finetune: wrote " << out << "\n";
  return 0;
}

int cmd_eval(const KvCli& cli, const std::string& in) {
  const KvMap kv = cli.merged();
  const TrainConfig cfg = config_from(kv);
  const Bundle b = load_bundle(kv, cfg.seed);

  Model model = load_checkpoint(in);
  const AccountingReport report = count_flops(model, b.hw);
  const double acc = evaluate_accuracy(model, b.test);
  std::cout << "eval: " << in << " on " << b.name << ": accuracy " << acc << " (error "
            << format_pct(100.0 * (1.0 - acc)) << "%), surviving kernels "
            << (report.total.kernels - report.total.kernels_pruned) << "/"
            << report.total.kernels << ", conv flops " << report.flops_sparse << "\n";
  return 0;
}

int cmd_export(const std::string& in, const std::string& out) {
  Model model = load_checkpoint(in);
  SparseModel sm = export_bcsr(model);
  save_sbcr(sm, out);
  SparseRunner runner(std::move(sm));
  for (std::size_t i = 0; i < runner.model().convs.size(); ++i)
    std::cout << "export-bcsr: conv " << i << " density "
              << format_pct(100.0 * runner.layer_density(i)) << "%\n";
  std::cout << "export-bcsr: wrote " << out << "\n";
  return 0;
}

int cmd_bench(const std::string& in, const std::string& csv, std::size_t height,
              std::size_t width, std::size_t batch, std::size_t reps, std::uint32_t seed) {
  SparseRunner runner(load_sbcr(in));
  const auto rows = bench_sparse(runner, {height, width}, batch, reps, seed);
  if (!csv.empty()) {
    write_bench_csv(csv, rows);
    std::cout << "bench: wrote " << csv << "\n";
  } else {
    std::cout << "path,layer,density,median_ns\n";
    for (const auto& r : rows)
      std::cout << r.path << "," << r.layer << "," << format_pct(r.density) << ","
                << r.median_ns << "\n";
  }
  return 0;
}

int cmd_sensitivity(const KvCli& cli, const std::string& csv, const std::string& seeds_text,
                    const std::string& grid_text, const std::string& indicator) {
  const KvMap kv = cli.merged();
  TrainConfig base = config_from(kv);
  const std::vector<std::uint32_t> seeds = parse_seed_list(seeds_text);
  if (seeds.empty()) throw std::runtime_error("config: bad seed list: " + seeds_text);
  const std::vector<double> grid_pct = parse_percent_list(grid_text, "grid");
  if (grid_pct.empty()) throw std::runtime_error("config: bad value for 'grid': " + grid_text);
  std::vector<double> fractions;
  for (double p : grid_pct) fractions.push_back(p / 100.0);
  const IndicatorKind kind = indicator_from_string(indicator);

  const Bundle b = load_bundle(kv, base.seed);
  const ModelSpec spec = spec_from_kv(kv, b);
  std::vector<Model> models;
  std::vector<double> baselines;
  for (std::uint32_t seed : seeds) {
    TrainConfig cfg = base;
    cfg.seed = seed;
    Model model(spec, cfg.variant, seed);
    TrainResult fit = train(model, b.train, b.test, cfg, b.augment);
    const double acc = evaluate_accuracy(fit.best, b.test);
    std::cout << "sensitivity: seed " << seed << " baseline accuracy " << acc << "\n";
    baselines.push_back(acc);
    models.push_back(std::move(fit.best));
  }
  const auto rows =
      sensitivity_sweep(models, baselines, fractions, kind, b.train, b.test, base, b.hw,
                        b.augment);
  for (const auto& r : rows)
    std::cout << "sensitivity: " << to_string(r.kind) << " at "
              << format_pct(100.0 * r.fraction) << "%: mean accuracy " << r.mean_accuracy
              << " (drop " << r.mean_drop << ")\n";
  write_sensitivity_csv(csv, rows);
  std::cout << "sensitivity: wrote " << csv << "\n";
  return 0;
}

int cmd_gradcheck(const KvCli& cli, std::size_t batch, double step, double tolerance) {
  const KvMap kv = cli.merged();
  TrainConfig cfg = config_from(kv);
  const Bundle b = load_bundle(kv, cfg.seed);

  Model model32(spec_from_kv(kv, b), cfg.variant, cfg.seed);
  ModelD model = model32.cast<double>();
  batch = std::min(batch, b.train.size());
  TensorD x({batch, b.channels, b.hw[0], b.hw[1]});
  std::vector<int> labels(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    labels[i] = b.train.labels[i];
    const std::size_t plane = b.channels * b.hw[0] * b.hw[1];
    for (std::size_t j = 0; j < plane; ++j)
      x[i * plane + j] = double(b.train.images[i * plane + j]);
  }

  auto params = model.params();
  for (auto* p : params) p->zero_grad();
  {
    ad::TapeD tape;
    auto loss = tape.cross_entropy(
        model.forward(tape, x, ad::BnMode::kTrainStateless), labels);
    tape.backward(loss);
  }
  auto loss_fn = [&]() {
    ad::TapeD tape;
    return tape
        .cross_entropy(model.forward(tape, x, ad::BnMode::kTrainStateless), labels)
        .value()[0];
  };
  FdOptions opt;
  opt.step = step;
  opt.rel_tol = tolerance;
  opt.seed = cfg.seed;
  const FdReport report = finite_difference_check(loss_fn, params, nullptr, opt);
  std::cout << "gradcheck: " << report.entries_checked << " entries, worst "
            << report.worst.param << "[" << report.worst.index << "] rel_err "
            << report.worst.rel_err << "\n";
  if (!report.pass) {
    for (const auto& f : report.failures)
      std::cout << "gradcheck: FAIL " << f.param << "[" << f.index << "] analytic "
                << f.analytic << " numeric " << f.numeric << " rel_err " << f.rel_err << "\n";
    throw std::runtime_error("gradcheck: " + std::to_string(report.failures.size()) +
                             " entries above tolerance");
  }
  std::cout << "gradcheck: PASS (tolerance " << tolerance << ")\n";
  return 0;
}

int cmd_datagen(const std::string& dataset, std::size_t count, std::uint32_t seed,
                const std::string& images, const std::string& labels) {
  LabeledSet set;
  if (dataset == "digits")
    set = synthetic_digits(count, seed);
  else if (dataset == "blobs")
    set = synthetic_blobs(count, seed);
  else
    throw std::runtime_error("dataset: datagen supports digits | blobs, got '" + dataset +
                             "'");
  save_idx(set, images, labels);
  std::cout << "datagen: wrote " << count << " " << dataset << " examples to " << images
            << " / " << labels << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Orchestrator: train -> lambda sweep -> prune+finetune grid -> report ->
// sensitivity -> export -> bench, all inside one artifact directory. A stage
// is skipped when every artifact it writes already exists, so an interrupted
// run resumes where it stopped.
// ---------------------------------------------------------------------------

bool all_exist(const std::vector<std::string>& paths) {
  for (const auto& p : paths)
    if (!fs::exists(p)) return false;
  return true;
}

int cmd_run(const KvCli& cli, const std::string& out_dir) {
  const KvMap kv = cli.merged();
  const std::uint64_t hash = config_hash(kv);
  TrainConfig cfg = config_from(kv);
  const std::vector<double> grid_pct =
      parse_percent_list(kv_get(kv, "prune_grid", "80"), "prune_grid");
  const std::vector<double> sens_pct = parse_percent_list(
      kv_get(kv, "sensitivity_grid", "70,80,90,95,97.5"), "sensitivity_grid");
  const double start_lambda = kv_get_double(kv, "sweep_start_lambda", 1e-5);
  const double tolerance = kv_get_double(kv, "sweep_tolerance_points", 0.5);
  const std::size_t max_steps = kv_get_size(kv, "sweep_max_steps", 4);
  const std::size_t bench_reps = kv_get_size(kv, "bench_reps", 3);
  const std::size_t bench_batch = kv_get_size(kv, "bench_batch", 1);

  fs::create_directories(out_dir);
  const auto at = [&](const std::string& name) { return out_dir + "/" + name; };
  const std::string manifest = at("manifest.csv");

  // Persist the merged configuration so the directory is self-describing.
  {
    std::ostringstream snap;
    for (const auto& [k, v] : kv) snap << k << " = " << v << "\n";
    std::ofstream out(at("config_snapshot.cfg"), std::ios::binary);
    out << snap.str();
  }
  char hash_text[32];
  std::snprintf(hash_text, sizeof(hash_text), "%016llx", (unsigned long long)hash);
  std::cout << "run: config hash " << hash_text << ", seed " << cfg.seed << ", artifacts in "
            << out_dir << "\n";

  const Bundle b = load_bundle(kv, cfg.seed);
  const ModelSpec spec = spec_from_kv(kv, b);
  const std::string tag = spec.name;

  auto stage_banner = [&](const std::string& stage, bool skipped) {
    std::cout << "run: stage " << stage << (skipped ? " (cached, skipped)" : "") << "\n";
  };

  // --- stage baseline: lambda = 0 reference training -----------------------
  std::vector<ReportRow> report_rows;
  double baseline_acc = 0.0;
  {
    const bool cached = all_exist({at("baseline.synp"), at("baseline_history.csv")});
    stage_banner("baseline", cached);
    if (!cached) {
      TrainConfig base_cfg = cfg;
      base_cfg.lambda = 0.0;
      Model model(spec, cfg.variant, cfg.seed);
      TrainResult res = train(model, b.train, b.test, base_cfg, b.augment);
      write_history_csv(at("baseline_history.csv"), res.history);
      save_checkpoint(res.best, at("baseline.synp"));
      append_manifest(manifest, "baseline", hash, cfg.seed, "baseline.synp");
      append_manifest(manifest, "baseline", hash, cfg.seed, "baseline_history.csv");
    }
    Model model = load_checkpoint(at("baseline.synp"));
    baseline_acc = evaluate_accuracy(model, b.test);
    report_rows.push_back(
        report_row(tag + "-baseline", baseline_acc, count_flops(model, b.hw)));
  }

  // --- stage sweep: pick the strongest lambda within tolerance --------------
  {
    const bool cached = all_exist({at("regularized.synp"), at("lambda_sweep.csv")});
    stage_banner("sweep", cached);
    if (!cached) {
      LambdaSweep sweep = lambda_sweep(spec, cfg.variant, b.train, b.test, cfg, start_lambda,
                                       tolerance, max_steps, b.augment);
      write_lambda_csv(at("lambda_sweep.csv"), sweep);
      save_checkpoint(sweep.chosen, at("regularized.synp"));
      append_manifest(manifest, "sweep", hash, cfg.seed, "lambda_sweep.csv");
      append_manifest(manifest, "sweep", hash, cfg.seed, "regularized.synp");
      std::cout << "run: chose lambda " << sweep.chosen_lambda << "\n";
    }
  }
  Model regularized = load_checkpoint(at("regularized.synp"));
  report_rows.push_back(report_row(tag + "-regularized", evaluate_accuracy(regularized, b.test),
                                   count_flops(regularized, b.hw)));

  // --- stage prune: prune + finetune every grid point -----------------------
  std::vector<std::string> exports;
  for (double pct : grid_pct) {
    const std::string label = format_pct(pct);
    const std::string pruned_name = "pruned_" + label + ".synp";
    const std::string tuned_name = "finetuned_" + label + ".synp";
    const bool cached = all_exist({at(pruned_name), at(tuned_name)});
    stage_banner("prune " + label + "%", cached);
    if (!cached) {
      PruneOutcome outcome =
          prune_and_finetune(regularized, pct / 100.0, IndicatorKind::kSynaptic, b.train,
                             b.test, cfg, b.hw, b.augment);
      Model pruned_only = regularized;
      apply_prune(pruned_only, outcome.plan, b.hw);
      save_checkpoint(pruned_only, at(pruned_name));
      save_checkpoint(outcome.model, at(tuned_name));
      append_manifest(manifest, "prune", hash, cfg.seed, pruned_name);
      append_manifest(manifest, "prune", hash, cfg.seed, tuned_name);
      std::cout << "run: " << label << "% pruned accuracy " << outcome.accuracy_pruned
                << ", finetuned " << outcome.accuracy_finetuned << " (baseline "
                << baseline_acc << ")\n";
    }
    Model tuned = load_checkpoint(at(tuned_name));
    report_rows.push_back(
        report_row(tag + "-" + label, evaluate_accuracy(tuned, b.test),
                   count_flops(tuned, b.hw)));
    exports.push_back(tuned_name);
  }

  // --- stage report ---------------------------------------------------------
  {
    const bool cached = all_exist({at("report.csv")});
    stage_banner("report", cached);
    if (!cached) {
      write_report_csv(at("report.csv"), report_rows);
      append_manifest(manifest, "report", hash, cfg.seed, "report.csv");
    }
  }

  // --- stage sensitivity: indicator robustness over the pruning grid --------
  if (!sens_pct.empty()) {
    const bool cached = all_exist({at("sensitivity.csv")});
    stage_banner("sensitivity", cached);
    if (!cached) {
      std::vector<double> fractions;
      for (double p : sens_pct) fractions.push_back(p / 100.0);
      std::vector<Model> models;
      models.push_back(regularized);
      const std::vector<double> bases{evaluate_accuracy(regularized, b.test)};
      const auto rows = sensitivity_sweep(models, bases, fractions, IndicatorKind::kSynaptic,
                                          b.train, b.test, cfg, b.hw, b.augment);
      write_sensitivity_csv(at("sensitivity.csv"), rows);
      append_manifest(manifest, "sensitivity", hash, cfg.seed, "sensitivity.csv");
    }
  }

  // --- stage export: BCSR for every finetuned model -------------------------
  std::vector<std::string> sbcr_names;
  for (const auto& name : exports) {
    const std::string sbcr_name = name.substr(0, name.size() - 5) + ".sbcr";
    sbcr_names.push_back(sbcr_name);
    const bool cached = all_exist({at(sbcr_name)});
    stage_banner("export " + sbcr_name, cached);
    if (!cached) {
      Model tuned = load_checkpoint(at(name));
      save_sbcr(export_bcsr(tuned), at(sbcr_name));
      append_manifest(manifest, "export", hash, cfg.seed, sbcr_name);
    }
  }

  // --- stage bench: time the sparsest export --------------------------------
  if (!sbcr_names.empty()) {
    const bool cached = all_exist({at("bench.csv")});
    stage_banner("bench", cached);
    if (!cached) {
      SparseRunner runner(load_sbcr(at(sbcr_names.back())));
      const auto rows = bench_sparse(runner, b.hw, bench_batch, bench_reps, cfg.seed);
      write_bench_csv(at("bench.csv"), rows);
      append_manifest(manifest, "bench", hash, cfg.seed, "bench.csv");
    }
  }

  std::cout << "run: done\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Kernel-sparsity workbench: strength-reparameterized training, global "
      "kernel pruning, and a block-sparse inference runtime"};
  app.require_subcommand(1);

  // Shared option state. Each subcommand gets its own KvCli so unrelated
  // flags never leak between them.
  struct {
    KvCli cli;
    std::string out = "model.synp", history;
  } train_o;
  struct {
    KvCli cli;
    std::string out = "regularized.synp", csv = "lambda_sweep.csv";
    double start_lambda = 1e-5, tolerance = 0.5;
    std::size_t max_steps = 4;
  } sweep_o;
  struct {
    KvCli cli;
    std::string in, out = "pruned.synp", indicator = "synaptic";
    double percent = 80.0;
  } prune_o;
  struct {
    KvCli cli;
    std::string in, out = "finetuned.synp", history;
  } tune_o;
  struct {
    KvCli cli;
    std::string in;
  } eval_o;
  struct {
    std::string in, out = "model.sbcr";
  } export_o;
  struct {
    std::string in, csv;
    std::size_t height = 28, width = 28, batch = 1, reps = 5;
    std::uint32_t seed = 1;
  } bench_o;
  struct {
    KvCli cli;
    std::string csv = "sensitivity.csv", seeds = "1,2,3", grid = "70,80,90,95,97.5",
                indicator = "synaptic";
  } sens_o;
  struct {
    KvCli cli;
    std::size_t batch = 4;
    double step = 1e-4, tolerance = 1e-3;
  } grad_o;
  struct {
    std::string dataset = "digits", images = "train-images-idx3-ubyte",
                labels = "train-labels-idx1-ubyte";
    std::size_t count = 2000;
    std::uint32_t seed = 1;
  } gen_o;
  struct {
    KvCli cli;
    std::string out_dir = "artifacts";
  } run_o;

  CLI::App* c = app.add_subcommand("train", "Train a model from scratch");
  train_o.cli.add_config_flag(c);
  train_o.cli.add_training_flags(c);
  train_o.cli.add_dataset_flags(c);
  c->add_option("--out", train_o.out, "checkpoint to write");
  c->add_option("--history", train_o.history, "per-epoch CSV to write");

  c = app.add_subcommand("sweep-lambda",
                         "Scan regularization strengths on a sqrt(10) ladder");
  sweep_o.cli.add_config_flag(c);
  sweep_o.cli.add_training_flags(c);
  sweep_o.cli.add_dataset_flags(c);
  c->add_option("--start-lambda", sweep_o.start_lambda, "first (smallest) lambda");
  c->add_option("--tolerance", sweep_o.tolerance,
                "largest acceptable accuracy drop, in points");
  c->add_option("--max-steps", sweep_o.max_steps, "ladder length");
  c->add_option("--out", sweep_o.out, "checkpoint of the chosen run");
  c->add_option("--out-csv", sweep_o.csv, "sweep table to write");

  c = app.add_subcommand("prune", "Mask the globally weakest kernels");
  prune_o.cli.add_config_flag(c);
  prune_o.cli.add_training_flags(c);
  prune_o.cli.add_dataset_flags(c);
  c->add_option("--in", prune_o.in, "trained checkpoint")->required();
  c->add_option("--out", prune_o.out, "pruned checkpoint to write");
  c->add_option("--percent", prune_o.percent, "share of kernels to remove");
  c->add_option("--indicator", prune_o.indicator, "synaptic | ssl_mean_abs");

  c = app.add_subcommand("finetune", "Recover a pruned model (masks stay frozen)");
  tune_o.cli.add_config_flag(c);
  tune_o.cli.add_training_flags(c);
  tune_o.cli.add_dataset_flags(c);
  c->add_option("--in", tune_o.in, "pruned checkpoint")->required();
  c->add_option("--out", tune_o.out, "finetuned checkpoint to write");
  c->add_option("--history", tune_o.history, "per-epoch CSV to write");

  c = app.add_subcommand("eval", "Report accuracy and cost of a checkpoint");
  eval_o.cli.add_config_flag(c);
  eval_o.cli.add_training_flags(c);
  eval_o.cli.add_dataset_flags(c);
  c->add_option("--in", eval_o.in, "checkpoint to evaluate")->required();

  c = app.add_subcommand("export-bcsr", "Fold strengths and emit a sparse model");
  c->add_option("--in", export_o.in, "checkpoint to export")->required();
  c->add_option("--out", export_o.out, "sparse model to write");

  c = app.add_subcommand("bench", "Time dense/direct/Winograd paths of an export");
  c->add_option("--in", bench_o.in, "sparse model (.sbcr)")->required();
  c->add_option("--height", bench_o.height, "input height");
  c->add_option("--width", bench_o.width, "input width");
  c->add_option("--batch", bench_o.batch, "input batch size");
  c->add_option("--reps", bench_o.reps, "timed repetitions (median reported)");
  c->add_option("--seed", bench_o.seed, "input RNG seed");
  c->add_option("--out-csv", bench_o.csv, "CSV to write (stdout when omitted)");

  c = app.add_subcommand("sensitivity",
                         "Accuracy vs pruning fraction across seeds (prune + finetune "
                         "at every grid point)");
  sens_o.cli.add_config_flag(c);
  sens_o.cli.add_training_flags(c);
  sens_o.cli.add_dataset_flags(c);
  c->add_option("--seeds", sens_o.seeds, "comma list of training seeds");
  c->add_option("--grid", sens_o.grid, "comma list of pruning percents");
  c->add_option("--indicator", sens_o.indicator, "synaptic | ssl_mean_abs");
  c->add_option("--out-csv", sens_o.csv, "CSV to write");

  c = app.add_subcommand("gradcheck",
                         "Finite-difference check of analytic gradients (64-bit)");
  grad_o.cli.add_config_flag(c);
  grad_o.cli.add_training_flags(c);
  grad_o.cli.add_dataset_flags(c);
  c->add_option("--batch", grad_o.batch, "batch size for the probe");
  c->add_option("--step", grad_o.step, "central difference step");
  c->add_option("--tolerance", grad_o.tolerance, "relative error bound");

  c = app.add_subcommand("datagen", "Write a synthetic dataset in IDX format");
  c->add_option("--dataset", gen_o.dataset, "digits | blobs");
  c->add_option("--count", gen_o.count, "number of examples");
  c->add_option("--seed", gen_o.seed, "generator seed");
  c->add_option("--out-images", gen_o.images, "IDX image file to write");
  c->add_option("--out-labels", gen_o.labels, "IDX label file to write");

  c = app.add_subcommand("run",
                         "Full pipeline: train, sweep, prune+finetune, report, "
                         "sensitivity, export, bench (resumable)");
  run_o.cli.add_config_flag(c);
  run_o.cli.add_training_flags(c);
  run_o.cli.add_dataset_flags(c);
  c->add_option("--out-dir", run_o.out_dir, "artifact directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("train"))
      return cmd_train(train_o.cli, train_o.out, train_o.history);
    if (app.got_subcommand("sweep-lambda"))
      return cmd_sweep(sweep_o.cli, sweep_o.out, sweep_o.csv, sweep_o.start_lambda,
                       sweep_o.tolerance, sweep_o.max_steps);
    if (app.got_subcommand("prune"))
      return cmd_prune(prune_o.cli, prune_o.in, prune_o.out, prune_o.percent,
                       prune_o.indicator);
    if (app.got_subcommand("finetune"))
      return cmd_finetune(tune_o.cli, tune_o.in, tune_o.out, tune_o.history);
    if (app.got_subcommand("eval")) return cmd_eval(eval_o.cli, eval_o.in);
    if (app.got_subcommand("export-bcsr")) return cmd_export(export_o.in, export_o.out);
    if (app.got_subcommand("bench"))
      return cmd_bench(bench_o.in, bench_o.csv, bench_o.height, bench_o.width,
                       bench_o.batch, bench_o.reps, bench_o.seed);
    if (app.got_subcommand("sensitivity"))
      return cmd_sensitivity(sens_o.cli, sens_o.csv, sens_o.seeds, sens_o.grid,
                             sens_o.indicator);
    if (app.got_subcommand("gradcheck"))
      return cmd_gradcheck(grad_o.cli, grad_o.batch, grad_o.step, grad_o.tolerance);
    if (app.got_subcommand("datagen"))
      return cmd_datagen(gen_o.dataset, gen_o.count, gen_o.seed, gen_o.images,
                         gen_o.labels);
    if (app.got_subcommand("run")) return cmd_run(run_o.cli, run_o.out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return classify_error(e.what());
  }
  return 0;
}
