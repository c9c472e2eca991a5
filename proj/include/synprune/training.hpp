#pragma once

// Minibatch SGD for the strength-reparameterized models: momentum + weight
// decay on dense parameters, an L1 subgradient on strengths, step-decay
// learning rates, and the short recovery pass that follows pruning.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "synprune/model.hpp"

namespace synprune {

// A labeled image set: images are N x C x H x W, labels[i] in [0, classes).
struct LabeledSet {
  Tensor images;
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
};

enum class Precision { kF32, kF64 };

struct TrainConfig {
  double lambda = 0.0;  // strength sparsity coefficient
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<std::size_t> lr_drop_epochs = {30, 45};  // lr /= 10 entering each
  std::size_t batch_size = 128;
  std::size_t epochs = 60;
  std::uint32_t seed = 1;
  Precision precision = Precision::kF32;  // f64 reserved for gradient checks
  VariantFlags variant;
};

// Throws std::invalid_argument on lambda < 0, zero batch size, or a schedule
// that is not strictly increasing below the epoch count.
void validate(const TrainConfig& cfg);

// Base lr divided by 10 for every schedule entry <= epoch.
double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch);

// sign(s); exactly 0 at s = 0 so zero strengths stay stationary.
double l1_subgradient(double s);

// The regularization term lambda * sum over unmasked kernels of the strength
// magnitude (|s|, or the kernel Frobenius norm when kernels are raw).
double regularization_term(const Model& m, double lambda);

// Mean classification loss on the batch plus the sparsity penalty, evaluated
// with batch statistics but without touching running stats (pure).
struct ObjectiveParts {
  double total = 0;
  double data_loss = 0;
  double reg_term = 0;
};
ObjectiveParts objective(Model& m, const Tensor& x, const std::vector<int>& labels,
                         double lambda);

// Momentum buffers, keyed by parameter name and created lazily at zero.
struct SgdState {
  std::unordered_map<std::string, Tensor> velocity;
};

// One update from the gradients currently on the model:
//   dense kinds: v = momentum*v + (g + weight_decay*theta)
//   strengths:   v = momentum*v + (g + lambda*sign(s))   -- no weight decay
//   raw kernels additionally feel the group term lambda * k / |k| (0 at 0)
//   theta -= lr * v
// Masked kernels and their strengths are skipped entirely and stay 0.
// Throws std::runtime_error naming the parameter on a non-finite gradient.
void sgd_step(Model& m, SgdState& state, const TrainConfig& cfg, double lr);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0;       // mean data loss over the epoch's training batches
  double reg_term = 0;   // lambda * sum of unmasked strength magnitudes
  double train_acc = 0;  // accuracy of the training-mode logits seen in the loop
  double test_acc = 0;   // eval-mode accuracy on the held-out set
  double min_strength = 0;
  double median_strength = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

// epoch,loss,reg_term,train_acc,test_acc,min_strength,median_strength with a
// header row; formatting is fixed so equal runs produce identical bytes.
void write_history_csv(const std::string& path, const TrainHistory& h);

struct TrainResult {
  Model best;  // parameters at the best test accuracy; ties favor later epochs
  Model last;  // parameters after the final epoch
  TrainHistory history;
};

// Optional per-batch augmentation hook (returns a transformed copy).
using AugmentFn = std::function<Tensor(const Tensor&, std::mt19937&)>;

// Eval-mode accuracy over the whole set, batched.
double evaluate_accuracy(Model& m, const LabeledSet& set, std::size_t batch = 256);

// The epoch loop: seeded shuffles, training-mode BN, one eval pass per epoch.
// epochs = 0 returns the start model unchanged with empty history.
// Throws std::invalid_argument on an empty dataset, std::runtime_error on a
// non-finite loss.
TrainResult train(const Model& start, const LabeledSet& train_set, const LabeledSet& test_set,
                  const TrainConfig& cfg, const AugmentFn& augment = {});

// Recovery configuration: lambda = 0, constant lr equal to the end of the
// base schedule, 20% of the base epoch budget (rounded, minimum one epoch
// when the base trained at all).
TrainConfig finetune_config(const TrainConfig& base);

// train() under finetune_config(base); masked kernels stay frozen at zero.
TrainResult finetune(const Model& pruned, const LabeledSet& train_set,
                     const LabeledSet& test_set, const TrainConfig& base,
                     const AugmentFn& augment = {});

}  // namespace synprune
