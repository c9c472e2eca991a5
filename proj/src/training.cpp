#include "synprune/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace synprune {

namespace {

void check_arg(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

// Magnitude the sparsity penalty acts on, per unmasked kernel: |s| with
// unit-norm kernels, the slice Frobenius norm with raw kernels.
std::vector<double> strength_magnitudes(const Model& m) {
  std::vector<double> out;
  const bool unit_kernels = m.flags().kernel_norm;
  for (const auto& conv : m.convs) {
    const std::size_t kk = conv.ksize * conv.ksize;
    for (std::size_t sl = 0; sl < conv.mask.size(); ++sl) {
      if (!conv.mask[sl]) continue;
      if (unit_kernels) {
        out.push_back(std::abs(double(conv.strengths.value[sl])));
      } else {
        const float* w = conv.weights.value.data() + sl * kk;
        double sq = 0;
        for (std::size_t t = 0; t < kk; ++t) sq += double(w[t]) * double(w[t]);
        out.push_back(std::sqrt(sq));
      }
    }
  }
  return out;
}

Tensor gather_batch(const LabeledSet& set, const std::vector<std::size_t>& order,
                    std::size_t begin, std::size_t end, std::vector<int>& labels_out) {
  const std::size_t c = set.images.dim(1), h = set.images.dim(2), w = set.images.dim(3);
  const std::size_t plane = c * h * w;
  Tensor x({end - begin, c, h, w});
  labels_out.resize(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    const std::size_t src = order[i];
    std::copy_n(set.images.data() + src * plane, plane, x.data() + (i - begin) * plane);
    labels_out[i - begin] = set.labels[src];
  }
  return x;
}

void check_set(const LabeledSet& set, const char* name) {
  check_arg(set.images.rank() == 4, std::string(name) + " set: images must be N x C x H x W");
  check_arg(set.images.dim(0) == set.labels.size(),
            std::string(name) + " set: image/label count mismatch");
}

}  // namespace

void validate(const TrainConfig& cfg) {
  check_arg(cfg.lambda >= 0.0, "config: lambda must be >= 0");
  check_arg(cfg.lr > 0.0, "config: lr must be positive");
  check_arg(cfg.momentum >= 0.0 && cfg.momentum < 1.0, "config: momentum must be in [0, 1)");
  check_arg(cfg.weight_decay >= 0.0, "config: weight_decay must be >= 0");
  check_arg(cfg.batch_size > 0, "config: batch_size must be positive");
  for (std::size_t i = 0; i < cfg.lr_drop_epochs.size(); ++i) {
    check_arg(cfg.lr_drop_epochs[i] < cfg.epochs, "config: schedule epoch past the end");
    check_arg(i == 0 || cfg.lr_drop_epochs[i - 1] < cfg.lr_drop_epochs[i],
              "config: schedule epochs must be strictly increasing");
  }
}

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  double lr = cfg.lr;
  for (std::size_t drop : cfg.lr_drop_epochs)
    if (epoch >= drop) lr /= 10.0;
  return lr;
}

double l1_subgradient(double s) { return s > 0.0 ? 1.0 : (s < 0.0 ? -1.0 : 0.0); }

double regularization_term(const Model& m, double lambda) {
  double sum = 0;
  for (double v : strength_magnitudes(m)) sum += v;
  return lambda * sum;
}

ObjectiveParts objective(Model& m, const Tensor& x, const std::vector<int>& labels,
                         double lambda) {
  check_arg(lambda >= 0.0, "objective: lambda must be >= 0");
  check_arg(x.rank() == 4 && x.dim(0) == labels.size(), "objective: batch/label mismatch");
  ad::Tape tape;
  auto logits = m.forward(tape, x, ad::BnMode::kTrainStateless);
  auto loss = tape.cross_entropy(logits, labels);
  ObjectiveParts parts;
  parts.data_loss = double(loss.value()[0]);
  parts.reg_term = regularization_term(m, lambda);
  parts.total = parts.data_loss + parts.reg_term;
  return parts;
}

void sgd_step(Model& m, SgdState& state, const TrainConfig& cfg, double lr) {
  auto velocity = [&state](const ad::Param& p) -> Tensor& {
    auto it = state.velocity.find(p.name);
    if (it == state.velocity.end())
      it = state.velocity.emplace(p.name, Tensor(p.value.shape())).first;
    if (!it->second.same_shape(p.value))
      throw std::runtime_error("sgd_step: velocity shape mismatch for " + p.name);
    return it->second;
  };
  auto require_finite = [](const ad::Param& p) {
    if (!p.grad.all_finite())
      throw std::runtime_error("sgd_step: non-finite gradient in " + p.name);
  };
  // Dense rule for a contiguous span: v = mom*v + (g + wd*theta), theta -= lr*v.
  auto dense_span = [&](float* th, const float* g, float* v, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      const double nv =
          cfg.momentum * double(v[i]) + (double(g[i]) + cfg.weight_decay * double(th[i]));
      v[i] = float(nv);
      th[i] = float(double(th[i]) - lr * nv);
    }
  };
  auto dense_param = [&](ad::Param& p) {
    require_finite(p);
    dense_span(p.value.data(), p.grad.data(), velocity(p).data(), p.value.size());
  };

  for (auto& conv : m.convs) {
    const std::size_t kk = conv.ksize * conv.ksize;

    ad::Param& w = conv.weights;
    require_finite(w);
    Tensor& vw = velocity(w);
    const bool grouped = w.kind == ad::ParamKind::kGroupKernel;
    for (std::size_t sl = 0; sl < conv.mask.size(); ++sl) {
      if (!conv.mask[sl]) continue;
      float* th = w.value.data() + sl * kk;
      const float* g = w.grad.data() + sl * kk;
      float* v = vw.data() + sl * kk;
      if (grouped && cfg.lambda > 0.0) {
        double sq = 0;
        for (std::size_t t = 0; t < kk; ++t) sq += double(th[t]) * double(th[t]);
        const double norm = std::sqrt(sq);
        for (std::size_t t = 0; t < kk; ++t) {
          double gt = double(g[t]) + cfg.weight_decay * double(th[t]);
          if (norm > 0.0) gt += cfg.lambda * double(th[t]) / norm;
          const double nv = cfg.momentum * double(v[t]) + gt;
          v[t] = float(nv);
          th[t] = float(double(th[t]) - lr * nv);
        }
      } else {
        dense_span(th, g, v, kk);
      }
    }

    if (!conv.strengths.value.empty()) {
      ad::Param& s = conv.strengths;
      require_finite(s);
      Tensor& vs = velocity(s);
      for (std::size_t sl = 0; sl < conv.mask.size(); ++sl) {
        if (!conv.mask[sl]) continue;
        const double g =
            double(s.grad[sl]) + cfg.lambda * l1_subgradient(double(s.value[sl]));
        const double nv = cfg.momentum * double(vs[sl]) + g;
        vs[sl] = float(nv);
        s.value[sl] = float(double(s.value[sl]) - lr * nv);
      }
    }
  }
  for (auto& bn : m.bns) {
    dense_param(bn.beta);
    if (!bn.log_gamma.value.empty()) dense_param(bn.log_gamma);
  }
  dense_param(m.fc.w);
  dense_param(m.fc.b);
}

void write_history_csv(const std::string& path, const TrainHistory& h) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "epoch,loss,reg_term,train_acc,test_acc,min_strength,median_strength\n";
  char row[256];
  for (const EpochRecord& r : h.epochs) {
    std::snprintf(row, sizeof(row), "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.loss,
                  r.reg_term, r.train_acc, r.test_acc, r.min_strength, r.median_strength);
    out << row;
  }
  if (!out) throw std::runtime_error("failed writing " + path);
}

double evaluate_accuracy(Model& m, const LabeledSet& set, std::size_t batch) {
  const std::size_t n = set.size();
  if (n == 0) return 0.0;
  check_set(set, "eval");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<int> labels;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < n; begin += batch) {
    const std::size_t end = std::min(n, begin + batch);
    Tensor x = gather_batch(set, order, begin, end, labels);
    ad::Tape tape;
    auto out = m.forward(tape, std::move(x), ad::BnMode::kEval);
    const Tensor& logits = out.value();
    const std::size_t classes = logits.dim(1);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < classes; ++j)
        if (logits.at2(i, j) > logits.at2(i, best)) best = j;
      if (int(best) == labels[i]) ++correct;
    }
  }
  return double(correct) / double(n);
}

TrainResult train(const Model& start, const LabeledSet& train_set, const LabeledSet& test_set,
                  const TrainConfig& cfg, const AugmentFn& augment) {
  validate(cfg);
  check_set(train_set, "train");
  check_arg(train_set.size() > 0, "train set: empty");

  TrainResult res{start, start, {}};
  if (cfg.epochs == 0) return res;

  Model model = start;
  SgdState state;
  std::mt19937 shuffle_rng(cfg.seed);
  const std::size_t n = train_set.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<int> labels;
  double best_acc = -1.0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::mt19937 aug_rng(cfg.seed * 2654435761u + std::uint32_t(epoch) * 40503u + 1u);

    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      Tensor x = gather_batch(train_set, order, begin, end, labels);
      if (augment) x = augment(x, aug_rng);

      model.zero_grads();
      ad::Tape tape;
      auto logits = model.forward(tape, std::move(x), ad::BnMode::kTrain);
      auto loss = tape.cross_entropy(logits, labels);
      const double batch_loss = double(loss.value()[0]);
      if (!std::isfinite(batch_loss))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch));
      loss_sum += batch_loss * double(end - begin);

      const Tensor& lv = logits.value();
      const std::size_t classes = lv.dim(1);
      for (std::size_t i = 0; i < labels.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < classes; ++j)
          if (lv.at2(i, j) > lv.at2(i, best)) best = j;
        if (int(best) == labels[i]) ++correct;
      }

      tape.backward(loss);
      sgd_step(model, state, cfg, lr);
      model.renormalize_directions();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / double(n);
    rec.reg_term = regularization_term(model, cfg.lambda);
    rec.train_acc = double(correct) / double(n);
    rec.test_acc = evaluate_accuracy(model, test_set);
    std::vector<double> mags = strength_magnitudes(model);
    if (!mags.empty()) {
      std::sort(mags.begin(), mags.end());
      rec.min_strength = mags.front();
      rec.median_strength = mags[(mags.size() - 1) / 2];
    }
    res.history.epochs.push_back(rec);

    if (rec.test_acc >= best_acc) {
      best_acc = rec.test_acc;
      res.best = model;
    }
  }
  res.last = std::move(model);
  return res;
}

TrainConfig finetune_config(const TrainConfig& base) {
  validate(base);
  TrainConfig out = base;
  out.lambda = 0.0;
  out.lr = lr_at_epoch(base, base.epochs);  // == base lr after every drop
  out.lr_drop_epochs.clear();
  out.epochs = base.epochs == 0
                   ? 0
                   : std::max<std::size_t>(1, std::size_t(std::llround(0.2 * double(base.epochs))));
  return out;
}

TrainResult finetune(const Model& pruned, const LabeledSet& train_set,
                     const LabeledSet& test_set, const TrainConfig& base,
                     const AugmentFn& augment) {
  return train(pruned, train_set, test_set, finetune_config(base), augment);
}

}  // namespace synprune
