#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "synprune/pruning.hpp"
#include "synprune/training.hpp"
#include "test_util.hpp"

using namespace synprune;

namespace {

// Two linearly separable classes: class 0 lights the top-left quadrant,
// class 1 the bottom-right, plus uniform pixel noise.
LabeledSet make_blobs(std::size_t n, std::uint32_t seed, std::size_t hw = 10) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> noise(-0.25f, 0.25f);
  LabeledSet set;
  set.images = Tensor({n, 1, hw, hw});
  set.labels.resize(n);
  const std::size_t half = hw / 2;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = int(i % 2);
    set.labels[i] = label;
    for (std::size_t y = 0; y < hw; ++y)
      for (std::size_t x = 0; x < hw; ++x) {
        const bool lit = label == 0 ? (y < half && x < half) : (y >= half && x >= half);
        set.images.at4(i, 0, y, x) = noise(rng) + (lit ? 1.0f : 0.0f);
      }
  }
  return set;
}

TrainConfig blob_config() {
  TrainConfig cfg;
  cfg.lambda = 0.0;
  cfg.lr = 0.1;
  cfg.momentum = 0.9;
  cfg.weight_decay = 1e-4;
  cfg.lr_drop_epochs = {};
  cfg.batch_size = 32;
  cfg.epochs = 12;
  cfg.seed = 7;
  return cfg;
}

std::vector<float> flatten_params(Model& m) {
  std::vector<float> out;
  for (ad::Param* p : m.params())
    out.insert(out.end(), p->value.data(), p->value.data() + p->value.size());
  for (const auto& bn : m.bns) {
    out.insert(out.end(), bn.running.mean.data(), bn.running.mean.data() + bn.running.mean.size());
    out.insert(out.end(), bn.running.var.data(), bn.running.var.data() + bn.running.var.size());
  }
  return out;
}

}  // namespace

TEST_CASE("learning-rate schedule and config validation") {
  TrainConfig cfg;  // defaults: lr 0.1, drops at 30 and 45, 60 epochs
  validate(cfg);
  CHECK(lr_at_epoch(cfg, 0) == doctest::Approx(0.1));
  CHECK(lr_at_epoch(cfg, 29) == doctest::Approx(0.1));
  CHECK(lr_at_epoch(cfg, 30) == doctest::Approx(0.01));
  CHECK(lr_at_epoch(cfg, 44) == doctest::Approx(0.01));
  CHECK(lr_at_epoch(cfg, 45) == doctest::Approx(0.001));
  CHECK(lr_at_epoch(cfg, 59) == doctest::Approx(0.001));

  TrainConfig bad = cfg;
  bad.lambda = -0.5;
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);
  bad = cfg;
  bad.batch_size = 0;
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);
  bad = cfg;
  bad.lr_drop_epochs = {45, 30};
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);
  bad = cfg;
  bad.lr_drop_epochs = {30, 60};
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);
  bad = cfg;
  bad.epochs = 0;  // default schedule now points past the end
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);
}

TEST_CASE("l1 subgradient") {
  CHECK(l1_subgradient(3.2) == 1.0);
  CHECK(l1_subgradient(-0.01) == -1.0);
  CHECK(l1_subgradient(0.0) == 0.0);
}

TEST_CASE("objective separates data loss and penalty") {
  Model m(tinynet_spec(1, 2), VariantFlags{}, 11);
  std::mt19937 rng(3);
  Tensor x = testutil::random_tensor<float>({4, 1, 10, 10}, rng);
  std::vector<int> labels = {0, 1, 1, 0};

  const auto zero = objective(m, x, labels, 0.0);
  CHECK(zero.reg_term == 0.0);
  CHECK(zero.total == zero.data_loss);

  // Independent penalty oracle: direct double sum over the strength tensors.
  double sum = 0;
  for (const auto& conv : m.convs)
    for (std::size_t sl = 0; sl < conv.mask.size(); ++sl)
      if (conv.mask[sl]) sum += std::abs(double(conv.strengths.value[sl]));
  const double lambda = 0.37;
  const auto parts = objective(m, x, labels, lambda);
  CHECK(parts.data_loss == zero.data_loss);  // stateless: same batch stats twice
  CHECK(parts.total - parts.data_loss == doctest::Approx(lambda * sum).epsilon(1e-6));

  // All strengths zero -> penalty exactly zero.
  for (auto& conv : m.convs) conv.strengths.value.fill(0.0f);
  CHECK(objective(m, x, labels, lambda).reg_term == 0.0);
}

TEST_CASE("sgd step follows the tagged update policy") {
  const auto fresh = [] { return Model(tinynet_spec(1, 2), VariantFlags{}, 5); };

  SUBCASE("zero gradient, zero velocity, no decay: parameters unchanged") {
    Model m = fresh();
    Model before = m;
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    cfg.lambda = 0.0;
    SgdState state;
    m.zero_grads();
    sgd_step(m, state, cfg, 0.1);
    auto a = flatten_params(before), b = flatten_params(m);
    CHECK(a == b);
  }

  SUBCASE("single scalar, momentum 0: theta - lr * g") {
    Model m = fresh();
    TrainConfig cfg;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    SgdState state;
    m.zero_grads();
    const float theta = m.fc.b.value[0];
    m.fc.b.grad[0] = 0.37f;
    sgd_step(m, state, cfg, 0.1);
    CHECK(m.fc.b.value[0] == doctest::Approx(theta - 0.1 * 0.37).epsilon(1e-6));
  }

  SUBCASE("momentum accumulates over steps") {
    Model m = fresh();
    TrainConfig cfg;
    cfg.momentum = 0.9;
    cfg.weight_decay = 0.0;
    SgdState state;
    const double g = 0.25, lr = 0.1;
    const float theta = m.fc.b.value[1];
    for (int step = 0; step < 2; ++step) {
      m.zero_grads();
      m.fc.b.grad[1] = float(g);
      sgd_step(m, state, cfg, lr);
    }
    // v1 = g, v2 = 0.9 g + g; theta2 = theta - lr (v1 + v2)
    CHECK(m.fc.b.value[1] == doctest::Approx(theta - lr * (g + 1.9 * g)).epsilon(1e-6));
  }

  SUBCASE("weight decay touches dense parameters but never strengths") {
    Model m = fresh();
    Model before = m;
    TrainConfig cfg;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.01;
    cfg.lambda = 0.0;
    SgdState state;
    m.zero_grads();
    sgd_step(m, state, cfg, 0.1);
    for (std::size_t i = 0; i < m.convs.size(); ++i) {
      // strengths: bitwise unchanged
      for (std::size_t sl = 0; sl < m.convs[i].mask.size(); ++sl)
        CHECK(m.convs[i].strengths.value[sl] == before.convs[i].strengths.value[sl]);
      // directions: shrunk by exactly (1 - lr*wd)
      for (std::size_t t = 0; t < m.convs[i].weights.value.size(); ++t)
        CHECK(double(m.convs[i].weights.value[t]) ==
              doctest::Approx(double(before.convs[i].weights.value[t]) * (1.0 - 0.1 * 0.01))
                  .epsilon(1e-6));
    }
    for (std::size_t t = 0; t < m.fc.w.value.size(); ++t)
      CHECK(double(m.fc.w.value[t]) ==
            doctest::Approx(double(before.fc.w.value[t]) * (1.0 - 0.1 * 0.01)).epsilon(1e-6));
  }

  SUBCASE("l1 shrinks every nonzero strength by exactly lr * lambda") {
    Model m = fresh();
    Model before = m;
    TrainConfig cfg;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    cfg.lambda = 0.1;
    const double lr = 0.1;
    SgdState state;
    m.zero_grads();  // empty-gradient mode: only the penalty drives the step
    // Precondition for this seed: every strength clears the shrink distance.
    for (const auto& conv : before.convs)
      for (std::size_t sl = 0; sl < conv.mask.size(); ++sl)
        REQUIRE(std::abs(double(conv.strengths.value[sl])) > lr * cfg.lambda + 1e-3);
    sgd_step(m, state, cfg, lr);
    for (std::size_t i = 0; i < m.convs.size(); ++i)
      for (std::size_t sl = 0; sl < m.convs[i].mask.size(); ++sl) {
        const double s0 = std::abs(double(before.convs[i].strengths.value[sl]));
        const double s1 = std::abs(double(m.convs[i].strengths.value[sl]));
        CHECK(s1 == doctest::Approx(s0 - lr * cfg.lambda).epsilon(1e-6));
      }
    // No L1 leakage into dense parameters.
    CHECK(m.fc.w.value[0] == before.fc.w.value[0]);
    CHECK(m.convs[0].weights.value[0] == before.convs[0].weights.value[0]);
  }

  SUBCASE("group penalty shrinks raw kernel norms by lr * lambda") {
    Model m(tinynet_spec(1, 2), VariantFlags{true, false}, 5);
    REQUIRE(m.convs[0].weights.kind == ad::ParamKind::kGroupKernel);
    Model before = m;
    TrainConfig cfg;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    cfg.lambda = 0.05;
    const double lr = 0.1;
    SgdState state;
    m.zero_grads();
    sgd_step(m, state, cfg, lr);
    for (std::size_t i = 0; i < m.convs.size(); ++i) {
      const std::size_t kk = m.convs[i].ksize * m.convs[i].ksize;
      for (std::size_t sl = 0; sl < m.convs[i].mask.size(); ++sl) {
        double n0 = 0, n1 = 0;
        for (std::size_t t = 0; t < kk; ++t) {
          n0 += std::pow(double(before.convs[i].weights.value[sl * kk + t]), 2);
          n1 += std::pow(double(m.convs[i].weights.value[sl * kk + t]), 2);
        }
        n0 = std::sqrt(n0);
        n1 = std::sqrt(n1);
        REQUIRE(n0 > lr * cfg.lambda + 1e-3);
        CHECK(n1 == doctest::Approx(n0 - lr * cfg.lambda).epsilon(1e-5));
      }
    }
  }

  SUBCASE("masked kernels and strengths are never touched") {
    Model m = fresh();
    m.convs[1].mask[3] = 0;
    // Leave sentinel values in place to prove the slot is skipped, not zeroed.
    const std::size_t kk = m.convs[1].ksize * m.convs[1].ksize;
    for (std::size_t t = 0; t < kk; ++t) m.convs[1].weights.value[3 * kk + t] = 0.5f;
    m.convs[1].strengths.value[3] = 0.5f;
    TrainConfig cfg;
    cfg.lambda = 0.3;
    cfg.weight_decay = 0.01;
    SgdState state;
    m.zero_grads();
    for (std::size_t t = 0; t < kk; ++t) m.convs[1].weights.grad[3 * kk + t] = 1.0f;
    m.convs[1].strengths.grad[3] = 1.0f;
    sgd_step(m, state, cfg, 0.1);
    for (std::size_t t = 0; t < kk; ++t) CHECK(m.convs[1].weights.value[3 * kk + t] == 0.5f);
    CHECK(m.convs[1].strengths.value[3] == 0.5f);
  }

  SUBCASE("non-finite gradient aborts with the parameter name") {
    Model m = fresh();
    TrainConfig cfg;
    SgdState state;
    m.zero_grads();
    m.fc.w.grad[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_WITH_AS(sgd_step(m, state, cfg, 0.1), doctest::Contains("fc.w"),
                         std::runtime_error);
  }
}

TEST_CASE("training on separable blobs reaches high accuracy") {
  const LabeledSet train_set = make_blobs(160, 21);
  const LabeledSet test_set = make_blobs(64, 99);
  Model m(tinynet_spec(1, 2), VariantFlags{}, 1);
  const TrainConfig cfg = blob_config();

  TrainResult res = train(m, train_set, test_set, cfg);
  REQUIRE(res.history.epochs.size() == cfg.epochs);
  double best_train = 0, best_test = 0;
  for (const auto& rec : res.history.epochs) {
    best_train = std::max(best_train, rec.train_acc);
    best_test = std::max(best_test, rec.test_acc);
  }
  CHECK(best_train >= 0.99);
  CHECK(best_test >= 0.95);

  // The returned checkpoint reproduces the best recorded test accuracy.
  CHECK(evaluate_accuracy(res.best, test_set) == doctest::Approx(best_test));

  // Epoch indices are consecutive from zero.
  for (std::size_t i = 0; i < res.history.epochs.size(); ++i)
    CHECK(res.history.epochs[i].epoch == i);
}

TEST_CASE("large lambda drives the penalty down and strengths toward zero") {
  const LabeledSet train_set = make_blobs(160, 21);
  const LabeledSet test_set = make_blobs(32, 99);
  Model m(tinynet_spec(1, 2), VariantFlags{}, 1);
  TrainConfig cfg = blob_config();
  cfg.lambda = 1.0;
  cfg.epochs = 6;

  // Median strength of the untrained model, as the collapse reference.
  std::vector<double> init_mags;
  for (const auto& conv : m.convs)
    for (std::size_t sl = 0; sl < conv.mask.size(); ++sl)
      init_mags.push_back(std::abs(double(conv.strengths.value[sl])));
  std::sort(init_mags.begin(), init_mags.end());
  const double init_median = init_mags[(init_mags.size() - 1) / 2];

  TrainResult res = train(m, train_set, test_set, cfg);
  const auto& h = res.history.epochs;
  REQUIRE(h.size() == 6);
  for (std::size_t i = 0; i + 1 < 3; ++i) CHECK(h[i + 1].reg_term < h[i].reg_term);
  CHECK(h.back().median_strength < 0.3 * init_median + 1e-6);
}

TEST_CASE("epochs zero returns the model unchanged with empty history") {
  const LabeledSet train_set = make_blobs(16, 4);
  Model m(tinynet_spec(1, 2), VariantFlags{}, 9);
  Model before = m;
  TrainConfig cfg = blob_config();
  cfg.epochs = 0;
  TrainResult res = train(m, train_set, train_set, cfg);
  CHECK(res.history.epochs.empty());
  CHECK(flatten_params(res.best) == flatten_params(before));
  CHECK(flatten_params(res.last) == flatten_params(before));
}

TEST_CASE("training is bit-deterministic for a fixed seed") {
  const LabeledSet train_set = make_blobs(96, 21);
  const LabeledSet test_set = make_blobs(32, 99);
  Model m(tinynet_spec(1, 2), VariantFlags{}, 2);
  TrainConfig cfg = blob_config();
  cfg.epochs = 3;

  TrainResult a = train(m, train_set, test_set, cfg);
  TrainResult b = train(m, train_set, test_set, cfg);
  CHECK(flatten_params(a.last) == flatten_params(b.last));
  REQUIRE(a.history.epochs.size() == b.history.epochs.size());
  for (std::size_t i = 0; i < a.history.epochs.size(); ++i) {
    CHECK(a.history.epochs[i].loss == b.history.epochs[i].loss);
    CHECK(a.history.epochs[i].test_acc == b.history.epochs[i].test_acc);
    CHECK(a.history.epochs[i].min_strength == b.history.epochs[i].min_strength);
  }

  TrainConfig other = cfg;
  other.seed = 1234;
  TrainResult c = train(m, train_set, test_set, other);
  CHECK(flatten_params(a.last) != flatten_params(c.last));
}

TEST_CASE("finetune configuration and mask freezing") {
  SUBCASE("derived configuration") {
    TrainConfig base;  // 60 epochs, lr 0.1, drops at 30/45
    TrainConfig ft = finetune_config(base);
    CHECK(ft.lambda == 0.0);
    CHECK(ft.lr == doctest::Approx(0.001));
    CHECK(ft.epochs == 12);
    CHECK(ft.lr_drop_epochs.empty());

    TrainConfig tiny = base;
    tiny.epochs = 3;
    tiny.lr_drop_epochs = {2};
    CHECK(finetune_config(tiny).epochs == 1);

    TrainConfig none = base;
    none.epochs = 0;
    none.lr_drop_epochs = {};
    CHECK(finetune_config(none).epochs == 0);
  }

  SUBCASE("zero-epoch finetune is the identity") {
    const LabeledSet train_set = make_blobs(16, 4);
    Model m(tinynet_spec(1, 2), VariantFlags{}, 3);
    Model before = m;
    TrainConfig base = blob_config();
    base.epochs = 0;
    TrainResult res = finetune(m, train_set, train_set, base);
    CHECK(res.history.epochs.empty());
    CHECK(flatten_params(res.best) == flatten_params(before));
  }

  SUBCASE("masked kernels stay exactly zero through finetune") {
    const LabeledSet train_set = make_blobs(160, 21);
    const LabeledSet test_set = make_blobs(64, 99);
    Model m(tinynet_spec(1, 2), VariantFlags{}, 1);
    TrainConfig cfg = blob_config();
    cfg.epochs = 6;
    TrainResult trained = train(m, train_set, test_set, cfg);

    auto records = collect_indicators(trained.best, IndicatorKind::kSynaptic);
    PrunePlan plan = global_threshold(trained.best, records, 0.5, IndicatorKind::kSynaptic);
    Model pruned = trained.best;
    apply_prune(pruned, plan, {10, 10});
    const double acc_pruned = evaluate_accuracy(pruned, test_set);

    TrainResult ft = finetune(pruned, train_set, test_set, cfg);
    const std::size_t kk = 9;
    std::size_t frozen = 0;
    for (std::size_t i = 0; i < ft.last.convs.size(); ++i)
      for (std::size_t sl = 0; sl < ft.last.convs[i].mask.size(); ++sl) {
        if (ft.last.convs[i].mask[sl]) continue;
        ++frozen;
        CHECK(ft.last.convs[i].strengths.value[sl] == 0.0f);
        for (std::size_t t = 0; t < kk; ++t)
          CHECK(ft.last.convs[i].weights.value[sl * kk + t] == 0.0f);
      }
    CHECK(frozen == 36);  // half of tinynet's 72 kernels

    const double acc_ft = evaluate_accuracy(ft.best, test_set);
    CHECK(acc_ft >= acc_pruned - 0.01);
  }
}

TEST_CASE("history csv has a fixed layout and stable bytes") {
  TrainHistory h;
  for (std::size_t e = 0; e < 3; ++e) {
    EpochRecord r;
    r.epoch = e;
    r.loss = 0.5 / double(e + 1);
    r.reg_term = 0.125;
    r.train_acc = 0.75 + 0.05 * double(e);
    r.test_acc = 0.7 + 0.05 * double(e);
    r.min_strength = 1e-3;
    r.median_strength = 0.4;
    h.epochs.push_back(r);
  }
  const std::string p1 = "history_a.csv", p2 = "history_b.csv";
  write_history_csv(p1, h);
  write_history_csv(p2, h);
  const auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const std::string a = slurp(p1), b = slurp(p2);
  CHECK(a == b);
  CHECK(a.rfind("epoch,loss,reg_term,train_acc,test_acc,min_strength,median_strength\n", 0) == 0);
  CHECK(std::count(a.begin(), a.end(), '\n') == 4);
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}
