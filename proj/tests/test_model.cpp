#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <random>
#include <stdexcept>
#include <string>

#include "doctest.h"
#include "synprune/checkpoint.hpp"
#include "synprune/model.hpp"
#include "test_util.hpp"

using namespace synprune;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

// Gives a standard model random-but-plausible state so eval mode is
// nontrivial: gamma in [0.5, 2], random shifts, random running stats.
void randomize_standard(Model& m, std::mt19937& rng) {
  std::uniform_real_distribution<double> gamma_dist{0.5, 2.0};
  std::uniform_real_distribution<double> unit{-0.5, 0.5};
  std::uniform_real_distribution<double> var_dist{0.5, 2.0};
  for (auto& b : m.bns) {
    for (std::size_t c = 0; c < b.channels; ++c) {
      b.log_gamma.value[c] = float(std::log(gamma_dist(rng)));
      b.beta.value[c] = float(unit(rng));
      b.running.mean[c] = float(unit(rng));
      b.running.var[c] = float(var_dist(rng));
    }
  }
}

double rel_diff(const Tensor& a, const Tensor& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d =
        std::abs(double(a[i]) - double(b[i])) / std::max(1e-8, std::abs(double(a[i])));
    worst = std::max(worst, d);
  }
  return worst;
}

}  // namespace

TEST_CASE("model spec validation") {
  CHECK_NOTHROW(validate_spec(desknet_spec(1, 10)));
  CHECK_NOTHROW(validate_spec(tinynet_spec(3, 10)));
  CHECK_THROWS(spec_by_name("nope", 1, 10));

  SUBCASE("conv without preceding batchnorm rejected") {
    ModelSpec s = tinynet_spec(1, 10);
    // Drop the BN between the two convs.
    s.layers.erase(s.layers.begin() + 1);
    CHECK_THROWS(validate_spec(s));
  }
  SUBCASE("unbalanced residual rejected") {
    ModelSpec s = desknet_spec(1, 10);
    for (auto it = s.layers.begin(); it != s.layers.end(); ++it)
      if (it->kind == LayerDesc::Kind::kResidualEnd) {
        s.layers.erase(it);
        break;
      }
    CHECK_THROWS(validate_spec(s));
  }
  SUBCASE("classifier must follow global pooling") {
    ModelSpec s = tinynet_spec(1, 10);
    s.layers.erase(s.layers.end() - 2);  // remove GAP
    CHECK_THROWS(validate_spec(s));
  }
}

TEST_CASE("model construction and forward") {
  SUBCASE("desknet layer inventory") {
    Model m(desknet_spec(1, 10), VariantFlags{true, true}, 1);
    CHECK(m.convs.size() == 6);
    CHECK(m.bns.size() == 6);
    std::size_t kernels = 0;
    for (const auto& c : m.convs) kernels += c.out_channels * c.in_channels;
    CHECK(kernels == 5152);  // 32*1 + 5 * 32*32
    CHECK(m.convs[1].geom.stride == 2);
  }
  SUBCASE("same seed reproduces init, different seed does not") {
    Model a(tinynet_spec(1, 4), VariantFlags{true, true}, 7);
    Model b(tinynet_spec(1, 4), VariantFlags{true, true}, 7);
    Model c(tinynet_spec(1, 4), VariantFlags{true, true}, 8);
    CHECK(bitwise_equal(a.convs[0].weights.value, b.convs[0].weights.value));
    CHECK(!bitwise_equal(a.convs[0].weights.value, c.convs[0].weights.value));
  }
  SUBCASE("forward shape and finiteness in all variants") {
    std::mt19937 rng(5);
    Tensor x = random_tensor<float>({2, 1, 12, 12}, rng);
    for (bool fix_gamma : {true, false})
      for (bool kernel_norm : {true, false}) {
        Model m(tinynet_spec(1, 4), VariantFlags{fix_gamma, kernel_norm}, 3);
        ad::Tape t;
        auto logits = m.forward(t, x, ad::BnMode::kTrainStateless);
        CHECK(logits.value().dim(0) == 2);
        CHECK(logits.value().dim(1) == 4);
        CHECK(logits.value().all_finite());
      }
  }
  SUBCASE("desknet forward and residual path") {
    std::mt19937 rng(6);
    Tensor x = random_tensor<float>({2, 1, 28, 28}, rng);
    Model m(desknet_spec(1, 10), VariantFlags{true, true}, 2);
    ad::Tape t;
    auto logits = m.forward(t, x, ad::BnMode::kTrainStateless);
    CHECK(logits.value().dim(1) == 10);
    CHECK(logits.value().all_finite());
  }
  SUBCASE("param inventory and kinds") {
    Model full(tinynet_spec(1, 4), VariantFlags{true, true}, 1);
    auto ps = full.params();
    // 2 convs * (dirs + strengths) + 2 BN shifts + fc.w + fc.b
    CHECK(ps.size() == 8);
    CHECK(full.convs[0].weights.kind == ad::ParamKind::kWeight);
    CHECK(full.convs[0].strengths.kind == ad::ParamKind::kStrength);

    Model standard(tinynet_spec(1, 4), VariantFlags{false, false}, 1);
    auto qs = standard.params();
    // 2 convs * kernels + 2 * (shift + log_gamma) + fc.w + fc.b
    CHECK(qs.size() == 8);
    CHECK(standard.convs[0].weights.kind == ad::ParamKind::kGroupKernel);
    CHECK(standard.bns[0].log_gamma.value.size() == 8);
  }
  SUBCASE("renormalize_directions restores unit norms without changing function") {
    std::mt19937 rng(9);
    Tensor x = random_tensor<float>({2, 1, 10, 10}, rng);
    Model m(tinynet_spec(1, 4), VariantFlags{true, true}, 4);
    for (auto& c : m.convs)
      for (std::size_t i = 0; i < c.weights.value.size(); ++i) c.weights.value[i] *= 3.5f;
    ad::Tape t0;
    Tensor before = m.forward(t0, x, ad::BnMode::kEval).value();
    m.renormalize_directions();
    for (const auto& c : m.convs) {
      const std::size_t kk = c.ksize * c.ksize;
      for (std::size_t sl = 0; sl < c.out_channels * c.in_channels; ++sl) {
        double sq = 0;
        for (std::size_t i = 0; i < kk; ++i) {
          const double v = double(c.weights.value[sl * kk + i]);
          sq += v * v;
        }
        CHECK(std::abs(std::sqrt(sq) - 1.0) < 1e-6);
      }
    }
    ad::Tape t1;
    Tensor after = m.forward(t1, x, ad::BnMode::kEval).value();
    CHECK(max_abs_diff(before, after) < 1e-5);
  }
  SUBCASE("predict matches logits argmax") {
    std::mt19937 rng(10);
    Tensor x = random_tensor<float>({3, 1, 10, 10}, rng);
    Model m(tinynet_spec(1, 4), VariantFlags{true, true}, 6);
    auto preds = m.predict(x);
    ad::Tape t;
    const Tensor logits = m.forward(t, x, ad::BnMode::kEval).value();
    for (std::size_t i = 0; i < 3; ++i) {
      int best = 0;
      for (int j = 1; j < 4; ++j)
        if (logits.at2(i, std::size_t(j)) > logits.at2(i, std::size_t(best))) best = j;
      CHECK(preds[i] == best);
    }
  }
  SUBCASE("cast roundtrip preserves values") {
    Model m(tinynet_spec(1, 4), VariantFlags{false, true}, 11);
    ModelD d = m.cast<double>();
    Model back = d.cast<float>();
    CHECK(bitwise_equal(m.convs[1].weights.value, back.convs[1].weights.value));
    CHECK(bitwise_equal(m.bns[0].log_gamma.value, back.bns[0].log_gamma.value));
  }
}

TEST_CASE("checkpoint roundtrip") {
  const std::string path = "test_ckpt.synp";
  std::mt19937 rng(13);
  Model m(tinynet_spec(1, 4), VariantFlags{false, true}, 12);
  randomize_standard(m, rng);
  m.convs[0].mask[3] = 0;
  m.convs[1].mask[17] = 0;

  save_checkpoint(m, path);
  Model loaded = load_checkpoint(path);

  CHECK(loaded.spec().name == "tinynet");
  CHECK(loaded.flags().fix_gamma == false);
  CHECK(loaded.flags().kernel_norm == true);
  for (std::size_t i = 0; i < m.convs.size(); ++i) {
    CHECK(bitwise_equal(m.convs[i].weights.value, loaded.convs[i].weights.value));
    CHECK(bitwise_equal(m.convs[i].strengths.value, loaded.convs[i].strengths.value));
    CHECK(m.convs[i].mask == loaded.convs[i].mask);
  }
  for (std::size_t i = 0; i < m.bns.size(); ++i) {
    CHECK(bitwise_equal(m.bns[i].beta.value, loaded.bns[i].beta.value));
    CHECK(bitwise_equal(m.bns[i].running.mean, loaded.bns[i].running.mean));
    CHECK(bitwise_equal(m.bns[i].running.var, loaded.bns[i].running.var));
  }
  CHECK(bitwise_equal(m.fc.w.value, loaded.fc.w.value));

  Tensor x = random_tensor<float>({2, 1, 10, 10}, rng);
  ad::Tape t1, t2;
  CHECK(bitwise_equal(m.forward(t1, x, ad::BnMode::kEval).value(),
                      loaded.forward(t2, x, ad::BnMode::kEval).value()));

  SUBCASE("bad magic is rejected") {
    std::ofstream bad(path, std::ios::binary);
    bad << "XXXXGARBAGE";
    bad.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("bad magic"),
                         std::runtime_error);
  }
  SUBCASE("truncated file is rejected with the offset") {
    save_checkpoint(m, path);
    std::ifstream in(path, std::ios::binary);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(path, std::ios::binary);
    out.write(data.data(), std::streamsize(data.size() / 2));
    out.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("truncated at byte"),
                         std::runtime_error);
  }
  std::remove(path.c_str());
}

TEST_CASE("equivalence transform") {
  SUBCASE("requires a standard source model") {
    Model m(tinynet_spec(1, 4), VariantFlags{true, true}, 1);
    CHECK_THROWS(equivalence_transform(m));
  }
  SUBCASE("all gamma 1 and unit kernels is the identity mapping") {
    Model m(tinynet_spec(1, 4), VariantFlags{false, false}, 2);
    // Zero log-gamma (gamma = 1) is the constructor default; force unit-norm
    // kernels so strengths come out exactly 1.
    for (auto& c : m.convs) {
      c.weights.value.fill(0.0f);
      const std::size_t kk = c.ksize * c.ksize;
      for (std::size_t sl = 0; sl < c.out_channels * c.in_channels; ++sl)
        c.weights.value[sl * kk + 4] = 1.0f;  // centered delta, norm 1
    }
    Model r = equivalence_transform(m);
    for (std::size_t i = 0; i < m.convs.size(); ++i) {
      CHECK(max_abs_diff(r.convs[i].weights.value, m.convs[i].weights.value) < 1e-7);
      for (std::size_t sl = 0; sl < r.convs[i].strengths.value.size(); ++sl)
        CHECK(r.convs[i].strengths.value[sl] == doctest::Approx(1.0f));
    }
    for (std::size_t i = 0; i < m.bns.size(); ++i)
      CHECK(max_abs_diff(r.bns[i].beta.value, m.bns[i].beta.value) < 1e-7);
  }
  SUBCASE("gamma 2, beta 4, kernel norm 3 gives strength 6 and shift 2") {
    Model m(tinynet_spec(1, 4), VariantFlags{false, false}, 3);
    // conv1 is preceded by bn0; pick its (k=0, c=0) kernel.
    m.bns[0].log_gamma.value[0] = std::log(2.0f);
    m.bns[0].beta.value[0] = 4.0f;
    const std::size_t kk = 9;
    for (std::size_t i = 0; i < kk; ++i) m.convs[1].weights.value[i] = 0.0f;
    m.convs[1].weights.value[0] = 3.0f;  // Frobenius norm 3
    Model r = equivalence_transform(m);
    CHECK(r.convs[1].strengths.value[0] == doctest::Approx(6.0f));
    CHECK(r.bns[0].beta.value[0] == doctest::Approx(2.0f));
  }
  SUBCASE("random tinynet: eval outputs agree within 1e-5 on 100 inputs") {
    std::mt19937 rng(31);
    Model m(tinynet_spec(1, 4), VariantFlags{false, false}, 17);
    randomize_standard(m, rng);
    Model r = equivalence_transform(m);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
      Tensor x = random_tensor<float>({1, 1, 9, 9}, rng);
      ad::Tape ta, tb;
      const Tensor ya = m.forward(ta, x, ad::BnMode::kEval).value();
      const Tensor yb = r.forward(tb, x, ad::BnMode::kEval).value();
      worst = std::max(worst, rel_diff(ya, yb));
    }
    CHECK(worst < 1e-5);
  }
  SUBCASE("random desknet with residual: eval outputs agree within 1e-5") {
    std::mt19937 rng(33);
    Model m(desknet_spec(1, 10), VariantFlags{false, false}, 19);
    randomize_standard(m, rng);
    Model r = equivalence_transform(m);
    double worst = 0;
    for (int trial = 0; trial < 5; ++trial) {
      Tensor x = random_tensor<float>({2, 1, 28, 28}, rng);
      ad::Tape ta, tb;
      const Tensor ya = m.forward(ta, x, ad::BnMode::kEval).value();
      const Tensor yb = r.forward(tb, x, ad::BnMode::kEval).value();
      worst = std::max(worst, rel_diff(ya, yb));
    }
    CHECK(worst < 1e-5);
  }
  SUBCASE("non-positive gamma is refused with a diagnostic") {
    Model m(tinynet_spec(1, 4), VariantFlags{false, false}, 5);
    m.bns[0].log_gamma.value[2] = -1000.0f;  // exp underflows to zero
    CHECK_THROWS_WITH_AS(equivalence_transform(m), doctest::Contains("positive"),
                         std::invalid_argument);
  }
}
