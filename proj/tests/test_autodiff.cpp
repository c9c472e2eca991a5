#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "synprune/autodiff.hpp"
#include "synprune/gradcheck.hpp"
#include "test_util.hpp"

using namespace synprune;
using ad::BnMode;
using ad::BnRunning;
using ad::KernelMask;
using ad::ParamD;
using ad::ParamKind;
using ad::TapeD;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("tape mechanics") {
  SUBCASE("loss = sum(w * w) gives grad 2w exactly") {
    std::mt19937 rng(3);
    ad::Param w("w", ParamKind::kWeight, random_tensor<float>({2, 3}, rng));
    w.zero_grad();
    ad::Tape t;
    auto v = t.param(w);
    auto loss = t.sum(t.mul(v, v));
    t.backward(loss);
    for (std::size_t i = 0; i < w.value.size(); ++i) CHECK(w.grad[i] == 2.0f * w.value[i]);
  }
  SUBCASE("parameter unused by loss keeps exactly zero grad") {
    std::mt19937 rng(4);
    ad::Param w("w", ParamKind::kWeight, random_tensor<float>({3}, rng));
    ad::Param u("u", ParamKind::kWeight, random_tensor<float>({3}, rng));
    w.zero_grad();
    u.zero_grad();
    ad::Tape t;
    auto loss = t.sum(t.param(w));
    (void)t.param(u);  // recorded leaf, never consumed
    t.backward(loss);
    for (std::size_t i = 0; i < u.value.size(); ++i) CHECK(u.grad[i] == 0.0f);
    for (std::size_t i = 0; i < w.value.size(); ++i) CHECK(w.grad[i] == 1.0f);
  }
  SUBCASE("two uses of one value sum their contributions") {
    ad::Param w("w", ParamKind::kWeight, Tensor::full({4}, 1.5f));
    w.zero_grad();
    ad::Tape t;
    auto v = t.param(w);
    t.backward(t.sum(t.add(v, v)));
    for (std::size_t i = 0; i < w.value.size(); ++i) CHECK(w.grad[i] == 2.0f);
  }
  SUBCASE("one parameter bound through two leaves accumulates") {
    ad::Param w("w", ParamKind::kWeight, Tensor::full({2}, -0.5f));
    w.zero_grad();
    ad::Tape t;
    t.backward(t.sum(t.add(t.param(w), t.param(w))));
    for (std::size_t i = 0; i < w.value.size(); ++i) CHECK(w.grad[i] == 2.0f);
  }
  SUBCASE("non-scalar loss throws") {
    ad::Param w("w", ParamKind::kWeight, Tensor::full({2}, 1.0f));
    ad::Tape t;
    auto v = t.param(w);
    CHECK_THROWS(t.backward(v));
  }
  SUBCASE("second backward sweep throws") {
    ad::Param w("w", ParamKind::kWeight, Tensor::full({2}, 1.0f));
    w.zero_grad();
    ad::Tape t;
    auto loss = t.sum(t.param(w));
    t.backward(loss);
    CHECK_THROWS(t.backward(loss));
  }
  SUBCASE("grad() before any backward throws") {
    ad::Tape t;
    auto v = t.input(Tensor::full({2}, 1.0f));
    CHECK_THROWS(v.grad());
  }
}

TEST_CASE("replay reproduces recorded outputs bit-for-bit") {
  std::mt19937 rng(11);
  Tensor x = random_tensor<float>({2, 2, 6, 6}, rng);
  ad::Param dirs("c.dirs", ParamKind::kWeight, random_tensor<float>({3, 2, 3, 3}, rng));
  ad::Param s("c.s", ParamKind::kStrength, random_tensor<float>({3, 2}, rng, 0.2f, 1.5f));
  ad::Param beta("c.beta", ParamKind::kPlain, random_tensor<float>({3}, rng));
  ad::Param fw("f.w", ParamKind::kWeight, random_tensor<float>({2, 3}, rng));
  ad::Param fb("f.b", ParamKind::kBias, random_tensor<float>({2}, rng));
  BnRunning<float> run(3);

  ad::Tape t;
  auto xv = t.input(x);
  auto h = t.reparam_conv(xv, t.param(dirs), t.param(s), {1, 1});
  h = t.batchnorm(h, nullptr, t.param(beta), &run, BnMode::kTrain);
  h = t.relu(h);
  auto logits = t.linear(t.global_avg_pool(h), t.param(fw), t.param(fb));
  auto loss = t.cross_entropy(logits, {0, 1});

  const Tensor h_first = h.value();
  const Tensor loss_first = loss.value();
  const Tensor run_mean_first = run.mean;

  t.replay();
  CHECK(bitwise_equal(h.value(), h_first));
  CHECK(bitwise_equal(loss.value(), loss_first));
  // The running-stat EMA is a record-time effect; replay must not repeat it.
  CHECK(bitwise_equal(run.mean, run_mean_first));
}

TEST_CASE("reparam conv forward") {
  std::mt19937 rng(21);
  SUBCASE("matches dense composition of strength * unit kernel") {
    Tensor x = random_tensor<float>({2, 2, 7, 7}, rng);
    ad::Param dirs("d", ParamKind::kWeight, random_tensor<float>({3, 2, 3, 3}, rng));
    ad::Param s("s", ParamKind::kStrength, random_tensor<float>({3, 2}, rng));
    Tensor dense(dirs.value.shape());
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t c = 0; c < 2; ++c) {
        Tensor slice({3, 3});
        for (std::size_t i = 0; i < 9; ++i) slice[i] = dirs.value[(k * 2 + c) * 9 + i];
        auto n = normalize_kernel(slice);
        for (std::size_t i = 0; i < 9; ++i) dense[(k * 2 + c) * 9 + i] = s.value.at2(k, c) * n.unit[i];
      }
    ad::Tape t;
    auto y = t.reparam_conv(t.input(x), t.param(dirs), t.param(s), {1, 1});
    Tensor expect = conv2d(x, dense, {1, 1});
    CHECK(max_abs_diff(y.value(), expect) < 1e-6);
  }
  SUBCASE("all strengths zero gives the zero tensor") {
    Tensor x = random_tensor<float>({1, 2, 5, 5}, rng);
    ad::Param dirs("d", ParamKind::kWeight, random_tensor<float>({2, 2, 3, 3}, rng));
    ad::Param s("s", ParamKind::kStrength, Tensor({2, 2}));
    ad::Tape t;
    auto y = t.reparam_conv(t.input(x), t.param(dirs), t.param(s), {1, 1});
    for (std::size_t i = 0; i < y.value().size(); ++i) CHECK(y.value()[i] == 0.0f);
  }
  SUBCASE("single connection with s=2 and delta direction scales the input") {
    Tensor x = random_tensor<float>({1, 1, 6, 6}, rng);
    Tensor delta({1, 1, 3, 3});
    delta.at4(0, 0, 1, 1) = 1.0f;
    ad::Param dirs("d", ParamKind::kWeight, delta);
    ad::Param s("s", ParamKind::kStrength, Tensor::full({1, 1}, 2.0f));
    ad::Tape t;
    auto y = t.reparam_conv(t.input(x), t.param(dirs), t.param(s), {1, 1});
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.value()[i] == 2.0f * x[i]);
  }
  SUBCASE("output is exactly linear in each strength") {
    Tensor x = random_tensor<float>({1, 1, 5, 5}, rng);
    ad::Param dirs("d", ParamKind::kWeight, random_tensor<float>({1, 1, 3, 3}, rng));
    ad::Param s1("s", ParamKind::kStrength, Tensor::full({1, 1}, 0.75f));
    ad::Param s2("s", ParamKind::kStrength, Tensor::full({1, 1}, 1.5f));
    ad::Tape t1, t2;
    auto y1 = t1.reparam_conv(t1.input(x), t1.param(dirs), t1.param(s1), {1, 1});
    auto y2 = t2.reparam_conv(t2.input(x), t2.param(dirs), t2.param(s2), {1, 1});
    for (std::size_t i = 0; i < y1.value().size(); ++i)
      CHECK(y2.value()[i] == 2.0f * y1.value()[i]);
  }
  SUBCASE("masked kernels are inert and get exactly zero gradient") {
    Tensor x = random_tensor<float>({2, 2, 5, 5}, rng);
    ad::Param dirs("d", ParamKind::kWeight, random_tensor<float>({2, 2, 3, 3}, rng));
    ad::Param s("s", ParamKind::kStrength, random_tensor<float>({2, 2}, rng, 0.5f, 1.5f));
    KernelMask mask = {1, 0, 1, 1};  // kernel (0,1) pruned

    ad::Tape t1;
    auto y1 = t1.reparam_conv(t1.input(x), t1.param(dirs), t1.param(s), {1, 1}, &mask);
    Tensor y1v = y1.value();

    // Scribble over the pruned kernel; nothing downstream may change.
    for (std::size_t i = 0; i < 9; ++i) dirs.value[9 + i] = 123.0f + float(i);
    s.value.at2(0, 1) = -77.0f;
    ad::Tape t2;
    auto y2 = t2.reparam_conv(t2.input(x), t2.param(dirs), t2.param(s), {1, 1}, &mask);
    CHECK(bitwise_equal(y1v, y2.value()));

    dirs.zero_grad();
    s.zero_grad();
    ad::Tape t3;
    auto y = t3.reparam_conv(t3.input(x), t3.param(dirs), t3.param(s), {1, 1}, &mask);
    t3.backward(t3.sum(y));
    for (std::size_t i = 0; i < 9; ++i) CHECK(dirs.grad[9 + i] == 0.0f);
    CHECK(s.grad.at2(0, 1) == 0.0f);
    CHECK(s.grad.at2(0, 0) != 0.0f);
  }
}

TEST_CASE("batchnorm modes") {
  std::mt19937 rng(31);
  Tensor x = random_tensor<float>({4, 3, 5, 5}, rng);
  ad::Param beta("beta", ParamKind::kPlain, random_tensor<float>({3}, rng));

  SUBCASE("train mode applies one EMA update to running stats") {
    BnRunning<float> run(3);
    ad::Tape t;
    (void)t.batchnorm(t.input(x), nullptr, t.param(beta), &run, BnMode::kTrain);
    for (std::size_t c = 0; c < 3; ++c) {
      double mean = 0;
      for (std::size_t n = 0; n < 4; ++n)
        for (std::size_t i = 0; i < 25; ++i) mean += x.data()[(n * 3 + c) * 25 + i];
      mean /= 100.0;
      double var = 0;
      for (std::size_t n = 0; n < 4; ++n)
        for (std::size_t i = 0; i < 25; ++i) {
          const double d = x.data()[(n * 3 + c) * 25 + i] - mean;
          var += d * d;
        }
      var /= 100.0;
      CHECK(run.mean[c] == doctest::Approx(0.1 * mean).epsilon(1e-4));
      CHECK(run.var[c] == doctest::Approx(0.9 + 0.1 * var).epsilon(1e-4));
    }
  }
  SUBCASE("stateless mode leaves running stats untouched") {
    BnRunning<float> run(3);
    ad::Tape t;
    (void)t.batchnorm(t.input(x), nullptr, t.param(beta), &run, BnMode::kTrainStateless);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(run.mean[c] == 0.0f);
      CHECK(run.var[c] == 1.0f);
    }
  }
  SUBCASE("eval forward is deterministic") {
    BnRunning<float> run(3);
    run.mean.fill(0.2f);
    run.var.fill(1.3f);
    ad::Tape t1, t2;
    auto y1 = t1.batchnorm(t1.input(x), nullptr, t1.param(beta), &run, BnMode::kEval);
    auto y2 = t2.batchnorm(t2.input(x), nullptr, t2.param(beta), &run, BnMode::kEval);
    CHECK(bitwise_equal(y1.value(), y2.value()));
  }
  SUBCASE("backward through eval-mode statistics is a logic error") {
    BnRunning<float> run(3);
    beta.zero_grad();
    ad::Tape t;
    auto y = t.batchnorm(t.input(x), nullptr, t.param(beta), &run, BnMode::kEval);
    auto loss = t.sum(y);
    CHECK_THROWS_AS(t.backward(loss), std::logic_error);
  }
}

TEST_CASE("finite differences: linear model with quadratic loss is exact") {
  std::mt19937 rng(51);
  TensorD x = random_tensor<double>({5, 3}, rng);
  ParamD w("w", ParamKind::kWeight, random_tensor<double>({2, 3}, rng));
  ParamD b("b", ParamKind::kBias, random_tensor<double>({2}, rng));
  auto forward = [&](TapeD& t) {
    auto y = t.linear(t.input(x), t.param(w), t.param(b));
    return t.sum(t.mul(y, y));
  };
  w.zero_grad();
  b.zero_grad();
  TapeD t;
  auto loss = forward(t);
  t.backward(loss);

  auto loss_fn = [&]() {
    TapeD tf;
    return forward(tf).value()[0];
  };
  FdOptions opt;
  opt.max_entries_per_param = 64;
  auto rep = finite_difference_check(loss_fn, {&w, &b}, nullptr, opt);
  CHECK(rep.entries_checked == 8);
  CHECK(rep.pass);
  CHECK(rep.worst.rel_err < 1e-8);
}

TEST_CASE("finite differences: conv+BN+relu+CE stack within 1e-3") {
  std::mt19937 rng(61);
  TensorD x = random_tensor<double>({4, 2, 6, 6}, rng);
  const std::vector<int> labels = {0, 2, 1, 2};
  ParamD dirs("conv.dirs", ParamKind::kWeight, random_tensor<double>({4, 2, 3, 3}, rng));
  ParamD s("conv.s", ParamKind::kStrength, random_tensor<double>({4, 2}, rng, 0.2, 1.5));
  ParamD lgamma("bn.log_gamma", ParamKind::kPlain, random_tensor<double>({4}, rng, -0.3, 0.3));
  ParamD beta("bn.beta", ParamKind::kPlain, random_tensor<double>({4}, rng));
  ParamD fw("fc.w", ParamKind::kWeight, random_tensor<double>({3, 4}, rng));
  ParamD fb("fc.b", ParamKind::kBias, random_tensor<double>({3}, rng));
  std::vector<ad::ParamD*> params = {&dirs, &s, &lgamma, &beta, &fw, &fb};

  auto forward = [&](TapeD& t) {
    auto h = t.reparam_conv(t.input(x), t.param(dirs), t.param(s), {1, 1});
    auto gam = t.exp(t.param(lgamma));
    h = t.batchnorm(h, &gam, t.param(beta), nullptr, BnMode::kTrainStateless);
    h = t.relu(h);
    auto logits = t.linear(t.global_avg_pool(h), t.param(fw), t.param(fb));
    return t.cross_entropy(logits, labels);
  };

  for (auto* p : params) p->zero_grad();
  TapeD t;
  t.backward(forward(t));

  auto loss_fn = [&]() {
    TapeD tf;
    return forward(tf).value()[0];
  };
  FdOptions opt;
  opt.max_entries_per_param = 16;
  opt.seed = 7;
  auto rep = finite_difference_check(loss_fn, params, nullptr, opt);
  INFO("worst entry ", rep.worst.param, "[", rep.worst.index, "] rel_err ", rep.worst.rel_err);
  CHECK(rep.pass);
  CHECK(rep.worst.rel_err < 1e-3);
}

TEST_CASE("finite differences: residual add and plain conv") {
  std::mt19937 rng(71);
  TensorD x = random_tensor<double>({2, 2, 5, 5}, rng);
  const std::vector<int> labels = {0, 1};
  ParamD dirs("r.dirs", ParamKind::kWeight, random_tensor<double>({2, 2, 3, 3}, rng));
  ParamD s("r.s", ParamKind::kStrength, random_tensor<double>({2, 2}, rng, 0.3, 1.2));
  ParamD w("p.w", ParamKind::kGroupKernel, random_tensor<double>({2, 2, 3, 3}, rng));
  ParamD fw("fc.w", ParamKind::kWeight, random_tensor<double>({2, 2}, rng));
  ParamD fb("fc.b", ParamKind::kBias, random_tensor<double>({2}, rng));
  std::vector<ad::ParamD*> params = {&dirs, &s, &w, &fw, &fb};

  auto forward = [&](TapeD& t) {
    auto xv = t.input(x);
    auto branch = t.relu(t.reparam_conv(xv, t.param(dirs), t.param(s), {1, 1}));
    auto merged = t.add(branch, xv);
    auto h = t.relu(t.conv(merged, t.param(w), {1, 1}));
    auto logits = t.linear(t.global_avg_pool(h), t.param(fw), t.param(fb));
    return t.cross_entropy(logits, labels);
  };

  for (auto* p : params) p->zero_grad();
  TapeD t;
  t.backward(forward(t));
  auto loss_fn = [&]() {
    TapeD tf;
    return forward(tf).value()[0];
  };
  FdOptions opt;
  opt.max_entries_per_param = 12;
  opt.seed = 3;
  auto rep = finite_difference_check(loss_fn, params, nullptr, opt);
  INFO("worst entry ", rep.worst.param, "[", rep.worst.index, "] rel_err ", rep.worst.rel_err);
  CHECK(rep.pass);
}

TEST_CASE("finite differences: masked kernel entries are excluded and inert") {
  std::mt19937 rng(81);
  TensorD x = random_tensor<double>({2, 2, 5, 5}, rng);
  ParamD dirs("m.dirs", ParamKind::kWeight, random_tensor<double>({2, 2, 3, 3}, rng));
  ParamD s("m.s", ParamKind::kStrength, random_tensor<double>({2, 2}, rng, 0.4, 1.1));
  KernelMask mask = {1, 1, 0, 1};  // kernel (1,0) pruned

  auto forward = [&](TapeD& t) {
    auto y = t.reparam_conv(t.input(x), t.param(dirs), t.param(s), {1, 1}, &mask);
    return t.sum(t.mul(y, y));
  };
  dirs.zero_grad();
  s.zero_grad();
  TapeD t;
  t.backward(forward(t));

  auto loss_fn = [&]() {
    TapeD tf;
    return forward(tf).value()[0];
  };
  // Perturbing a pruned entry must not move the loss at all.
  const double base = loss_fn();
  dirs.value[2 * 9 + 4] += 0.25;
  CHECK(loss_fn() == base);
  dirs.value[2 * 9 + 4] -= 0.25;

  FdEntryFilter filter;
  filter["m.dirs"] = std::vector<std::uint8_t>(dirs.value.size(), 1);
  filter["m.s"] = std::vector<std::uint8_t>(s.value.size(), 1);
  for (std::size_t i = 0; i < 9; ++i) filter["m.dirs"][2 * 9 + i] = 0;
  filter["m.s"][2] = 0;

  FdOptions opt;
  opt.max_entries_per_param = 64;
  auto rep = finite_difference_check(loss_fn, {&dirs, &s}, &filter, opt);
  CHECK(rep.entries_checked == (36 - 9) + (4 - 1));
  CHECK(rep.pass);
}

TEST_CASE("finite difference sampling is deterministic for a seed") {
  std::mt19937 rng(91);
  ParamD w("w", ParamKind::kWeight, random_tensor<double>({8, 8}, rng));
  auto forward = [&](TapeD& t) { return t.sum(t.mul(t.param(w), t.param(w))); };
  w.zero_grad();
  TapeD t;
  t.backward(forward(t));
  auto loss_fn = [&]() {
    TapeD tf;
    return forward(tf).value()[0];
  };
  FdOptions opt;
  opt.max_entries_per_param = 5;
  opt.seed = 42;
  auto r1 = finite_difference_check(loss_fn, {&w}, nullptr, opt);
  auto r2 = finite_difference_check(loss_fn, {&w}, nullptr, opt);
  CHECK(r1.entries_checked == 5);
  CHECK(r1.worst.index == r2.worst.index);
  CHECK(r1.worst.rel_err == r2.worst.rel_err);
}
