#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "vaemmd/ops.hpp"

using namespace vaemmd;
using gradcheck::max_rel_error;
using gradcheck::project;
using gradcheck::random_leaf;

namespace {
constexpr double kGradTol = 1e-4;
constexpr int kTrials = 20;

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}
}  // namespace

TEST_CASE("conv3d with a 1x1x1 kernel of weight 2 doubles the input") {
  auto x = TensorF::full({1, 1, 4, 4, 4}, 1.f);
  auto w = TensorF::full({1, 1, 1, 1, 1}, 2.f);
  auto b = TensorF::zeros({1});
  auto y = ops::conv3d(x, w, b, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 4, 4, 4});
  for (float v : y.data()) CHECK(v == 2.f);
}

TEST_CASE("four k4/s2/p1 convolutions take 128^3 down to 8^3") {
  auto x = TensorF::full({1, 1, 128, 128, 128}, 0.5f);
  auto w = TensorF::full({1, 1, 4, 4, 4}, 0.01f);
  auto b = TensorF::zeros({1});
  NoGradGuard guard;
  const int64_t expected[] = {64, 32, 16, 8};
  for (int64_t side : expected) {
    x = ops::conv3d(x, w, b, 2, 1);
    CHECK(x.shape() == Shape{1, 1, side, side, side});
  }
}

TEST_CASE("conv3d reports the offending dimension") {
  auto x = TensorD::zeros({1, 2, 4, 4, 4});
  auto w = TensorD::zeros({3, 3, 3, 3, 3});
  CHECK_THROWS_WITH_AS(ops::conv3d(x, w, TensorD(), 1, 0), doctest::Contains("channels"), Error);
  auto small = TensorD::zeros({1, 3, 2, 2, 2});
  CHECK_THROWS_WITH_AS(ops::conv3d(small, w, TensorD(), 1, 0), doctest::Contains("depth"), Error);
}

TEST_CASE("conv3d gradients match finite differences") {
  Rng rng(11);
  for (int t = 0; t < kTrials; ++t) {
    const int stride = 1 + t % 2, pad = t % 3 == 0 ? 1 : 0;
    auto x = random_leaf({2, 2, 3, 4, 3}, rng);
    auto w = random_leaf({3, 2, 2, 2, 2}, rng);
    auto b = random_leaf({3}, rng);
    const double err = max_rel_error(
        [&](const std::vector<TensorD>& v) { return project(ops::conv3d(v[0], v[1], v[2], stride, pad), 5 + t); },
        {x, w, b});
    CHECK(err < kGradTol);
  }
}

TEST_CASE("conv_transpose3d upsamples 8^3 to 16^3 with k4/s2/p1") {
  auto x = TensorF::zeros({1, 2, 8, 8, 8});
  auto w = TensorF::zeros({2, 3, 4, 4, 4});
  auto y = ops::conv_transpose3d(x, w, TensorF::zeros({3}), 2, 1);
  CHECK(y.shape() == Shape{1, 3, 16, 16, 16});
}

TEST_CASE("conv_transpose3d is the adjoint of conv3d") {
  Rng rng(3);
  for (int t = 0; t < kTrials; ++t) {
    const int stride = 1 + t % 2, pad = t % 2;
    auto x = random_leaf({2, 3, 6, 6, 6}, rng);
    auto w = random_leaf({4, 3, 4, 4, 4}, rng);
    NoGradGuard g;
    auto cx = ops::conv3d(x, w, TensorD(), stride, pad);
    auto y = random_leaf(cx.shape(), rng);
    auto ty = ops::conv_transpose3d(y, w, TensorD(), stride, pad);
    REQUIRE(ty.shape() == x.shape());
    const double lhs = dot(cx.data(), y.data()), rhs = dot(x.data(), ty.data());
    CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("conv_transpose3d gradients match finite differences") {
  Rng rng(12);
  for (int t = 0; t < kTrials; ++t) {
    const int stride = 1 + t % 2, pad = t % 2;
    auto x = random_leaf({2, 2, 2, 3, 2}, rng);
    auto w = random_leaf({2, 3, 3, 3, 3}, rng);
    auto b = random_leaf({3}, rng);
    const double err = max_rel_error(
        [&](const std::vector<TensorD>& v) {
          return project(ops::conv_transpose3d(v[0], v[1], v[2], stride, pad), 40 + t);
        },
        {x, w, b});
    CHECK(err < kGradTol);
  }
}

TEST_CASE("batch_norm3d train mode standardizes each channel") {
  Rng rng(5);
  auto x = random_leaf({3, 2, 3, 3, 3}, rng, -4, 9);
  ops::RunningStats<double> stats(2);
  auto y = ops::batch_norm3d(x, TensorD::full({2}, 1.0), TensorD::zeros({2}), stats, ops::Mode::kTrain);
  for (int c = 0; c < 2; ++c) {
    double s = 0, sq = 0;
    int n = 0;
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 27; ++k) {
        const double v = y.data()[(i * 2 + c) * 27 + k];
        s += v;
        sq += v * v;
        ++n;
      }
    CHECK(std::abs(s / n) < 1e-6);
    CHECK(std::abs(sq / n - 1.0) < 1e-6);
  }
  // Running statistics moved toward the batch statistics.
  CHECK(stats.mean[0] != 0.0);
}

TEST_CASE("batch_norm3d maps a constant channel to zero and rejects single elements") {
  auto x = TensorD::full({2, 1, 2, 2, 2}, 3.0);
  ops::RunningStats<double> stats(1);
  auto y = ops::batch_norm3d(x, TensorD::full({1}, 1.0), TensorD::zeros({1}), stats, ops::Mode::kTrain);
  for (double v : y.data()) CHECK(v == 0.0);
  auto single = TensorD::full({1, 1, 1, 1, 1}, 1.0);
  CHECK_THROWS_AS(ops::batch_norm3d(single, TensorD::full({1}, 1.0), TensorD::zeros({1}), stats, ops::Mode::kTrain),
                  Error);
  // Eval mode only reads running stats, so a single element is fine.
  CHECK_NOTHROW(ops::batch_norm3d(single, TensorD::full({1}, 1.0), TensorD::zeros({1}), stats, ops::Mode::kEval));
}

TEST_CASE("batch_norm3d gradients match finite differences in both modes") {
  Rng rng(7);
  for (int t = 0; t < kTrials; ++t) {
    const auto mode = t % 2 ? ops::Mode::kEval : ops::Mode::kTrain;
    auto x = random_leaf({2, 3, 2, 2, 2}, rng);
    auto g = random_leaf({3}, rng, 0.5, 1.5);
    auto b = random_leaf({3}, rng);
    ops::RunningStats<double> stats(3);
    stats.var = {0.5, 1.5, 2.0};
    const double err = max_rel_error(
        [&](const std::vector<TensorD>& v) {
          auto s = stats;  // keep running stats fixed across evaluations
          return project(ops::batch_norm3d(v[0], v[1], v[2], s, mode), 70 + t);
        },
        {x, g, b});
    CHECK(err < kGradTol);
  }
}

TEST_CASE("linear: identity weights pass the input through") {
  auto x = TensorD::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto w = TensorD::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto y = ops::linear(x, w, TensorD::zeros({3}));
  for (int i = 0; i < 6; ++i) CHECK(y.data()[i] == x.data()[i]);
  CHECK_THROWS_AS(ops::linear(x, TensorD::zeros({3, 4}), TensorD::zeros({3})), Error);
}

TEST_CASE("flattening a 256x8x8x8 bottleneck gives 131072 features") {
  auto f = TensorF::zeros({1, 256, 8, 8, 8});
  CHECK(ops::flatten(f).shape() == Shape{1, 131072});
}

TEST_CASE("linear and bmm gradients match finite differences") {
  Rng rng(13);
  for (int t = 0; t < kTrials; ++t) {
    auto x = random_leaf({3, 4}, rng);
    auto w = random_leaf({2, 4}, rng);
    auto b = random_leaf({2}, rng);
    CHECK(max_rel_error([&](const std::vector<TensorD>& v) { return project(ops::linear(v[0], v[1], v[2]), t); },
                        {x, w, b}) < kGradTol);
    auto a = random_leaf({2, 3, 4}, rng);
    auto c = random_leaf({2, 4, 2}, rng);
    CHECK(max_rel_error([&](const std::vector<TensorD>& v) { return project(ops::bmm(v[0], v[1]), 100 + t); },
                        {a, c}) < kGradTol);
  }
}

TEST_CASE("activations: range and symmetry facts") {
  Rng rng(1);
  auto x = random_leaf({200}, rng, -20, 20);
  const auto t = ops::tanh(x);
  for (double v : t.data()) CHECK((v >= -1.0 && v <= 1.0));
  const auto neg = ops::relu(ops::scale(random_leaf({50}, rng, 0.1, 5), -1.0));
  for (double v : neg.data()) CHECK(v == 0.0);
  const auto uniform = ops::softmax(TensorD::full({2, 5}, 3.7), 1);
  for (double v : uniform.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));
  auto logits = random_leaf({3, 4, 5}, rng, -5, 5);
  auto p = ops::softmax(logits, 1);
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 5; ++i) {
      double s = 0;
      for (int l = 0; l < 4; ++l) s += p.data()[(o * 4 + l) * 5 + i];
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
}

TEST_CASE("activation gradients match finite differences") {
  Rng rng(17);
  for (int t = 0; t < kTrials; ++t) {
    auto x = random_leaf({2, 3, 4}, rng, -2, 2);
    auto check = [&](auto fn) {
      return max_rel_error([&](const std::vector<TensorD>& v) { return project(fn(v[0]), 200 + t); }, {x});
    };
    CHECK(check([](const TensorD& v) { return ops::relu(v); }) < kGradTol);
    CHECK(check([](const TensorD& v) { return ops::leaky_relu(v, 0.2); }) < kGradTol);
    CHECK(check([](const TensorD& v) { return ops::tanh(v); }) < kGradTol);
    CHECK(check([](const TensorD& v) { return ops::sigmoid(v); }) < kGradTol);
    CHECK(check([t](const TensorD& v) { return ops::softmax(v, t % 3); }) < kGradTol);
    CHECK(check([t](const TensorD& v) { return ops::log_softmax(v, t % 3); }) < kGradTol);
    CHECK(check([](const TensorD& v) { return ops::exp(v); }) < kGradTol);
    CHECK(check([](const TensorD& v) { return ops::abs(v); }) < kGradTol);
  }
}

TEST_CASE("dropout") {
  Rng rng(2);
  auto x = random_leaf({1000}, rng);
  SUBCASE("eval mode and rate 0 are exact identities") {
    auto e = ops::dropout(x, 0.1, ops::Mode::kEval, Rng(4));
    auto z = ops::dropout(x, 0.0, ops::Mode::kTrain, Rng(4));
    for (int i = 0; i < 1000; ++i) {
      CHECK(e.data()[i] == x.data()[i]);
      CHECK(z.data()[i] == x.data()[i]);
    }
  }
  SUBCASE("survivor fraction concentrates at 1 - rate") {
    auto ones = TensorD::full({100000}, 1.0);
    auto y = ops::dropout(ones, 0.1, ops::Mode::kTrain, Rng(9));
    int64_t alive = 0;
    for (double v : y.data()) {
      if (v != 0.0) {
        ++alive;
        CHECK(v == doctest::Approx(1.0 / 0.9));
      }
    }
    CHECK(std::abs(alive / 1e5 - 0.9) < 0.01);
  }
  SUBCASE("mask reproducible from seed; rate >= 1 rejected") {
    auto a = ops::dropout(x, 0.3, ops::Mode::kTrain, Rng(77));
    auto b = ops::dropout(x, 0.3, ops::Mode::kTrain, Rng(77));
    CHECK(a.values() == b.values());
    CHECK_THROWS_AS(ops::dropout(x, 1.0, ops::Mode::kTrain, Rng(1)), Error);
  }
}

TEST_CASE("structural ops") {
  Rng rng(21);
  auto a = TensorF::zeros({2, 64, 4, 4, 4});
  auto b = TensorF::zeros({2, 64, 4, 4, 4});
  CHECK(ops::concat(std::vector<TensorF>{a, b}, 1).shape() == Shape{2, 128, 4, 4, 4});

  auto x = random_leaf({2, 3, 4}, rng);
  auto back = ops::reshape(ops::reshape(x, {4, 6}), {2, 3, 4});
  CHECK(back.values() == x.values());
  CHECK_THROWS_AS(ops::reshape(x, {5, 5}), Error);
  CHECK_THROWS_AS(ops::concat(std::vector<TensorD>{x, random_leaf({2, 2, 3}, rng)}, 1), Error);

  for (int t = 0; t < kTrials; ++t) {
    auto p = random_leaf({2, 2, 3}, rng);
    auto q = random_leaf({2, 1, 3}, rng);
    CHECK(max_rel_error(
              [&](const std::vector<TensorD>& v) {
                return project(ops::square(ops::concat(std::vector<TensorD>{v[0], v[1]}, 1)), 300 + t);
              },
              {p, q}) < kGradTol);
    CHECK(max_rel_error([&](const std::vector<TensorD>& v) { return project(ops::slice(v[0], 2, 1, 2), t); }, {p}) <
          kGradTol);
    CHECK(max_rel_error([&](const std::vector<TensorD>& v) { return project(ops::pad(v[0], {0, 1, 2}, {1, 0, 1}), t); },
                        {p}) < kGradTol);
    CHECK(max_rel_error(
              [&](const std::vector<TensorD>& v) { return project(ops::gather_rows(v[0], {1, 0, 1}), t); }, {p}) <
          kGradTol);
    CHECK(max_rel_error([&](const std::vector<TensorD>& v) { return project(ops::transpose_last2(v[0]), t); }, {p}) <
          kGradTol);
    auto r = random_leaf({4, 3}, rng);
    CHECK(max_rel_error([&](const std::vector<TensorD>& v) { return project(ops::pairwise_sq_dist(v[0], v[1]), t); },
                        {random_leaf({3, 3}, rng), r}) < kGradTol);
  }
}

TEST_CASE("backward semantics") {
  Rng rng(8);
  auto x = random_leaf({5}, rng);
  ops::sum(x).backward();
  for (double g : x.grad()) CHECK(g == 1.0);

  SUBCASE("second backward without zero_grad is an error") {
    CHECK_THROWS_AS(ops::sum(x).backward(), Error);
    x.zero_grad();
    ops::sum(ops::mul(x, x)).backward();
    for (int i = 0; i < 5; ++i) CHECK(x.grad()[i] == doctest::Approx(2 * x.data()[i]));
  }
  SUBCASE("the same graph cannot be replayed") {
    auto y = random_leaf({3}, rng);
    auto loss = ops::sum(ops::square(y));
    loss.backward();
    y.zero_grad();
    CHECK_THROWS_AS(loss.backward(), Error);
  }
  SUBCASE("non-scalar loss is rejected") {
    auto y = random_leaf({3}, rng);
    CHECK_THROWS_AS(ops::square(y).backward(), Error);
  }
}

TEST_CASE("ops are deterministic") {
  auto run = [] {
    Rng rng(99);
    auto x = random_leaf({2, 2, 6, 6, 6}, rng);
    auto w = random_leaf({3, 2, 4, 4, 4}, rng);
    auto y = ops::dropout(ops::relu(ops::conv3d(x, w, TensorD(), 2, 1)), 0.2, ops::Mode::kTrain, Rng(5));
    auto loss = ops::sum(ops::square(y));
    loss.backward();
    std::vector<double> out(y.data().begin(), y.data().end());
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  CHECK(run() == run());
}
