#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "vaemmd/losses.hpp"

using namespace vaemmd;
using gradcheck::max_rel_error;
using gradcheck::random_leaf;

namespace {

constexpr double kGradTol = 1e-4;

// Direct windowed SSIM over every valid position.
double ssim_oracle(const TensorD& x, const TensorD& y, int w, double range) {
  const auto n = x.shape();
  const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
  const auto xd = x.data(), yd = y.data();
  const int64_t vol = n[2] * n[3] * n[4];
  double total = 0;
  int64_t count = 0;
  for (int64_t v = 0; v < n[0] * n[1]; ++v)
    for (int64_t z = 0; z + w <= n[2]; ++z)
      for (int64_t r = 0; r + w <= n[3]; ++r)
        for (int64_t c = 0; c + w <= n[4]; ++c) {
          double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
          for (int a = 0; a < w; ++a)
            for (int b = 0; b < w; ++b)
              for (int e = 0; e < w; ++e) {
                const int64_t i = v * vol + ((z + a) * n[3] + (r + b)) * n[4] + (c + e);
                sx += xd[i];
                sy += yd[i];
                sxx += xd[i] * xd[i];
                syy += yd[i] * yd[i];
                sxy += xd[i] * yd[i];
              }
          const double k = double(w) * w * w;
          const double mx = sx / k, my = sy / k;
          const double vx = sxx / k - mx * mx, vy = syy / k - my * my, cxy = sxy / k - mx * my;
          total += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
          ++count;
        }
  return total / double(count);
}

}  // namespace

TEST_CASE("l2 and l1 are voxel means") {
  const auto x = TensorD::from({1, 1, 1, 1, 4}, {0, 1, 2, 3});
  const auto y = TensorD::from({1, 1, 1, 1, 4}, {1, 1, 0, 3});
  CHECK(l2_loss(x, y).item() == doctest::Approx(5.0 / 4));
  CHECK(l1_loss(x, y).item() == doctest::Approx(3.0 / 4));
  CHECK_THROWS_AS(l2_loss(x, TensorD::zeros({1, 1, 1, 1, 3})), Error);
}

TEST_CASE("ssim matches a direct windowed oracle; identity gives exactly 1") {
  Rng rng(1);
  for (int t = 0; t < 5; ++t) {
    const auto x = random_leaf({2, 1, 8, 9, 7}, rng);
    const auto y = random_leaf({2, 1, 8, 9, 7}, rng);
    CHECK(std::abs(ssim3d(x, y, 3).item() - ssim_oracle(x, y, 3, 2.0)) < 1e-10);
    CHECK(std::abs(ssim3d(x, y, 7).item() - ssim_oracle(x, y, 7, 2.0)) < 1e-10);
    CHECK(ssim3d(x, x, 3).item() == 1.0);
    CHECK(ssim3d(x, y, 3).item() == doctest::Approx(ssim3d(y, x, 3).item()).epsilon(1e-14));
  }
  const auto small = TensorD::zeros({1, 1, 4, 8, 8});
  CHECK_THROWS_AS(ssim3d(small, small, 7), Error);
}

TEST_CASE("kl divergence: standard normal gives 0, hand value otherwise") {
  Latent<double> zero{TensorD::zeros({3, 4}), TensorD::zeros({3, 4})};
  CHECK(kl_divergence(zero).item() == 0.0);
  Latent<double> one{TensorD::from({1, 2}, {1.0, 0.0}), TensorD::from({1, 2}, {0.0, std::log(2.0)})};
  // 0.5 * (mu^2) + 0.5 * (2 - 1 - log 2)
  CHECK(kl_divergence(one).item() == doctest::Approx(0.5 + 0.5 * (1 - std::log(2.0))).epsilon(1e-14));
}

TEST_CASE("mmd matches the double-loop oracle for both estimators") {
  Rng rng(2);
  const std::vector<double> sigmas{0.5, 1.0, 2.0};
  for (int t = 0; t < 100; ++t) {
    const int64_t n = 2 + rng.below(11), m = 2 + rng.below(11), d = 1 + rng.below(16);
    const auto a = random_leaf({n, d}, rng, -1.5, 1.5), b = random_leaf({m, d}, rng, -1.5, 1.5);
    CHECK(std::abs(mmd_multikernel(a, b, sigmas).item() - oracle::mmd(oracle::rows(a), oracle::rows(b), sigmas, false)) < 1e-10);
    CHECK(std::abs(mmd_multikernel(a, b, sigmas, MmdEstimator::kUnbiased).item() -
                   oracle::mmd(oracle::rows(a), oracle::rows(b), sigmas, true)) < 1e-10);
  }
}

TEST_CASE("biased mmd is non-negative, zero on identical sets, and hits the hand value") {
  Rng rng(3);
  const std::vector<double> sigmas{0.5, 1.0, 2.0};
  for (int t = 0; t < 1000; ++t) {
    const int64_t n = 1 + rng.below(6), m = 1 + rng.below(6), d = 1 + rng.below(8);
    const auto a = random_leaf({n, d}, rng), b = random_leaf({m, d}, rng);
    CHECK(mmd_multikernel(a, b, sigmas).item() >= -1e-15);
  }
  const auto a = random_leaf({5, 3}, rng);
  CHECK(std::abs(mmd_multikernel(a, a, sigmas).item()) < 1e-15);
  const double hand = mmd_multikernel(TensorD::from({1, 1}, {0.0}), TensorD::from({1, 1}, {1.0}), sigmas).item();
  CHECK(std::abs(hand - 0.91709) < 1e-5);
  CHECK_THROWS_AS(mmd_multikernel(TensorD::from({1, 3}, {0, 0, 0}), a, sigmas, MmdEstimator::kUnbiased), Error);
}

TEST_CASE("pairwise domain mmd averages domain pairs and flags a single domain") {
  Rng rng(4);
  const std::vector<double> sigmas{1.0};
  const auto z = random_leaf({6, 3}, rng);
  const std::vector<int> dom{0, 1, 2, 0, 1, 2};
  auto pick = [&](int d) {
    std::vector<double> v;
    for (int i = 0; i < 6; ++i)
      if (dom[i] == d)
        for (int j = 0; j < 3; ++j) v.push_back(z.data()[i * 3 + j]);
    return TensorD::from({2, 3}, v);
  };
  const double expected = (mmd_multikernel(pick(0), pick(1), sigmas).item() +
                           mmd_multikernel(pick(0), pick(2), sigmas).item() +
                           mmd_multikernel(pick(1), pick(2), sigmas).item()) /
                          3;
  bool degenerate = true;
  CHECK(pairwise_domain_mmd(z, dom, sigmas, MmdEstimator::kBiased, &degenerate).item() ==
        doctest::Approx(expected).epsilon(1e-13));
  CHECK_FALSE(degenerate);
  CHECK(pairwise_domain_mmd(z, std::vector<int>(6, 1), sigmas, MmdEstimator::kBiased, &degenerate).item() == 0.0);
  CHECK(degenerate);
}

TEST_CASE("adversarial least-squares losses") {
  const auto s = TensorD::from({2}, {1.0, 3.0});
  CHECK(adversarial_g_loss(s).item() == doctest::Approx(2.0));
  CHECK(adversarial_d_loss(s, TensorD::from({2}, {0.0, 2.0})).item() == doctest::Approx(2.0 + 2.0));
}

TEST_CASE("total loss with every component at 1 and the default weights is 515.1") {
  LossBreakdown b;
  b.l2 = b.l1 = b.ssim_term = b.kl = b.mmd = b.adv = 1.0;
  b.combine(LossWeights{});
  CHECK(b.total == 515.1);
  LossTerms<double> t;
  t.l2 = t.l1 = t.kl = t.mmd = t.adv = TensorD::from({}, {1.0});
  t.ssim = TensorD::from({}, {0.0});  // 1 - ssim = 1
  CHECK(total_loss(t, LossWeights{}).total.item() == doctest::Approx(515.1).epsilon(1e-15));
}

TEST_CASE("loss weights round trip through json and reject negatives") {
  LossWeights w;
  w.mmd = 3;
  const auto back = loss_weights_from_json(loss_weights_to_json(w));
  CHECK(back.mmd == 3);
  CHECK(back.kernel_sigmas == w.kernel_sigmas);
  w.kl = -1;
  CHECK_THROWS_AS(w.validate(), Error);
}

TEST_CASE("psnr convention: unit peak on rescaled volumes") {
  CHECK(std::abs(psnr_from_mse(1.40e-4) - 38.54) <= 0.02);
  const std::vector<float> x{-1.f, 0.f, 1.f, 0.5f}, y{-1.f, 0.2f, 1.f, 0.5f};
  // rescaled difference 0.1 on one of four voxels
  CHECK(mse(x, y) == doctest::Approx(0.01 / 4).epsilon(1e-6));
  CHECK(psnr(x, y) == doctest::Approx(10 * std::log10(4 / 0.01)).epsilon(1e-6));
  CHECK(std::isinf(psnr(x, x)));
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(5);
  const std::vector<double> sigmas{0.5, 1.0, 2.0};
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_leaf({1, 1, 4, 4, 4}, rng), y = random_leaf({1, 1, 4, 4, 4}, rng);
    CHECK(max_rel_error([](const auto& l) { return l2_loss(l[0], l[1]); }, {x, y}) < kGradTol);
    CHECK(max_rel_error([](const auto& l) { return l1_loss(l[0], l[1]); }, {x, y}) < kGradTol);
    CHECK(max_rel_error([](const auto& l) { return ssim3d(l[0], l[1], 3); }, {x, y}) < kGradTol);
    const auto mu = random_leaf({3, 4}, rng), lv = random_leaf({3, 4}, rng);
    CHECK(max_rel_error([](const auto& l) { return kl_divergence(Latent<double>{l[0], l[1]}); }, {mu, lv}) <
          kGradTol);
    const auto za = random_leaf({3, 4}, rng), zb = random_leaf({4, 4}, rng);
    CHECK(max_rel_error([&](const auto& l) { return mmd_multikernel(l[0], l[1], sigmas); }, {za, zb}) < kGradTol);
    CHECK(max_rel_error([&](const auto& l) { return mmd_multikernel(l[0], l[1], sigmas, MmdEstimator::kUnbiased); },
                        {za, zb}) < kGradTol);
    const auto z = random_leaf({4, 3}, rng);
    CHECK(max_rel_error([&](const auto& l) { return pairwise_domain_mmd(l[0], {0, 1, 0, 1}, sigmas); }, {z}) <
          kGradTol);
    const auto s = random_leaf({4}, rng), f = random_leaf({4}, rng);
    CHECK(max_rel_error([](const auto& l) { return adversarial_g_loss(l[0]); }, {s}) < kGradTol);
    CHECK(max_rel_error([](const auto& l) { return adversarial_d_loss(l[0], l[1]); }, {s, f}) < kGradTol);
    CHECK(max_rel_error(
              [&](const auto& l) {
                LossTerms<double> t{l2_loss(l[0], l[1]), l1_loss(l[0], l[1]), ssim3d(l[0], l[1], 3),
                                    kl_divergence(Latent<double>{l[2], l[3]}),
                                    pairwise_domain_mmd(l[2], {0, 1, 0}, sigmas), adversarial_g_loss(l[4])};
                return total_loss(t, LossWeights{}).total;
              },
              {x, y, mu, lv, s}) < kGradTol);
  }
}
