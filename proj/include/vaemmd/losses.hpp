#pragma once

#include <json.hpp>
#include <span>
#include <vector>

#include "vaemmd/tensor.hpp"
#include "vaemmd/vae.hpp"

namespace vaemmd {

struct LossWeights {
  double l2 = 300.0;
  double l1 = 150.0;
  double ssim = 50.0;
  double kl = 0.1;
  double mmd = 10.0;
  double adv = 5.0;
  std::vector<double> kernel_sigmas{0.5, 1.0, 2.0};

  void validate() const;
};

nlohmann::json loss_weights_to_json(const LossWeights& w);
LossWeights loss_weights_from_json(const nlohmann::json& doc);

/// Plain values of every term of one evaluation. `ssim_term` is the loss
/// component 1 - SSIM.
struct LossBreakdown {
  double l2 = 0, l1 = 0, ssim_term = 0, recon = 0, kl = 0, mmd = 0, adv = 0, total = 0;
  bool mmd_degenerate = false;  // fewer than two domains in the batch

  /// Fills recon and total from the components.
  void combine(const LossWeights& w);
  nlohmann::json to_json() const;
};

enum class MmdEstimator { kBiased, kUnbiased };

template <typename T> Tensor<T> l2_loss(const Tensor<T>& x, const Tensor<T>& x_hat);
template <typename T> Tensor<T> l1_loss(const Tensor<T>& x, const Tensor<T>& x_hat);

/// Mean SSIM over every valid position of a uniform window, per volume of a
/// [N,C,D,H,W] pair, with C1 = (0.01 L)^2 and C2 = (0.03 L)^2. Population
/// (biased) window statistics.
template <typename T>
Tensor<T> ssim3d(const Tensor<T>& x, const Tensor<T>& y, int window = 7, double data_range = 2.0);

/// Mean over the batch of -1/2 * sum_j (1 + log_var - mu^2 - exp(log_var)).
template <typename T> Tensor<T> kl_divergence(const Latent<T>& latent);

/// Rows of `a` [n,d] and `b` [m,d] are samples; result is the mean over
/// sigmas of MMD^2 with k(z,z') = exp(-|z-z'|^2 / (2 sigma^2)).
template <typename T>
Tensor<T> mmd_multikernel(const Tensor<T>& a, const Tensor<T>& b, const std::vector<double>& sigmas,
                          MmdEstimator estimator = MmdEstimator::kBiased);

/// Mean of mmd_multikernel over all unordered pairs of domains present in
/// `z` (row i belongs to domains[i]). Fewer than two domains yields 0 and
/// sets `degenerate`.
template <typename T>
Tensor<T> pairwise_domain_mmd(const Tensor<T>& z, const std::vector<int>& domains, const std::vector<double>& sigmas,
                              MmdEstimator estimator = MmdEstimator::kBiased, bool* degenerate = nullptr);

/// mean((D(x_hat) - 1)^2)
template <typename T> Tensor<T> adversarial_g_loss(const Tensor<T>& scores_fake);
/// mean((D(x) - 1)^2) + mean(D(x_hat)^2)
template <typename T> Tensor<T> adversarial_d_loss(const Tensor<T>& scores_real, const Tensor<T>& scores_fake);

template <typename T>
struct LossTerms {
  Tensor<T> l2, l1, ssim, kl, mmd, adv;  // ssim is the similarity, not 1 - ssim
};

template <typename T>
struct TotalLoss {
  Tensor<T> total;
  LossBreakdown breakdown;
};

/// Weighted sum; zero-weighted terms may be left undefined.
template <typename T> TotalLoss<T> total_loss(const LossTerms<T>& terms, const LossWeights& weights);

/// 10 log10(peak^2 / MSE). With `rescale_to_unit`, both inputs are first
/// mapped from [-1, 1] to [0, 1]. Identical inputs give +infinity.
double psnr(std::span<const float> x, std::span<const float> y, double peak = 1.0, bool rescale_to_unit = true);
double psnr_from_mse(double mse, double peak = 1.0);
double mse(std::span<const float> x, std::span<const float> y, bool rescale_to_unit = true);

}  // namespace vaemmd
