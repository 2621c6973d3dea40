#pragma once

#include <filesystem>
#include <json.hpp>
#include <memory>
#include <vector>

#include "vaemmd/checkpoint.hpp"
#include "vaemmd/data.hpp"
#include "vaemmd/losses.hpp"
#include "vaemmd/preprocess.hpp"
#include "vaemmd/vae.hpp"

namespace vaemmd {

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 4;
  int epochs = 30;
  double grad_clip_norm = 1.0;
  int d_update_interval = 2;
  bool stratified = true;
  bool augment = true;
  preprocess::AugmentOptions augment_options;
  bool validation_includes_adv = true;
  MmdEstimator mmd_estimator = MmdEstimator::kBiased;
  uint64_t seed = 0;
  LossWeights weights;
  VaeConfig model;

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& doc);

struct StratifiedBatch {
  std::vector<int> items;    // indices into the case list given to make_batches
  std::vector<int> domains;  // domain of each item
};

/// One epoch of batches. With `stratified`, each domain receives an even
/// share of every batch (remainder slots rotate across domains); domains
/// that run out of cases before the others are reshuffled and reused, so
/// every case appears at least once.
std::vector<StratifiedBatch> make_batches(const std::vector<int>& case_domains, int batch_size, uint64_t seed,
                                          bool stratified = true);

struct AdamSettings {
  double lr = 1e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

/// Bias-corrected Adam on every trainable parameter in `params`; `t` is the
/// 1-based step count of this optimizer.
template <typename T>
void adam_step(const std::vector<nn::Parameter<T>*>& params, const AdamSettings& s, int64_t t);

/// Scales all gradients uniformly so their global L2 norm is at most
/// `max_norm`. Returns the factor applied (1 when already within bound);
/// `norm_out` receives the pre-clip norm.
template <typename T>
double clip_grad_norm(const std::vector<nn::Parameter<T>*>& params, double max_norm, double* norm_out = nullptr);

template <typename T>
double grad_norm(const std::vector<nn::Parameter<T>*>& params);

/// Mutable training state: the model plus per-network optimizer clocks.
struct TrainerState {
  std::unique_ptr<VaeModel<float>> model;
  int64_t vae_steps = 0;
  int64_t disc_steps = 0;
};

struct StepResult {
  LossBreakdown breakdown;
  double vae_grad_norm = 0;  // before clipping
  double vae_clip_factor = 1;
  bool disc_updated = false;
  double disc_loss = 0;
};

/// One generator update on `x` ([N,1,S,S,S], row i from domains[i]) and, when
/// step_index % d_update_interval == 0, one discriminator update on real vs
/// reconstructed volumes.
StepResult train_step(TrainerState& state, const Tensor<float>& x, const std::vector<int>& domains,
                      const TrainConfig& config, int64_t step_index);

/// Weighted total loss in eval mode (eps = 0) over `cases`, without gradients.
LossBreakdown evaluate_loss(const VaeModel<float>& model, const std::vector<PreparedCase>& cases,
                            const TrainConfig& config);

struct TrainResult {
  Checkpoint best;
  int best_epoch = -1;
  double best_val_total = 0;
  std::vector<nlohmann::json> log;  // step and epoch records
  std::vector<double> epoch_train_mmd;
};

/// Requires train and val cases for every domain. When `out_dir` is set,
/// writes train_log.jsonl, best.ckpt and last.ckpt there.
TrainResult train_vae(const DatasetManifest& manifest, const TrainConfig& config,
                      const std::filesystem::path& out_dir = {});

/// Builds the model from the checkpoint's stored config and loads weights.
std::unique_ptr<VaeModel<float>> load_vae(const Checkpoint& ckpt);
Checkpoint snapshot_vae(const TrainerState& state, const TrainConfig& config, int epoch, double val_total);

}  // namespace vaemmd
