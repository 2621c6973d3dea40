#pragma once

#include <filesystem>
#include <functional>
#include <json.hpp>
#include <optional>
#include <string>

#include "vaemmd/classifier.hpp"
#include "vaemmd/embedding.hpp"
#include "vaemmd/phantom.hpp"
#include "vaemmd/segmenter.hpp"
#include "vaemmd/trainer.hpp"

namespace vaemmd::pipeline {

struct EvalOptions {
  int connectivity = 26;
  double tolerance_mm = 1.0;
  int classifier_folds = 4;
  LogRegOptions classifier;
  std::string embed_method = "pca";
  std::string recon_split = "test";

  void validate() const;
};

nlohmann::json eval_options_to_json(const EvalOptions& e);
EvalOptions eval_options_from_json(const nlohmann::json& doc);

/// A top-level "seed" overrides the seeds of the phantom, VAE and segmenter
/// sections so one number controls a whole run.
struct ExperimentConfig {
  PhantomSpec phantoms;
  TrainConfig train;
  UNetConfig unet;
  EvalOptions eval;
  uint64_t seed = 0;

  void validate() const;
};

nlohmann::json experiment_config_to_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
/// Parse errors and invalid values raise ErrorCode::kConfig; a missing file
/// raises kMissingArtifact.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
/// FNV-1a of the canonical JSON form.
std::string config_hash(const ExperimentConfig& c);

/// Writes run_metadata.json (command, config hash, seed, version) into `dir`.
void write_run_metadata(const std::filesystem::path& dir, const std::string& command, const nlohmann::json& inputs);

/// Each command validates all inputs before creating anything under `out`
/// and returns a JSON summary of what it wrote.
nlohmann::json cmd_gen_phantoms(const ExperimentConfig& config, const std::filesystem::path& out);
nlohmann::json cmd_train_vae(const ExperimentConfig& config, const std::filesystem::path& manifest,
                             const std::filesystem::path& out);
nlohmann::json cmd_reconstruct(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                               const std::filesystem::path& out, const std::string& split = "test");
nlohmann::json cmd_embed(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                         EmbedMethod method, const std::filesystem::path& out, uint64_t seed = 0);
nlohmann::json cmd_eval_domain(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                               const std::filesystem::path& out, const EvalOptions& options = {}, uint64_t seed = 0);
nlohmann::json cmd_train_seg(const ExperimentConfig& config, const std::filesystem::path& manifest, SegVariant variant,
                             const std::filesystem::path& vae_checkpoint, const std::filesystem::path& out);
nlohmann::json cmd_eval_seg(const std::filesystem::path& seg_checkpoint, const std::filesystem::path& manifest,
                            const std::filesystem::path& out, const EvalOptions& options = {});
/// gen-phantoms, train-vae, reconstruct, eval-domain, embed, train-seg and
/// eval-seg for both variants, then comparison.{json,txt}. `on_stage` is
/// called with each stage name ("phantoms", "vae", "reconstruct", "domain",
/// "embed", "seg_raw", "seg_vae") as it finishes.
nlohmann::json cmd_reproduce(const ExperimentConfig& config, const std::filesystem::path& out,
                             const std::function<void(const std::string&)>& on_stage = {});

/// Raw per-volume features: mean and standard deviation over all voxels.
std::vector<double> raw_features(const Image& raw);

}  // namespace vaemmd::pipeline
