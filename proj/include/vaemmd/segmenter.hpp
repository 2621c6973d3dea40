#pragma once

#include <filesystem>
#include <json.hpp>
#include <memory>
#include <string>
#include <vector>

#include "vaemmd/checkpoint.hpp"
#include "vaemmd/data.hpp"
#include "vaemmd/nn.hpp"
#include "vaemmd/vae.hpp"

namespace vaemmd {

struct UNetConfig {
  int levels = 3;
  int base_channels = 8;
  int input_size = 32;
  uint64_t seed = 0;
  int epochs = 40;
  double lr = 1e-3;
  int batch_size = 2;
  bool augment = true;
  std::vector<std::string> train_domains;  // empty: every domain

  void validate() const;
};

nlohmann::json unet_config_to_json(const UNetConfig& c);
UNetConfig unet_config_from_json(const nlohmann::json& doc);

/// Encoder: 3^3 conv, then per level a stride-2 2^3 conv and a 3^3 conv,
/// doubling channels. Decoder mirrors with stride-2 transposed convs, skip
/// concatenation and a 3^3 conv. 1x1x1 head to two logits.
template <typename T>
class UNet {
 public:
  explicit UNet(const UNetConfig& config);
  UNet(const UNet&) = delete;
  UNet& operator=(const UNet&) = delete;

  const UNetConfig& config() const { return config_; }
  nn::ParamStore<T>& store() { return store_; }
  const nn::ParamStore<T>& store() const { return store_; }
  /// [N,1,S,S,S] -> logits [N,2,S,S,S]
  Tensor<T> forward(const Tensor<T>& x, ops::Mode mode) const;

 private:
  struct Stage {
    nn::Conv3d<T> conv;
    nn::BatchNorm3d<T> bn;
  };
  UNetConfig config_;
  nn::ParamStore<T> store_;
  Stage stem_;
  std::vector<Stage> down_, enc_;
  std::vector<nn::ConvTranspose3d<T>> up_;
  std::vector<nn::BatchNorm3d<T>> up_bn_;
  std::vector<Stage> dec_;
  nn::Conv3d<T> head_;
};

extern template class UNet<float>;
extern template class UNet<double>;

/// Batch-global soft Dice on the foreground probability (smoothing 1) plus
/// mean voxel cross-entropy. `mask` is [N,1,...] with values in {0,1}.
template <typename T>
Tensor<T> seg_loss(const Tensor<T>& logits, const Tensor<T>& mask);

enum class SegVariant { kRaw, kVae };
const char* variant_name(SegVariant v);
SegVariant parse_variant(const std::string& s);

/// Eval-mode (eps = 0) reconstruction of a prepared image.
Image reconstruct(const VaeModel<float>& vae, const Image& prepared);

struct SegTrainResult {
  Checkpoint best;
  int best_epoch = -1;
  double best_val_loss = 0;
  std::vector<nlohmann::json> log;
};

/// Trains on the train split of `config.train_domains`, selecting the epoch
/// with the lowest validation loss. For the VAE variant every input is
/// reconstructed once and cached as <case_id>_recon.rvol under
/// `out_dir/recon_cache`; `vae_checkpoint` is then required.
SegTrainResult train_segmenter(const DatasetManifest& manifest, SegVariant variant, const UNetConfig& config,
                               const std::filesystem::path& vae_checkpoint, const std::filesystem::path& out_dir);

std::unique_ptr<UNet<float>> load_unet(const Checkpoint& ckpt);

/// Channel argmax (foreground where logit 1 > logit 0).
Mask predict_mask(const UNet<float>& net, const Image& prepared);

/// Model input for a raw image according to the checkpoint's variant.
class SegInputPipeline {
 public:
  SegInputPipeline(const Checkpoint& seg_ckpt, const std::filesystem::path& seg_ckpt_path);
  Image operator()(const Image& raw) const;
  SegVariant variant() const { return variant_; }

 private:
  SegVariant variant_ = SegVariant::kRaw;
  int size_ = 32;
  std::unique_ptr<VaeModel<float>> vae_;
};

}  // namespace vaemmd
