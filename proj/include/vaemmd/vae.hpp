#pragma once

#include <cstdint>
#include <json.hpp>
#include <vector>

#include "vaemmd/nn.hpp"

namespace vaemmd {

struct VaeConfig {
  int input_size = 32;
  std::vector<int> channel_ladder{8, 16, 32, 64};
  int latent_dim = 64;
  std::vector<int> attention_blocks{3, 4};  // 1-based block indices
  int attention_reduction = 8;
  double dropout_rate = 0.1;
  int disc_base_channels = 8;
  uint64_t seed = 0;

  void validate() const;
  int blocks() const { return static_cast<int>(channel_ladder.size()); }
  /// Spatial side after block i (1-based).
  int side_after(int block) const { return input_size >> block; }
  int64_t bottleneck_numel() const;
  bool has_attention(int block) const;
};

nlohmann::json vae_config_to_json(const VaeConfig& c);
VaeConfig vae_config_from_json(const nlohmann::json& doc);

namespace nn {

/// Query/key 1x1x1 projections to C/reduction channels, value to C channels,
/// softmax over flattened positions, output = f + gamma * attended.
template <typename T>
struct SelfAttention3d {
  Conv3d<T> query, key, value;
  Tensor<T> gamma;  // shape {1}, starts at 0
  SelfAttention3d() = default;
  SelfAttention3d(ParamStore<T>& store, const std::string& name, const std::string& group, int64_t channels,
                  int reduction, Rng& rng);
  /// `weights`, when given, receives the [N,P,P] attention matrix.
  Tensor<T> operator()(const Tensor<T>& f, Tensor<T>* weights = nullptr) const;
};

}  // namespace nn

template <typename T>
struct Latent {
  Tensor<T> mu;       // [N, latent]
  Tensor<T> log_var;  // [N, latent], clamped to [-10, 10]
};

template <typename T>
struct Encoded {
  Latent<T> latent;
  std::vector<Tensor<T>> skips;  // block outputs, shallowest first
};

template <typename T>
struct VaeOutput {
  Tensor<T> x_hat;
  Latent<T> latent;
  Tensor<T> z;
};

/// z = mu + exp(log_var / 2) * eps.
template <typename T>
Tensor<T> reparameterize(const Latent<T>& latent, const Tensor<T>& eps);

/// VAE (group "vae") and least-squares discriminator (group "disc") sharing
/// one parameter store. Not copyable: layers alias the store's tensors.
template <typename T>
class VaeModel {
 public:
  explicit VaeModel(const VaeConfig& config);
  VaeModel(const VaeModel&) = delete;
  VaeModel& operator=(const VaeModel&) = delete;

  const VaeConfig& config() const { return config_; }
  nn::ParamStore<T>& store() { return store_; }
  const nn::ParamStore<T>& store() const { return store_; }

  /// `rng` drives dropout only.
  Encoded<T> encode(const Tensor<T>& x, ops::Mode mode, const Rng& rng) const;
  Tensor<T> decode(const Tensor<T>& z, const std::vector<Tensor<T>>& skips, ops::Mode mode, const Rng& rng) const;
  /// Train mode samples eps from `rng`; eval mode uses eps = 0 (z = mu).
  VaeOutput<T> forward(const Tensor<T>& x, ops::Mode mode, const Rng& rng) const;
  /// One unbounded score per sample, shape [N].
  Tensor<T> discriminate(const Tensor<T>& x) const;

  const nn::SelfAttention3d<T>* attention(int block) const;

 private:
  struct EncoderBlock {
    nn::Conv3d<T> down;
    nn::BatchNorm3d<T> down_bn;
    nn::Conv3d<T> res1, res2;
    nn::BatchNorm3d<T> res1_bn, res2_bn;
    bool attend = false;
    nn::SelfAttention3d<T> attn;
  };
  struct DecoderStage {
    nn::ConvTranspose3d<T> up;  // unused for the bottleneck stage
    nn::BatchNorm3d<T> up_bn;
    nn::Conv3d<T> fuse;
    nn::BatchNorm3d<T> fuse_bn;
  };

  void check_input(const Tensor<T>& x) const;

  VaeConfig config_;
  nn::ParamStore<T> store_;
  std::vector<EncoderBlock> enc_;
  nn::Linear<T> fc_mu_, fc_log_var_, fc_dec_;
  std::vector<DecoderStage> dec_;  // dec_[i] fuses skip i (0-based)
  nn::ConvTranspose3d<T> final_up_;
  nn::BatchNorm3d<T> final_bn_;
  nn::Conv3d<T> head_;
  std::vector<nn::Conv3d<T>> disc_convs_;
  nn::Linear<T> disc_head_;
};

extern template class VaeModel<float>;
extern template class VaeModel<double>;

}  // namespace vaemmd
