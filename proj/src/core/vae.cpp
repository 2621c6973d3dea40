#include "vaemmd/vae.hpp"

#include <algorithm>

namespace vaemmd {

using nlohmann::json;
using ops::Mode;

void VaeConfig::validate() const {
  require(!channel_ladder.empty(), ErrorCode::kConfig, "channel_ladder must not be empty");
  require(input_size > 0 && input_size % (1 << blocks()) == 0, ErrorCode::kConfig,
          "input_size " + std::to_string(input_size) + " must be divisible by 2^" + std::to_string(blocks()));
  for (int c : channel_ladder) require(c > 0, ErrorCode::kConfig, "channel_ladder entries must be positive");
  require(latent_dim >= 2, ErrorCode::kConfig, "latent_dim must be >= 2");
  require(attention_reduction >= 1, ErrorCode::kConfig, "attention_reduction must be >= 1");
  for (int b : attention_blocks) {
    require(b >= 1 && b <= blocks(), ErrorCode::kConfig,
            "attention block " + std::to_string(b) + " outside the ladder (1.." + std::to_string(blocks()) + ")");
    require(channel_ladder[b - 1] % attention_reduction == 0, ErrorCode::kConfig,
            "attention block " + std::to_string(b) + ": channels " + std::to_string(channel_ladder[b - 1]) +
                " not divisible by reduction " + std::to_string(attention_reduction));
  }
  require(dropout_rate >= 0 && dropout_rate < 1, ErrorCode::kConfig, "dropout_rate must be in [0, 1)");
  require(disc_base_channels >= 1, ErrorCode::kConfig, "disc_base_channels must be >= 1");
}

int64_t VaeConfig::bottleneck_numel() const {
  const int64_t s = side_after(blocks());
  return int64_t(channel_ladder.back()) * s * s * s;
}

bool VaeConfig::has_attention(int block) const {
  return std::find(attention_blocks.begin(), attention_blocks.end(), block) != attention_blocks.end();
}

json vae_config_to_json(const VaeConfig& c) {
  return json{{"input_size", c.input_size},
              {"channel_ladder", c.channel_ladder},
              {"latent_dim", c.latent_dim},
              {"attention_blocks", c.attention_blocks},
              {"attention_reduction", c.attention_reduction},
              {"dropout_rate", c.dropout_rate},
              {"disc_base_channels", c.disc_base_channels},
              {"seed", c.seed}};
}

VaeConfig vae_config_from_json(const json& doc) {
  VaeConfig c;
  try {
    c.input_size = doc.value("input_size", c.input_size);
    c.channel_ladder = doc.value("channel_ladder", c.channel_ladder);
    c.latent_dim = doc.value("latent_dim", c.latent_dim);
    c.attention_blocks = doc.value("attention_blocks", c.attention_blocks);
    c.attention_reduction = doc.value("attention_reduction", c.attention_reduction);
    c.dropout_rate = doc.value("dropout_rate", c.dropout_rate);
    c.disc_base_channels = doc.value("disc_base_channels", c.disc_base_channels);
    c.seed = doc.value("seed", c.seed);
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace nn {

template <typename T>
SelfAttention3d<T>::SelfAttention3d(ParamStore<T>& store, const std::string& name, const std::string& group,
                                    int64_t channels, int reduction, Rng& rng) {
  require(reduction >= 1 && channels % reduction == 0, ErrorCode::kInvalidArgument,
          name + ": channels " + std::to_string(channels) + " not divisible by reduction " +
              std::to_string(reduction));
  const int64_t qk = channels / reduction;
  query = Conv3d<T>(store, name + ".query", group, channels, qk, 1, 1, 0, rng);
  key = Conv3d<T>(store, name + ".key", group, channels, qk, 1, 1, 0, rng);
  value = Conv3d<T>(store, name + ".value", group, channels, channels, 1, 1, 0, rng);
  gamma = store.add(name + ".gamma", group, {1}, {T(0)});
}

template <typename T>
Tensor<T> SelfAttention3d<T>::operator()(const Tensor<T>& f, Tensor<T>* weights) const {
  require(f.rank() == 5, ErrorCode::kInvalidArgument, "self_attention3d expects [N,C,D,H,W]");
  require(f.dim(1) == value.weight.dim(1), ErrorCode::kInvalidArgument,
          "self_attention3d: input has " + std::to_string(f.dim(1)) + " channels, layer expects " +
              std::to_string(value.weight.dim(1)));
  const int64_t n = f.dim(0), c = f.dim(1), p = f.dim(2) * f.dim(3) * f.dim(4);
  const int64_t cq = query.weight.dim(0);
  const auto q = ops::reshape(query(f), {n, cq, p});
  const auto k = ops::reshape(key(f), {n, cq, p});
  const auto v = ops::reshape(value(f), {n, c, p});
  const auto energy = ops::bmm(ops::transpose_last2(q), k);  // [N,P,P]
  const auto attn = ops::softmax(energy, 2);
  if (weights) *weights = attn;
  const auto out = ops::bmm(v, ops::transpose_last2(attn));  // out[c,i] = sum_j v[c,j] attn[i,j]
  return ops::add(f, ops::scale_by(ops::reshape(out, f.shape()), gamma));
}

template struct SelfAttention3d<float>;
template struct SelfAttention3d<double>;

}  // namespace nn

template <typename T>
Tensor<T> reparameterize(const Latent<T>& latent, const Tensor<T>& eps) {
  require(eps.shape() == latent.mu.shape(), ErrorCode::kInvalidArgument,
          "reparameterize: eps shape " + shape_str(eps.shape()) + " != mu shape " + shape_str(latent.mu.shape()));
  const auto sigma = ops::exp(ops::scale(latent.log_var, T(0.5)));
  return ops::add(latent.mu, ops::mul(sigma, eps));
}

template <typename T>
VaeModel<T>::VaeModel(const VaeConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  const int L = config_.blocks();
  const auto& ch = config_.channel_ladder;
  const std::string g = "vae";

  int64_t cin = 1;
  for (int b = 1; b <= L; ++b) {
    const std::string p = "enc" + std::to_string(b);
    const int64_t c = ch[b - 1];
    EncoderBlock blk;
    blk.down = nn::Conv3d<T>(store_, p + ".down", g, cin, c, 4, 2, 1, rng);
    blk.down_bn = nn::BatchNorm3d<T>(store_, p + ".down_bn", g, c);
    blk.res1 = nn::Conv3d<T>(store_, p + ".res1", g, c, c, 3, 1, 1, rng);
    blk.res1_bn = nn::BatchNorm3d<T>(store_, p + ".res1_bn", g, c);
    blk.res2 = nn::Conv3d<T>(store_, p + ".res2", g, c, c, 3, 1, 1, rng);
    blk.res2_bn = nn::BatchNorm3d<T>(store_, p + ".res2_bn", g, c);
    blk.attend = config_.has_attention(b);
    if (blk.attend) blk.attn = nn::SelfAttention3d<T>(store_, p + ".attn", g, c, config_.attention_reduction, rng);
    enc_.push_back(std::move(blk));
    cin = c;
  }

  const int64_t flat = config_.bottleneck_numel();
  fc_mu_ = nn::Linear<T>(store_, "fc_mu", g, flat, config_.latent_dim, rng);
  fc_log_var_ = nn::Linear<T>(store_, "fc_log_var", g, flat, config_.latent_dim, rng);
  fc_dec_ = nn::Linear<T>(store_, "fc_dec", g, config_.latent_dim, flat, rng);

  dec_.resize(static_cast<size_t>(L));
  for (int i = L - 1; i >= 0; --i) {
    const std::string p = "dec" + std::to_string(i + 1);
    auto& st = dec_[static_cast<size_t>(i)];
    if (i < L - 1) {
      st.up = nn::ConvTranspose3d<T>(store_, p + ".up", g, ch[i + 1], ch[i], 4, 2, 1, rng);
      st.up_bn = nn::BatchNorm3d<T>(store_, p + ".up_bn", g, ch[i]);
    }
    st.fuse = nn::Conv3d<T>(store_, p + ".fuse", g, 2 * int64_t(ch[i]), ch[i], 3, 1, 1, rng);
    st.fuse_bn = nn::BatchNorm3d<T>(store_, p + ".fuse_bn", g, ch[i]);
  }
  final_up_ = nn::ConvTranspose3d<T>(store_, "dec0.up", g, ch[0], ch[0], 4, 2, 1, rng);
  final_bn_ = nn::BatchNorm3d<T>(store_, "dec0.up_bn", g, ch[0]);
  head_ = nn::Conv3d<T>(store_, "head", g, ch[0], 1, 1, 1, 0, rng);

  int64_t side = config_.input_size, dc = 1, width = config_.disc_base_channels;
  for (int i = 0; side > 4; ++i) {
    disc_convs_.emplace_back(store_, "disc.conv" + std::to_string(i + 1), "disc", dc, width, 4, 2, 1, rng);
    dc = width;
    width *= 2;
    side /= 2;
  }
  disc_head_ = nn::Linear<T>(store_, "disc.head", "disc", dc * side * side * side, 1, rng);
}

template <typename T>
void VaeModel<T>::check_input(const Tensor<T>& x) const {
  const int64_t s = config_.input_size;
  require(x.rank() == 5 && x.dim(1) == 1, ErrorCode::kInvalidArgument,
          "model input must be [N,1,S,S,S], got " + shape_str(x.shape()));
  require(x.dim(2) == s && x.dim(3) == s && x.dim(4) == s, ErrorCode::kInvalidArgument,
          "model input spatial size " + shape_str(x.shape()) + " does not match input_size " + std::to_string(s));
}

template <typename T>
Encoded<T> VaeModel<T>::encode(const Tensor<T>& x, Mode mode, const Rng& rng) const {
  check_input(x);
  Encoded<T> out;
  Tensor<T> h = x;
  for (size_t b = 0; b < enc_.size(); ++b) {
    const auto& blk = enc_[b];
    h = ops::relu(blk.down_bn(blk.down(h), mode));
    auto r = ops::relu(blk.res1_bn(blk.res1(h), mode));
    r = ops::dropout(r, config_.dropout_rate, mode, rng.split(b));
    r = blk.res2_bn(blk.res2(r), mode);
    h = ops::relu(ops::add(h, r));
    if (blk.attend) h = blk.attn(h);
    out.skips.push_back(h);
  }
  const auto flat = ops::flatten(h);
  out.latent.mu = fc_mu_(flat);
  out.latent.log_var = ops::clamp(fc_log_var_(flat), T(-10), T(10));
  return out;
}

template <typename T>
Tensor<T> VaeModel<T>::decode(const Tensor<T>& z, const std::vector<Tensor<T>>& skips, Mode mode,
                              const Rng&) const {
  const int L = config_.blocks();
  require(z.rank() == 2 && z.dim(1) == config_.latent_dim, ErrorCode::kInvalidArgument,
          "decoder expects z of shape [N," + std::to_string(config_.latent_dim) + "], got " + shape_str(z.shape()));
  require(static_cast<int>(skips.size()) == L, ErrorCode::kInvalidArgument, "decoder needs one skip per block");
  const int64_t n = z.dim(0), s = config_.side_after(L);
  Tensor<T> h = ops::reshape(fc_dec_(z), {n, config_.channel_ladder.back(), s, s, s});
  for (int i = L - 1; i >= 0; --i) {
    const auto& st = dec_[static_cast<size_t>(i)];
    if (i < L - 1) h = ops::relu(st.up_bn(st.up(h), mode));
    require(skips[i].shape() == h.shape(), ErrorCode::kInvalidArgument,
            "skip " + std::to_string(i + 1) + " has shape " + shape_str(skips[i].shape()) + ", decoder expects " +
                shape_str(h.shape()));
    h = ops::relu(st.fuse_bn(st.fuse(ops::concat<T>({h, skips[i]}, 1)), mode));
  }
  h = ops::relu(final_bn_(final_up_(h), mode));
  return ops::tanh(head_(h));
}

template <typename T>
VaeOutput<T> VaeModel<T>::forward(const Tensor<T>& x, Mode mode, const Rng& rng) const {
  VaeOutput<T> out;
  auto enc = encode(x, mode, rng.split(1));
  out.latent = enc.latent;
  if (mode == Mode::kTrain) {
    Rng eps_rng = rng.split(2);
    std::vector<T> eps(static_cast<size_t>(out.latent.mu.numel()));
    for (auto& e : eps) e = static_cast<T>(eps_rng.normal());
    out.z = reparameterize(out.latent, Tensor<T>::from(out.latent.mu.shape(), std::move(eps)));
  } else {
    out.z = out.latent.mu;
  }
  out.x_hat = decode(out.z, enc.skips, mode, rng.split(3));
  return out;
}

template <typename T>
Tensor<T> VaeModel<T>::discriminate(const Tensor<T>& x) const {
  check_input(x);
  Tensor<T> h = x;
  for (const auto& conv : disc_convs_) h = ops::leaky_relu(conv(h), T(0.2));
  const auto score = disc_head_(ops::flatten(h));
  return ops::reshape(score, {x.dim(0)});
}

template <typename T>
const nn::SelfAttention3d<T>* VaeModel<T>::attention(int block) const {
  if (block < 1 || block > config_.blocks() || !enc_[block - 1].attend) return nullptr;
  return &enc_[block - 1].attn;
}

template Tensor<float> reparameterize(const Latent<float>&, const Tensor<float>&);
template Tensor<double> reparameterize(const Latent<double>&, const Tensor<double>&);
template class VaeModel<float>;
template class VaeModel<double>;

}  // namespace vaemmd
