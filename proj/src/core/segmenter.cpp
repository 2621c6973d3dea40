#include "vaemmd/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "binio.hpp"
#include "vaemmd/trainer.hpp"

namespace vaemmd {

using nlohmann::json;
using ops::Mode;
namespace fs = std::filesystem;

void UNetConfig::validate() const {
  require(levels >= 1, ErrorCode::kConfig, "unet levels must be >= 1");
  require(base_channels >= 1, ErrorCode::kConfig, "unet base_channels must be >= 1");
  require(input_size > 0 && input_size % (1 << levels) == 0, ErrorCode::kConfig,
          "unet input_size must be divisible by 2^levels");
  require(epochs >= 1, ErrorCode::kConfig, "unet epochs must be >= 1");
  require(lr > 0, ErrorCode::kConfig, "unet lr must be > 0");
  require(batch_size >= 1, ErrorCode::kConfig, "unet batch_size must be >= 1");
}

json unet_config_to_json(const UNetConfig& c) {
  return json{{"levels", c.levels},         {"base_channels", c.base_channels}, {"input_size", c.input_size},
              {"seed", c.seed},             {"epochs", c.epochs},               {"lr", c.lr},
              {"batch_size", c.batch_size}, {"augment", c.augment},             {"train_domains", c.train_domains}};
}

UNetConfig unet_config_from_json(const json& doc) {
  UNetConfig c;
  try {
    c.levels = doc.value("levels", c.levels);
    c.base_channels = doc.value("base_channels", c.base_channels);
    c.input_size = doc.value("input_size", c.input_size);
    c.seed = doc.value("seed", c.seed);
    c.epochs = doc.value("epochs", c.epochs);
    c.lr = doc.value("lr", c.lr);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.augment = doc.value("augment", c.augment);
    c.train_domains = doc.value("train_domains", c.train_domains);
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, std::string("malformed segmenter config: ") + e.what());
  }
  c.validate();
  return c;
}

template <typename T>
UNet<T>::UNet(const UNetConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  const std::string g = "unet";
  const int64_t b = config_.base_channels;
  stem_ = {nn::Conv3d<T>(store_, "stem", g, 1, b, 3, 1, 1, rng), nn::BatchNorm3d<T>(store_, "stem_bn", g, b)};
  for (int l = 1; l <= config_.levels; ++l) {
    const int64_t cin = b << (l - 1), c = b << l;
    const std::string p = "level" + std::to_string(l);
    down_.push_back({nn::Conv3d<T>(store_, p + ".down", g, cin, c, 2, 2, 0, rng),
                     nn::BatchNorm3d<T>(store_, p + ".down_bn", g, c)});
    enc_.push_back({nn::Conv3d<T>(store_, p + ".conv", g, c, c, 3, 1, 1, rng),
                    nn::BatchNorm3d<T>(store_, p + ".conv_bn", g, c)});
  }
  for (int l = config_.levels; l >= 1; --l) {
    const int64_t c = b << l, cout = b << (l - 1);
    const std::string p = "up" + std::to_string(l);
    up_.emplace_back(store_, p + ".up", g, c, cout, 2, 2, 0, rng);
    up_bn_.emplace_back(store_, p + ".up_bn", g, cout);
    dec_.push_back({nn::Conv3d<T>(store_, p + ".fuse", g, 2 * cout, cout, 3, 1, 1, rng),
                    nn::BatchNorm3d<T>(store_, p + ".fuse_bn", g, cout)});
  }
  head_ = nn::Conv3d<T>(store_, "head", g, b, 2, 1, 1, 0, rng);
}

template <typename T>
Tensor<T> UNet<T>::forward(const Tensor<T>& x, Mode mode) const {
  const int64_t s = config_.input_size;
  require(x.rank() == 5 && x.dim(1) == 1 && x.dim(2) == s && x.dim(3) == s && x.dim(4) == s,
          ErrorCode::kInvalidArgument,
          "segmenter input must be [N,1," + std::to_string(s) + "^3], got " + shape_str(x.shape()));
  auto stage = [mode](const Stage& st, const Tensor<T>& h) { return ops::relu(st.bn(st.conv(h), mode)); };
  std::vector<Tensor<T>> skips{stage(stem_, x)};
  for (size_t l = 0; l < down_.size(); ++l) skips.push_back(stage(enc_[l], stage(down_[l], skips.back())));
  Tensor<T> h = skips.back();
  for (size_t i = 0; i < up_.size(); ++i) {
    h = ops::relu(up_bn_[i](up_[i](h), mode));
    const auto& skip = skips[skips.size() - 2 - i];
    h = stage(dec_[i], ops::concat<T>({h, skip}, 1));
  }
  return head_(h);
}

template <typename T>
Tensor<T> seg_loss(const Tensor<T>& logits, const Tensor<T>& mask) {
  require(logits.rank() == 5 && logits.dim(1) == 2, ErrorCode::kInvalidArgument,
          "seg_loss expects logits [N,2,D,H,W], got " + shape_str(logits.shape()));
  Shape mshape = logits.shape();
  mshape[1] = 1;
  require(mask.shape() == mshape, ErrorCode::kInvalidArgument,
          "seg_loss: mask shape " + shape_str(mask.shape()) + " does not match " + shape_str(mshape));
  for (T v : mask.data())
    require(v == T(0) || v == T(1), ErrorCode::kValidation, "seg_loss: mask is not binary");
  const double voxels = double(mask.numel());
  const auto m = mask.detach();
  const auto background = ops::add_scalar(ops::scale(m, T(-1)), T(1));
  const auto onehot = ops::concat<T>({background, m}, 1);
  const auto ce = ops::scale(ops::sum(ops::mul(ops::log_softmax(logits, 1), onehot)), static_cast<T>(-1.0 / voxels));
  const auto fg = ops::slice(ops::softmax(logits, 1), 1, 1, 1);
  const auto inter = ops::sum(ops::mul(fg, m));
  const auto denom = ops::add_scalar(ops::add(ops::sum(fg), ops::sum(m)), T(1));
  const auto ratio = ops::mul(ops::add_scalar(ops::scale(inter, T(2)), T(1)), ops::exp(ops::scale(ops::log(denom), T(-1))));
  const auto dice_loss = ops::add_scalar(ops::scale(ratio, T(-1)), T(1));
  return ops::add(dice_loss, ce);
}

const char* variant_name(SegVariant v) { return v == SegVariant::kRaw ? "raw" : "vae"; }

SegVariant parse_variant(const std::string& s) {
  if (s == "raw") return SegVariant::kRaw;
  if (s == "vae" || s == "vae_reconstructed") return SegVariant::kVae;
  fail(ErrorCode::kConfig, "unknown segmenter variant '" + s + "' (expected raw|vae)");
}

Image reconstruct(const VaeModel<float>& vae, const Image& prepared) {
  NoGradGuard guard;
  const auto x = stack_images<float>({&prepared});
  const auto out = vae.forward(x, Mode::kEval, Rng(0));
  Image r(prepared.grid);
  std::copy(out.x_hat.data().begin(), out.x_hat.data().end(), r.voxels.begin());
  return r;
}

namespace {

double evaluate_seg_loss(const UNet<float>& net, const std::vector<PreparedCase>& cases,
                         const std::vector<Image>& inputs) {
  NoGradGuard guard;
  double acc = 0;
  for (size_t i = 0; i < cases.size(); ++i) {
    const auto logits = net.forward(stack_images<float>({&inputs[i]}), Mode::kEval);
    acc += seg_loss(logits, stack_masks<float>({&*cases[i].mask})).item();
  }
  return acc / double(cases.size());
}

std::vector<PreparedCase> select_domains(std::vector<PreparedCase> cases, const std::vector<int>& keep) {
  std::vector<PreparedCase> out;
  for (auto& c : cases)
    if (std::find(keep.begin(), keep.end(), c.domain) != keep.end()) out.push_back(std::move(c));
  return out;
}

}  // namespace

SegTrainResult train_segmenter(const DatasetManifest& manifest, SegVariant variant, const UNetConfig& config,
                               const fs::path& vae_checkpoint, const fs::path& out_dir) {
  config.validate();
  const auto domains = manifest.domains();
  std::vector<int> keep;
  if (config.train_domains.empty()) {
    for (size_t i = 0; i < domains.size(); ++i) keep.push_back(static_cast<int>(i));
  } else {
    for (const auto& d : config.train_domains) {
      const auto it = std::find(domains.begin(), domains.end(), d);
      require(it != domains.end(), ErrorCode::kConfig, "segmenter train domain '" + d + "' not in manifest");
      keep.push_back(static_cast<int>(it - domains.begin()));
    }
  }

  std::unique_ptr<VaeModel<float>> vae;
  json vae_ref = nullptr;
  if (variant == SegVariant::kVae) {
    require(!vae_checkpoint.empty(), ErrorCode::kConfig, "the vae variant requires a VAE checkpoint");
    const std::string bytes = binio::read_file(vae_checkpoint);
    vae = load_vae(Checkpoint::deserialize(bytes, vae_checkpoint.string()));
    require(vae->config().input_size == config.input_size, ErrorCode::kConfig,
            "VAE input_size differs from segmenter input_size");
    const fs::path base = out_dir.empty() ? fs::current_path() : fs::absolute(out_dir);
    vae_ref = json{{"path", fs::relative(fs::absolute(vae_checkpoint), base).generic_string()},
                   {"fnv1a64", binio::hex64(binio::fnv1a64(bytes))}};
  }

  const auto train = select_domains(load_split(manifest, Split::kTrain, config.input_size, true), keep);
  const auto val = select_domains(load_split(manifest, Split::kVal, config.input_size, true), keep);
  require(!train.empty(), ErrorCode::kValidation, "segmenter has no training cases");
  require(!val.empty(), ErrorCode::kValidation, "segmenter has no validation cases");

  auto inputs_for = [&](const std::vector<PreparedCase>& cases) {
    std::vector<Image> inputs;
    for (const auto& c : cases) {
      if (!vae) {
        inputs.push_back(c.image);
        continue;
      }
      Image r = reconstruct(*vae, c.image);
      if (!out_dir.empty()) {
        const fs::path cached = out_dir / "recon_cache" / (c.case_id + "_recon.rvol");
        write_volume(r, cached);
        r = read_image(cached);
      }
      inputs.push_back(std::move(r));
    }
    return inputs;
  };
  const auto train_inputs = inputs_for(train);
  const auto val_inputs = inputs_for(val);

  UNet<float> net(config);
  auto params = net.store().group("unet");
  const AdamSettings adam{config.lr, 0.9, 0.999, 1e-8};
  const Rng root(config.seed);
  SegTrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<int> all_domains(train.size(), 0);
  int64_t t = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto batches = make_batches(all_domains, config.batch_size, root.split(0xBA7C).split(epoch).next_u64(), false);
    double loss_sum = 0;
    for (const auto& batch : batches) {
      std::vector<Image> imgs;
      std::vector<Mask> masks;
      for (int item : batch.items) {
        if (config.augment) {
          const uint64_t s = root.split(0xA06).split(epoch).split(item).next_u64();
          auto a = preprocess::augment(train_inputs[item], &*train[item].mask, {}, s);
          imgs.push_back(std::move(a.image));
          masks.push_back(std::move(*a.mask));
        } else {
          imgs.push_back(train_inputs[item]);
          masks.push_back(*train[item].mask);
        }
      }
      std::vector<const Image*> ip;
      std::vector<const Mask*> mp;
      for (size_t i = 0; i < imgs.size(); ++i) {
        ip.push_back(&imgs[i]);
        mp.push_back(&masks[i]);
      }
      net.store().zero_grad();
      auto loss = seg_loss(net.forward(stack_images<float>(ip), Mode::kTrain), stack_masks<float>(mp));
      loss_sum += loss.item();
      loss.backward();
      adam_step(params, adam, ++t);
    }
    const double val_loss = evaluate_seg_loss(net, val, val_inputs);
    result.log.push_back(json{{"epoch", epoch},
                              {"train_loss", loss_sum / double(batches.size())},
                              {"val_loss", val_loss}});
    require(std::isfinite(val_loss), ErrorCode::kNumerical, "segmenter validation loss became non-finite");
    if (val_loss < result.best_val_loss) {
      result.best_val_loss = val_loss;
      result.best_epoch = epoch;
      Checkpoint ckpt;
      export_store(net.store(), ckpt, false);
      ckpt.meta = json{{"kind", "unet"},
                       {"variant", variant_name(variant)},
                       {"epoch", epoch},
                       {"validation_loss", val_loss},
                       {"config", unet_config_to_json(config)},
                       {"vae_checkpoint", vae_ref}};
      result.best = std::move(ckpt);
    }
  }
  if (!out_dir.empty()) {
    std::string lines;
    for (const auto& rec : result.log) lines += rec.dump() + "\n";
    binio::write_file(out_dir / "seg_log.jsonl", lines);
    result.best.save(out_dir / "seg.ckpt");
  }
  return result;
}

std::unique_ptr<UNet<float>> load_unet(const Checkpoint& ckpt) {
  require(ckpt.meta.value("kind", std::string()) == "unet", ErrorCode::kValidation,
          "checkpoint is not a segmenter checkpoint");
  auto net = std::make_unique<UNet<float>>(unet_config_from_json(ckpt.meta.at("config")));
  import_store(net->store(), ckpt, false);
  return net;
}

Mask predict_mask(const UNet<float>& net, const Image& prepared) {
  const int64_t s = net.config().input_size;
  require(prepared.grid.shape == std::array<int64_t, 3>{s, s, s}, ErrorCode::kInvalidArgument,
          "predict_mask: volume size differs from the segmenter's training size " + std::to_string(s));
  NoGradGuard guard;
  const auto logits = net.forward(stack_images<float>({&prepared}), Mode::kEval);
  Mask out(prepared.grid);
  const auto d = logits.data();
  const int64_t v = prepared.grid.size();
  for (int64_t i = 0; i < v; ++i) out.voxels[i] = d[v + i] > d[i] ? 1 : 0;
  return out;
}

SegInputPipeline::SegInputPipeline(const Checkpoint& seg_ckpt, const fs::path& seg_ckpt_path) {
  variant_ = parse_variant(seg_ckpt.meta.value("variant", std::string("raw")));
  size_ = unet_config_from_json(seg_ckpt.meta.at("config")).input_size;
  if (variant_ == SegVariant::kVae) {
    const auto& ref = seg_ckpt.meta.at("vae_checkpoint");
    require(ref.is_object(), ErrorCode::kValidation, "vae-variant segmenter checkpoint lacks its VAE reference");
    const fs::path path = fs::absolute(seg_ckpt_path).parent_path() / ref.at("path").get<std::string>();
    const std::string bytes = binio::read_file(path);
    require(binio::hex64(binio::fnv1a64(bytes)) == ref.at("fnv1a64").get<std::string>(), ErrorCode::kValidation,
            "VAE checkpoint " + path.string() + " differs from the one the segmenter was trained with");
    vae_ = load_vae(Checkpoint::deserialize(bytes, path.string()));
  }
}

Image SegInputPipeline::operator()(const Image& raw) const {
  Image prepared = prepare_image(raw, size_);
  if (vae_) return reconstruct(*vae_, prepared);
  return prepared;
}

template class UNet<float>;
template class UNet<double>;
template Tensor<float> seg_loss(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> seg_loss(const Tensor<double>&, const Tensor<double>&);

}  // namespace vaemmd
