#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "gradcheck.hpp"
#include "vaemmd/metrics.hpp"
#include "vaemmd/phantom.hpp"
#include "vaemmd/segmenter.hpp"
#include "vaemmd/trainer.hpp"

using namespace vaemmd;
using gradcheck::max_rel_error;
using gradcheck::project;
using gradcheck::random_leaf;
namespace fs = std::filesystem;

namespace {

// Soft Dice (smoothing 1) on the softmax foreground plus mean cross-entropy.
double seg_loss_oracle(const TensorD& logits, const TensorD& mask) {
  const int64_t n = logits.dim(0), v = mask.numel() / n;
  double inter = 0, fg_sum = 0, m_sum = 0, ce = 0;
  for (int64_t b = 0; b < n; ++b)
    for (int64_t i = 0; i < v; ++i) {
      const double l0 = logits.at((b * 2) * v + i), l1 = logits.at((b * 2 + 1) * v + i);
      const double mx = std::max(l0, l1);
      const double lse = mx + std::log(std::exp(l0 - mx) + std::exp(l1 - mx));
      const double p1 = std::exp(l1 - lse);
      const double m = mask.at(b * v + i);
      inter += p1 * m;
      fg_sum += p1;
      m_sum += m;
      ce -= m > 0.5 ? l1 - lse : l0 - lse;
    }
  return 1.0 - (2 * inter + 1) / (fg_sum + m_sum + 1) + ce / double(n * v);
}

TensorD random_mask_tensor(Shape shape, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform() < 0.3 ? 1.0 : 0.0;
  return TensorD::from(shape, std::move(v));
}

}  // namespace

TEST_CASE("unet config validation and json") {
  UNetConfig c;
  c.train_domains = {"a"};
  const auto back = unet_config_from_json(unet_config_to_json(c));
  CHECK(back.train_domains == c.train_domains);
  CHECK(back.levels == c.levels);
  c.input_size = 20;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK_THROWS_AS(unet_config_from_json({{"levels", "three"}}), Error);
  CHECK(parse_variant("raw") == SegVariant::kRaw);
  CHECK(parse_variant("vae") == SegVariant::kVae);
  CHECK_THROWS_AS(parse_variant("other"), Error);
}

TEST_CASE("unet output shape") {
  UNetConfig c;
  c.input_size = 16;
  UNet<float> net(c);
  NoGradGuard guard;
  CHECK(net.forward(TensorF::zeros({2, 1, 16, 16, 16}), ops::Mode::kEval).shape() == Shape{2, 2, 16, 16, 16});
  CHECK_THROWS_AS(net.forward(TensorF::zeros({1, 1, 8, 8, 8}), ops::Mode::kEval), Error);
}

TEST_CASE("seg_loss matches the oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto logits = random_leaf({2, 2, 2, 3, 2}, rng, -3, 3);
    const auto mask = random_mask_tensor({2, 1, 2, 3, 2}, rng);
    CHECK(seg_loss(logits, mask).item() == doctest::Approx(seg_loss_oracle(logits, mask)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(seg_loss(TensorD::zeros({1, 2, 2, 2, 2}), TensorD::full({1, 1, 2, 2, 2}, 0.5)), Error);
  CHECK_THROWS_AS(seg_loss(TensorD::zeros({1, 2, 2, 2, 2}), TensorD::zeros({1, 1, 2, 2, 3})), Error);
}

TEST_CASE("seg_loss and unet gradients match finite differences") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto logits = random_leaf({1, 2, 2, 2, 2}, rng, -2, 2);
    const auto mask = random_mask_tensor({1, 1, 2, 2, 2}, rng);
    auto f = [&](const std::vector<TensorD>& l) { return seg_loss(l[0], mask); };
    CHECK(max_rel_error(f, {logits}) < 1e-7);
  }
  for (uint64_t trial = 0; trial < 3; ++trial) {
    UNetConfig c;
    c.levels = 2;
    c.base_channels = 2;
    c.input_size = 8;
    c.seed = trial;
    UNet<double> net(c);
    const auto x = random_leaf({1, 1, 8, 8, 8}, rng);
    const auto mask = random_mask_tensor({1, 1, 8, 8, 8}, rng);
    const uint64_t seed = rng.next_u64();
    auto f = [&](const std::vector<TensorD>&) {
      const auto logits = net.forward(x, ops::Mode::kTrain);
      return ops::add(seg_loss(logits, mask), project(logits, seed));
    };
    std::vector<TensorD> leaves{x};
    for (const char* name : {"head.weight", "stem.weight", "level2.down.weight", "up1.up.weight", "head.bias"})
      leaves.push_back(net.store().find(name)->value);
    const auto st = gradcheck::check(f, leaves);
    MESSAGE("trial " << trial << " relative error " << st.max_rel << ", kinks " << st.kinks);
    CHECK(st.max_rel < 1e-4);
    CHECK(st.kinks * 100 <= st.checked);
  }
}

TEST_CASE("predict_mask is the channel argmax") {
  UNetConfig c;
  c.levels = 1;
  c.base_channels = 2;
  c.input_size = 4;
  UNet<float> net(c);
  Image img(Grid{{4, 4, 4}, {1, 1, 1}});
  Rng rng(4);
  for (auto& v : img.voxels) v = static_cast<float>(rng.uniform(-1, 1));
  auto bias = net.store().find("head.bias")->value;
  bias.mutable_data()[0] = -100.f;
  bias.mutable_data()[1] = 100.f;
  CHECK(predict_mask(net, img).count() == 64);
  bias.mutable_data()[0] = 100.f;
  bias.mutable_data()[1] = -100.f;
  CHECK(predict_mask(net, img).count() == 0);
  bias.mutable_data()[0] = 0.f;
  bias.mutable_data()[1] = 0.f;
  NoGradGuard guard;
  const auto logits = net.forward(stack_images<float>({&img}), ops::Mode::kEval);
  const auto m = predict_mask(net, img);
  for (int64_t i = 0; i < 64; ++i) CHECK(m.voxels[i] == (logits.at(64 + i) > logits.at(i) ? 1 : 0));
  CHECK_THROWS_AS(predict_mask(net, Image(Grid{{8, 8, 8}, {1, 1, 1}})), Error);
}

TEST_CASE("segmenter training: raw and vae variants, reload, determinism") {
  PhantomSpec spec;
  spec.shape = {16, 16, 16};
  spec.styles = {preset_style("miliary"), preset_style("lung-primary")};
  spec.cases_per_domain = 8;
  spec.seed = 6;
  const fs::path root = fs::temp_directory_path() / "vaemmd_test_segmenter";
  fs::remove_all(root);
  const auto manifest = generate_dataset(spec, root / "data");

  UNetConfig c;
  c.levels = 2;
  c.base_channels = 4;
  c.input_size = 16;
  c.epochs = 6;
  c.lr = 1e-2;
  c.train_domains = {"miliary"};
  const auto r = train_segmenter(manifest, SegVariant::kRaw, c, {}, root / "raw");
  REQUIRE(r.best_epoch >= 0);
  CHECK(r.log.size() == 6);
  CHECK(r.log.back().at("train_loss").get<double>() < r.log.front().at("train_loss").get<double>());
  CHECK(r.best.meta.at("variant") == "raw");
  const auto again = train_segmenter(manifest, SegVariant::kRaw, c, {}, root / "raw2");
  CHECK(again.best.serialize() == r.best.serialize());

  const auto net = load_unet(Checkpoint::load(root / "raw" / "seg.ckpt"));
  const SegInputPipeline pipe(r.best, root / "raw" / "seg.ckpt");
  CHECK(pipe.variant() == SegVariant::kRaw);
  const auto& test_case = *manifest.select(Split::kTest, std::string("miliary")).front();
  const auto pred = predict_mask(*net, pipe(read_image(test_case.image_path)));
  CHECK(pred.grid.shape == std::array<int64_t, 3>{16, 16, 16});

  auto bad = c;
  bad.train_domains = {"nowhere"};
  CHECK_THROWS_AS(train_segmenter(manifest, SegVariant::kRaw, bad, {}, {}), Error);
  CHECK_THROWS_AS(train_segmenter(manifest, SegVariant::kVae, c, {}, {}), Error);

  // VAE variant: inputs are reconstructions cached next to the checkpoint.
  TrainConfig t;
  t.epochs = 1;
  t.model.input_size = 16;
  t.model.channel_ladder = {4, 8};
  t.model.latent_dim = 4;
  t.model.attention_blocks = {2};
  t.model.attention_reduction = 4;
  const auto vr = train_vae(manifest, t, root / "vae");
  auto vc = c;
  vc.epochs = 1;
  const auto seg_vae = train_segmenter(manifest, SegVariant::kVae, vc, root / "vae" / "best.ckpt", root / "seg_vae");
  CHECK(seg_vae.best.meta.at("variant") == "vae");
  CHECK(fs::exists(root / "seg_vae" / "recon_cache"));
  const SegInputPipeline vpipe(seg_vae.best, root / "seg_vae" / "seg.ckpt");
  CHECK(vpipe.variant() == SegVariant::kVae);
  const auto recon = vpipe(read_image(test_case.image_path));
  const auto direct = reconstruct(*load_vae(vr.best), prepare_image(read_image(test_case.image_path), 16));
  CHECK(recon.voxels == direct.voxels);
}
