#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "vaemmd/phantom.hpp"
#include "vaemmd/trainer.hpp"

using namespace vaemmd;
namespace fs = std::filesystem;

namespace {

VaeConfig tiny_model() {
  VaeConfig c;
  c.input_size = 8;
  c.channel_ladder = {4, 8};
  c.latent_dim = 4;
  c.attention_blocks = {2};
  c.attention_reduction = 4;
  c.dropout_rate = 0.1;
  c.disc_base_channels = 2;
  return c;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.lr = 1e-2;
  t.batch_size = 4;
  t.epochs = 2;
  t.model = tiny_model();
  return t;
}

}  // namespace

TEST_CASE("stratified batches: even domain shares, every case at least once") {
  std::vector<int> domains;
  for (int i = 0; i < 9; ++i) domains.push_back(0);
  for (int i = 0; i < 5; ++i) domains.push_back(1);
  for (int i = 0; i < 4; ++i) domains.push_back(2);
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const auto batches = make_batches(domains, 4, seed, true);
    std::set<int> seen;
    std::map<int, int> slots;
    for (const auto& b : batches) {
      CHECK(b.items.size() == 4);
      std::map<int, int> per;
      for (size_t k = 0; k < b.items.size(); ++k) {
        CHECK(domains[b.items[k]] == b.domains[k]);
        seen.insert(b.items[k]);
        ++per[b.domains[k]];
        ++slots[b.domains[k]];
      }
      std::set<int> in_batch(b.items.begin(), b.items.end());
      CHECK(in_batch.size() == b.items.size());
      for (int d = 0; d < 3; ++d) {
        CHECK(per[d] >= 1);
        CHECK(per[d] <= 2);
      }
    }
    CHECK(seen.size() == domains.size());
    CHECK(std::abs(slots[0] - slots[2]) <= 1 + int(batches.size()) / 3);
    CHECK(make_batches(domains, 4, seed, true).size() == batches.size());
  }
  CHECK(make_batches(domains, 4, 3, true)[0].items == make_batches(domains, 4, 3, true)[0].items);
}

TEST_CASE("unstratified batches form one permutation") {
  std::vector<int> domains{0, 0, 0, 1, 1, 1, 1};
  const auto batches = make_batches(domains, 3, 5, false);
  std::multiset<int> seen;
  for (const auto& b : batches) seen.insert(b.items.begin(), b.items.end());
  CHECK(seen.size() == domains.size());
  CHECK(std::set<int>(seen.begin(), seen.end()).size() == domains.size());
}

TEST_CASE("adam matches a hand-rolled reference") {
  nn::ParamStore<double> store;
  auto w = store.add("w", "g", {3}, {1.0, -2.0, 0.5});
  AdamSettings s{0.1, 0.9, 0.999, 1e-8};
  std::vector<double> ref{1.0, -2.0, 0.5}, m(3, 0), v(3, 0);
  for (int64_t t = 1; t <= 5; ++t) {
    store.zero_grad();
    // loss = sum(w^3 / 3) so grad = w^2
    ops::sum(ops::scale(ops::mul(ops::square(w), w), 1.0 / 3.0)).backward();
    adam_step(store.group("g"), s, t);
    for (int i = 0; i < 3; ++i) {
      const double g = ref[i] * ref[i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, double(t)));
      const double vh = v[i] / (1 - std::pow(0.999, double(t)));
      ref[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
    for (int i = 0; i < 3; ++i) CHECK(w.at(i) == doctest::Approx(ref[i]).epsilon(1e-12));
  }
  // First step moves each weight by about lr regardless of gradient scale.
  nn::ParamStore<double> s2;
  auto u = s2.add("u", "g", {1}, {0.0});
  ops::sum(ops::scale(u, 1e-3)).backward();
  adam_step(s2.group("g"), s, 1);
  CHECK(u.at(0) == doctest::Approx(-0.1).epsilon(1e-4));
  CHECK_THROWS_AS(adam_step(s2.group("g"), s, 0), Error);
}

TEST_CASE("gradient clipping rescales to the bound") {
  nn::ParamStore<double> store;
  auto a = store.add("a", "g", {2}, {0, 0});
  auto b = store.add("b", "g", {1}, {0});
  // gradients (3, 0) and (4): norm 5
  ops::sum(ops::add(ops::sum(ops::mul(a, TensorD::from({2}, {3.0, 0.0}))), ops::scale(ops::sum(b), 4.0)))
      .backward();
  double norm = 0;
  CHECK(clip_grad_norm(store.group("g"), 10.0, &norm) == 1.0);
  CHECK(norm == doctest::Approx(5.0));
  const double f = clip_grad_norm(store.group("g"), 2.5, &norm);
  CHECK(f == doctest::Approx(0.5));
  CHECK(a.grad()[0] == doctest::Approx(1.5));
  CHECK(b.grad()[0] == doctest::Approx(2.0));
  CHECK(grad_norm(store.group("g")) == doctest::Approx(2.5));
}

TEST_CASE("train config validation and json round trip") {
  auto t = tiny_train();
  t.mmd_estimator = MmdEstimator::kUnbiased;
  const auto back = train_config_from_json(train_config_to_json(t));
  CHECK(back.lr == t.lr);
  CHECK(back.mmd_estimator == MmdEstimator::kUnbiased);
  CHECK(back.model.channel_ladder == t.model.channel_ladder);
  auto bad = t;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = t;
  bad.d_update_interval = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = t;
  bad.beta1 = 1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("repeated steps on a fixed batch reduce the reconstruction loss") {
  auto cfg = tiny_train();
  TrainerState state;
  state.model = std::make_unique<VaeModel<float>>(cfg.model);
  Rng rng(3);
  std::vector<float> v(4 * 512);
  for (size_t i = 0; i < v.size(); ++i) {
    const int64_t vox = int64_t(i % 512), z = vox / 64;
    v[i] = static_cast<float>(std::tanh(0.3 * double(z) - 1.0) + 0.1 * rng.normal());
  }
  const auto x = TensorF::from({4, 1, 8, 8, 8}, v);
  const std::vector<int> domains{0, 1, 0, 1};
  const auto first = train_step(state, x, domains, cfg, 0);
  CHECK(first.disc_updated);
  CHECK_FALSE(first.breakdown.mmd_degenerate);
  StepResult last;
  for (int64_t s = 1; s < 60; ++s) last = train_step(state, x, domains, cfg, s);
  MESSAGE("recon " << first.breakdown.recon << " -> " << last.breakdown.recon);
  CHECK(last.breakdown.recon < 0.7 * first.breakdown.recon);
  CHECK(state.vae_steps == 60);
  CHECK(state.disc_steps == 30);
  CHECK(std::isfinite(last.breakdown.total));
  CHECK(last.vae_clip_factor <= 1.0);
}

TEST_CASE("a one-domain batch flags the MMD as degenerate") {
  auto cfg = tiny_train();
  TrainerState state;
  state.model = std::make_unique<VaeModel<float>>(cfg.model);
  const auto x = TensorF::full({2, 1, 8, 8, 8}, 0.2f);
  const auto r = train_step(state, x, {0, 0}, cfg, 1);
  CHECK(r.breakdown.mmd_degenerate);
  CHECK(r.breakdown.mmd == 0.0);
  CHECK_FALSE(r.disc_updated);
}

TEST_CASE("train_vae end to end: logs, best epoch, checkpoints, determinism") {
  PhantomSpec spec;
  spec.shape = {16, 16, 16};
  spec.styles = {preset_style("miliary"), preset_style("lung-primary")};
  spec.cases_per_domain = 8;
  spec.seed = 4;
  const fs::path root = fs::temp_directory_path() / "vaemmd_test_trainer";
  fs::remove_all(root);
  const auto manifest = generate_dataset(spec, root / "data");
  auto cfg = tiny_train();
  cfg.seed = 9;

  const auto r = train_vae(manifest, cfg, root / "run1");
  CHECK(r.epoch_train_mmd.size() == 2);
  CHECK(r.best_epoch >= 0);
  CHECK(r.best_epoch < 2);
  CHECK(fs::exists(root / "run1" / "best.ckpt"));
  CHECK(fs::exists(root / "run1" / "last.ckpt"));
  CHECK(fs::exists(root / "run1" / "train_log.jsonl"));
  int epochs = 0;
  for (const auto& rec : r.log)
    if (rec.at("type") == "epoch") ++epochs;
  CHECK(epochs == 2);

  const auto again = train_vae(manifest, cfg, root / "run2");
  CHECK(again.best.serialize() == r.best.serialize());
  CHECK(Checkpoint::load(root / "run1" / "last.ckpt").serialize() ==
        Checkpoint::load(root / "run2" / "last.ckpt").serialize());

  // Reloaded weights reproduce the snapshot's validation loss.
  const auto model = load_vae(r.best);
  const auto val = load_split(manifest, Split::kVal, cfg.model.input_size, false);
  CHECK(evaluate_loss(*model, val, cfg).total == doctest::Approx(r.best_val_total).epsilon(1e-6));

  DatasetManifest no_val = manifest;
  for (auto& c : no_val.cases)
    if (c.split == Split::kVal) c.split = Split::kTrain;
  CHECK_THROWS_AS(train_vae(no_val, cfg), Error);
}
