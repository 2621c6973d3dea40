#include "vaemmd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "binio.hpp"

namespace vaemmd {

using nlohmann::json;
using ops::Mode;
namespace fs = std::filesystem;

void TrainConfig::validate() const {
  require(lr > 0, ErrorCode::kConfig, "lr must be > 0");
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, ErrorCode::kConfig, "Adam betas must be in [0, 1)");
  require(eps > 0, ErrorCode::kConfig, "Adam eps must be > 0");
  require(batch_size >= 1, ErrorCode::kConfig, "batch_size must be >= 1");
  require(epochs >= 1, ErrorCode::kConfig, "epochs must be >= 1");
  require(grad_clip_norm > 0, ErrorCode::kConfig, "grad_clip_norm must be > 0");
  require(d_update_interval >= 1, ErrorCode::kConfig, "d_update_interval must be >= 1");
  require(augment_options.flip_p >= 0 && augment_options.flip_p <= 1 && augment_options.rot90_p >= 0 &&
              augment_options.rot90_p <= 1,
          ErrorCode::kConfig, "augmentation probabilities must be in [0, 1]");
  weights.validate();
  model.validate();
}

json train_config_to_json(const TrainConfig& c) {
  return json{{"lr", c.lr},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"eps", c.eps},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"grad_clip_norm", c.grad_clip_norm},
              {"d_update_interval", c.d_update_interval},
              {"stratified", c.stratified},
              {"augment", c.augment},
              {"flip_p", c.augment_options.flip_p},
              {"rot90_p", c.augment_options.rot90_p},
              {"validation_includes_adv", c.validation_includes_adv},
              {"mmd_estimator", c.mmd_estimator == MmdEstimator::kBiased ? "biased" : "unbiased"},
              {"seed", c.seed},
              {"weights", loss_weights_to_json(c.weights)},
              {"model", vae_config_to_json(c.model)}};
}

TrainConfig train_config_from_json(const json& doc) {
  TrainConfig c;
  try {
    c.lr = doc.value("lr", c.lr);
    c.beta1 = doc.value("beta1", c.beta1);
    c.beta2 = doc.value("beta2", c.beta2);
    c.eps = doc.value("eps", c.eps);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.epochs = doc.value("epochs", c.epochs);
    c.grad_clip_norm = doc.value("grad_clip_norm", c.grad_clip_norm);
    c.d_update_interval = doc.value("d_update_interval", c.d_update_interval);
    c.stratified = doc.value("stratified", c.stratified);
    c.augment = doc.value("augment", c.augment);
    c.augment_options.flip_p = doc.value("flip_p", c.augment_options.flip_p);
    c.augment_options.rot90_p = doc.value("rot90_p", c.augment_options.rot90_p);
    c.validation_includes_adv = doc.value("validation_includes_adv", c.validation_includes_adv);
    const std::string est = doc.value("mmd_estimator", std::string("biased"));
    require(est == "biased" || est == "unbiased", ErrorCode::kConfig, "mmd_estimator must be biased|unbiased");
    c.mmd_estimator = est == "biased" ? MmdEstimator::kBiased : MmdEstimator::kUnbiased;
    c.seed = doc.value("seed", c.seed);
    if (doc.contains("weights")) c.weights = loss_weights_from_json(doc.at("weights"));
    if (doc.contains("model")) c.model = vae_config_from_json(doc.at("model"));
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, std::string("malformed training config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<StratifiedBatch> make_batches(const std::vector<int>& case_domains, int batch_size, uint64_t seed,
                                          bool stratified) {
  require(!case_domains.empty(), ErrorCode::kInvalidArgument, "make_batches: no training cases");
  require(batch_size >= 1, ErrorCode::kInvalidArgument, "make_batches: batch_size must be >= 1");
  Rng rng(seed);
  auto shuffle = [&rng](std::vector<int>& v) {
    for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
  };
  std::vector<StratifiedBatch> out;

  if (!stratified) {
    std::vector<int> order(case_domains.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    shuffle(order);
    for (size_t i = 0; i < order.size(); i += static_cast<size_t>(batch_size)) {
      StratifiedBatch b;
      for (size_t j = i; j < std::min(order.size(), i + batch_size); ++j) {
        b.items.push_back(order[j]);
        b.domains.push_back(case_domains[order[j]]);
      }
      out.push_back(std::move(b));
    }
    return out;
  }

  std::map<int, std::vector<int>> pools;
  for (size_t i = 0; i < case_domains.size(); ++i) pools[case_domains[i]].push_back(static_cast<int>(i));
  const int n_domains = static_cast<int>(pools.size());
  require(batch_size >= n_domains, ErrorCode::kInvalidArgument,
          "stratified batching needs batch_size (" + std::to_string(batch_size) + ") >= number of domains (" +
              std::to_string(n_domains) + ")");
  struct Cursor {
    int domain;
    std::vector<int> order;
    size_t pos = 0;
    bool covered = false;
  };
  std::vector<Cursor> cursors;
  for (auto& [d, items] : pools) {
    Cursor c{d, items};
    shuffle(c.order);
    cursors.push_back(std::move(c));
  }
  const int base = batch_size / n_domains, extra = batch_size % n_domains;
  for (int k = 0;; ++k) {
    bool all_covered = true;
    for (const auto& c : cursors) all_covered = all_covered && c.covered;
    if (all_covered) break;
    StratifiedBatch b;
    for (int j = 0; j < n_domains; ++j) {
      auto& c = cursors[j];
      const int rel = ((j - k) % n_domains + n_domains) % n_domains;
      const int quota = base + (rel < extra ? 1 : 0);
      for (int q = 0; q < quota; ++q) {
        if (c.pos == c.order.size()) {
          c.covered = true;
          shuffle(c.order);
          c.pos = 0;
          // Keep cases already in this batch out of the refill when the pool allows it.
          std::stable_partition(c.order.begin(), c.order.end(), [&](int item) {
            return std::find(b.items.begin(), b.items.end(), item) == b.items.end();
          });
        }
        b.items.push_back(c.order[c.pos++]);
        b.domains.push_back(c.domain);
        if (c.pos == c.order.size()) c.covered = true;
      }
    }
    out.push_back(std::move(b));
  }
  return out;
}

template <typename T>
void adam_step(const std::vector<nn::Parameter<T>*>& params, const AdamSettings& s, int64_t t) {
  require(t >= 1, ErrorCode::kInvalidArgument, "adam_step: step count must be >= 1");
  const double c1 = 1.0 - std::pow(s.beta1, double(t));
  const double c2 = 1.0 - std::pow(s.beta2, double(t));
  for (auto* p : params) {
    if (!p->value.requires_grad()) continue;
    require(p->value.has_grad(), ErrorCode::kState, "adam_step: parameter " + p->name + " has no gradient");
    auto w = p->value.mutable_data();
    const auto g = p->value.grad();
    for (size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double m = s.beta1 * p->m[i] + (1 - s.beta1) * gi;
      const double v = s.beta2 * p->v[i] + (1 - s.beta2) * gi * gi;
      p->m[i] = static_cast<T>(m);
      p->v[i] = static_cast<T>(v);
      w[i] = static_cast<T>(w[i] - s.lr * (m / c1) / (std::sqrt(v / c2) + s.eps));
    }
  }
}

template <typename T>
double grad_norm(const std::vector<nn::Parameter<T>*>& params) {
  double acc = 0;
  for (auto* p : params)
    if (p->value.has_grad())
      for (T g : p->value.grad()) acc += double(g) * double(g);
  return std::sqrt(acc);
}

template <typename T>
double clip_grad_norm(const std::vector<nn::Parameter<T>*>& params, double max_norm, double* norm_out) {
  const double norm = grad_norm(params);
  if (norm_out) *norm_out = norm;
  if (!(norm > max_norm)) return 1.0;
  const double factor = max_norm / norm;
  for (auto* p : params)
    if (p->value.has_grad())
      for (T& g : p->value.mutable_grad()) g = static_cast<T>(g * factor);
  return factor;
}

namespace {

AdamSettings adam_of(const TrainConfig& c) { return {c.lr, c.beta1, c.beta2, c.eps}; }

void zero_group(std::vector<nn::Parameter<float>*>& params) {
  for (auto* p : params) p->value.zero_grad();
}

}  // namespace

StepResult train_step(TrainerState& state, const Tensor<float>& x, const std::vector<int>& domains,
                      const TrainConfig& config, int64_t step_index) {
  auto& model = *state.model;
  auto& store = model.store();
  auto vae_params = store.group("vae");
  auto disc_params = store.group("disc");
  const auto& w = config.weights;
  StepResult result;

  // Generator / VAE update. Discriminator weights are frozen so no
  // gradient reaches them through the adversarial term.
  store.set_group_trainable("disc", false);
  zero_group(vae_params);
  const Rng rng = Rng(config.seed).split(0xA11).split(static_cast<uint64_t>(step_index));
  const auto out = model.forward(x, Mode::kTrain, rng);
  const auto x_hat_values = out.x_hat.detach();
  LossTerms<float> terms;
  terms.l2 = l2_loss(x, out.x_hat);
  terms.l1 = l1_loss(x, out.x_hat);
  terms.ssim = ssim3d(x, out.x_hat);
  terms.kl = kl_divergence(out.latent);
  bool degenerate = false;
  terms.mmd = pairwise_domain_mmd(out.z, domains, w.kernel_sigmas, config.mmd_estimator, &degenerate);
  terms.adv = adversarial_g_loss(model.discriminate(out.x_hat));
  auto total = total_loss(terms, w);
  total.breakdown.mmd_degenerate = degenerate;
  total.total.backward();
  store.set_group_trainable("disc", true);
  result.vae_clip_factor = clip_grad_norm(vae_params, config.grad_clip_norm, &result.vae_grad_norm);
  adam_step(vae_params, adam_of(config), ++state.vae_steps);
  result.breakdown = total.breakdown;

  if (step_index % config.d_update_interval == 0) {
    zero_group(disc_params);
    auto d_loss = adversarial_d_loss(model.discriminate(x.detach()), model.discriminate(x_hat_values));
    result.disc_loss = d_loss.item();
    d_loss.backward();
    clip_grad_norm(disc_params, config.grad_clip_norm);
    adam_step(disc_params, adam_of(config), ++state.disc_steps);
    result.disc_updated = true;
  }
  return result;
}

LossBreakdown evaluate_loss(const VaeModel<float>& model, const std::vector<PreparedCase>& cases,
                            const TrainConfig& config) {
  require(!cases.empty(), ErrorCode::kValidation, "evaluate_loss: no cases");
  NoGradGuard guard;
  std::vector<const Image*> images;
  std::vector<int> domains;
  for (const auto& c : cases) {
    images.push_back(&c.image);
    domains.push_back(c.domain);
  }
  const auto x = stack_images<float>(images);
  const auto out = model.forward(x, Mode::kEval, Rng(0));
  LossTerms<float> terms;
  terms.l2 = l2_loss(x, out.x_hat);
  terms.l1 = l1_loss(x, out.x_hat);
  terms.ssim = ssim3d(x, out.x_hat);
  terms.kl = kl_divergence(out.latent);
  bool degenerate = false;
  terms.mmd = pairwise_domain_mmd(out.z, domains, config.weights.kernel_sigmas, config.mmd_estimator, &degenerate);
  terms.adv = adversarial_g_loss(model.discriminate(out.x_hat));
  LossWeights w = config.weights;
  if (!config.validation_includes_adv) w.adv = 0;
  auto total = total_loss(terms, w);
  total.breakdown.mmd_degenerate = degenerate;
  return total.breakdown;
}

Checkpoint snapshot_vae(const TrainerState& state, const TrainConfig& config, int epoch, double val_total) {
  Checkpoint ckpt;
  ckpt.dtype = "f32";
  export_store(state.model->store(), ckpt, true);
  ckpt.meta = json{{"kind", "vae"},
                   {"epoch", epoch},
                   {"validation_total_loss", val_total},
                   {"vae_steps", state.vae_steps},
                   {"disc_steps", state.disc_steps},
                   {"config", train_config_to_json(config)}};
  return ckpt;
}

std::unique_ptr<VaeModel<float>> load_vae(const Checkpoint& ckpt) {
  require(ckpt.meta.value("kind", std::string()) == "vae", ErrorCode::kValidation,
          "checkpoint is not a VAE checkpoint");
  const auto config = train_config_from_json(ckpt.meta.at("config"));
  auto model = std::make_unique<VaeModel<float>>(config.model);
  import_store(model->store(), ckpt, false);
  return model;
}

TrainResult train_vae(const DatasetManifest& manifest, const TrainConfig& config, const fs::path& out_dir) {
  config.validate();
  const int size = config.model.input_size;
  const auto domains = manifest.domains();
  require(!domains.empty(), ErrorCode::kValidation, "manifest has no cases");
  for (const auto& d : domains) {
    require(!manifest.select(Split::kTrain, d).empty(), ErrorCode::kValidation, "domain " + d + " has no train cases");
    require(!manifest.select(Split::kVal, d).empty(), ErrorCode::kValidation,
            "domain " + d + " has no validation cases (missing validation split)");
  }
  const auto train = load_split(manifest, Split::kTrain, size, false);
  const auto val = load_split(manifest, Split::kVal, size, false);
  std::vector<int> train_domains;
  for (const auto& c : train) train_domains.push_back(c.domain);

  TrainerState state;
  state.model = std::make_unique<VaeModel<float>>(config.model);
  TrainResult result;
  result.best_val_total = std::numeric_limits<double>::infinity();
  const Rng root(config.seed);
  int64_t step = 0;
  double last_val_total = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto batches =
        make_batches(train_domains, config.batch_size, root.split(0xBA7C).split(epoch).next_u64(), config.stratified);
    double mmd_sum = 0;
    for (const auto& batch : batches) {
      std::vector<Image> views;
      for (int item : batch.items) {
        if (config.augment) {
          const uint64_t aug_seed = root.split(0xA06).split(epoch).split(item).next_u64();
          views.push_back(preprocess::augment(train[item].image, nullptr, config.augment_options, aug_seed).image);
        } else {
          views.push_back(train[item].image);
        }
      }
      std::vector<const Image*> ptrs;
      for (const auto& v : views) ptrs.push_back(&v);
      const auto r = train_step(state, stack_images<float>(ptrs), batch.domains, config, step);
      mmd_sum += r.breakdown.mmd;
      json rec = r.breakdown.to_json();
      rec["type"] = "step";
      rec["epoch"] = epoch;
      rec["step"] = step;
      rec["grad_norm"] = r.vae_grad_norm;
      rec["clip_factor"] = r.vae_clip_factor;
      if (r.disc_updated) rec["disc_loss"] = r.disc_loss;
      result.log.push_back(std::move(rec));
      ++step;
    }
    result.epoch_train_mmd.push_back(mmd_sum / double(batches.size()));
    const auto v = evaluate_loss(*state.model, val, config);
    json rec{{"type", "epoch"}, {"epoch", epoch}, {"train_mmd_mean", result.epoch_train_mmd.back()}};
    rec["val"] = v.to_json();
    result.log.push_back(std::move(rec));
    last_val_total = v.total;
    require(std::isfinite(v.total), ErrorCode::kNumerical,
            "validation loss became non-finite at epoch " + std::to_string(epoch));
    if (v.total < result.best_val_total) {
      result.best_val_total = v.total;
      result.best_epoch = epoch;
      result.best = snapshot_vae(state, config, epoch, v.total);
    }
  }

  if (!out_dir.empty()) {
    std::string lines;
    for (const auto& rec : result.log) lines += rec.dump() + "\n";
    binio::write_file(out_dir / "train_log.jsonl", lines);
    result.best.save(out_dir / "best.ckpt");
    snapshot_vae(state, config, config.epochs - 1, last_val_total).save(out_dir / "last.ckpt");
  }
  return result;
}

template void adam_step(const std::vector<nn::Parameter<float>*>&, const AdamSettings&, int64_t);
template void adam_step(const std::vector<nn::Parameter<double>*>&, const AdamSettings&, int64_t);
template double clip_grad_norm(const std::vector<nn::Parameter<float>*>&, double, double*);
template double clip_grad_norm(const std::vector<nn::Parameter<double>*>&, double, double*);
template double grad_norm(const std::vector<nn::Parameter<float>*>&);
template double grad_norm(const std::vector<nn::Parameter<double>*>&);

}  // namespace vaemmd
