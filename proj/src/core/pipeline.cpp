#include "vaemmd/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "binio.hpp"
#include "vaemmd/losses.hpp"
#include "vaemmd/metrics.hpp"

namespace vaemmd::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

void EvalOptions::validate() const {
  require(connectivity == 6 || connectivity == 18 || connectivity == 26, ErrorCode::kConfig,
          "eval.connectivity must be 6, 18 or 26");
  require(tolerance_mm >= 0 && std::isfinite(tolerance_mm), ErrorCode::kConfig, "eval.tolerance_mm must be >= 0");
  require(classifier_folds >= 2, ErrorCode::kConfig, "eval.classifier_folds must be >= 2");
  require(classifier.iters > 0 && classifier.lr > 0 && classifier.l2 >= 0, ErrorCode::kConfig,
          "eval classifier settings out of range");
  parse_embed_method(embed_method);
  parse_split(recon_split);
}

json eval_options_to_json(const EvalOptions& e) {
  return json{{"connectivity", e.connectivity},
              {"tolerance_mm", e.tolerance_mm},
              {"classifier_folds", e.classifier_folds},
              {"classifier_l2", e.classifier.l2},
              {"classifier_lr", e.classifier.lr},
              {"classifier_iters", e.classifier.iters},
              {"embed_method", e.embed_method},
              {"recon_split", e.recon_split}};
}

EvalOptions eval_options_from_json(const json& doc) {
  EvalOptions e;
  try {
    e.connectivity = doc.value("connectivity", e.connectivity);
    e.tolerance_mm = doc.value("tolerance_mm", e.tolerance_mm);
    e.classifier_folds = doc.value("classifier_folds", e.classifier_folds);
    e.classifier.l2 = doc.value("classifier_l2", e.classifier.l2);
    e.classifier.lr = doc.value("classifier_lr", e.classifier.lr);
    e.classifier.iters = doc.value("classifier_iters", e.classifier.iters);
    e.embed_method = doc.value("embed_method", e.embed_method);
    e.recon_split = doc.value("recon_split", e.recon_split);
  } catch (const json::exception& ex) {
    fail(ErrorCode::kConfig, std::string("eval options: ") + ex.what());
  }
  return e;
}

void ExperimentConfig::validate() const {
  try {
    phantoms.validate();
    train.validate();
    unet.validate();
    eval.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kConfig, e.what());
  }
  require(train.model.input_size == unet.input_size, ErrorCode::kConfig,
          "vae and segmenter input sizes differ");
  require(phantoms.styles.size() >= 2, ErrorCode::kConfig, "an experiment needs at least two domains");
  for (const auto& d : unet.train_domains) {
    const bool known = std::any_of(phantoms.styles.begin(), phantoms.styles.end(),
                                   [&](const DomainStyle& s) { return s.domain_id == d; });
    require(known, ErrorCode::kConfig, "segmenter train domain '" + d + "' is not a phantom domain");
  }
}

json experiment_config_to_json(const ExperimentConfig& c) {
  return json{{"seed", c.seed},
              {"phantoms", phantom_spec_to_json(c.phantoms)},
              {"train", train_config_to_json(c.train)},
              {"unet", unet_config_to_json(c.unet)},
              {"eval", eval_options_to_json(c.eval)}};
}

ExperimentConfig experiment_config_from_json(const json& doc, const fs::path& base_dir) {
  require(doc.is_object(), ErrorCode::kConfig, "experiment config must be a JSON object");
  for (const char* key : {"phantoms", "train", "unet"})
    require(doc.contains(key), ErrorCode::kConfig, std::string("experiment config lacks '") + key + "'");
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    static const std::vector<std::string> known{"seed", "phantoms", "train", "unet", "eval", "description"};
    require(std::find(known.begin(), known.end(), it.key()) != known.end(), ErrorCode::kConfig,
            "experiment config: unknown key '" + it.key() + "'");
  }
  ExperimentConfig c;
  try {
    c.phantoms = phantom_spec_from_json(doc.at("phantoms"), base_dir);
    c.train = train_config_from_json(doc.at("train"));
    c.unet = unet_config_from_json(doc.at("unet"));
    if (doc.contains("eval")) c.eval = eval_options_from_json(doc.at("eval"));
    if (doc.contains("seed")) {
      c.seed = doc.at("seed").get<uint64_t>();
      c.phantoms.seed = c.seed;
      c.train.seed = c.seed;
      c.train.model.seed = c.seed;
      c.unet.seed = c.seed;
    } else {
      c.seed = c.train.seed;
    }
  } catch (const Error& e) {
    fail(ErrorCode::kConfig, e.what());
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, std::string("experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  const std::string text = binio::read_file(path);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, path.string() + ": " + e.what());
  }
  return experiment_config_from_json(doc, fs::absolute(path).parent_path());
}

std::string config_hash(const ExperimentConfig& c) {
  return binio::hex64(binio::fnv1a64(experiment_config_to_json(c).dump()));
}

void write_run_metadata(const fs::path& dir, const std::string& command, const json& inputs) {
  const json meta{{"command", command}, {"inputs", inputs}, {"version", VAEMMD_VERSION}};
  binio::write_file(dir / "run_metadata.json", meta.dump(2) + "\n");
}

namespace {

json config_inputs(const ExperimentConfig& c) {
  return json{{"config_hash", config_hash(c)}, {"seed", c.seed}, {"config", experiment_config_to_json(c)}};
}

json file_ref(const fs::path& p) {
  return json{{"file", p.filename().generic_string()}, {"fnv1a64", binio::hex64(binio::fnv1a64(binio::read_file(p)))}};
}

void write_json(const fs::path& p, const json& doc) { binio::write_file(p, doc.dump(2) + "\n"); }

DatasetManifest open_manifest(const fs::path& path) {
  auto m = load_manifest(path);
  validate_manifest(m, true);
  return m;
}

Checkpoint open_checkpoint(const fs::path& path) { return Checkpoint::load(path); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string pad(const std::string& s, size_t w, bool left = false) {
  if (s.size() >= w) return s;
  return left ? s + std::string(w - s.size(), ' ') : std::string(w - s.size(), ' ') + s;
}

int domain_index(const std::vector<std::string>& domains, const std::string& id) {
  return static_cast<int>(std::find(domains.begin(), domains.end(), id) - domains.begin());
}

Eigen::MatrixXd latent_means(const VaeModel<float>& vae, const DatasetManifest& m) {
  NoGradGuard guard;
  const int size = vae.config().input_size;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(m.cases.size()), vae.config().latent_dim);
  for (size_t i = 0; i < m.cases.size(); ++i) {
    const Image prepared = prepare_image(read_image(m.cases[i].image_path), size);
    const auto enc = vae.encode(stack_images<float>({&prepared}), ops::Mode::kEval, Rng(0));
    const auto mu = enc.latent.mu.data();
    for (int j = 0; j < vae.config().latent_dim; ++j) out(static_cast<Eigen::Index>(i), j) = mu[j];
  }
  require(out.allFinite(), ErrorCode::kNumerical, "latent means are not finite");
  return out;
}

Eigen::MatrixXd raw_feature_matrix(const DatasetManifest& m) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(m.cases.size()), 2);
  for (size_t i = 0; i < m.cases.size(); ++i) {
    const auto f = raw_features(read_image(m.cases[i].image_path));
    out(static_cast<Eigen::Index>(i), 0) = f[0];
    out(static_cast<Eigen::Index>(i), 1) = f[1];
  }
  return out;
}

std::vector<int> case_labels(const DatasetManifest& m) {
  const auto domains = m.domains();
  std::vector<int> labels;
  for (const auto& c : m.cases) labels.push_back(domain_index(domains, c.domain_id));
  return labels;
}

std::string seg_table(const std::vector<std::pair<std::string, metrics::CohortMetrics>>& rows, size_t label_width) {
  std::ostringstream os;
  os << pad("", label_width, true);
  for (const char* h : {"Sens", "Prec", "F1", "F2", "Dice", "sDice", "HD95", "n"}) os << pad(h, 9);
  os << "\n";
  for (const auto& [label, c] : rows) {
    os << pad(label, label_width, true);
    for (double v : {c.sensitivity, c.precision, c.f1, c.f2, c.dice, c.sdice}) os << pad(fmt("%.3f", v), 9);
    os << pad(c.hd95_median_mm ? fmt("%.2f", *c.hd95_median_mm) : std::string("undef"), 9);
    os << pad(std::to_string(c.cases), 9) << "\n";
  }
  return os.str();
}

}  // namespace

std::vector<double> raw_features(const Image& raw) {
  require(!raw.voxels.empty(), ErrorCode::kInvalidArgument, "raw_features: empty image");
  double sum = 0;
  for (float v : raw.voxels) sum += v;
  const double mean = sum / double(raw.voxels.size());
  double ss = 0;
  for (float v : raw.voxels) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / double(raw.voxels.size()))};
}

json cmd_gen_phantoms(const ExperimentConfig& config, const fs::path& out) {
  config.validate();
  const auto manifest = generate_dataset(config.phantoms, out);
  write_run_metadata(out, "gen-phantoms", config_inputs(config));
  int counts[3] = {0, 0, 0};
  for (const auto& c : manifest.cases) ++counts[static_cast<int>(c.split)];
  return json{{"manifest", (out / "manifest.json").generic_string()},
              {"cases", manifest.cases.size()},
              {"train", counts[0]},
              {"val", counts[1]},
              {"test", counts[2]}};
}

json cmd_train_vae(const ExperimentConfig& config, const fs::path& manifest_path, const fs::path& out) {
  config.validate();
  const auto manifest = open_manifest(manifest_path);
  const auto result = train_vae(manifest, config.train, out);
  json summary{{"best_epoch", result.best_epoch},
               {"best_val_total", result.best_val_total},
               {"epoch_train_mmd", result.epoch_train_mmd},
               {"checkpoint", "best.ckpt"}};
  write_json(out / "train_summary.json", summary);
  json inputs = config_inputs(config);
  inputs["manifest"] = file_ref(manifest_path);
  write_run_metadata(out, "train-vae", inputs);
  return summary;
}

json cmd_reconstruct(const fs::path& checkpoint, const fs::path& manifest_path, const fs::path& out,
                     const std::string& split_name_) {
  const Split split = parse_split(split_name_);
  const auto manifest = open_manifest(manifest_path);
  const auto vae = load_vae(open_checkpoint(checkpoint));
  const int size = vae->config().input_size;
  const auto cases = manifest.select(split);
  require(!cases.empty(), ErrorCode::kValidation, "no cases in the " + split_name_ + " split");

  json rows = json::array();
  std::ostringstream table;
  table << pad("case", 16, true) << pad("domain", 16, true) << pad("PSNR_dB", 10) << pad("MSE", 12) << "\n";
  double psnr_sum = 0, mse_sum = 0;
  for (const CaseEntry* c : cases) {
    const Image prepared = prepare_image(read_image(c->image_path), size);
    const Image recon = reconstruct(*vae, prepared);
    write_volume(recon, out / "recon" / (c->case_id + "_recon.rvol"));
    const double e = mse(prepared.voxels, recon.voxels, true);
    const double p = psnr_from_mse(e);
    psnr_sum += p;
    mse_sum += e;
    rows.push_back(json{{"case_id", c->case_id}, {"domain_id", c->domain_id}, {"psnr_db", p}, {"mse", e}});
    table << pad(c->case_id, 16, true) << pad(c->domain_id, 16, true) << pad(fmt("%.2f", p), 10)
          << pad(fmt("%.3e", e), 12) << "\n";
  }
  const double n = double(cases.size());
  table << pad("mean", 32, true) << pad(fmt("%.2f", psnr_sum / n), 10) << pad(fmt("%.3e", mse_sum / n), 12) << "\n";
  const json report{{"split", split_name_},
                    {"convention", "both volumes rescaled from [-1,1] to [0,1]; peak 1"},
                    {"cases", rows},
                    {"mean_psnr_db", psnr_sum / n},
                    {"mean_mse", mse_sum / n}};
  write_json(out / "reconstruction.json", report);
  binio::write_file(out / "reconstruction.txt", table.str());
  write_run_metadata(out, "reconstruct",
                     json{{"checkpoint", file_ref(checkpoint)}, {"manifest", file_ref(manifest_path)},
                          {"split", split_name_}});
  return json{{"mean_psnr_db", psnr_sum / n}, {"mean_mse", mse_sum / n}, {"cases", cases.size()}};
}

json cmd_embed(const fs::path& checkpoint, const fs::path& manifest_path, EmbedMethod method, const fs::path& out,
               uint64_t seed) {
  const auto manifest = open_manifest(manifest_path);
  const auto vae = load_vae(open_checkpoint(checkpoint));
  require(manifest.cases.size() >= 3, ErrorCode::kValidation, "embedding needs at least three cases");
  const auto before = embed_project(raw_feature_matrix(manifest), method, 2, seed);
  const auto after = embed_project(latent_means(*vae, manifest), method, 2, seed);
  json points = json::array();
  std::ostringstream csv;
  csv << "case_id,domain_id,stage,x,y\n";
  for (const auto& [stage, coords] : {std::pair{"before", &before}, std::pair{"after", &after}}) {
    for (size_t i = 0; i < manifest.cases.size(); ++i) {
      const auto& c = manifest.cases[i];
      const double x = (*coords)(static_cast<Eigen::Index>(i), 0), y = (*coords)(static_cast<Eigen::Index>(i), 1);
      points.push_back(json{{"case_id", c.case_id}, {"domain_id", c.domain_id}, {"stage", stage}, {"x", x}, {"y", y}});
      csv << c.case_id << "," << c.domain_id << "," << stage << "," << fmt("%.9g", x) << "," << fmt("%.9g", y)
          << "\n";
    }
  }
  write_json(out / "embedding.json", json{{"method", embed_method_name(method)},
                                          {"before_features", "raw volume mean, std"},
                                          {"after_features", "latent mu"},
                                          {"points", points}});
  binio::write_file(out / "embedding.csv", csv.str());
  write_run_metadata(out, "embed",
                     json{{"checkpoint", file_ref(checkpoint)}, {"manifest", file_ref(manifest_path)},
                          {"method", embed_method_name(method)}, {"seed", seed}});
  return json{{"points", manifest.cases.size()}, {"method", embed_method_name(method)}};
}

json cmd_eval_domain(const fs::path& checkpoint, const fs::path& manifest_path, const fs::path& out,
                     const EvalOptions& options, uint64_t seed) {
  options.validate();
  const auto manifest = open_manifest(manifest_path);
  const auto vae = load_vae(open_checkpoint(checkpoint));
  const auto domains = manifest.domains();
  require(domains.size() >= 2, ErrorCode::kValidation, "eval-domain needs at least two domains");
  const auto labels = case_labels(manifest);

  ClassifierOptions co;
  co.fit = options.classifier;
  co.folds = options.classifier_folds;
  co.seed = seed;
  co.features = "raw volume mean, std";
  const auto before = logistic_domain_classifier(raw_feature_matrix(manifest), labels, domains, co);
  co.features = "latent mu";
  const auto after = logistic_domain_classifier(latent_means(*vae, manifest), labels, domains, co);

  const json report{{"protocol", "stratified k-fold cross-validation over all cases"},
                    {"before", before.to_json()},
                    {"after", after.to_json()}};
  write_json(out / "domain_report.json", report);
  binio::write_file(out / "domain_report.txt", "before\n" + before.render() + "\nafter\n" + after.render());
  write_run_metadata(out, "eval-domain",
                     json{{"checkpoint", file_ref(checkpoint)}, {"manifest", file_ref(manifest_path)},
                          {"eval", eval_options_to_json(options)}, {"seed", seed}});
  return json{{"before_accuracy", before.accuracy}, {"after_accuracy", after.accuracy}};
}

json cmd_train_seg(const ExperimentConfig& config, const fs::path& manifest_path, SegVariant variant,
                   const fs::path& vae_checkpoint, const fs::path& out) {
  config.validate();
  const auto manifest = open_manifest(manifest_path);
  if (variant == SegVariant::kVae) {
    require(!vae_checkpoint.empty(), ErrorCode::kConfig, "the vae variant requires --vae-checkpoint");
    require(fs::exists(vae_checkpoint), ErrorCode::kMissingArtifact,
            "VAE checkpoint not found: " + vae_checkpoint.string());
    load_vae(open_checkpoint(vae_checkpoint));
  }
  const auto result = train_segmenter(manifest, variant, config.unet, vae_checkpoint, out);
  const json summary{{"variant", variant_name(variant)},
                     {"best_epoch", result.best_epoch},
                     {"best_val_loss", result.best_val_loss},
                     {"checkpoint", "seg.ckpt"}};
  write_json(out / "seg_summary.json", summary);
  json inputs = config_inputs(config);
  inputs["manifest"] = file_ref(manifest_path);
  inputs["variant"] = variant_name(variant);
  if (variant == SegVariant::kVae) inputs["vae_checkpoint"] = file_ref(vae_checkpoint);
  write_run_metadata(out, "train-seg", inputs);
  return summary;
}

json cmd_eval_seg(const fs::path& seg_checkpoint, const fs::path& manifest_path, const fs::path& out,
                  const EvalOptions& options) {
  options.validate();
  const auto manifest = open_manifest(manifest_path);
  const auto ckpt = open_checkpoint(seg_checkpoint);
  const auto net = load_unet(ckpt);
  const SegInputPipeline input(ckpt, seg_checkpoint);
  const auto cases = manifest.select(Split::kTest);
  require(!cases.empty(), ErrorCode::kValidation, "no test cases to evaluate");
  for (const CaseEntry* c : cases)
    require(!c->mask_path.empty(), ErrorCode::kValidation, "test case " + c->case_id + " has no mask");

  const int size = net->config().input_size;
  std::vector<metrics::CaseMetrics> all;
  for (const CaseEntry* c : cases) {
    const Mask gt = prepare_mask(read_mask(c->mask_path), size);
    const Mask pred = predict_mask(*net, input(read_image(c->image_path)));
    write_volume(pred, out / "preds" / (c->case_id + "_pred.rvol"));
    auto m = metrics::evaluate_case(gt, pred, options.tolerance_mm, options.connectivity);
    m.case_id = c->case_id;
    m.domain_id = c->domain_id;
    all.push_back(std::move(m));
  }

  std::vector<std::pair<std::string, metrics::CohortMetrics>> rows;
  json per_domain = json::object();
  for (const auto& d : manifest.domains()) {
    std::vector<metrics::CaseMetrics> sub;
    for (const auto& m : all)
      if (m.domain_id == d) sub.push_back(m);
    if (sub.empty()) continue;
    const auto agg = metrics::aggregate_cases(sub);
    per_domain[d] = metrics::to_json(agg);
    rows.emplace_back(d, agg);
  }
  const auto cohort = metrics::aggregate_cases(all);
  rows.emplace_back("all", cohort);
  json case_rows = json::array();
  for (const auto& m : all) case_rows.push_back(metrics::to_json(m));
  const std::string variant = ckpt.meta.value("variant", std::string("raw"));
  const json report{{"variant", variant},
                    {"connectivity", options.connectivity},
                    {"tolerance_mm", options.tolerance_mm},
                    {"cases", case_rows},
                    {"per_domain", per_domain},
                    {"cohort", metrics::to_json(cohort)}};
  write_json(out / "seg_report.json", report);
  binio::write_file(out / "seg_report.txt", "variant: " + variant + "\n" + seg_table(rows, 16));
  write_run_metadata(out, "eval-seg",
                     json{{"seg_checkpoint", file_ref(seg_checkpoint)}, {"manifest", file_ref(manifest_path)},
                          {"eval", eval_options_to_json(options)}});
  return report;
}

json cmd_reproduce(const ExperimentConfig& config, const fs::path& out,
                   const std::function<void(const std::string&)>& on_stage) {
  config.validate();
  const fs::path manifest = out / "phantoms" / "manifest.json";
  const fs::path vae_ckpt = out / "vae" / "best.ckpt";
  auto done = [&](const std::string& stage) {
    if (on_stage) on_stage(stage);
  };
  json summary = json::object();
  summary["phantoms"] = cmd_gen_phantoms(config, out / "phantoms");
  done("phantoms");
  summary["vae"] = cmd_train_vae(config, manifest, out / "vae");
  done("vae");
  summary["reconstruct"] = cmd_reconstruct(vae_ckpt, manifest, out / "reconstruct", config.eval.recon_split);
  done("reconstruct");
  summary["domain"] = cmd_eval_domain(vae_ckpt, manifest, out / "domain", config.eval, config.seed);
  done("domain");
  summary["embed"] =
      cmd_embed(vae_ckpt, manifest, parse_embed_method(config.eval.embed_method), out / "embed", config.seed);
  done("embed");

  json variants = json::object();
  std::vector<std::pair<std::string, metrics::CohortMetrics>> rows;
  const auto domains = load_manifest(manifest).domains();
  std::vector<std::string> shifted;
  for (const auto& d : domains)
    if (!config.unet.train_domains.empty() &&
        std::find(config.unet.train_domains.begin(), config.unet.train_domains.end(), d) ==
            config.unet.train_domains.end())
      shifted.push_back(d);

  for (SegVariant v : {SegVariant::kRaw, SegVariant::kVae}) {
    const std::string name = variant_name(v);
    const fs::path seg_dir = out / ("seg_" + name);
    cmd_train_seg(config, manifest, v, v == SegVariant::kVae ? vae_ckpt : fs::path{}, seg_dir);
    const json report = cmd_eval_seg(seg_dir / "seg.ckpt", manifest, out / ("eval_" + name), config.eval);
    done(seg_dir.filename().string());
    // Recomputed from the persisted per-case rows so the table and the reports cannot drift.
    std::vector<metrics::CaseMetrics> all, target;
    for (const auto& row : report.at("cases")) {
      metrics::CaseMetrics m;
      m.case_id = row.at("case_id");
      m.domain_id = row.at("domain_id");
      m.sensitivity = row.at("sensitivity");
      m.precision = row.at("precision");
      m.f1 = row.at("f1");
      m.f2 = row.at("f2");
      m.dice = row.at("dice");
      m.sdice = row.at("sdice");
      if (!row.at("hd95_mm").is_null()) m.hd95_mm = row.at("hd95_mm").get<double>();
      all.push_back(m);
      if (std::find(shifted.begin(), shifted.end(), m.domain_id) != shifted.end()) target.push_back(m);
    }
    json entry{{"all", metrics::to_json(metrics::aggregate_cases(all))}};
    rows.emplace_back(name + " / all", metrics::aggregate_cases(all));
    if (!target.empty()) {
      const auto agg = metrics::aggregate_cases(target);
      entry["shifted"] = metrics::to_json(agg);
      rows.emplace_back(name + " / shifted", agg);
    }
    variants[name] = entry;
  }

  const json comparison{{"shifted_domains", shifted},
                        {"source_domains", config.unet.train_domains},
                        {"variants", variants},
                        {"domain_accuracy_before", summary["domain"]["before_accuracy"]},
                        {"domain_accuracy_after", summary["domain"]["after_accuracy"]},
                        {"mean_psnr_db", summary["reconstruct"]["mean_psnr_db"]}};
  write_json(out / "comparison.json", comparison);
  std::ostringstream txt;
  txt << seg_table(rows, 18) << "\n"
      << "domain classifier accuracy: before " << fmt("%.3f", summary["domain"]["before_accuracy"].get<double>())
      << ", after " << fmt("%.3f", summary["domain"]["after_accuracy"].get<double>()) << "\n"
      << "mean reconstruction PSNR: " << fmt("%.2f", summary["reconstruct"]["mean_psnr_db"].get<double>())
      << " dB\n";
  binio::write_file(out / "comparison.txt", txt.str());
  write_run_metadata(out, "reproduce", config_inputs(config));
  summary["comparison"] = comparison;
  return summary;
}

}  // namespace vaemmd::pipeline
