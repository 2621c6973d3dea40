#include "vaemmd.h"

#include <atomic>
#include <memory>
#include <string>

#include "vaemmd/pipeline.hpp"

namespace fs = std::filesystem;
using namespace vaemmd;

struct vaemmd_volume {
  Volume volume;
};

struct vaemmd_model {
  std::unique_ptr<VaeModel<float>> vae;
};

namespace {

thread_local std::string g_last_error;
thread_local std::string g_last_result;
std::atomic<int> g_threads{1};

int status_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig:
    case ErrorCode::kInvalidArgument:
      return VAEMMD_ERR_CONFIG;
    case ErrorCode::kMissingArtifact:
      return VAEMMD_ERR_MISSING;
    case ErrorCode::kNumerical:
      return VAEMMD_ERR_NUMERICAL;
    default:
      return VAEMMD_ERR_INTERNAL;
  }
}

template <typename F>
int guarded(F&& f) {
  try {
    g_last_error.clear();
    f();
    return VAEMMD_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const nlohmann::json::exception& e) {
    g_last_error = std::string("json: ") + e.what();
    return VAEMMD_ERR_CONFIG;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return VAEMMD_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return VAEMMD_ERR_INTERNAL;
  }
}

fs::path need(const char* p, const char* what) {
  if (p == nullptr || *p == '\0') fail(ErrorCode::kConfig, std::string(what) + " is required");
  return fs::path(p);
}

bool given(const char* p) { return p != nullptr && *p != '\0'; }

void set_result(const nlohmann::json& j) { g_last_result = j.dump(); }

}  // namespace

extern "C" {

const char* vaemmd_version(void) { return VAEMMD_VERSION; }
const char* vaemmd_last_error(void) { return g_last_error.c_str(); }
const char* vaemmd_last_result(void) { return g_last_result.c_str(); }

int vaemmd_set_threads(int n) {
  return guarded([&] {
    require(n >= 1, ErrorCode::kConfig, "thread count must be >= 1");
    g_threads = n;
  });
}

int vaemmd_get_threads(void) { return g_threads; }

int vaemmd_gen_phantoms(const char* config_path, const char* out_dir) {
  return guarded([&] {
    const auto cfg = pipeline::load_experiment_config(need(config_path, "config"));
    set_result(pipeline::cmd_gen_phantoms(cfg, need(out_dir, "output directory")));
  });
}

int vaemmd_train_vae(const char* config_path, const char* manifest_path, const char* out_dir) {
  return guarded([&] {
    const auto cfg = pipeline::load_experiment_config(need(config_path, "config"));
    set_result(pipeline::cmd_train_vae(cfg, need(manifest_path, "manifest"), need(out_dir, "output directory")));
  });
}

int vaemmd_reconstruct(const char* checkpoint_path, const char* manifest_path, const char* out_dir,
                       const char* split) {
  return guarded([&] {
    set_result(pipeline::cmd_reconstruct(need(checkpoint_path, "checkpoint"), need(manifest_path, "manifest"),
                                         need(out_dir, "output directory"), given(split) ? split : "test"));
  });
}

int vaemmd_embed(const char* checkpoint_path, const char* manifest_path, const char* method, const char* out_dir,
                 uint64_t seed) {
  return guarded([&] {
    const auto m = parse_embed_method(given(method) ? method : "pca");
    set_result(pipeline::cmd_embed(need(checkpoint_path, "checkpoint"), need(manifest_path, "manifest"), m,
                                   need(out_dir, "output directory"), seed));
  });
}

int vaemmd_eval_domain(const char* checkpoint_path, const char* manifest_path, const char* out_dir,
                       const char* config_path) {
  return guarded([&] {
    pipeline::EvalOptions opts;
    uint64_t seed = 0;
    if (given(config_path)) {
      const auto cfg = pipeline::load_experiment_config(config_path);
      opts = cfg.eval;
      seed = cfg.seed;
    }
    set_result(pipeline::cmd_eval_domain(need(checkpoint_path, "checkpoint"), need(manifest_path, "manifest"),
                                         need(out_dir, "output directory"), opts, seed));
  });
}

int vaemmd_train_seg(const char* config_path, const char* manifest_path, const char* variant,
                     const char* vae_checkpoint_path, const char* out_dir) {
  return guarded([&] {
    const auto cfg = pipeline::load_experiment_config(need(config_path, "config"));
    const auto v = parse_variant(given(variant) ? variant : "raw");
    set_result(pipeline::cmd_train_seg(cfg, need(manifest_path, "manifest"), v,
                                       given(vae_checkpoint_path) ? fs::path(vae_checkpoint_path) : fs::path{},
                                       need(out_dir, "output directory")));
  });
}

int vaemmd_eval_seg(const char* seg_checkpoint_path, const char* manifest_path, const char* out_dir,
                    const char* config_path) {
  return guarded([&] {
    pipeline::EvalOptions opts;
    if (given(config_path)) opts = pipeline::load_experiment_config(config_path).eval;
    const auto report = pipeline::cmd_eval_seg(need(seg_checkpoint_path, "segmenter checkpoint"),
                                               need(manifest_path, "manifest"), need(out_dir, "output directory"),
                                               opts);
    set_result(report.at("cohort"));
  });
}

int vaemmd_reproduce(const char* config_path, const char* out_dir) {
  return guarded([&] {
    const auto cfg = pipeline::load_experiment_config(need(config_path, "config"));
    set_result(pipeline::cmd_reproduce(cfg, need(out_dir, "output directory")).at("comparison"));
  });
}

int vaemmd_volume_read(const char* path, vaemmd_volume** out) {
  return guarded([&] {
    require(out != nullptr, ErrorCode::kInvalidArgument, "null output handle");
    *out = new vaemmd_volume{read_volume(need(path, "path"))};
  });
}

int vaemmd_volume_write(const vaemmd_volume* volume, const char* path) {
  return guarded([&] {
    require(volume != nullptr, ErrorCode::kInvalidArgument, "null volume");
    std::visit([&](const auto& v) { write_volume(v, need(path, "path")); }, volume->volume);
  });
}

int vaemmd_volume_shape(const vaemmd_volume* volume, int64_t shape[3]) {
  return guarded([&] {
    require(volume != nullptr && shape != nullptr, ErrorCode::kInvalidArgument, "null argument");
    const Grid& g = std::visit([](const auto& v) -> const Grid& { return v.grid; }, volume->volume);
    for (int i = 0; i < 3; ++i) shape[i] = g.shape[i];
  });
}

int vaemmd_volume_is_mask(const vaemmd_volume* volume, int* is_mask) {
  return guarded([&] {
    require(volume != nullptr && is_mask != nullptr, ErrorCode::kInvalidArgument, "null argument");
    *is_mask = std::holds_alternative<Mask>(volume->volume) ? 1 : 0;
  });
}

int vaemmd_volume_copy(const vaemmd_volume* volume, float* dst, size_t count) {
  return guarded([&] {
    require(volume != nullptr && dst != nullptr, ErrorCode::kInvalidArgument, "null argument");
    std::visit(
        [&](const auto& v) {
          require(v.voxels.size() == count, ErrorCode::kInvalidArgument, "destination size differs from voxel count");
          for (size_t i = 0; i < count; ++i) dst[i] = static_cast<float>(v.voxels[i]);
        },
        volume->volume);
  });
}

void vaemmd_volume_free(vaemmd_volume* volume) { delete volume; }

int vaemmd_model_load(const char* checkpoint_path, vaemmd_model** out) {
  return guarded([&] {
    require(out != nullptr, ErrorCode::kInvalidArgument, "null output handle");
    auto vae = load_vae(Checkpoint::load(need(checkpoint_path, "checkpoint")));
    *out = new vaemmd_model{std::move(vae)};
  });
}

int vaemmd_model_latent_dim(const vaemmd_model* model, int* dim) {
  return guarded([&] {
    require(model != nullptr && dim != nullptr, ErrorCode::kInvalidArgument, "null argument");
    *dim = model->vae->config().latent_dim;
  });
}

namespace {
const Image& image_of(const vaemmd_volume* v) {
  require(v != nullptr, ErrorCode::kInvalidArgument, "null volume");
  const Image* img = std::get_if<Image>(&v->volume);
  require(img != nullptr, ErrorCode::kInvalidArgument, "expected an image volume, got a mask");
  return *img;
}
}  // namespace

int vaemmd_model_encode(const vaemmd_model* model, const vaemmd_volume* raw, double* mu, size_t count) {
  return guarded([&] {
    require(model != nullptr && mu != nullptr, ErrorCode::kInvalidArgument, "null argument");
    const auto& cfg = model->vae->config();
    require(count == static_cast<size_t>(cfg.latent_dim), ErrorCode::kInvalidArgument,
            "destination size differs from the latent dimension");
    NoGradGuard guard;
    const Image prepared = prepare_image(image_of(raw), cfg.input_size);
    const auto enc = model->vae->encode(stack_images<float>({&prepared}), ops::Mode::kEval, Rng(0));
    const auto d = enc.latent.mu.data();
    for (size_t i = 0; i < count; ++i) mu[i] = d[i];
  });
}

int vaemmd_model_reconstruct(const vaemmd_model* model, const vaemmd_volume* raw, vaemmd_volume** out) {
  return guarded([&] {
    require(model != nullptr && out != nullptr, ErrorCode::kInvalidArgument, "null argument");
    const Image prepared = prepare_image(image_of(raw), model->vae->config().input_size);
    *out = new vaemmd_volume{reconstruct(*model->vae, prepared)};
  });
}

void vaemmd_model_free(vaemmd_model* model) { delete model; }

}  // extern "C"
