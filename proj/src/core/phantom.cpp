#include "vaemmd/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "binio.hpp"
#include "vaemmd/rng.hpp"

namespace vaemmd {

using nlohmann::json;
namespace fs = std::filesystem;

void DomainStyle::validate() const {
  const std::string where = "style '" + domain_id + "': ";
  require(!domain_id.empty(), ErrorCode::kConfig, "style without domain_id");
  require(std::isfinite(intensity_gain) && std::isfinite(intensity_offset), ErrorCode::kConfig,
          where + "gain/offset must be finite");
  require(noise_sigma >= 0, ErrorCode::kConfig, where + "noise_sigma must be >= 0");
  require(bias_field_amplitude >= 0, ErrorCode::kConfig, where + "bias_field_amplitude must be >= 0");
  require(blur_sigma_mm >= 0, ErrorCode::kConfig, where + "blur_sigma_mm must be >= 0");
  require(lesion_count_mean > 0, ErrorCode::kConfig, where + "lesion_count_mean must be > 0");
  require(lesion_radius_range_mm[0] > 0 && lesion_radius_range_mm[0] <= lesion_radius_range_mm[1],
          ErrorCode::kConfig, where + "lesion_radius_range_mm must satisfy 0 < lo <= hi");
  require(texture_amplitude >= 0, ErrorCode::kConfig, where + "texture_amplitude must be >= 0");
}

json style_to_json(const DomainStyle& s) {
  return json{{"domain_id", s.domain_id},
              {"intensity_gain", s.intensity_gain},
              {"intensity_offset", s.intensity_offset},
              {"noise_sigma", s.noise_sigma},
              {"bias_field_amplitude", s.bias_field_amplitude},
              {"blur_sigma_mm", s.blur_sigma_mm},
              {"lesion_count_mean", s.lesion_count_mean},
              {"lesion_radius_range_mm", s.lesion_radius_range_mm},
              {"lesion_contrast", s.lesion_contrast},
              {"texture_amplitude", s.texture_amplitude}};
}

DomainStyle style_from_json(const json& doc) {
  DomainStyle s;
  try {
    s.domain_id = doc.at("domain_id").get<std::string>();
    s.intensity_gain = doc.value("intensity_gain", s.intensity_gain);
    s.intensity_offset = doc.value("intensity_offset", s.intensity_offset);
    s.noise_sigma = doc.value("noise_sigma", s.noise_sigma);
    s.bias_field_amplitude = doc.value("bias_field_amplitude", s.bias_field_amplitude);
    s.blur_sigma_mm = doc.value("blur_sigma_mm", s.blur_sigma_mm);
    s.lesion_count_mean = doc.value("lesion_count_mean", s.lesion_count_mean);
    s.lesion_radius_range_mm = doc.value("lesion_radius_range_mm", s.lesion_radius_range_mm);
    s.lesion_contrast = doc.value("lesion_contrast", s.lesion_contrast);
    s.texture_amplitude = doc.value("texture_amplitude", s.texture_amplitude);
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, std::string("malformed style: ") + e.what());
  }
  s.validate();
  return s;
}

DomainStyle load_style(const fs::path& path) {
  const std::string bytes = binio::read_file(path);
  json doc;
  try {
    doc = json::parse(bytes);
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, path.string() + ": " + e.what());
  }
  return style_from_json(doc);
}

std::vector<std::string> preset_names() { return {"miliary", "mixed", "solitary", "lung-primary"}; }

DomainStyle preset_style(const std::string& name) {
  DomainStyle s;
  s.domain_id = name;
  if (name == "miliary") {
    // many small scattered lesions, clean acquisition
    s.intensity_gain = 1.0, s.intensity_offset = 0.0, s.noise_sigma = 0.02, s.bias_field_amplitude = 0.1;
    s.blur_sigma_mm = 0.5, s.lesion_count_mean = 6.0, s.lesion_radius_range_mm = {1.0, 1.8};
    s.lesion_contrast = 0.7, s.texture_amplitude = 0.08;
  } else if (name == "mixed") {
    s.intensity_gain = 1.2, s.intensity_offset = 0.1, s.noise_sigma = 0.04, s.bias_field_amplitude = 0.2;
    s.blur_sigma_mm = 0.7, s.lesion_count_mean = 3.0, s.lesion_radius_range_mm = {1.5, 4.0};
    s.lesion_contrast = 0.6, s.texture_amplitude = 0.25;
  } else if (name == "solitary") {
    s.intensity_gain = 0.9, s.intensity_offset = 0.05, s.noise_sigma = 0.03, s.bias_field_amplitude = 0.15;
    s.blur_sigma_mm = 0.6, s.lesion_count_mean = 1.0, s.lesion_radius_range_mm = {4.0, 6.0};
    s.lesion_contrast = 0.8, s.texture_amplitude = 0.1;
  } else if (name == "lung-primary") {
    s.intensity_gain = 1.5, s.intensity_offset = 0.2, s.noise_sigma = 0.12, s.bias_field_amplitude = 0.3;
    s.blur_sigma_mm = 1.0, s.lesion_count_mean = 2.0, s.lesion_radius_range_mm = {2.5, 4.5};
    s.lesion_contrast = 0.9, s.texture_amplitude = 0.12;
  } else {
    fail(ErrorCode::kConfig, "unknown style preset '" + name + "'");
  }
  return s;
}

std::vector<float> gaussian_blur(const std::vector<float>& voxels, const Grid& grid, double sigma_mm) {
  if (sigma_mm <= 0) return voxels;
  std::vector<double> cur(voxels.begin(), voxels.end()), next(cur.size());
  const auto& n = grid.shape;
  const std::array<int64_t, 3> stride{n[1] * n[2], n[2], 1};
  for (int axis = 0; axis < 3; ++axis) {
    const double sigma = sigma_mm / grid.spacing_mm[axis];
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    double total = 0;
    for (int k = -radius; k <= radius; ++k) total += kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    for (auto& w : kernel) w /= total;
    for (int64_t z = 0; z < n[0]; ++z)
      for (int64_t y = 0; y < n[1]; ++y)
        for (int64_t x = 0; x < n[2]; ++x) {
          const std::array<int64_t, 3> pos{z, y, x};
          const int64_t base = grid.index(z, y, x) - pos[axis] * stride[axis];
          double acc = 0;
          for (int k = -radius; k <= radius; ++k) {
            const int64_t j = std::clamp<int64_t>(pos[axis] + k, 0, n[axis] - 1);
            acc += kernel[k + radius] * cur[base + j * stride[axis]];
          }
          next[grid.index(z, y, x)] = acc;
        }
    std::swap(cur, next);
  }
  return {cur.begin(), cur.end()};
}

namespace {

struct Ellipsoid {
  std::array<double, 3> center{};
  std::array<double, 3> semi{};  // voxels
  double norm2(const std::array<double, 3>& p, double shrink_mm, const Grid& g) const {
    double r = 0;
    for (int a = 0; a < 3; ++a) {
      const double s = semi[a] - shrink_mm / g.spacing_mm[a];
      if (s <= 0) return 1e30;
      const double d = (p[a] - center[a]) / s;
      r += d * d;
    }
    return r;
  }
};

}  // namespace

Phantom generate_phantom(const DomainStyle& style, const Grid& grid, uint64_t seed) {
  style.validate();
  validate_grid(grid);
  double half_extent = 1e300;
  for (int a = 0; a < 3; ++a) half_extent = std::min(half_extent, 0.5 * grid.shape[a] * grid.spacing_mm[a]);
  require(style.lesion_radius_range_mm[1] <= half_extent, ErrorCode::kInvalidArgument,
          "style '" + style.domain_id + "': lesion radius " + std::to_string(style.lesion_radius_range_mm[1]) +
              " mm exceeds half the volume extent (" + std::to_string(half_extent) + " mm)");

  const Rng root(seed);
  Rng head_rng = root.split(1), texture_rng = root.split(2), lesion_rng = root.split(3), bias_rng = root.split(4),
      noise_rng = root.split(5);
  const auto& n = grid.shape;

  Ellipsoid head;
  for (int a = 0; a < 3; ++a) {
    head.center[a] = 0.5 * (n[a] - 1) + head_rng.uniform(-0.04, 0.04) * n[a];
    head.semi[a] = 0.5 * n[a] * head_rng.uniform(0.78, 0.9);
  }

  // Sum of a few low-frequency plane waves.
  struct Wave {
    std::array<double, 3> k;
    double phase;
  };
  std::vector<Wave> waves(4);
  for (auto& w : waves) {
    for (int a = 0; a < 3; ++a) w.k[a] = texture_rng.uniform(-3.0, 3.0) * std::numbers::pi / n[a];
    w.phase = texture_rng.uniform(0, 2 * std::numbers::pi);
  }

  Phantom out;
  out.image = Image(grid);
  out.mask = Mask(grid);
  out.head = Mask(grid);

  const int count = lesion_rng.poisson(style.lesion_count_mean);
  for (int i = 0; i < count; ++i) {
    const double radius = lesion_rng.uniform(style.lesion_radius_range_mm[0], style.lesion_radius_range_mm[1]);
    for (int attempt = 0; attempt < 200; ++attempt) {
      std::array<double, 3> c{};
      for (int a = 0; a < 3; ++a)
        c[a] = std::round(lesion_rng.uniform(head.center[a] - head.semi[a], head.center[a] + head.semi[a]));
      if (head.norm2(c, radius, grid) <= 1.0) {
        out.lesions.push_back({c, radius});
        break;
      }
    }
  }

  // Bias polynomial without constant term; |poly| <= 1 on [-1, 1]^3.
  std::array<double, 9> coef{};
  for (auto& c : coef) c = bias_rng.uniform(-1.0, 1.0) / 9.0;

  std::vector<float> v(static_cast<size_t>(grid.size()), 0.f);
  for (int64_t z = 0; z < n[0]; ++z)
    for (int64_t y = 0; y < n[1]; ++y)
      for (int64_t x = 0; x < n[2]; ++x) {
        const std::array<double, 3> p{double(z), double(y), double(x)};
        if (head.norm2(p, 0.0, grid) > 1.0) continue;
        const int64_t idx = grid.index(z, y, x);
        out.head.voxels[idx] = 1;
        double tex = 0;
        for (const auto& w : waves) tex += std::cos(w.k[0] * z + w.k[1] * y + w.k[2] * x + w.phase);
        double value = 1.0 + style.texture_amplitude * tex / static_cast<double>(waves.size());
        bool in_lesion = false;
        for (const auto& l : out.lesions) {
          double d2 = 0;
          for (int a = 0; a < 3; ++a) {
            const double d = (p[a] - l.center_vox[a]) * grid.spacing_mm[a];
            d2 += d * d;
          }
          if (d2 <= l.radius_mm * l.radius_mm) in_lesion = true;
        }
        if (in_lesion) {
          value += style.lesion_contrast;
          out.mask.voxels[idx] = 1;
        }
        const double u = 2.0 * z / std::max<int64_t>(n[0] - 1, 1) - 1.0;
        const double t = 2.0 * y / std::max<int64_t>(n[1] - 1, 1) - 1.0;
        const double s = 2.0 * x / std::max<int64_t>(n[2] - 1, 1) - 1.0;
        const double poly = coef[0] * u + coef[1] * t + coef[2] * s + coef[3] * u * u + coef[4] * t * t +
                            coef[5] * s * s + coef[6] * u * t + coef[7] * u * s + coef[8] * t * s;
        value *= 1.0 + style.bias_field_amplitude * poly;
        v[idx] = static_cast<float>(style.intensity_gain * value + style.intensity_offset);
      }

  v = gaussian_blur(v, grid, style.blur_sigma_mm);
  for (int64_t i = 0; i < grid.size(); ++i) {
    if (!out.head.voxels[i]) {
      v[i] = 0.f;
      continue;
    }
    if (style.noise_sigma > 0) {
      Rng voxel_rng = noise_rng.split(static_cast<uint64_t>(i));
      v[i] = static_cast<float>(v[i] + style.noise_sigma * voxel_rng.normal());
    }
  }
  out.image.voxels = std::move(v);
  return out;
}

void PhantomSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    require(shape[a] >= 16, ErrorCode::kConfig, "phantom shape must be >= 16 per axis");
    require(spacing_mm[a] > 0, ErrorCode::kConfig, "phantom spacing must be positive");
  }
  require(!styles.empty(), ErrorCode::kConfig, "phantom spec lists no styles");
  std::vector<std::string> ids;
  for (const auto& s : styles) {
    s.validate();
    require(std::find(ids.begin(), ids.end(), s.domain_id) == ids.end(), ErrorCode::kConfig,
            "duplicate domain_id '" + s.domain_id + "' in phantom spec");
    ids.push_back(s.domain_id);
  }
  require(cases_per_domain >= 2, ErrorCode::kConfig, "cases_per_domain must be >= 2");
  require(test_fraction > 0 && test_fraction < 1, ErrorCode::kConfig, "test_fraction must be in (0, 1)");
  require(val_fraction >= 0 && val_fraction < 1, ErrorCode::kConfig, "val_fraction must be in [0, 1)");
}

PhantomSpec phantom_spec_from_json(const json& doc, const fs::path& base_dir) {
  PhantomSpec spec;
  try {
    spec.shape = doc.value("shape", spec.shape);
    spec.spacing_mm = doc.value("spacing_mm", spec.spacing_mm);
    spec.cases_per_domain = doc.value("cases_per_domain", spec.cases_per_domain);
    spec.test_fraction = doc.value("test_fraction", spec.test_fraction);
    spec.val_fraction = doc.value("val_fraction", spec.val_fraction);
    spec.seed = doc.value("seed", spec.seed);
    for (const auto& s : doc.at("styles")) {
      if (s.is_object()) {
        spec.styles.push_back(style_from_json(s));
      } else {
        const std::string ref = s.get<std::string>();
        const auto names = preset_names();
        if (std::find(names.begin(), names.end(), ref) != names.end())
          spec.styles.push_back(preset_style(ref));
        else
          spec.styles.push_back(load_style(base_dir / ref));
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, std::string("malformed phantom spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

json phantom_spec_to_json(const PhantomSpec& spec) {
  json styles = json::array();
  for (const auto& s : spec.styles) styles.push_back(style_to_json(s));
  return json{{"shape", spec.shape},
              {"spacing_mm", spec.spacing_mm},
              {"styles", styles},
              {"cases_per_domain", spec.cases_per_domain},
              {"test_fraction", spec.test_fraction},
              {"val_fraction", spec.val_fraction},
              {"seed", spec.seed}};
}

DatasetManifest generate_dataset(const PhantomSpec& spec, const fs::path& out_dir) {
  spec.validate();
  Grid grid;
  grid.shape = spec.shape;
  grid.spacing_mm = spec.spacing_mm;
  const Rng root(spec.seed);

  DatasetManifest manifest;
  manifest.root = fs::absolute(out_dir);
  for (size_t d = 0; d < spec.styles.size(); ++d) {
    const auto& style = spec.styles[d];
    const int n = spec.cases_per_domain;
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng split_rng = root.split(0x5917ULL).split(d);
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[split_rng.below(i + 1)]);
    const int n_test = std::max(1, static_cast<int>(std::lround(n * spec.test_fraction)));
    const int n_train = n - n_test;
    int n_val = static_cast<int>(std::lround(n_train * spec.val_fraction));
    if (spec.val_fraction > 0 && n_train >= 2) n_val = std::max(n_val, 1);
    n_val = std::min(n_val, n_train - 1);
    std::vector<Split> split(n, Split::kTrain);
    for (int r = 0; r < n; ++r) {
      if (r < n_test)
        split[order[r]] = Split::kTest;
      else if (r < n_test + n_val)
        split[order[r]] = Split::kVal;
    }

    for (int i = 0; i < n; ++i) {
      char id[128];
      std::snprintf(id, sizeof id, "%s_%03d", style.domain_id.c_str(), i);
      const uint64_t case_seed = root.split(d).split(static_cast<uint64_t>(i)).next_u64();
      const Phantom p = generate_phantom(style, grid, case_seed);
      CaseEntry c;
      c.case_id = id;
      c.domain_id = style.domain_id;
      c.patient_id = id;
      c.image_path = manifest.root / "images" / (c.case_id + ".rvol");
      c.mask_path = manifest.root / "masks" / (c.case_id + "_mask.rvol");
      c.split = split[i];
      write_volume(p.image, c.image_path);
      write_volume(p.mask, c.mask_path);
      manifest.cases.push_back(std::move(c));
    }
  }
  save_manifest(manifest, manifest.root / "manifest.json");
  return manifest;
}

}  // namespace vaemmd
