#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "vaemmd/manifest.hpp"
#include "vaemmd/volume.hpp"

namespace vaemmd {

/// Acquisition "look" of one synthetic institution.
struct DomainStyle {
  std::string domain_id;
  double intensity_gain = 1.0;
  double intensity_offset = 0.0;
  double noise_sigma = 0.0;
  double bias_field_amplitude = 0.0;
  double blur_sigma_mm = 0.0;
  double lesion_count_mean = 3.0;  // Poisson mean
  std::array<double, 2> lesion_radius_range_mm{2.0, 3.0};
  double lesion_contrast = 0.8;
  double texture_amplitude = 0.1;  // smooth tissue texture inside the head

  void validate() const;
  bool operator==(const DomainStyle&) const = default;
};

nlohmann::json style_to_json(const DomainStyle& style);
DomainStyle style_from_json(const nlohmann::json& doc);
DomainStyle load_style(const std::filesystem::path& path);
/// "miliary", "mixed", "solitary", "lung-primary".
DomainStyle preset_style(const std::string& name);
std::vector<std::string> preset_names();

struct Lesion {
  std::array<double, 3> center_vox{};  // (z, y, x) voxel coordinates
  double radius_mm = 0.0;
};

struct Phantom {
  Image image;
  Mask mask;  // union of lesion spheres
  Mask head;  // ellipsoidal support; every lesion lies inside it
  std::vector<Lesion> lesions;
};

/// Every random component draws from its own child stream of `seed`, so the
/// geometry does not depend on intensity settings.
Phantom generate_phantom(const DomainStyle& style, const Grid& grid, uint64_t seed);

struct PhantomSpec {
  std::array<int64_t, 3> shape{32, 32, 32};
  std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
  std::vector<DomainStyle> styles;
  int cases_per_domain = 20;
  double test_fraction = 0.2;
  double val_fraction = 0.125;  // share of the training portion held out
  uint64_t seed = 0;

  void validate() const;
};

PhantomSpec phantom_spec_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
nlohmann::json phantom_spec_to_json(const PhantomSpec& spec);

/// Writes images/<case>.rvol, masks/<case>_mask.rvol and manifest.json under
/// `out_dir`. Splits are drawn per domain; a case belongs to exactly one.
DatasetManifest generate_dataset(const PhantomSpec& spec, const std::filesystem::path& out_dir);

/// Separable Gaussian smoothing with clamped borders (sigma in mm).
std::vector<float> gaussian_blur(const std::vector<float>& voxels, const Grid& grid, double sigma_mm);

}  // namespace vaemmd
