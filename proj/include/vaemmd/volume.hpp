#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "vaemmd/error.hpp"

namespace vaemmd {

/// Axis order is (z, y, x) throughout; voxels are stored row-major.
struct Grid {
  std::array<int64_t, 3> shape{1, 1, 1};
  std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};

  int64_t size() const { return shape[0] * shape[1] * shape[2]; }
  int64_t index(int64_t z, int64_t y, int64_t x) const { return (z * shape[1] + y) * shape[2] + x; }
  bool operator==(const Grid&) const = default;
};

enum class VolumeKind { kImage, kMask, kLabel };

struct VolumeHeader {
  Grid grid;
  std::string dtype;  // "f32" | "u8"
  VolumeKind kind = VolumeKind::kImage;
};

struct Image {
  Grid grid;
  std::vector<float> voxels;

  Image() = default;
  explicit Image(Grid g, float fill = 0.f) : grid(g), voxels(static_cast<size_t>(g.size()), fill) {}
  float& at(int64_t z, int64_t y, int64_t x) { return voxels[grid.index(z, y, x)]; }
  float at(int64_t z, int64_t y, int64_t x) const { return voxels[grid.index(z, y, x)]; }
};

/// Binary mask ({0,1}) unless `kind` is kLabel (small non-negative labels).
struct Mask {
  Grid grid;
  std::vector<uint8_t> voxels;
  VolumeKind kind = VolumeKind::kMask;

  Mask() = default;
  explicit Mask(Grid g, uint8_t fill = 0) : grid(g), voxels(static_cast<size_t>(g.size()), fill) {}
  uint8_t& at(int64_t z, int64_t y, int64_t x) { return voxels[grid.index(z, y, x)]; }
  uint8_t at(int64_t z, int64_t y, int64_t x) const { return voxels[grid.index(z, y, x)]; }
  int64_t count() const;
};

using Volume = std::variant<Image, Mask>;

void validate_grid(const Grid& grid);
void validate(const Image& image);
void validate(const Mask& mask);

// RVOL container: one JSON header line, '\n', little-endian voxels.
std::string encode_rvol(const Image& image);
std::string encode_rvol(const Mask& mask);
Volume decode_rvol(const std::string& bytes, const std::string& origin = "rvol");

Volume read_volume(const std::filesystem::path& path);
Image read_image(const std::filesystem::path& path);
Mask read_mask(const std::filesystem::path& path);
void write_volume(const Image& image, const std::filesystem::path& path);
void write_volume(const Mask& mask, const std::filesystem::path& path);

}  // namespace vaemmd
