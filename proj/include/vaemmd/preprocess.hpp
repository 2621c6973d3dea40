#pragma once

#include <array>
#include <optional>

#include "vaemmd/rng.hpp"
#include "vaemmd/volume.hpp"

namespace vaemmd::preprocess {

// Resampling treats voxels as cell centers: output voxel j along an axis of
// n_out cells samples source position (j + 0.5) * n_in / n_out - 0.5 in
// source index space, so both grids span the same physical extent. Samples
// outside the source are clamped to the border.

/// New shape = round(shape * spacing / target), at least 1 per axis.
Image resample_trilinear(const Image& image, const std::array<double, 3>& target_spacing_mm);
Mask resample_nearest(const Mask& mask, const std::array<double, 3>& target_spacing_mm);
/// Shape-driven variant; output spacing = spacing * old_shape / new_shape.
Image resize_trilinear(const Image& image, const std::array<int64_t, 3>& target_shape);
Mask resize_nearest(const Mask& mask, const std::array<int64_t, 3>& target_shape);

/// Inclusive voxel bounds.
struct BoundingBox {
  std::array<int64_t, 3> lo{};
  std::array<int64_t, 3> hi{};
  bool operator==(const BoundingBox&) const = default;
};

struct CropResult {
  Image image;
  std::optional<Mask> mask;
  BoundingBox box;
};

/// Tight box around nonzero image voxels; the mask gets the same box.
CropResult crop_to_nonzero(const Image& image, const Mask* mask = nullptr);

/// Standardizes with mean/std of strictly positive voxels; the affine map is
/// applied to every voxel.
Image zscore_foreground(const Image& image);

struct MinMaxResult {
  Image image;
  double source_min = 0, source_max = 0;
  double lo = -1, hi = 1;
};

/// Affine map of [min, max] onto [lo, hi]. A constant volume is an error.
MinMaxResult minmax_to_range(const Image& image, double lo = -1.0, double hi = 1.0);
Image invert_minmax(const MinMaxResult& result);

struct AugmentOptions {
  double flip_p = 0.5;   // per axis
  double rot90_p = 0.3;  // one rotation: axis uniform in 3, k uniform in {1,2,3}
};

struct Augmented {
  Image image;
  std::optional<Mask> mask;
};

/// Random flips then an optional 90-degree rotation, identical for image and
/// mask, reproducible from `seed`.
Augmented augment(const Image& image, const Mask* mask, const AugmentOptions& options, uint64_t seed);

/// Geometric primitives shared by augment (exposed for tests).
template <typename V>
std::vector<V> flip_axis(const std::vector<V>& voxels, const std::array<int64_t, 3>& shape, int axis);
/// Rotates by k quarter turns in the plane orthogonal to `axis`; updates shape.
template <typename V>
std::vector<V> rot90(const std::vector<V>& voxels, std::array<int64_t, 3>& shape, int axis, int k);

}  // namespace vaemmd::preprocess
