#include "vaemmd/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace vaemmd::preprocess {

namespace {

std::array<int64_t, 3> shape_for_spacing(const Grid& g, const std::array<double, 3>& target) {
  std::array<int64_t, 3> out{};
  for (int d = 0; d < 3; ++d) {
    require(target[d] > 0 && std::isfinite(target[d]), ErrorCode::kInvalidArgument,
            "target spacing must be strictly positive");
    out[d] = std::max<int64_t>(1, std::llround(static_cast<double>(g.shape[d]) * g.spacing_mm[d] / target[d]));
  }
  return out;
}

/// Continuous source coordinate of output cell j (center-aligned extents).
double source_coord(int64_t j, int64_t n_in, int64_t n_out) {
  return (static_cast<double>(j) + 0.5) * static_cast<double>(n_in) / static_cast<double>(n_out) - 0.5;
}

struct Lerp {
  int64_t i0, i1;
  double w1;
};

std::vector<Lerp> lerp_table(int64_t n_in, int64_t n_out) {
  std::vector<Lerp> t(static_cast<size_t>(n_out));
  for (int64_t j = 0; j < n_out; ++j) {
    const double u = std::clamp(source_coord(j, n_in, n_out), 0.0, static_cast<double>(n_in - 1));
    const auto i0 = static_cast<int64_t>(std::floor(u));
    const int64_t i1 = std::min(i0 + 1, n_in - 1);
    t[j] = {i0, i1, u - static_cast<double>(i0)};
  }
  return t;
}

std::vector<int64_t> nearest_table(int64_t n_in, int64_t n_out) {
  std::vector<int64_t> t(static_cast<size_t>(n_out));
  for (int64_t j = 0; j < n_out; ++j) {
    const double center = (static_cast<double>(j) + 0.5) * static_cast<double>(n_in) / static_cast<double>(n_out);
    t[j] = std::clamp<int64_t>(static_cast<int64_t>(std::floor(center)), 0, n_in - 1);
  }
  return t;
}

Image trilinear_to_shape(const Image& image, const std::array<int64_t, 3>& shape, const std::array<double, 3>& spacing) {
  validate(image);
  Grid out_grid{shape, spacing};
  Image out(out_grid);
  const auto& s = image.grid.shape;
  if (shape == s) {
    out.voxels = image.voxels;
    return out;
  }
  const auto tz = lerp_table(s[0], shape[0]), ty = lerp_table(s[1], shape[1]), tx = lerp_table(s[2], shape[2]);
  for (int64_t z = 0; z < shape[0]; ++z)
    for (int64_t y = 0; y < shape[1]; ++y)
      for (int64_t x = 0; x < shape[2]; ++x) {
        double acc = 0;
        for (int a = 0; a < 2; ++a) {
          const double wz = a ? tz[z].w1 : 1.0 - tz[z].w1;
          if (wz == 0.0) continue;
          const int64_t iz = a ? tz[z].i1 : tz[z].i0;
          for (int b = 0; b < 2; ++b) {
            const double wy = b ? ty[y].w1 : 1.0 - ty[y].w1;
            if (wy == 0.0) continue;
            const int64_t iy = b ? ty[y].i1 : ty[y].i0;
            const double v0 = image.at(iz, iy, tx[x].i0), v1 = image.at(iz, iy, tx[x].i1);
            acc += wz * wy * (v0 + tx[x].w1 * (v1 - v0));
          }
        }
        out.at(z, y, x) = static_cast<float>(acc);
      }
  return out;
}

Mask nearest_to_shape(const Mask& mask, const std::array<int64_t, 3>& shape, const std::array<double, 3>& spacing) {
  validate(mask);
  Mask out(Grid{shape, spacing});
  out.kind = mask.kind;
  const auto& s = mask.grid.shape;
  const auto tz = nearest_table(s[0], shape[0]), ty = nearest_table(s[1], shape[1]), tx = nearest_table(s[2], shape[2]);
  for (int64_t z = 0; z < shape[0]; ++z)
    for (int64_t y = 0; y < shape[1]; ++y)
      for (int64_t x = 0; x < shape[2]; ++x) out.at(z, y, x) = mask.at(tz[z], ty[y], tx[x]);
  return out;
}

std::array<double, 3> spacing_for_shape(const Grid& g, const std::array<int64_t, 3>& shape) {
  std::array<double, 3> sp{};
  for (int d = 0; d < 3; ++d) {
    require(shape[d] > 0, ErrorCode::kInvalidArgument, "target shape must be positive");
    sp[d] = g.spacing_mm[d] * static_cast<double>(g.shape[d]) / static_cast<double>(shape[d]);
  }
  return sp;
}

}  // namespace

Image resample_trilinear(const Image& image, const std::array<double, 3>& target_spacing_mm) {
  return trilinear_to_shape(image, shape_for_spacing(image.grid, target_spacing_mm), target_spacing_mm);
}

Mask resample_nearest(const Mask& mask, const std::array<double, 3>& target_spacing_mm) {
  return nearest_to_shape(mask, shape_for_spacing(mask.grid, target_spacing_mm), target_spacing_mm);
}

Image resize_trilinear(const Image& image, const std::array<int64_t, 3>& target_shape) {
  return trilinear_to_shape(image, target_shape, spacing_for_shape(image.grid, target_shape));
}

Mask resize_nearest(const Mask& mask, const std::array<int64_t, 3>& target_shape) {
  return nearest_to_shape(mask, target_shape, spacing_for_shape(mask.grid, target_shape));
}

CropResult crop_to_nonzero(const Image& image, const Mask* mask) {
  validate(image);
  if (mask) require(mask->grid.shape == image.grid.shape, ErrorCode::kInvalidArgument, "crop: mask/image shape mismatch");
  const auto& s = image.grid.shape;
  BoundingBox box{{s[0], s[1], s[2]}, {-1, -1, -1}};
  for (int64_t z = 0; z < s[0]; ++z)
    for (int64_t y = 0; y < s[1]; ++y)
      for (int64_t x = 0; x < s[2]; ++x)
        if (image.at(z, y, x) != 0.f) {
          const int64_t p[3] = {z, y, x};
          for (int d = 0; d < 3; ++d) {
            box.lo[d] = std::min(box.lo[d], p[d]);
            box.hi[d] = std::max(box.hi[d], p[d]);
          }
        }
  require(box.hi[0] >= 0, ErrorCode::kNumerical, "crop_to_nonzero: volume has no nonzero voxels");
  Grid g{{box.hi[0] - box.lo[0] + 1, box.hi[1] - box.lo[1] + 1, box.hi[2] - box.lo[2] + 1}, image.grid.spacing_mm};
  CropResult r{Image(g), std::nullopt, box};
  if (mask) {
    r.mask = Mask(g);
    r.mask->kind = mask->kind;
  }
  for (int64_t z = 0; z < g.shape[0]; ++z)
    for (int64_t y = 0; y < g.shape[1]; ++y)
      for (int64_t x = 0; x < g.shape[2]; ++x) {
        r.image.at(z, y, x) = image.at(z + box.lo[0], y + box.lo[1], x + box.lo[2]);
        if (mask) r.mask->at(z, y, x) = mask->at(z + box.lo[0], y + box.lo[1], x + box.lo[2]);
      }
  return r;
}

Image zscore_foreground(const Image& image) {
  validate(image);
  double sum = 0;
  int64_t n = 0;
  for (float v : image.voxels)
    if (v > 0.f) {
      sum += v;
      ++n;
    }
  require(n >= 2, ErrorCode::kNumerical, "zscore_foreground: fewer than 2 foreground voxels");
  const double mu = sum / static_cast<double>(n);
  double sq = 0;
  for (float v : image.voxels)
    if (v > 0.f) sq += (v - mu) * (v - mu);
  const double sd = std::sqrt(sq / static_cast<double>(n));
  require(sd > 0, ErrorCode::kNumerical, "zscore_foreground: foreground variance is zero");
  Image out(image.grid);
  for (size_t i = 0; i < out.voxels.size(); ++i) out.voxels[i] = static_cast<float>((image.voxels[i] - mu) / sd);
  return out;
}

MinMaxResult minmax_to_range(const Image& image, double lo, double hi) {
  validate(image);
  require(hi > lo, ErrorCode::kInvalidArgument, "minmax_to_range: hi must exceed lo");
  const auto [mn, mx] = std::minmax_element(image.voxels.begin(), image.voxels.end());
  require(*mx > *mn, ErrorCode::kNumerical, "minmax_to_range: constant volume");
  MinMaxResult r{Image(image.grid), *mn, *mx, lo, hi};
  const double scale = (hi - lo) / (r.source_max - r.source_min);
  for (size_t i = 0; i < image.voxels.size(); ++i) {
    const float v = image.voxels[i];
    // Endpoints map exactly.
    r.image.voxels[i] = v == *mn ? static_cast<float>(lo)
                        : v == *mx ? static_cast<float>(hi)
                                   : static_cast<float>(lo + (v - r.source_min) * scale);
  }
  return r;
}

Image invert_minmax(const MinMaxResult& r) {
  Image out(r.image.grid);
  const double scale = (r.source_max - r.source_min) / (r.hi - r.lo);
  for (size_t i = 0; i < out.voxels.size(); ++i)
    out.voxels[i] = static_cast<float>(r.source_min + (r.image.voxels[i] - r.lo) * scale);
  return out;
}

template <typename V>
std::vector<V> flip_axis(const std::vector<V>& voxels, const std::array<int64_t, 3>& s, int axis) {
  std::vector<V> out(voxels.size());
  for (int64_t z = 0; z < s[0]; ++z)
    for (int64_t y = 0; y < s[1]; ++y)
      for (int64_t x = 0; x < s[2]; ++x) {
        int64_t p[3] = {z, y, x};
        p[axis] = s[axis] - 1 - p[axis];
        out[(z * s[1] + y) * s[2] + x] = voxels[(p[0] * s[1] + p[1]) * s[2] + p[2]];
      }
  return out;
}

template <typename V>
std::vector<V> rot90(const std::vector<V>& voxels, std::array<int64_t, 3>& shape, int axis, int k) {
  k = ((k % 4) + 4) % 4;
  const int pa = axis == 0 ? 1 : 0;  // plane axes (pa, qa), pa < qa
  const int qa = axis == 2 ? 1 : 2;
  std::vector<V> cur = voxels;
  for (int step = 0; step < k; ++step) {
    const auto s = shape;
    auto t = s;
    std::swap(t[pa], t[qa]);
    std::vector<V> out(cur.size());
    // out[.., i, j] = in[.., j, n_q - 1 - i]  (counter-clockwise quarter turn)
    for (int64_t z = 0; z < t[0]; ++z)
      for (int64_t y = 0; y < t[1]; ++y)
        for (int64_t x = 0; x < t[2]; ++x) {
          int64_t o[3] = {z, y, x};
          int64_t src[3] = {z, y, x};
          src[pa] = o[qa];
          src[qa] = s[qa] - 1 - o[pa];
          out[(z * t[1] + y) * t[2] + x] = cur[(src[0] * s[1] + src[1]) * s[2] + src[2]];
        }
    cur = std::move(out);
    shape = t;
  }
  return cur;
}

Augmented augment(const Image& image, const Mask* mask, const AugmentOptions& options, uint64_t seed) {
  if (mask) require(mask->grid.shape == image.grid.shape, ErrorCode::kInvalidArgument, "augment: mask/image shape mismatch");
  Rng rng(seed);
  Augmented r{image, mask ? std::optional<Mask>(*mask) : std::nullopt};
  for (int axis = 0; axis < 3; ++axis) {
    if (!rng.bernoulli(options.flip_p)) continue;
    r.image.voxels = flip_axis(r.image.voxels, r.image.grid.shape, axis);
    if (r.mask) r.mask->voxels = flip_axis(r.mask->voxels, r.mask->grid.shape, axis);
  }
  const bool rotate = rng.bernoulli(options.rot90_p);
  const int axis = static_cast<int>(rng.below(3));
  const int k = 1 + static_cast<int>(rng.below(3));
  if (rotate) {
    const int pa = axis == 0 ? 1 : 0, qa = axis == 2 ? 1 : 2;
    r.image.voxels = rot90(r.image.voxels, r.image.grid.shape, axis, k);
    if (k % 2) std::swap(r.image.grid.spacing_mm[pa], r.image.grid.spacing_mm[qa]);
    if (r.mask) {
      r.mask->voxels = rot90(r.mask->voxels, r.mask->grid.shape, axis, k);
      r.mask->grid.spacing_mm = r.image.grid.spacing_mm;
    }
  }
  return r;
}

template std::vector<float> flip_axis(const std::vector<float>&, const std::array<int64_t, 3>&, int);
template std::vector<uint8_t> flip_axis(const std::vector<uint8_t>&, const std::array<int64_t, 3>&, int);
template std::vector<float> rot90(const std::vector<float>&, std::array<int64_t, 3>&, int, int);
template std::vector<uint8_t> rot90(const std::vector<uint8_t>&, std::array<int64_t, 3>&, int, int);

}  // namespace vaemmd::preprocess
