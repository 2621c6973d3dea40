#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vaemmd/manifest.hpp"
#include "vaemmd/preprocess.hpp"
#include "vaemmd/tensor.hpp"
#include "vaemmd/volume.hpp"

namespace vaemmd {

/// Model input pipeline: resize to size^3 (trilinear) when needed, z-score on
/// the foreground, then min-max onto [-1, 1].
Image prepare_image(const Image& raw, int size);
/// Nearest-neighbour resize to size^3 when needed.
Mask prepare_mask(const Mask& raw, int size);

struct PreparedCase {
  std::string case_id;
  int domain = 0;  // index into the manifest's domain list
  Image image;
  std::optional<Mask> mask;
};

/// Loads and prepares every case of `split` (all domains), in manifest order.
std::vector<PreparedCase> load_split(const DatasetManifest& manifest, Split split, int size, bool with_masks);

/// Stacks single-channel cubes into [N,1,S,S,S].
template <typename T>
Tensor<T> stack_images(const std::vector<const Image*>& images);
template <typename T>
Tensor<T> stack_masks(const std::vector<const Mask*>& masks);

}  // namespace vaemmd
