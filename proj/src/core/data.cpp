#include "vaemmd/data.hpp"

#include <algorithm>

namespace vaemmd {

Image prepare_image(const Image& raw, int size) {
  validate(raw);
  Image img = raw;
  const std::array<int64_t, 3> target{size, size, size};
  if (img.grid.shape != target) img = preprocess::resize_trilinear(img, target);
  img = preprocess::zscore_foreground(img);
  return preprocess::minmax_to_range(img, -1.0, 1.0).image;
}

Mask prepare_mask(const Mask& raw, int size) {
  validate(raw);
  const std::array<int64_t, 3> target{size, size, size};
  if (raw.grid.shape == target) return raw;
  return preprocess::resize_nearest(raw, target);
}

std::vector<PreparedCase> load_split(const DatasetManifest& manifest, Split split, int size, bool with_masks) {
  const auto domains = manifest.domains();
  std::vector<PreparedCase> out;
  for (const CaseEntry* c : manifest.select(split)) {
    PreparedCase p;
    p.case_id = c->case_id;
    p.domain = static_cast<int>(std::find(domains.begin(), domains.end(), c->domain_id) - domains.begin());
    p.image = prepare_image(read_image(c->image_path), size);
    if (with_masks) {
      require(!c->mask_path.empty(), ErrorCode::kMissingArtifact, "case " + c->case_id + " has no mask");
      p.mask = prepare_mask(read_mask(c->mask_path), size);
    }
    out.push_back(std::move(p));
  }
  return out;
}

template <typename T>
Tensor<T> stack_images(const std::vector<const Image*>& images) {
  require(!images.empty(), ErrorCode::kInvalidArgument, "stack_images: empty batch");
  const auto& s = images.front()->grid.shape;
  std::vector<T> data;
  data.reserve(images.size() * static_cast<size_t>(images.front()->grid.size()));
  for (const Image* im : images) {
    require(im->grid.shape == s, ErrorCode::kInvalidArgument, "stack_images: inconsistent shapes");
    data.insert(data.end(), im->voxels.begin(), im->voxels.end());
  }
  return Tensor<T>::from({static_cast<int64_t>(images.size()), 1, s[0], s[1], s[2]}, std::move(data));
}

template <typename T>
Tensor<T> stack_masks(const std::vector<const Mask*>& masks) {
  require(!masks.empty(), ErrorCode::kInvalidArgument, "stack_masks: empty batch");
  const auto& s = masks.front()->grid.shape;
  std::vector<T> data;
  for (const Mask* m : masks) {
    require(m->grid.shape == s, ErrorCode::kInvalidArgument, "stack_masks: inconsistent shapes");
    for (uint8_t v : m->voxels) data.push_back(static_cast<T>(v));
  }
  return Tensor<T>::from({static_cast<int64_t>(masks.size()), 1, s[0], s[1], s[2]}, std::move(data));
}

template Tensor<float> stack_images(const std::vector<const Image*>&);
template Tensor<double> stack_images(const std::vector<const Image*>&);
template Tensor<float> stack_masks(const std::vector<const Mask*>&);
template Tensor<double> stack_masks(const std::vector<const Mask*>&);

}  // namespace vaemmd
