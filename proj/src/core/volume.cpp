#include "vaemmd/volume.hpp"

#include <cmath>

#include "binio.hpp"

namespace vaemmd {

using nlohmann::json;

namespace {

constexpr int kRvolVersion = 1;

const char* kind_name(VolumeKind k) {
  switch (k) {
    case VolumeKind::kImage: return "image";
    case VolumeKind::kMask: return "mask";
    case VolumeKind::kLabel: return "label";
  }
  return "?";
}

std::string header_line(const Grid& grid, const char* dtype, VolumeKind kind) {
  json h;
  h["format"] = "RVOL";
  h["version"] = kRvolVersion;
  h["shape"] = grid.shape;
  h["spacing_mm"] = grid.spacing_mm;
  h["dtype"] = dtype;
  h["kind"] = kind_name(kind);
  std::string s = h.dump();
  s.push_back('\n');
  return s;
}

}  // namespace

int64_t Mask::count() const {
  int64_t n = 0;
  for (uint8_t v : voxels) n += v != 0;
  return n;
}

void validate_grid(const Grid& grid) {
  for (int d = 0; d < 3; ++d) {
    require(grid.shape[d] > 0, ErrorCode::kValidation, "volume shape must be positive on every axis");
    require(grid.spacing_mm[d] > 0 && std::isfinite(grid.spacing_mm[d]), ErrorCode::kValidation,
            "voxel spacing must be strictly positive");
  }
}

void validate(const Image& image) {
  validate_grid(image.grid);
  require(static_cast<int64_t>(image.voxels.size()) == image.grid.size(), ErrorCode::kPayloadMismatch,
          "image voxel count does not match its shape");
  for (float v : image.voxels) require(std::isfinite(v), ErrorCode::kValidation, "image contains non-finite voxels");
}

void validate(const Mask& mask) {
  validate_grid(mask.grid);
  require(static_cast<int64_t>(mask.voxels.size()) == mask.grid.size(), ErrorCode::kPayloadMismatch,
          "mask voxel count does not match its shape");
  require(mask.kind != VolumeKind::kImage, ErrorCode::kValidation, "mask kind must be mask or label");
  if (mask.kind == VolumeKind::kMask)
    for (uint8_t v : mask.voxels)
      require(v <= 1, ErrorCode::kValidation, "binary mask holds value " + std::to_string(v));
}

std::string encode_rvol(const Image& image) {
  validate(image);
  std::string out = header_line(image.grid, "f32", VolumeKind::kImage);
  out.reserve(out.size() + image.voxels.size() * 4);
  for (float v : image.voxels) binio::append_le(out, v);
  return out;
}

std::string encode_rvol(const Mask& mask) {
  validate(mask);
  std::string out = header_line(mask.grid, "u8", mask.kind);
  out.append(reinterpret_cast<const char*>(mask.voxels.data()), mask.voxels.size());
  return out;
}

Volume decode_rvol(const std::string& bytes, const std::string& origin) {
  auto [h, payload] = binio::split_header(bytes, origin);
  VolumeHeader header;
  try {
    require(h.at("format") == "RVOL", ErrorCode::kFormat, origin + ": not an RVOL file");
    require(h.at("version").get<int>() == kRvolVersion, ErrorCode::kFormat, origin + ": unsupported RVOL version");
    header.grid.shape = h.at("shape").get<std::array<int64_t, 3>>();
    header.grid.spacing_mm = h.at("spacing_mm").get<std::array<double, 3>>();
    header.dtype = h.at("dtype").get<std::string>();
    const std::string kind = h.at("kind").get<std::string>();
    if (kind == "image") header.kind = VolumeKind::kImage;
    else if (kind == "mask") header.kind = VolumeKind::kMask;
    else if (kind == "label") header.kind = VolumeKind::kLabel;
    else fail(ErrorCode::kFormat, origin + ": unknown kind " + kind);
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, origin + ": malformed header: " + e.what());
  }
  for (int d = 0; d < 3; ++d) {
    require(header.grid.shape[d] > 0, ErrorCode::kFormat, origin + ": non-positive shape in header");
    require(header.grid.spacing_mm[d] > 0, ErrorCode::kFormat, origin + ": non-positive spacing in header");
  }
  const bool is_image = header.kind == VolumeKind::kImage;
  require(is_image == (header.dtype == "f32") && (header.dtype == "f32" || header.dtype == "u8"), ErrorCode::kFormat,
          origin + ": dtype " + header.dtype + " is inconsistent with kind");
  const size_t width = is_image ? 4 : 1;
  const size_t expected = static_cast<size_t>(header.grid.size()) * width;
  if (payload.size() < expected)
    fail(ErrorCode::kTruncated, origin + ": payload truncated (" + std::to_string(payload.size()) + " of " +
                                    std::to_string(expected) + " bytes)");
  if (payload.size() > expected)
    fail(ErrorCode::kPayloadMismatch, origin + ": payload has " + std::to_string(payload.size() - expected) +
                                          " bytes beyond the declared shape");
  if (is_image) {
    Image img(header.grid);
    for (size_t i = 0; i < img.voxels.size(); ++i) img.voxels[i] = binio::read_le<float>(payload.data() + 4 * i);
    validate(img);
    return img;
  }
  Mask m(header.grid);
  m.kind = header.kind;
  std::copy(payload.begin(), payload.end(), m.voxels.begin());
  validate(m);
  return m;
}

Volume read_volume(const std::filesystem::path& path) { return decode_rvol(binio::read_file(path), path.string()); }

Image read_image(const std::filesystem::path& path) {
  Volume v = read_volume(path);
  if (auto* img = std::get_if<Image>(&v)) return std::move(*img);
  fail(ErrorCode::kValidation, path.string() + ": expected an image volume, found a mask");
}

Mask read_mask(const std::filesystem::path& path) {
  Volume v = read_volume(path);
  if (auto* m = std::get_if<Mask>(&v)) return std::move(*m);
  fail(ErrorCode::kValidation, path.string() + ": expected a mask volume, found an image");
}

void write_volume(const Image& image, const std::filesystem::path& path) { binio::write_file(path, encode_rvol(image)); }
void write_volume(const Mask& mask, const std::filesystem::path& path) { binio::write_file(path, encode_rvol(mask)); }

}  // namespace vaemmd
