#include "vaemmd/checkpoint.hpp"

#include "binio.hpp"

namespace vaemmd {

using nlohmann::json;

void Checkpoint::put(const std::string& name, Shape shape, std::vector<double> values) {
  require(static_cast<int64_t>(values.size()) == shape_numel(shape), ErrorCode::kInvalidArgument,
          "checkpoint entry " + name + ": value count does not match shape");
  for (auto& a : arrays_)
    if (a.name == name) {
      a.shape = std::move(shape);
      a.values = std::move(values);
      return;
    }
  arrays_.push_back({name, std::move(shape), std::move(values)});
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& a : arrays_)
    if (a.name == name) return true;
  return false;
}

const NamedArray& Checkpoint::get(const std::string& name) const {
  for (const auto& a : arrays_)
    if (a.name == name) return a;
  fail(ErrorCode::kValidation, "checkpoint has no entry named " + name);
}

std::string Checkpoint::serialize() const {
  require(dtype == "f32" || dtype == "f64", ErrorCode::kInvalidArgument, "checkpoint dtype must be f32 or f64");
  const size_t width = dtype == "f32" ? 4 : 8;
  json header;
  header["format"] = "vaemmd-checkpoint";
  header["version"] = kFormatVersion;
  header["dtype"] = dtype;
  header["meta"] = meta;
  json entries = json::array();
  size_t offset = 0;
  for (const auto& a : arrays_) {
    entries.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}, {"count", a.values.size()}});
    offset += a.values.size() * width;
  }
  header["arrays"] = entries;
  header["payload_bytes"] = offset;

  std::string out = header.dump();
  out.push_back('\n');
  out.reserve(out.size() + offset);
  for (const auto& a : arrays_)
    for (double v : a.values) {
      if (width == 4)
        binio::append_le(out, static_cast<float>(v));
      else
        binio::append_le(out, v);
    }
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes, const std::string& origin) {
  auto [header, payload] = binio::split_header(bytes, origin);
  Checkpoint ck;
  try {
    if (header.at("format") != "vaemmd-checkpoint") fail(ErrorCode::kFormat, origin + ": not a checkpoint");
    if (header.at("version").get<int>() != kFormatVersion)
      fail(ErrorCode::kFormat, origin + ": unsupported checkpoint version");
    ck.dtype = header.at("dtype").get<std::string>();
    if (ck.dtype != "f32" && ck.dtype != "f64") fail(ErrorCode::kFormat, origin + ": unknown dtype " + ck.dtype);
    ck.meta = header.at("meta");
    const size_t width = ck.dtype == "f32" ? 4 : 8;
    const size_t total = header.at("payload_bytes").get<size_t>();
    if (payload.size() < total) fail(ErrorCode::kTruncated, origin + ": payload truncated");
    if (payload.size() > total) fail(ErrorCode::kPayloadMismatch, origin + ": trailing bytes after payload");
    for (const auto& e : header.at("arrays")) {
      NamedArray a;
      a.name = e.at("name").get<std::string>();
      a.shape = e.at("shape").get<Shape>();
      const size_t count = e.at("count").get<size_t>();
      const size_t offset = e.at("offset").get<size_t>();
      if (static_cast<int64_t>(count) != shape_numel(a.shape) || offset + count * width > total)
        fail(ErrorCode::kFormat, origin + ": inconsistent entry " + a.name);
      a.values.resize(count);
      const char* p = payload.data() + offset;
      for (size_t i = 0; i < count; ++i)
        a.values[i] = width == 4 ? static_cast<double>(binio::read_le<float>(p + 4 * i)) : binio::read_le<double>(p + 8 * i);
      ck.arrays_.push_back(std::move(a));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, origin + ": malformed manifest: " + e.what());
  }
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const { binio::write_file(path, serialize()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  return deserialize(binio::read_file(path), path.string());
}

template <typename T>
void export_store(const nn::ParamStore<T>& store, Checkpoint& ckpt, bool with_moments) {
  ckpt.dtype = std::is_same_v<T, float> ? "f32" : "f64";
  for (const auto& p : store.params()) {
    ckpt.put("param/" + p.name, p.value.shape(), {p.value.data().begin(), p.value.data().end()});
    if (with_moments) {
      ckpt.put("adam_m/" + p.name, p.value.shape(), {p.m.begin(), p.m.end()});
      ckpt.put("adam_v/" + p.name, p.value.shape(), {p.v.begin(), p.v.end()});
    }
  }
  for (const auto& b : store.buffers()) {
    const int64_t c = static_cast<int64_t>(b.stats.mean.size());
    ckpt.put("stats/" + b.name + "/mean", {c}, {b.stats.mean.begin(), b.stats.mean.end()});
    ckpt.put("stats/" + b.name + "/var", {c}, {b.stats.var.begin(), b.stats.var.end()});
  }
}

template <typename T>
void import_store(nn::ParamStore<T>& store, const Checkpoint& ckpt, bool with_moments) {
  auto copy_into = [&](const std::string& key, const Shape& shape, std::span<T> dst) {
    const NamedArray& a = ckpt.get(key);
    require(a.shape == shape, ErrorCode::kValidation,
            "checkpoint entry " + key + " has shape " + shape_str(a.shape) + ", model expects " + shape_str(shape));
    for (size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(a.values[i]);
  };
  for (auto& p : store.params()) {
    copy_into("param/" + p.name, p.value.shape(), p.value.mutable_data());
    if (with_moments) {
      copy_into("adam_m/" + p.name, p.value.shape(), p.m);
      copy_into("adam_v/" + p.name, p.value.shape(), p.v);
    }
  }
  for (auto& b : store.buffers()) {
    const Shape s{static_cast<int64_t>(b.stats.mean.size())};
    copy_into("stats/" + b.name + "/mean", s, b.stats.mean);
    copy_into("stats/" + b.name + "/var", s, b.stats.var);
  }
}

template void export_store(const nn::ParamStore<float>&, Checkpoint&, bool);
template void export_store(const nn::ParamStore<double>&, Checkpoint&, bool);
template void import_store(nn::ParamStore<float>&, const Checkpoint&, bool);
template void import_store(nn::ParamStore<double>&, const Checkpoint&, bool);

}  // namespace vaemmd
