#pragma once

#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "vaemmd/nn.hpp"

namespace vaemmd {

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

/// Named-array container: a JSON manifest line (format version, dtype,
/// array names/shapes/offsets, free-form metadata) followed by raw
/// little-endian values. Output bytes depend only on contents.
class Checkpoint {
 public:
  static constexpr int kFormatVersion = 1;

  std::string dtype = "f32";  // "f32" | "f64"
  nlohmann::json meta = nlohmann::json::object();

  void put(const std::string& name, Shape shape, std::vector<double> values);
  bool has(const std::string& name) const;
  const NamedArray& get(const std::string& name) const;
  const std::vector<NamedArray>& arrays() const { return arrays_; }

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes, const std::string& origin = "checkpoint");
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::vector<NamedArray> arrays_;
};

/// Parameters as "param/<name>", Adam moments as "adam_m/<name>" and
/// "adam_v/<name>", batch-norm statistics as "stats/<name>/{mean,var}".
template <typename T>
void export_store(const nn::ParamStore<T>& store, Checkpoint& ckpt, bool with_moments);

/// Shapes must match exactly; missing entries are an error.
template <typename T>
void import_store(nn::ParamStore<T>& store, const Checkpoint& ckpt, bool with_moments);

}  // namespace vaemmd
