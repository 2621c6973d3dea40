#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace vaemmd {

enum class Split { kTrain, kVal, kTest };

const char* split_name(Split s);
Split parse_split(const std::string& s);

struct CaseEntry {
  std::string case_id;
  std::string domain_id;
  std::string patient_id;  // defaults to case_id; must not straddle splits
  std::filesystem::path image_path;  // absolute after loading
  std::filesystem::path mask_path;   // empty for unlabeled cases
  Split split = Split::kTrain;
};

struct DatasetManifest {
  std::filesystem::path root;  // directory holding the manifest file
  std::vector<CaseEntry> cases;

  /// Domain ids in first-appearance order.
  std::vector<std::string> domains() const;
  std::vector<const CaseEntry*> select(Split split, const std::optional<std::string>& domain = std::nullopt) const;
  const CaseEntry& find(const std::string& case_id) const;
};

/// Checks unique case ids, disjoint splits per patient and per image file,
/// and (when `check_files`) that every referenced file exists.
void validate_manifest(const DatasetManifest& manifest, bool check_files = true);

DatasetManifest load_manifest(const std::filesystem::path& path);
/// Paths are written relative to the manifest's directory.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

}  // namespace vaemmd
