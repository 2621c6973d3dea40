#include "vaemmd/manifest.hpp"

#include <map>
#include <set>

#include "binio.hpp"

namespace vaemmd {

using nlohmann::json;
namespace fs = std::filesystem;

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  fail(ErrorCode::kValidation, "unknown split '" + s + "'");
}

std::vector<std::string> DatasetManifest::domains() const {
  std::vector<std::string> out;
  for (const auto& c : cases)
    if (std::find(out.begin(), out.end(), c.domain_id) == out.end()) out.push_back(c.domain_id);
  return out;
}

std::vector<const CaseEntry*> DatasetManifest::select(Split split, const std::optional<std::string>& domain) const {
  std::vector<const CaseEntry*> out;
  for (const auto& c : cases)
    if (c.split == split && (!domain || c.domain_id == *domain)) out.push_back(&c);
  return out;
}

const CaseEntry& DatasetManifest::find(const std::string& case_id) const {
  for (const auto& c : cases)
    if (c.case_id == case_id) return c;
  fail(ErrorCode::kValidation, "manifest has no case " + case_id);
}

void validate_manifest(const DatasetManifest& manifest, bool check_files) {
  std::set<std::string> ids;
  std::map<std::string, Split> patient_split;
  std::map<std::string, Split> file_split;
  for (const auto& c : manifest.cases) {
    require(!c.case_id.empty(), ErrorCode::kValidation, "manifest case with empty case_id");
    require(!c.domain_id.empty(), ErrorCode::kValidation, "case " + c.case_id + " has no domain_id");
    require(ids.insert(c.case_id).second, ErrorCode::kValidation, "duplicate case_id: " + c.case_id);
    const std::string patient = c.patient_id.empty() ? c.case_id : c.patient_id;
    auto [it, fresh] = patient_split.emplace(patient, c.split);
    require(fresh || it->second == c.split, ErrorCode::kValidation,
            "patient " + patient + " appears in both " + split_name(it->second) + " and " + split_name(c.split) +
                " splits (no patient overlap allowed)");
    const std::string file = fs::weakly_canonical(c.image_path).string();
    auto [fit, ffresh] = file_split.emplace(file, c.split);
    require(ffresh || fit->second == c.split, ErrorCode::kValidation,
            "image " + c.image_path.string() + " is referenced from more than one split");
    if (check_files) {
      require(fs::exists(c.image_path), ErrorCode::kMissingArtifact,
              "case " + c.case_id + ": image file not found: " + c.image_path.string());
      require(c.mask_path.empty() || fs::exists(c.mask_path), ErrorCode::kMissingArtifact,
              "case " + c.case_id + ": mask file not found: " + c.mask_path.string());
    }
  }
}

DatasetManifest load_manifest(const fs::path& path) {
  const std::string bytes = binio::read_file(path);
  DatasetManifest m;
  m.root = fs::absolute(path).parent_path();
  try {
    const json doc = json::parse(bytes);
    for (const auto& e : doc.at("cases")) {
      CaseEntry c;
      c.case_id = e.at("case_id").get<std::string>();
      c.domain_id = e.at("domain_id").get<std::string>();
      c.patient_id = e.value("patient_id", c.case_id);
      c.image_path = m.root / e.at("image_path").get<std::string>();
      const std::string mask = e.value("mask_path", std::string());
      if (!mask.empty()) c.mask_path = m.root / mask;
      c.split = parse_split(e.at("split").get<std::string>());
      m.cases.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, path.string() + ": malformed manifest: " + e.what());
  }
  validate_manifest(m, true);
  return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  validate_manifest(manifest, false);
  const fs::path root = fs::absolute(path).parent_path();
  json cases = json::array();
  for (const auto& c : manifest.cases) {
    json e;
    e["case_id"] = c.case_id;
    e["domain_id"] = c.domain_id;
    e["patient_id"] = c.patient_id.empty() ? c.case_id : c.patient_id;
    e["image_path"] = fs::relative(fs::absolute(c.image_path), root).generic_string();
    e["mask_path"] = c.mask_path.empty() ? "" : fs::relative(fs::absolute(c.mask_path), root).generic_string();
    e["split"] = split_name(c.split);
    cases.push_back(e);
  }
  json doc;
  doc["version"] = 1;
  doc["cases"] = cases;
  binio::write_file(path, doc.dump(2) + "\n");
}

}  // namespace vaemmd
