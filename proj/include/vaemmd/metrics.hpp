#pragma once

#include <array>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "vaemmd/volume.hpp"

namespace vaemmd::metrics {

struct Components {
  std::vector<int32_t> labels;  // 0 background, 1..count in scan order of each component's first voxel
  int count = 0;
};

/// connectivity is 6, 18 or 26.
Components connected_components(const Mask& mask, int connectivity = 26);

struct LesionMatchResult {
  std::vector<bool> gt_detected;  // per ground-truth component
  std::vector<bool> pred_tp;      // per predicted component
  int tp = 0;                     // detected ground-truth lesions
  int fn = 0;
  int tp_pred = 0;                // predicted components touching ground truth
  int fp = 0;
};

struct LesionMetrics {
  LesionMatchResult match;
  double sensitivity = 0, precision = 0, f1 = 0, f2 = 0;
};

/// F_beta = (1 + b^2) P S / (b^2 P + S); 0 when P = S = 0.
double f_beta(double precision, double sensitivity, double beta);

/// A ground-truth lesion counts as detected when any predicted voxel falls
/// inside it; a predicted component is a true positive when it overlaps any
/// ground-truth voxel. Empty ground truth gives sensitivity 1; no predicted
/// components give precision 0 unless the ground truth is empty too.
LesionMetrics lesion_detection_metrics(const Mask& gt, const Mask& pred, int connectivity = 26);

/// 2|A n B| / (|A| + |B|), 1 when both are empty.
double dice(const Mask& gt, const Mask& pred);

/// Mask minus its erosion by the 6-neighbour cross; voxels outside the
/// volume count as background.
Mask surface_mask(const Mask& mask);
/// Surface voxel centres in mm, scan order.
std::vector<std::array<double, 3>> surface_extract(const Mask& mask);

/// Distance (mm) from every surface voxel of `from` to the nearest surface
/// voxel of `to`, via an exact Euclidean distance transform. `to` must have
/// a non-empty surface.
std::vector<double> surface_distances(const Mask& from, const Mask& to);

/// Symmetric surface Dice at `tolerance_mm`; 1 when both masks are empty, 0
/// when exactly one is.
double surface_dice(const Mask& gt, const Mask& pred, double tolerance_mm = 1.0);

/// 95th percentile (linear interpolation) of the pooled distances of both
/// directions; nullopt when either mask is empty.
std::optional<double> hd95(const Mask& gt, const Mask& pred);

/// Linear-interpolation percentile of unsorted values, q in [0, 100].
double percentile(std::vector<double> values, double q);

struct CaseMetrics {
  std::string case_id;
  std::string domain_id;
  double sensitivity = 0, precision = 0, f1 = 0, f2 = 0, dice = 0, sdice = 0;
  std::optional<double> hd95_mm;
  int gt_lesions = 0, pred_lesions = 0;
};

CaseMetrics evaluate_case(const Mask& gt, const Mask& pred, double tolerance_mm = 1.0, int connectivity = 26);

struct CohortMetrics {
  double sensitivity = 0, precision = 0, f1 = 0, f2 = 0, dice = 0, sdice = 0;
  std::optional<double> hd95_median_mm;
  int hd95_undefined = 0;
  int cases = 0;
};

/// Means of the rates, median of the defined HD95 values.
CohortMetrics aggregate_cases(const std::vector<CaseMetrics>& cases);

nlohmann::json to_json(const CaseMetrics& c);
nlohmann::json to_json(const CohortMetrics& c);

}  // namespace vaemmd::metrics
