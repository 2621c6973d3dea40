#include "vaemmd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

namespace vaemmd::metrics {

using nlohmann::json;

namespace {

void require_binary(const Mask& m, const char* what) {
  for (uint8_t v : m.voxels)
    if (v > 1) fail(ErrorCode::kValidation, std::string(what) + ": mask is not binary");
}

void require_same_grid(const Mask& a, const Mask& b, const char* what) {
  require(a.grid.shape == b.grid.shape, ErrorCode::kInvalidArgument, std::string(what) + ": mask shapes differ");
  require(a.grid.spacing_mm == b.grid.spacing_mm, ErrorCode::kInvalidArgument,
          std::string(what) + ": mask spacings differ");
}

std::vector<std::array<int, 3>> neighbourhood(int connectivity) {
  require(connectivity == 6 || connectivity == 18 || connectivity == 26, ErrorCode::kInvalidArgument,
          "connectivity must be 6, 18 or 26");
  std::vector<std::array<int, 3>> out;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int order = std::abs(dz) + std::abs(dy) + std::abs(dx);
        if (order == 0) continue;
        if (connectivity == 6 && order > 1) continue;
        if (connectivity == 18 && order > 2) continue;
        out.push_back({dz, dy, dx});
      }
  return out;
}

// Exact 1D squared distance transform (lower envelope of parabolas) over
// samples at positions i * step; infinite entries are not sites.
void edt_line(std::vector<double>& f, double step, std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  const double inf = std::numeric_limits<double>::infinity();
  v.assign(n, 0);
  z.assign(n + 1, 0);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    const double xq = q * step;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    double s;
    while (true) {
      const double xp = v[k] * step;
      s = ((f[q] + xq * xq) - (f[v[k]] + xp * xp)) / (2 * (xq - xp));
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    if (s <= z[k]) {
      // replaces the only remaining parabola
      v[k] = q;
      z[k] = -inf;
      z[k + 1] = inf;
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  if (k < 0) return;
  std::vector<double> out(n);
  int j = 0;
  for (int q = 0; q < n; ++q) {
    const double xq = q * step;
    while (z[j + 1] < xq) ++j;
    const double d = xq - v[j] * step;
    out[q] = d * d + f[v[j]];
  }
  f.swap(out);
}

std::vector<double> squared_edt(const Mask& sites) {
  const auto& n = sites.grid.shape;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> d(sites.voxels.size());
  for (size_t i = 0; i < d.size(); ++i) d[i] = sites.voxels[i] ? 0.0 : inf;
  const std::array<int64_t, 3> stride{n[1] * n[2], n[2], 1};
  std::vector<double> line;
  std::vector<int> v;
  std::vector<double> z;
  for (int axis = 0; axis < 3; ++axis) {
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    line.resize(static_cast<size_t>(n[axis]));
    for (int64_t i = 0; i < n[a1]; ++i)
      for (int64_t j = 0; j < n[a2]; ++j) {
        const int64_t base = i * stride[a1] + j * stride[a2];
        for (int64_t t = 0; t < n[axis]; ++t) line[t] = d[base + t * stride[axis]];
        edt_line(line, sites.grid.spacing_mm[axis], v, z);
        for (int64_t t = 0; t < n[axis]; ++t) d[base + t * stride[axis]] = line[t];
      }
  }
  return d;
}

}  // namespace

Components connected_components(const Mask& mask, int connectivity) {
  require_binary(mask, "connected_components");
  const auto nbrs = neighbourhood(connectivity);
  const auto& n = mask.grid.shape;
  Components out;
  out.labels.assign(mask.voxels.size(), 0);
  std::deque<int64_t> queue;
  for (int64_t start = 0; start < mask.grid.size(); ++start) {
    if (!mask.voxels[start] || out.labels[start]) continue;
    const int label = ++out.count;
    out.labels[start] = label;
    queue.push_back(start);
    while (!queue.empty()) {
      const int64_t idx = queue.front();
      queue.pop_front();
      const int64_t z = idx / (n[1] * n[2]), y = (idx / n[2]) % n[1], x = idx % n[2];
      for (const auto& o : nbrs) {
        const int64_t zz = z + o[0], yy = y + o[1], xx = x + o[2];
        if (zz < 0 || yy < 0 || xx < 0 || zz >= n[0] || yy >= n[1] || xx >= n[2]) continue;
        const int64_t j = mask.grid.index(zz, yy, xx);
        if (mask.voxels[j] && !out.labels[j]) {
          out.labels[j] = label;
          queue.push_back(j);
        }
      }
    }
  }
  return out;
}

double f_beta(double precision, double sensitivity, double beta) {
  const double b2 = beta * beta;
  const double denom = b2 * precision + sensitivity;
  if (denom <= 0) return 0.0;
  return (1 + b2) * precision * sensitivity / denom;
}

LesionMetrics lesion_detection_metrics(const Mask& gt, const Mask& pred, int connectivity) {
  require_same_grid(gt, pred, "lesion_detection_metrics");
  const auto g = connected_components(gt, connectivity);
  const auto p = connected_components(pred, connectivity);
  LesionMetrics out;
  auto& m = out.match;
  m.gt_detected.assign(g.count, false);
  m.pred_tp.assign(p.count, false);
  for (size_t i = 0; i < gt.voxels.size(); ++i) {
    if (g.labels[i] && p.labels[i]) {
      m.gt_detected[g.labels[i] - 1] = true;
      m.pred_tp[p.labels[i] - 1] = true;
    }
  }
  m.tp = static_cast<int>(std::count(m.gt_detected.begin(), m.gt_detected.end(), true));
  m.fn = g.count - m.tp;
  m.tp_pred = static_cast<int>(std::count(m.pred_tp.begin(), m.pred_tp.end(), true));
  m.fp = p.count - m.tp_pred;
  out.sensitivity = g.count == 0 ? 1.0 : double(m.tp) / g.count;
  if (p.count == 0)
    out.precision = g.count == 0 ? 1.0 : 0.0;
  else
    out.precision = double(m.tp_pred) / p.count;
  out.f1 = f_beta(out.precision, out.sensitivity, 1.0);
  out.f2 = f_beta(out.precision, out.sensitivity, 2.0);
  return out;
}

double dice(const Mask& gt, const Mask& pred) {
  require_same_grid(gt, pred, "dice");
  require_binary(gt, "dice");
  require_binary(pred, "dice");
  int64_t a = 0, b = 0, both = 0;
  for (size_t i = 0; i < gt.voxels.size(); ++i) {
    a += gt.voxels[i];
    b += pred.voxels[i];
    both += gt.voxels[i] & pred.voxels[i];
  }
  if (a + b == 0) return 1.0;
  return 2.0 * double(both) / double(a + b);
}

Mask surface_mask(const Mask& mask) {
  require_binary(mask, "surface_extract");
  const auto& n = mask.grid.shape;
  Mask out(mask.grid);
  static const int off[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
  for (int64_t z = 0; z < n[0]; ++z)
    for (int64_t y = 0; y < n[1]; ++y)
      for (int64_t x = 0; x < n[2]; ++x) {
        if (!mask.at(z, y, x)) continue;
        bool interior = true;
        for (const auto& o : off) {
          const int64_t zz = z + o[0], yy = y + o[1], xx = x + o[2];
          if (zz < 0 || yy < 0 || xx < 0 || zz >= n[0] || yy >= n[1] || xx >= n[2] || !mask.at(zz, yy, xx)) {
            interior = false;
            break;
          }
        }
        if (!interior) out.at(z, y, x) = 1;
      }
  return out;
}

std::vector<std::array<double, 3>> surface_extract(const Mask& mask) {
  const Mask s = surface_mask(mask);
  const auto& n = s.grid.shape;
  const auto& sp = s.grid.spacing_mm;
  std::vector<std::array<double, 3>> out;
  for (int64_t z = 0; z < n[0]; ++z)
    for (int64_t y = 0; y < n[1]; ++y)
      for (int64_t x = 0; x < n[2]; ++x)
        if (s.at(z, y, x)) out.push_back({z * sp[0], y * sp[1], x * sp[2]});
  return out;
}

std::vector<double> surface_distances(const Mask& from, const Mask& to) {
  require_same_grid(from, to, "surface_distances");
  const Mask sf = surface_mask(from), st = surface_mask(to);
  require(st.count() > 0, ErrorCode::kInvalidArgument, "surface_distances: target surface is empty");
  const auto d2 = squared_edt(st);
  std::vector<double> out;
  for (size_t i = 0; i < sf.voxels.size(); ++i)
    if (sf.voxels[i]) out.push_back(std::sqrt(d2[i]));
  return out;
}

double surface_dice(const Mask& gt, const Mask& pred, double tolerance_mm) {
  require_same_grid(gt, pred, "surface_dice");
  const int64_t ng = surface_mask(gt).count(), np = surface_mask(pred).count();
  if (ng == 0 && np == 0) return 1.0;
  if (ng == 0 || np == 0) return 0.0;
  int64_t within = 0;
  for (double d : surface_distances(gt, pred)) within += d <= tolerance_mm;
  for (double d : surface_distances(pred, gt)) within += d <= tolerance_mm;
  return double(within) / double(ng + np);
}

double percentile(std::vector<double> values, double q) {
  require(!values.empty(), ErrorCode::kInvalidArgument, "percentile of an empty list");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * double(values.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - double(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::optional<double> hd95(const Mask& gt, const Mask& pred) {
  require_same_grid(gt, pred, "hd95");
  if (gt.count() == 0 || pred.count() == 0) return std::nullopt;
  auto pooled = surface_distances(gt, pred);
  const auto back = surface_distances(pred, gt);
  pooled.insert(pooled.end(), back.begin(), back.end());
  return percentile(std::move(pooled), 95.0);
}

CaseMetrics evaluate_case(const Mask& gt, const Mask& pred, double tolerance_mm, int connectivity) {
  CaseMetrics c;
  const auto lm = lesion_detection_metrics(gt, pred, connectivity);
  c.sensitivity = lm.sensitivity;
  c.precision = lm.precision;
  c.f1 = lm.f1;
  c.f2 = lm.f2;
  c.gt_lesions = static_cast<int>(lm.match.gt_detected.size());
  c.pred_lesions = static_cast<int>(lm.match.pred_tp.size());
  c.dice = dice(gt, pred);
  c.sdice = surface_dice(gt, pred, tolerance_mm);
  c.hd95_mm = hd95(gt, pred);
  return c;
}

CohortMetrics aggregate_cases(const std::vector<CaseMetrics>& cases) {
  require(!cases.empty(), ErrorCode::kInvalidArgument, "aggregate_cases: no cases");
  CohortMetrics out;
  out.cases = static_cast<int>(cases.size());
  std::vector<double> hd;
  for (const auto& c : cases) {
    out.sensitivity += c.sensitivity;
    out.precision += c.precision;
    out.f1 += c.f1;
    out.f2 += c.f2;
    out.dice += c.dice;
    out.sdice += c.sdice;
    if (c.hd95_mm)
      hd.push_back(*c.hd95_mm);
    else
      ++out.hd95_undefined;
  }
  const double n = double(cases.size());
  out.sensitivity /= n;
  out.precision /= n;
  out.f1 /= n;
  out.f2 /= n;
  out.dice /= n;
  out.sdice /= n;
  if (!hd.empty()) out.hd95_median_mm = percentile(hd, 50.0);
  return out;
}

namespace {
json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
}  // namespace

json to_json(const CaseMetrics& c) {
  return json{{"case_id", c.case_id},     {"domain_id", c.domain_id},
              {"sensitivity", c.sensitivity}, {"precision", c.precision},
              {"f1", c.f1},               {"f2", c.f2},
              {"dice", c.dice},           {"sdice", c.sdice},
              {"hd95_mm", optional_number(c.hd95_mm)}, {"gt_lesions", c.gt_lesions},
              {"pred_lesions", c.pred_lesions}};
}

json to_json(const CohortMetrics& c) {
  return json{{"sensitivity", c.sensitivity}, {"precision", c.precision},
              {"f1", c.f1},                   {"f2", c.f2},
              {"dice", c.dice},               {"sdice", c.sdice},
              {"hd95_median_mm", optional_number(c.hd95_median_mm)},
              {"hd95_undefined", c.hd95_undefined}, {"cases", c.cases}};
}

}  // namespace vaemmd::metrics
