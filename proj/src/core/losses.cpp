#include "vaemmd/losses.hpp"

#include <array>
#include <cmath>
#include <limits>

#include "vaemmd/ops.hpp"

namespace vaemmd {

using nlohmann::json;

void LossWeights::validate() const {
  for (double w : {l2, l1, ssim, kl, mmd, adv})
    require(w >= 0 && std::isfinite(w), ErrorCode::kConfig, "loss weights must be finite and non-negative");
  require(!kernel_sigmas.empty(), ErrorCode::kConfig, "at least one kernel sigma is required");
  for (double s : kernel_sigmas) require(s > 0, ErrorCode::kConfig, "kernel sigmas must be positive");
}

json loss_weights_to_json(const LossWeights& w) {
  return json{{"lambda_l2", w.l2},   {"lambda_l1", w.l1},   {"lambda_ssim", w.ssim},          {"lambda_kl", w.kl},
              {"lambda_mmd", w.mmd}, {"lambda_adv", w.adv}, {"kernel_sigmas", w.kernel_sigmas}};
}

LossWeights loss_weights_from_json(const json& doc) {
  LossWeights w;
  try {
    w.l2 = doc.value("lambda_l2", w.l2);
    w.l1 = doc.value("lambda_l1", w.l1);
    w.ssim = doc.value("lambda_ssim", w.ssim);
    w.kl = doc.value("lambda_kl", w.kl);
    w.mmd = doc.value("lambda_mmd", w.mmd);
    w.adv = doc.value("lambda_adv", w.adv);
    w.kernel_sigmas = doc.value("kernel_sigmas", w.kernel_sigmas);
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, std::string("malformed loss weights: ") + e.what());
  }
  w.validate();
  return w;
}

void LossBreakdown::combine(const LossWeights& w) {
  recon = w.l2 * l2 + w.l1 * l1 + w.ssim * ssim_term;
  total = recon + w.kl * kl + w.mmd * mmd + w.adv * adv;
}

json LossBreakdown::to_json() const {
  return json{{"l2", l2}, {"l1", l1},   {"ssim_term", ssim_term}, {"recon", recon},
              {"kl", kl}, {"mmd", mmd}, {"adv", adv},             {"total", total},
              {"mmd_degenerate", mmd_degenerate}};
}

namespace {

template <typename T>
void check_same(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  require(a.shape() == b.shape(), ErrorCode::kInvalidArgument,
          std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Sliding-window sums of width w along one axis of a row-major 3D block.
std::vector<double> box_valid(const std::vector<double>& in, std::array<int64_t, 3>& dims, int axis, int w) {
  std::array<int64_t, 3> od = dims;
  od[axis] -= w - 1;
  std::vector<double> out(static_cast<size_t>(od[0] * od[1] * od[2]));
  const std::array<int64_t, 3> is{dims[1] * dims[2], dims[2], 1};
  for (int64_t a = 0; a < od[0]; ++a)
    for (int64_t b = 0; b < od[1]; ++b)
      for (int64_t c = 0; c < od[2]; ++c) {
        const int64_t base = a * is[0] + b * is[1] + c * is[2];
        double s = 0;
        for (int k = 0; k < w; ++k) s += in[base + k * is[axis]];
        out[(a * od[1] + b) * od[2] + c] = s;
      }
  dims = od;
  return out;
}

// Adjoint of box_valid: scatters each window sum back over its window.
std::vector<double> box_adjoint(const std::vector<double>& in, std::array<int64_t, 3>& dims, int axis, int w) {
  std::array<int64_t, 3> fd = dims;
  fd[axis] += w - 1;
  std::vector<double> out(static_cast<size_t>(fd[0] * fd[1] * fd[2]), 0.0);
  const std::array<int64_t, 3> fs{fd[1] * fd[2], fd[2], 1};
  for (int64_t a = 0; a < dims[0]; ++a)
    for (int64_t b = 0; b < dims[1]; ++b)
      for (int64_t c = 0; c < dims[2]; ++c) {
        const double v = in[(a * dims[1] + b) * dims[2] + c];
        const int64_t base = a * fs[0] + b * fs[1] + c * fs[2];
        for (int k = 0; k < w; ++k) out[base + k * fs[axis]] += v;
      }
  dims = fd;
  return out;
}

std::vector<double> box3(const std::vector<double>& in, std::array<int64_t, 3> dims, int w) {
  auto t = box_valid(in, dims, 0, w);
  t = box_valid(t, dims, 1, w);
  return box_valid(t, dims, 2, w);
}

std::vector<double> box3_adjoint(const std::vector<double>& in, std::array<int64_t, 3> valid_dims, int w) {
  auto t = box_adjoint(in, valid_dims, 0, w);
  t = box_adjoint(t, valid_dims, 1, w);
  return box_adjoint(t, valid_dims, 2, w);
}

struct SsimWindows {
  std::vector<double> mx, my, exx, eyy, exy;
};

SsimWindows window_moments(const std::vector<double>& x, const std::vector<double>& y,
                           const std::array<int64_t, 3>& dims, int w) {
  const double inv = 1.0 / (double(w) * w * w);
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  SsimWindows m{box3(x, dims, w), box3(y, dims, w), box3(xx, dims, w), box3(yy, dims, w), box3(xy, dims, w)};
  for (auto* v : {&m.mx, &m.my, &m.exx, &m.eyy, &m.exy})
    for (auto& e : *v) e *= inv;
  return m;
}

}  // namespace

template <typename T>
Tensor<T> l2_loss(const Tensor<T>& x, const Tensor<T>& x_hat) {
  check_same(x, x_hat, "l2_loss");
  return ops::mean(ops::square(ops::sub(x_hat, x)));
}

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& x, const Tensor<T>& x_hat) {
  check_same(x, x_hat, "l1_loss");
  return ops::mean(ops::abs(ops::sub(x_hat, x)));
}

template <typename T>
Tensor<T> ssim3d(const Tensor<T>& x, const Tensor<T>& y, int window, double data_range) {
  check_same(x, y, "ssim3d");
  require(x.rank() == 5, ErrorCode::kInvalidArgument, "ssim3d expects [N,C,D,H,W] inputs");
  require(window >= 1, ErrorCode::kInvalidArgument, "ssim3d window must be >= 1");
  for (int a = 2; a < 5; ++a)
    require(x.dim(a) >= window, ErrorCode::kInvalidArgument,
            "ssim3d: volume side " + std::to_string(x.dim(a)) + " smaller than window " + std::to_string(window));
  const std::array<int64_t, 3> dims{x.dim(2), x.dim(3), x.dim(4)};
  const std::array<int64_t, 3> vdims{dims[0] - window + 1, dims[1] - window + 1, dims[2] - window + 1};
  const int64_t vol = dims[0] * dims[1] * dims[2];
  const int64_t positions = vdims[0] * vdims[1] * vdims[2];
  const int64_t volumes = x.dim(0) * x.dim(1);
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);

  auto slice_of = [vol](const Tensor<T>& t, int64_t v) {
    const auto d = t.data();
    return std::vector<double>(d.begin() + v * vol, d.begin() + (v + 1) * vol);
  };

  double total = 0;
  for (int64_t v = 0; v < volumes; ++v) {
    const auto m = window_moments(slice_of(x, v), slice_of(y, v), dims, window);
    for (int64_t p = 0; p < positions; ++p) {
      const double a1 = 2 * m.mx[p] * m.my[p] + c1;
      const double a2 = 2 * (m.exy[p] - m.mx[p] * m.my[p]) + c2;
      const double b1 = m.mx[p] * m.mx[p] + m.my[p] * m.my[p] + c1;
      const double b2 = (m.exx[p] - m.mx[p] * m.mx[p]) + (m.eyy[p] - m.my[p] * m.my[p]) + c2;
      total += a1 * a2 / (b1 * b2);
    }
  }
  const double norm = 1.0 / double(volumes * positions);
  const T value = static_cast<T>(total / double(volumes * positions));

  auto xn = x.node(), yn = y.node();
  return detail::make_result<T>({1}, {value}, {x, y}, [=](detail::Node<T>& self) {
    const double g = double(self.grad[0]) * norm / (double(window) * window * window);
    const bool need_x = xn->requires_grad, need_y = yn->requires_grad;
    for (int64_t v = 0; v < volumes; ++v) {
      const std::vector<double> xs(xn->data.begin() + v * vol, xn->data.begin() + (v + 1) * vol);
      const std::vector<double> ys(yn->data.begin() + v * vol, yn->data.begin() + (v + 1) * vol);
      const auto m = window_moments(xs, ys, dims, window);
      std::vector<double> gmx(positions), gmy(positions), gxx(positions), gyy(positions), gxy(positions);
      for (int64_t p = 0; p < positions; ++p) {
        const double mx = m.mx[p], my = m.my[p];
        const double a1 = 2 * mx * my + c1;
        const double a2 = 2 * (m.exy[p] - mx * my) + c2;
        const double b1 = mx * mx + my * my + c1;
        const double b2 = (m.exx[p] - mx * mx) + (m.eyy[p] - my * my) + c2;
        const double s = a1 * a2 / (b1 * b2) * g;
        gmx[p] = s * (2 * my / a1 - 2 * my / a2 - 2 * mx / b1 + 2 * mx / b2);
        gmy[p] = s * (2 * mx / a1 - 2 * mx / a2 - 2 * my / b1 + 2 * my / b2);
        gxx[p] = -s / b2;
        gyy[p] = -s / b2;
        gxy[p] = s * 2 / a2;
      }
      const auto amx = box3_adjoint(gmx, vdims, window), amy = box3_adjoint(gmy, vdims, window);
      const auto axx = box3_adjoint(gxx, vdims, window), ayy = box3_adjoint(gyy, vdims, window);
      const auto axy = box3_adjoint(gxy, vdims, window);
      if (need_x) {
        auto& gx = xn->grad_buffer();
        for (int64_t i = 0; i < vol; ++i)
          gx[v * vol + i] += static_cast<T>(amx[i] + 2 * xs[i] * axx[i] + ys[i] * axy[i]);
      }
      if (need_y) {
        auto& gy = yn->grad_buffer();
        for (int64_t i = 0; i < vol; ++i)
          gy[v * vol + i] += static_cast<T>(amy[i] + 2 * ys[i] * ayy[i] + xs[i] * axy[i]);
      }
    }
  });
}

template <typename T>
Tensor<T> kl_divergence(const Latent<T>& latent) {
  check_same(latent.mu, latent.log_var, "kl_divergence");
  require(latent.mu.rank() == 2, ErrorCode::kInvalidArgument, "kl_divergence expects [N, latent] tensors");
  const auto& mu = latent.mu;
  const auto& lv = latent.log_var;
  const auto inner = ops::add_scalar(ops::sub(ops::sub(lv, ops::square(mu)), ops::exp(lv)), T(1));
  return ops::scale(ops::sum(inner), static_cast<T>(-0.5 / double(mu.dim(0))));
}

template <typename T>
Tensor<T> mmd_multikernel(const Tensor<T>& a, const Tensor<T>& b, const std::vector<double>& sigmas,
                          MmdEstimator estimator) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1), ErrorCode::kInvalidArgument,
          "mmd_multikernel expects [n,d] and [m,d] sample sets");
  require(!sigmas.empty(), ErrorCode::kInvalidArgument, "mmd_multikernel needs at least one sigma");
  const int64_t n = a.dim(0), m = b.dim(0);
  const bool unbiased = estimator == MmdEstimator::kUnbiased;
  require(n >= (unbiased ? 2 : 1) && m >= (unbiased ? 2 : 1), ErrorCode::kInvalidArgument,
          unbiased ? "unbiased MMD needs at least two samples per set" : "MMD sample sets must be non-empty");
  const auto daa = ops::pairwise_sq_dist(a, a);
  const auto dbb = ops::pairwise_sq_dist(b, b);
  const auto dab = ops::pairwise_sq_dist(a, b);
  Tensor<T> acc;
  for (double sigma : sigmas) {
    require(sigma > 0, ErrorCode::kInvalidArgument, "kernel sigmas must be positive");
    const T f = static_cast<T>(-1.0 / (2.0 * sigma * sigma));
    const auto kaa = ops::sum(ops::exp(ops::scale(daa, f)));
    const auto kbb = ops::sum(ops::exp(ops::scale(dbb, f)));
    const auto kab = ops::sum(ops::exp(ops::scale(dab, f)));
    Tensor<T> term;
    if (unbiased) {
      // the diagonal holds exp(0) = 1 exactly
      term = ops::add(ops::scale(ops::add_scalar(kaa, T(-n)), static_cast<T>(1.0 / double(n * (n - 1)))),
                      ops::scale(ops::add_scalar(kbb, T(-m)), static_cast<T>(1.0 / double(m * (m - 1)))));
    } else {
      term = ops::add(ops::scale(kaa, static_cast<T>(1.0 / double(n * n))),
                      ops::scale(kbb, static_cast<T>(1.0 / double(m * m))));
    }
    term = ops::sub(term, ops::scale(kab, static_cast<T>(2.0 / double(n * m))));
    acc = acc.defined() ? ops::add(acc, term) : term;
  }
  return ops::scale(acc, static_cast<T>(1.0 / double(sigmas.size())));
}

template <typename T>
Tensor<T> pairwise_domain_mmd(const Tensor<T>& z, const std::vector<int>& domains, const std::vector<double>& sigmas,
                              MmdEstimator estimator, bool* degenerate) {
  require(z.rank() == 2 && static_cast<int64_t>(domains.size()) == z.dim(0), ErrorCode::kInvalidArgument,
          "pairwise_domain_mmd: one domain label per latent row required");
  std::vector<int> ids;
  std::vector<std::vector<int64_t>> rows;
  for (size_t i = 0; i < domains.size(); ++i) {
    size_t k = 0;
    while (k < ids.size() && ids[k] != domains[i]) ++k;
    if (k == ids.size()) {
      ids.push_back(domains[i]);
      rows.emplace_back();
    }
    rows[k].push_back(static_cast<int64_t>(i));
  }
  if (degenerate) *degenerate = ids.size() < 2;
  if (ids.size() < 2) return Tensor<T>::scalar(T(0));
  std::vector<Tensor<T>> groups;
  for (const auto& r : rows) groups.push_back(ops::gather_rows(z, r));
  Tensor<T> acc;
  int pairs = 0;
  for (size_t i = 0; i < groups.size(); ++i)
    for (size_t j = i + 1; j < groups.size(); ++j) {
      const auto term = mmd_multikernel(groups[i], groups[j], sigmas, estimator);
      acc = acc.defined() ? ops::add(acc, term) : term;
      ++pairs;
    }
  return ops::scale(acc, static_cast<T>(1.0 / pairs));
}

template <typename T>
Tensor<T> adversarial_g_loss(const Tensor<T>& scores_fake) {
  require(scores_fake.defined() && scores_fake.numel() > 0, ErrorCode::kInvalidArgument, "empty fake scores");
  return ops::mean(ops::square(ops::add_scalar(scores_fake, T(-1))));
}

template <typename T>
Tensor<T> adversarial_d_loss(const Tensor<T>& scores_real, const Tensor<T>& scores_fake) {
  require(scores_real.defined() && scores_real.numel() > 0 && scores_fake.defined() && scores_fake.numel() > 0,
          ErrorCode::kInvalidArgument, "empty discriminator scores");
  return ops::add(ops::mean(ops::square(ops::add_scalar(scores_real, T(-1)))), ops::mean(ops::square(scores_fake)));
}

template <typename T>
TotalLoss<T> total_loss(const LossTerms<T>& terms, const LossWeights& w) {
  TotalLoss<T> out;
  auto value = [](const Tensor<T>& t) { return t.defined() ? double(t.item()) : 0.0; };
  auto& b = out.breakdown;
  b.l2 = value(terms.l2);
  b.l1 = value(terms.l1);
  b.ssim_term = terms.ssim.defined() ? 1.0 - value(terms.ssim) : 0.0;
  b.kl = value(terms.kl);
  b.mmd = value(terms.mmd);
  b.adv = value(terms.adv);
  b.combine(w);

  Tensor<T>& total = out.total;
  auto add_term = [&](const Tensor<T>& t, double weight) {
    if (weight == 0.0) return;
    require(t.defined(), ErrorCode::kInvalidArgument, "total_loss: a weighted term was not computed");
    const auto scaled = ops::scale(t, static_cast<T>(weight));
    total = total.defined() ? ops::add(total, scaled) : scaled;
  };
  add_term(terms.l2, w.l2);
  add_term(terms.l1, w.l1);
  if (w.ssim != 0.0) {
    require(terms.ssim.defined(), ErrorCode::kInvalidArgument, "total_loss: a weighted term was not computed");
    const auto part = ops::add_scalar(ops::scale(terms.ssim, static_cast<T>(-w.ssim)), static_cast<T>(w.ssim));
    total = total.defined() ? ops::add(total, part) : part;
  }
  add_term(terms.kl, w.kl);
  add_term(terms.mmd, w.mmd);
  add_term(terms.adv, w.adv);
  if (!total.defined()) total = Tensor<T>::scalar(T(0));
  return out;
}

double mse(std::span<const float> x, std::span<const float> y, bool rescale_to_unit) {
  require(x.size() == y.size() && !x.empty(), ErrorCode::kInvalidArgument, "mse: size mismatch or empty input");
  double acc = 0;
  const double f = rescale_to_unit ? 0.5 : 1.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double d = f * (double(x[i]) - double(y[i]));
    acc += d * d;
  }
  return acc / double(x.size());
}

double psnr_from_mse(double mse_value, double peak) {
  if (mse_value <= 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse_value);
}

double psnr(std::span<const float> x, std::span<const float> y, double peak, bool rescale_to_unit) {
  return psnr_from_mse(mse(x, y, rescale_to_unit), peak);
}

#define VAEMMD_INSTANTIATE(T)                                                                                \
  template Tensor<T> l2_loss(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> l1_loss(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> ssim3d(const Tensor<T>&, const Tensor<T>&, int, double);                                \
  template Tensor<T> kl_divergence(const Latent<T>&);                                                        \
  template Tensor<T> mmd_multikernel(const Tensor<T>&, const Tensor<T>&, const std::vector<double>&,         \
                                     MmdEstimator);                                                          \
  template Tensor<T> pairwise_domain_mmd(const Tensor<T>&, const std::vector<int>&, const std::vector<double>&, \
                                         MmdEstimator, bool*);                                               \
  template Tensor<T> adversarial_g_loss(const Tensor<T>&);                                                   \
  template Tensor<T> adversarial_d_loss(const Tensor<T>&, const Tensor<T>&);                                 \
  template TotalLoss<T> total_loss(const LossTerms<T>&, const LossWeights&);

VAEMMD_INSTANTIATE(float)
VAEMMD_INSTANTIATE(double)
#undef VAEMMD_INSTANTIATE

}  // namespace vaemmd
