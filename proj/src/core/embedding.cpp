#include "vaemmd/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "vaemmd/error.hpp"
#include "vaemmd/rng.hpp"

namespace vaemmd {

EmbedMethod parse_embed_method(const std::string& s) {
  if (s == "pca") return EmbedMethod::kPca;
  if (s == "tsne") return EmbedMethod::kTsne;
  fail(ErrorCode::kInvalidArgument, "unknown embedding method '" + s + "' (expected pca or tsne)");
}

const char* embed_method_name(EmbedMethod m) { return m == EmbedMethod::kPca ? "pca" : "tsne"; }

namespace {

void check_input(const Eigen::MatrixXd& x, int dims) {
  require(dims >= 1, ErrorCode::kInvalidArgument, "embedding: dims must be positive");
  require(x.rows() >= 3, ErrorCode::kInvalidArgument, "embedding: needs at least three cases");
  require(x.rows() > dims, ErrorCode::kInvalidArgument, "embedding: fewer cases than output dimensions");
  require(x.allFinite(), ErrorCode::kNumerical, "embedding: non-finite features");
}

}  // namespace

PcaResult pca(const Eigen::MatrixXd& x, int dims) {
  check_input(x, dims);
  PcaResult r;
  r.mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - r.mean;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::MatrixXd& v = svd.matrixV();
  const int k = static_cast<int>(std::min<Eigen::Index>(dims, v.cols()));
  r.components = Eigen::MatrixXd::Zero(x.cols(), dims);
  r.components.leftCols(k) = v.leftCols(k);
  for (int c = 0; c < k; ++c) {
    Eigen::Index arg = 0;
    r.components.col(c).cwiseAbs().maxCoeff(&arg);
    if (r.components(arg, c) < 0) r.components.col(c) *= -1.0;
  }
  r.coords = centered * r.components;
  return r;
}

Eigen::MatrixXd tsne(const Eigen::MatrixXd& x, int dims, const TsneOptions& options) {
  check_input(x, dims);
  require(options.iters > 0 && options.learning_rate > 0, ErrorCode::kInvalidArgument, "tsne: bad options");
  const Eigen::Index n = x.rows();
  const double perplexity = std::min(30.0, double(n - 1) / 3.0);
  const double target = std::log(perplexity);

  Eigen::MatrixXd d2(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) d2(i, j) = (x.row(i) - x.row(j)).squaredNorm();

  // Conditional affinities by bisection on the precision of each row.
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double dmin = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) dmin = std::min(dmin, d2(i, j));
    for (int step = 0; step < 200; ++step) {
      double sum = 0, weighted = 0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        const double w = std::exp(-beta * (d2(i, j) - dmin));
        p(i, j) = w;
        sum += w;
        weighted += w * (d2(i, j) - dmin);
      }
      const double entropy = std::log(sum) + beta * weighted / sum;
      p.row(i) /= sum;
      if (std::abs(entropy - target) < 1e-6) break;
      if (entropy > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
  }
  Eigen::MatrixXd pj = (p + p.transpose()) / (2.0 * double(n));
  pj = pj.cwiseMax(1e-12);
  pj.diagonal().setZero();

  Rng rng(options.seed);
  Eigen::MatrixXd y(n, dims);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int c = 0; c < dims; ++c) y(i, c) = 1e-4 * rng.normal();
  Eigen::MatrixXd velocity = Eigen::MatrixXd::Zero(n, dims);
  Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(n, dims);
  Eigen::MatrixXd num(n, n), grad(n, dims);

  for (int it = 0; it < options.iters; ++it) {
    const double exag = it < options.exaggeration_iters ? options.exaggeration : 1.0;
    const double momentum = it < options.exaggeration_iters ? 0.5 : 0.8;
    double qsum = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      num(i, i) = 0;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double v = 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
        num(i, j) = num(j, i) = v;
        qsum += 2 * v;
      }
    }
    grad.setZero();
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double q = std::max(num(i, j) / qsum, 1e-12);
        grad.row(i) += 4.0 * (exag * pj(i, j) - q) * num(i, j) * (y.row(i) - y.row(j));
      }
    for (Eigen::Index i = 0; i < n; ++i)
      for (int c = 0; c < dims; ++c) {
        const bool same_sign = (grad(i, c) > 0) == (velocity(i, c) > 0);
        gains(i, c) = std::max(same_sign ? gains(i, c) * 0.8 : gains(i, c) + 0.2, 0.01);
        velocity(i, c) = momentum * velocity(i, c) - options.learning_rate * gains(i, c) * grad(i, c);
        y(i, c) += velocity(i, c);
      }
    y.rowwise() -= y.colwise().mean();
  }
  require(y.allFinite(), ErrorCode::kNumerical, "tsne: diverged");
  return y;
}

Eigen::MatrixXd embed_project(const Eigen::MatrixXd& x, EmbedMethod method, int dims, uint64_t seed) {
  if (method == EmbedMethod::kPca) return pca(x, dims).coords;
  TsneOptions o;
  o.seed = seed;
  return tsne(x, dims, o);
}

}  // namespace vaemmd
