#pragma once

#include <Eigen/Dense>
#include <string>

namespace vaemmd {

enum class EmbedMethod { kPca, kTsne };
EmbedMethod parse_embed_method(const std::string& s);
const char* embed_method_name(EmbedMethod m);

struct PcaResult {
  Eigen::MatrixXd coords;      // n x dims
  Eigen::MatrixXd components;  // features x dims, orthonormal columns
  Eigen::RowVectorXd mean;
};

/// Top principal components. Each component's largest-magnitude loading is
/// made positive so the output is fully deterministic.
PcaResult pca(const Eigen::MatrixXd& x, int dims = 2);

struct TsneOptions {
  int iters = 1000;
  int exaggeration_iters = 250;
  double exaggeration = 12.0;
  double learning_rate = 200.0;
  uint64_t seed = 0;
};

/// Exact t-SNE (dense affinities, no tree approximation) with perplexity
/// min(30, (n - 1) / 3).
Eigen::MatrixXd tsne(const Eigen::MatrixXd& x, int dims, const TsneOptions& options);

Eigen::MatrixXd embed_project(const Eigen::MatrixXd& x, EmbedMethod method, int dims = 2, uint64_t seed = 0);

}  // namespace vaemmd
