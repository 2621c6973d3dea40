#pragma once

#include <Eigen/Dense>
#include <json.hpp>
#include <string>
#include <vector>

namespace vaemmd {

struct LogRegOptions {
  double l2 = 1e-2;
  double lr = 0.5;
  int iters = 500;
};

/// Multinomial logistic regression on standardized features, fit by
/// full-batch gradient descent from zero weights. Deterministic.
class LogisticRegression {
 public:
  void fit(const Eigen::MatrixXd& x, const std::vector<int>& labels, int classes, const LogRegOptions& options = {});
  Eigen::MatrixXd predict_proba(const Eigen::MatrixXd& x) const;
  std::vector<int> predict(const Eigen::MatrixXd& x) const;
  /// Mean cross-entropy plus the L2 penalty on the training data of the last fit.
  double final_loss() const { return final_loss_; }

 private:
  Eigen::RowVectorXd mean_, scale_;
  Eigen::MatrixXd w_;      // features x classes
  Eigen::RowVectorXd b_;  // classes
  double final_loss_ = 0;
};

struct DomainReport {
  double accuracy = 0;
  std::vector<std::vector<int>> confusion;  // rows: true domain, columns: predicted
  std::vector<int> counts;                  // evaluated cases per domain
  std::vector<std::string> domains;
  std::string features;
  int folds = 0;

  nlohmann::json to_json() const;
  /// Aligned text grid of the confusion matrix.
  std::string render() const;
};

struct ClassifierOptions {
  LogRegOptions fit;
  int folds = 4;  // capped by the smallest domain
  uint64_t seed = 0;
  std::string features;
};

/// Stratified k-fold cross-validation: every case is predicted exactly once
/// by a model that did not see it. Needs >= 2 domains with >= 2 cases each.
DomainReport logistic_domain_classifier(const Eigen::MatrixXd& x, const std::vector<int>& labels,
                                        const std::vector<std::string>& domains, const ClassifierOptions& options);

/// Fixed split variant: fit on `train`, report on `eval` (row indices).
DomainReport logistic_domain_classifier_split(const Eigen::MatrixXd& x, const std::vector<int>& labels,
                                              const std::vector<std::string>& domains, const std::vector<int>& train,
                                              const std::vector<int>& eval, const ClassifierOptions& options);

}  // namespace vaemmd
