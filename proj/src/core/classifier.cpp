#include "vaemmd/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "vaemmd/error.hpp"
#include "vaemmd/rng.hpp"

namespace vaemmd {

using nlohmann::json;

namespace {

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p = logits;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double m = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - m).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

void check_labels(const Eigen::MatrixXd& x, const std::vector<int>& labels, int classes) {
  require(x.rows() == static_cast<Eigen::Index>(labels.size()), ErrorCode::kInvalidArgument,
          "classifier: feature rows and labels differ in length");
  require(x.rows() > 0 && x.cols() > 0, ErrorCode::kInvalidArgument, "classifier: empty feature matrix");
  require(x.allFinite(), ErrorCode::kNumerical, "classifier: non-finite features");
  for (int l : labels)
    require(l >= 0 && l < classes, ErrorCode::kInvalidArgument, "classifier: label out of range");
}

}  // namespace

void LogisticRegression::fit(const Eigen::MatrixXd& x, const std::vector<int>& labels, int classes,
                             const LogRegOptions& options) {
  require(classes >= 2, ErrorCode::kInvalidArgument, "classifier: need at least two classes");
  require(options.iters > 0 && options.lr > 0 && options.l2 >= 0, ErrorCode::kInvalidArgument,
          "classifier: bad fit options");
  check_labels(x, labels, classes);
  const auto n = x.rows();
  mean_ = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mean_;
  scale_ = (centered.array().square().colwise().sum() / double(n)).sqrt().matrix();
  for (Eigen::Index j = 0; j < scale_.size(); ++j)
    if (!(scale_[j] > 1e-12)) scale_[j] = 1.0;
  const Eigen::MatrixXd xs = centered.array().rowwise() / scale_.array();

  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n, classes);
  for (Eigen::Index i = 0; i < n; ++i) onehot(i, labels[i]) = 1.0;
  w_ = Eigen::MatrixXd::Zero(x.cols(), classes);
  b_ = Eigen::RowVectorXd::Zero(classes);
  for (int it = 0; it < options.iters; ++it) {
    const Eigen::MatrixXd p = softmax_rows((xs * w_).rowwise() + b_);
    const Eigen::MatrixXd g = (p - onehot) / double(n);
    w_ -= options.lr * (xs.transpose() * g + options.l2 * w_);
    b_ -= options.lr * g.colwise().sum();
  }
  const Eigen::MatrixXd p = softmax_rows((xs * w_).rowwise() + b_);
  double ce = 0;
  for (Eigen::Index i = 0; i < n; ++i) ce -= std::log(std::max(p(i, labels[i]), 1e-300));
  final_loss_ = ce / double(n) + 0.5 * options.l2 * w_.squaredNorm();
}

Eigen::MatrixXd LogisticRegression::predict_proba(const Eigen::MatrixXd& x) const {
  require(w_.size() > 0, ErrorCode::kState, "classifier: predict before fit");
  require(x.cols() == w_.rows(), ErrorCode::kInvalidArgument, "classifier: feature width mismatch");
  const Eigen::MatrixXd xs = (x.rowwise() - mean_).array().rowwise() / scale_.array();
  return softmax_rows((xs * w_).rowwise() + b_);
}

std::vector<int> LogisticRegression::predict(const Eigen::MatrixXd& x) const {
  const Eigen::MatrixXd p = predict_proba(x);
  std::vector<int> out(static_cast<size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index arg = 0;
    p.row(i).maxCoeff(&arg);
    out[i] = static_cast<int>(arg);
  }
  return out;
}

json DomainReport::to_json() const {
  return json{{"accuracy", accuracy}, {"confusion", confusion}, {"counts", counts},
              {"domains", domains},   {"features", features},   {"folds", folds}};
}

std::string DomainReport::render() const {
  size_t width = 6;
  for (const auto& d : domains) width = std::max(width, d.size() + 2);
  std::ostringstream os;
  os << "features: " << features << "\n";
  os << std::string(width, ' ');
  for (const auto& d : domains) os << std::string(width - d.size(), ' ') << d;
  os << "\n";
  for (size_t r = 0; r < domains.size(); ++r) {
    os << domains[r] << std::string(width - domains[r].size(), ' ');
    for (int v : confusion[r]) {
      const auto s = std::to_string(v);
      os << std::string(width - s.size(), ' ') << s;
    }
    os << "\n";
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "accuracy: %.4f\n", accuracy);
  os << buf;
  return os.str();
}

namespace {

DomainReport empty_report(const std::vector<std::string>& domains, const ClassifierOptions& options) {
  DomainReport r;
  const size_t k = domains.size();
  r.confusion.assign(k, std::vector<int>(k, 0));
  r.counts.assign(k, 0);
  r.domains = domains;
  r.features = options.features;
  return r;
}

void check_domains(const std::vector<int>& labels, const std::vector<std::string>& domains,
                   std::vector<int>* per_class) {
  require(domains.size() >= 2, ErrorCode::kInvalidArgument, "classifier: needs at least two domains");
  per_class->assign(domains.size(), 0);
  for (int l : labels) {
    require(l >= 0 && l < static_cast<int>(domains.size()), ErrorCode::kInvalidArgument,
            "classifier: label out of range");
    ++(*per_class)[l];
  }
  for (size_t d = 0; d < domains.size(); ++d)
    require((*per_class)[d] >= 2, ErrorCode::kInvalidArgument,
            "classifier: domain " + domains[d] + " has fewer than two cases");
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, const std::vector<int>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (size_t i = 0; i < rows.size(); ++i) out.row(i) = x.row(rows[i]);
  return out;
}

void score(DomainReport& r, const std::vector<int>& truth, const std::vector<int>& pred) {
  for (size_t i = 0; i < truth.size(); ++i) {
    ++r.confusion[truth[i]][pred[i]];
    ++r.counts[truth[i]];
  }
}

void finish(DomainReport& r) {
  int total = 0, hit = 0;
  for (size_t d = 0; d < r.domains.size(); ++d) {
    total += r.counts[d];
    hit += r.confusion[d][d];
  }
  r.accuracy = total ? double(hit) / double(total) : 0.0;
}

}  // namespace

DomainReport logistic_domain_classifier(const Eigen::MatrixXd& x, const std::vector<int>& labels,
                                        const std::vector<std::string>& domains, const ClassifierOptions& options) {
  std::vector<int> per_class;
  check_domains(labels, domains, &per_class);
  check_labels(x, labels, static_cast<int>(domains.size()));
  require(options.folds >= 2, ErrorCode::kInvalidArgument, "classifier: folds must be >= 2");
  const int folds = std::min(options.folds, *std::min_element(per_class.begin(), per_class.end()));

  // Stratified assignment: each domain's cases are shuffled and dealt round-robin.
  std::vector<int> fold_of(labels.size());
  const Rng root(options.seed);
  for (size_t d = 0; d < domains.size(); ++d) {
    std::vector<int> idx;
    for (size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == static_cast<int>(d)) idx.push_back(static_cast<int>(i));
    Rng rng = root.split(d);
    for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    for (size_t i = 0; i < idx.size(); ++i) fold_of[idx[i]] = static_cast<int>(i % folds);
  }

  DomainReport r = empty_report(domains, options);
  r.folds = folds;
  for (int f = 0; f < folds; ++f) {
    std::vector<int> train, eval;
    for (size_t i = 0; i < labels.size(); ++i) (fold_of[i] == f ? eval : train).push_back(static_cast<int>(i));
    std::vector<int> ytrain, yeval;
    for (int i : train) ytrain.push_back(labels[i]);
    for (int i : eval) yeval.push_back(labels[i]);
    LogisticRegression model;
    model.fit(take_rows(x, train), ytrain, static_cast<int>(domains.size()), options.fit);
    score(r, yeval, model.predict(take_rows(x, eval)));
  }
  finish(r);
  return r;
}

DomainReport logistic_domain_classifier_split(const Eigen::MatrixXd& x, const std::vector<int>& labels,
                                              const std::vector<std::string>& domains, const std::vector<int>& train,
                                              const std::vector<int>& eval, const ClassifierOptions& options) {
  std::vector<int> per_class;
  check_domains(labels, domains, &per_class);
  check_labels(x, labels, static_cast<int>(domains.size()));
  require(!train.empty() && !eval.empty(), ErrorCode::kInvalidArgument, "classifier: empty split");
  for (int i : train) require(i >= 0 && i < x.rows(), ErrorCode::kInvalidArgument, "classifier: bad train index");
  for (int i : eval) require(i >= 0 && i < x.rows(), ErrorCode::kInvalidArgument, "classifier: bad eval index");
  std::vector<int> ytrain, yeval;
  for (int i : train) ytrain.push_back(labels[i]);
  for (int i : eval) yeval.push_back(labels[i]);
  LogisticRegression model;
  model.fit(take_rows(x, train), ytrain, static_cast<int>(domains.size()), options.fit);
  DomainReport r = empty_report(domains, options);
  r.folds = 1;
  score(r, yeval, model.predict(take_rows(x, eval)));
  finish(r);
  return r;
}

}  // namespace vaemmd
