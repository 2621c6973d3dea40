#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "vaemmd/classifier.hpp"
#include "vaemmd/embedding.hpp"
#include "vaemmd/error.hpp"
#include "vaemmd/rng.hpp"

using namespace vaemmd;

namespace {

struct Clusters {
  Eigen::MatrixXd x;
  std::vector<int> labels;
};

Clusters make_clusters(int per_class, int classes, int dims, double separation, uint64_t seed) {
  Rng rng(seed);
  Clusters c;
  c.x.resize(per_class * classes, dims);
  for (int k = 0; k < classes; ++k)
    for (int i = 0; i < per_class; ++i) {
      const int row = k * per_class + i;
      for (int d = 0; d < dims; ++d) c.x(row, d) = rng.normal() + (d == k % dims ? separation : 0.0);
      c.labels.push_back(k);
    }
  return c;
}

// Mean silhouette with Euclidean distance.
double silhouette(const Eigen::MatrixXd& y, const std::vector<int>& labels) {
  const int n = static_cast<int>(y.rows());
  double total = 0;
  for (int i = 0; i < n; ++i) {
    double a = 0, b = 0;
    int na = 0, nb = 0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = (y.row(i) - y.row(j)).norm();
      if (labels[j] == labels[i]) {
        a += d;
        ++na;
      } else {
        b += d;
        ++nb;
      }
    }
    a /= na;
    b /= nb;
    total += (b - a) / std::max(a, b);
  }
  return total / n;
}

}  // namespace

TEST_CASE("well separated clusters are classified perfectly") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    const auto c = make_clusters(12, 2, 3, 8.0, seed);
    ClassifierOptions o;
    o.seed = seed;
    const auto r = logistic_domain_classifier(c.x, c.labels, {"a", "b"}, o);
    CHECK(r.accuracy == 1.0);
    CHECK(r.folds == 4);
  }
  const auto three = make_clusters(10, 3, 3, 8.0, 9);
  const auto r3 = logistic_domain_classifier(three.x, three.labels, {"a", "b", "c"}, {});
  CHECK(r3.accuracy == 1.0);
}

TEST_CASE("with labels independent of features accuracy stays near chance") {
  // 40 cases, chance 0.5, binomial sd sqrt(0.25 / 40) ~ 0.079 per run. The
  // mean over 20 permutations has sd ~ 0.018; allow 3 sd plus slack for the
  // slight pessimism of cross-validated accuracy under the null.
  double sum = 0;
  const int runs = 20;
  for (int s = 0; s < runs; ++s) {
    Rng rng(100 + s);
    Eigen::MatrixXd x(40, 2);
    for (int i = 0; i < 40; ++i)
      for (int d = 0; d < 2; ++d) x(i, d) = rng.normal();
    std::vector<int> labels(40);
    for (int i = 0; i < 40; ++i) labels[i] = i % 2;
    ClassifierOptions o;
    o.seed = s;
    sum += logistic_domain_classifier(x, labels, {"a", "b"}, o).accuracy;
  }
  const double mean = sum / runs;
  MESSAGE("null mean accuracy: " << mean);
  CHECK(mean <= 0.5 + 3 * 0.018);
  CHECK(mean >= 0.5 - 3 * 0.018 - 0.05);
}

TEST_CASE("confusion matrix rows add up to the per-domain counts") {
  const auto c = make_clusters(9, 3, 2, 1.0, 4);
  const auto r = logistic_domain_classifier(c.x, c.labels, {"a", "b", "c"}, {});
  int correct = 0, total = 0;
  for (size_t i = 0; i < r.confusion.size(); ++i) {
    CHECK(std::accumulate(r.confusion[i].begin(), r.confusion[i].end(), 0) == r.counts[i]);
    CHECK(r.counts[i] == 9);
    correct += r.confusion[i][i];
    total += r.counts[i];
  }
  CHECK(r.accuracy == doctest::Approx(double(correct) / total));
  const auto j = r.to_json();
  CHECK(j.at("domains").size() == 3);
  CHECK(r.render().find("accuracy") != std::string::npos);
}

TEST_CASE("folds are capped by the smallest domain and bad inputs are rejected") {
  auto c = make_clusters(6, 2, 2, 6.0, 5);
  c.x.conservativeResize(9, Eigen::NoChange);
  c.labels.resize(9);  // 6 of class 0, 3 of class 1
  const auto r = logistic_domain_classifier(c.x, c.labels, {"a", "b"}, {});
  CHECK(r.folds == 3);
  CHECK(r.counts == std::vector<int>{6, 3});

  const auto one = make_clusters(5, 1, 2, 1.0, 6);
  CHECK_THROWS_AS(logistic_domain_classifier(one.x, one.labels, {"a"}, {}), Error);
  Eigen::MatrixXd x(3, 2);
  x.setRandom();
  CHECK_THROWS_AS(logistic_domain_classifier(x, {0, 0, 1}, {"a", "b"}, {}), Error);
}

TEST_CASE("fixed-split classifier and deterministic fitting") {
  const auto c = make_clusters(10, 2, 2, 6.0, 7);
  std::vector<int> train, eval;
  for (int i = 0; i < 20; ++i) (i % 5 == 0 ? eval : train).push_back(i);
  const auto r = logistic_domain_classifier_split(c.x, c.labels, {"a", "b"}, train, eval, {});
  CHECK(r.accuracy == 1.0);
  CHECK(r.counts[0] + r.counts[1] == int(eval.size()));

  LogisticRegression a, b;
  a.fit(c.x, c.labels, 2);
  b.fit(c.x, c.labels, 2);
  CHECK(a.predict_proba(c.x) == b.predict_proba(c.x));
  const auto p = a.predict_proba(c.x);
  for (int i = 0; i < p.rows(); ++i) CHECK(p.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
  // A constant feature column is harmless.
  Eigen::MatrixXd xc(20, 3);
  xc << c.x, Eigen::VectorXd::Constant(20, 4.0);
  LogisticRegression d;
  d.fit(xc, c.labels, 2);
  CHECK(std::isfinite(d.final_loss()));
}

TEST_CASE("pca recovers a plane exactly and is deterministic") {
  Rng rng(8);
  Eigen::MatrixXd basis(2, 5);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 5; ++j) basis(i, j) = rng.normal();
  Eigen::MatrixXd coeff(30, 2);
  for (int i = 0; i < 30; ++i) coeff.row(i) << rng.normal() * 3, rng.normal();
  Eigen::RowVectorXd offset(5);
  offset << 1, -2, 3, 0.5, 7;
  const Eigen::MatrixXd x = (coeff * basis).rowwise() + offset;
  const auto r = pca(x, 2);
  const Eigen::MatrixXd back = (r.coords * r.components.transpose()).rowwise() + r.mean;
  CHECK((back - x).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((r.components.transpose() * r.components - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-12);
  for (int k = 0; k < 2; ++k) {
    Eigen::Index arg;
    r.components.col(k).cwiseAbs().maxCoeff(&arg);
    CHECK(r.components(arg, k) > 0);
  }
  CHECK(r.coords.col(0).squaredNorm() >= r.coords.col(1).squaredNorm());
  CHECK(pca(x, 2).coords == r.coords);

  Eigen::MatrixXd dup = x;
  dup.row(3) = dup.row(7);
  const auto d = pca(dup, 2);
  CHECK((d.coords.row(3) - d.coords.row(7)).norm() < 1e-12);
  CHECK_THROWS_AS(pca(x.topRows(2), 2), Error);
}

TEST_CASE("t-SNE keeps clusters apart and is seed-determined") {
  for (uint64_t seed = 0; seed < 3; ++seed) {
    const auto c = make_clusters(15, 2, 6, 6.0, 20 + seed);
    TsneOptions o;
    o.seed = seed;
    o.iters = 500;
    const auto y = tsne(c.x, 2, o);
    CHECK(y.rows() == 30);
    CHECK(y.allFinite());
    const double s = silhouette(y, c.labels);
    MESSAGE("silhouette: " << s);
    CHECK(s > 0);
    CHECK(tsne(c.x, 2, o) == y);
  }
  CHECK(parse_embed_method("tsne") == EmbedMethod::kTsne);
  CHECK(std::string(embed_method_name(EmbedMethod::kPca)) == "pca");
  CHECK_THROWS_AS(parse_embed_method("umap"), Error);
}
