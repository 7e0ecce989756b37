#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "perturbench/classical.hpp"
#include "perturbench/errors.hpp"
#include "perturbench/rng.hpp"
#include "support/references.hpp"

namespace {

pb::TensorD blobs(long per_class, int classes, long d, double spread,
                  std::vector<int>& labels, uint64_t seed) {
  pb::Rng rng(seed);
  pb::TensorD x = pb::TensorD::zeros({per_class * classes, d});
  labels.clear();
  for (long i = 0; i < per_class * classes; ++i) {
    const int c = static_cast<int>(i % classes);
    labels.push_back(c);
    for (long j = 0; j < d; ++j)
      x.data[static_cast<size_t>(i * d + j)] =
          2.5 * c + rng.uniform(-spread, spread);
  }
  return x;
}

double rbf_kernel(const double* a, const double* b, long d, double gamma) {
  double s = 0.0;
  for (long j = 0; j < d; ++j) {
    const double diff = a[j] - b[j];
    s += diff * diff;
  }
  return std::exp(-gamma * s);
}

}  // namespace

TEST_CASE("knn agrees with the brute-force reference on random data") {
  pb::Rng rng(301);
  for (int rep = 0; rep < 3; ++rep) {
    std::vector<int> labels;
    const pb::TensorD x = blobs(12, 4, 5, 2.2, labels, 310 + rep);
    const pb::TensorD q = ref::rand_tensor({25, 5}, rng, -1.0, 9.0);
    for (int k : {1, 3, 7}) {
      const pb::KnnModel model = pb::fit_knn(x, labels, k);
      CHECK(pb::knn_classify(model, q) == ref::knn(x, labels, k, q));
    }
  }
}

TEST_CASE("knn tie rules are exact") {
  SUBCASE("distance tie keeps the lower training index") {
    // two training points equidistant from the query, different classes
    pb::TensorD x({2, 1}, {1.0, 3.0});
    const pb::KnnModel model = pb::fit_knn(x, {1, 0}, 1);
    pb::TensorD q({1, 1}, {2.0});
    CHECK(pb::knn_classify(model, q) == std::vector<int>{1});
  }
  SUBCASE("vote tie goes to the class of the nearest tied member") {
    // k=2: one vote each; class of the closer neighbor wins
    pb::TensorD x({2, 1}, {0.5, 2.0});
    const pb::KnnModel model = pb::fit_knn(x, {7, 3}, 2);
    pb::TensorD q({1, 1}, {1.0});
    CHECK(pb::knn_classify(model, q) == std::vector<int>{7});
  }
  SUBCASE("three-way vote tie") {
    pb::TensorD x({3, 1}, {4.0, 2.0, 6.0});
    const pb::KnnModel model = pb::fit_knn(x, {2, 1, 0}, 3);
    pb::TensorD q({1, 1}, {4.1});
    // neighbor order: idx0 (class 2), idx2 (class 0), idx1 (class 1)
    CHECK(pb::knn_classify(model, q) == std::vector<int>{2});
  }
}

TEST_CASE("knn validates its inputs") {
  std::vector<int> labels;
  const pb::TensorD x = blobs(5, 2, 3, 1.0, labels, 311);
  CHECK_THROWS_AS(pb::fit_knn(x, labels, 0), pb::ConfigError);
  CHECK_THROWS_AS(pb::fit_knn(x, labels, 11), pb::ConfigError);
  std::vector<int> short_labels(labels.begin(), labels.end() - 1);
  CHECK_THROWS_AS(pb::fit_knn(x, short_labels, 3), pb::UsageError);
  const pb::KnnModel model = pb::fit_knn(x, labels, 3);
  CHECK_THROWS_AS(pb::knn_classify(model, pb::TensorD::zeros({2, 4})), pb::UsageError);
}

TEST_CASE("pca explained variance matches an independent eigendecomposition") {
  pb::Rng rng(321);
  // anisotropic cloud: strong first axis, weaker tail
  const long n = 60, d = 6;
  pb::TensorD x = pb::TensorD::zeros({n, d});
  for (long i = 0; i < n; ++i) {
    const double t = rng.uniform(-3.0, 3.0);
    for (long j = 0; j < d; ++j)
      x.data[static_cast<size_t>(i * d + j)] =
          t * (j == 0 ? 2.0 : (j == 1 ? 0.8 : 0.1)) + rng.uniform(-0.3, 0.3);
  }

  // covariance with the same centering and 1/(n-1) scale
  std::vector<double> mean(static_cast<size_t>(d), 0.0);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j) mean[static_cast<size_t>(j)] += x.data[static_cast<size_t>(i * d + j)];
  for (auto& m : mean) m /= static_cast<double>(n);
  std::vector<std::vector<double>> cov(static_cast<size_t>(d),
                                       std::vector<double>(static_cast<size_t>(d), 0.0));
  for (long i = 0; i < n; ++i)
    for (long a = 0; a < d; ++a)
      for (long b = 0; b < d; ++b)
        cov[static_cast<size_t>(a)][static_cast<size_t>(b)] +=
            (x.data[static_cast<size_t>(i * d + a)] - mean[static_cast<size_t>(a)]) *
            (x.data[static_cast<size_t>(i * d + b)] - mean[static_cast<size_t>(b)]) /
            static_cast<double>(n - 1);
  const ref::JacobiResult eig = ref::jacobi_eigen(cov);
  double total = 0.0;
  for (double v : eig.values) total += std::max(v, 0.0);

  const pb::PcaTransform t = pb::fit_pca(x, 0.95);
  REQUIRE(t.retained >= 1);
  REQUIRE(t.retained <= d);
  for (long m = 0; m < t.retained; ++m) {
    const double want = std::max(eig.values[static_cast<size_t>(m)], 0.0) / total;
    CHECK(t.explained_ratio[static_cast<size_t>(m)] ==
          doctest::Approx(want).epsilon(1e-6));
  }

  // retained axes span the same subspace: |<axis_m, jacobi_m>| = 1
  for (long m = 0; m < t.retained; ++m) {
    double dot = 0.0;
    for (long j = 0; j < d; ++j)
      dot += t.axes.data[static_cast<size_t>(m * d + j)] *
             eig.vectors[static_cast<size_t>(m)][static_cast<size_t>(j)];
    CHECK(std::fabs(dot) == doctest::Approx(1.0).epsilon(1e-6));
  }

  // retained count is minimal for the target
  double cum = 0.0;
  long minimal = 0;
  for (size_t m = 0; m < eig.values.size(); ++m) {
    cum += std::max(eig.values[m], 0.0) / total;
    ++minimal;
    if (cum >= 0.95 - 1e-9) break;
  }
  CHECK(t.retained == minimal);
}

TEST_CASE("pca projection and reconstruction behave like an orthogonal map") {
  pb::Rng rng(322);
  const pb::TensorD x = ref::rand_tensor({40, 5}, rng, -2.0, 2.0);
  const pb::PcaTransform t = pb::fit_pca(x, 1.0);
  CHECK(t.retained == 5);
  const pb::TensorD z = pb::pca_project(t, x);
  const pb::TensorD back = pb::pca_reconstruct(t, z);
  for (size_t i = 0; i < x.data.size(); ++i)
    CHECK(back.data[i] == doctest::Approx(x.data[i]).epsilon(1e-8));

  // a lossy target reconstructs with bounded error and fewer axes
  const pb::PcaTransform lossy = pb::fit_pca(x, 0.5);
  CHECK(lossy.retained < 5);
  const pb::TensorD z2 = pb::pca_project(lossy, x);
  CHECK(z2.dim(1) == lossy.retained);
}

TEST_CASE("pca axis signs are pinned deterministically") {
  pb::Rng rng(323);
  const pb::TensorD x = ref::rand_tensor({30, 4}, rng);
  const pb::PcaTransform a = pb::fit_pca(x, 0.9);
  const pb::PcaTransform b = pb::fit_pca(x, 0.9);
  CHECK(a.axes.data == b.axes.data);
  for (long m = 0; m < a.retained; ++m) {
    const double* row = a.axes.ptr() + m * 4;
    long pivot = 0;
    for (long j = 1; j < 4; ++j)
      if (std::fabs(row[j]) > std::fabs(row[pivot])) pivot = j;
    CHECK(row[pivot] > 0.0);
  }
}

TEST_CASE("pca error paths") {
  CHECK_THROWS_AS(pb::fit_pca(pb::TensorD::full({10, 3}, 2.0), 0.9),
                  pb::UndefinedValueError);
  pb::Rng rng(324);
  const pb::TensorD x = ref::rand_tensor({10, 3}, rng);
  CHECK_THROWS_AS(pb::fit_pca(x, 0.0), pb::ConfigError);
  CHECK_THROWS_AS(pb::fit_pca(x, 1.1), pb::ConfigError);
  const pb::PcaTransform t = pb::fit_pca(x, 0.9);
  CHECK_THROWS_AS(pb::pca_project(t, pb::TensorD::zeros({2, 4})), pb::UsageError);
}

TEST_CASE("linear svm separates blobs and predicts deterministically") {
  std::vector<int> labels;
  const pb::TensorD x = blobs(30, 3, 4, 0.6, labels, 331);
  const pb::LinearSvmModel model = pb::fit_linear_svm_sgd(x, labels, 3, 300, 0.2, 1e-4, 5);
  const std::vector<int> pred = pb::linear_svm_classify(model, x);
  long correct = 0;
  for (size_t i = 0; i < labels.size(); ++i)
    if (pred[i] == labels[i]) ++correct;
  CHECK(static_cast<double>(correct) / static_cast<double>(labels.size()) >= 0.95);

  // same seed retrains identically
  const pb::LinearSvmModel again = pb::fit_linear_svm_sgd(x, labels, 3, 300, 0.2, 1e-4, 5);
  CHECK(again.weights.data == model.weights.data);
  CHECK(again.biases == model.biases);
}

TEST_CASE("linear svm score ties resolve to the smaller class") {
  pb::LinearSvmModel model;
  model.weights = pb::TensorD::zeros({3, 2});
  model.biases = {1.0, 1.0, 1.0};
  pb::TensorD q({1, 2}, {0.3, 0.4});
  CHECK(pb::linear_svm_classify(model, q) == std::vector<int>{0});
}

TEST_CASE("two-point svm dual has the textbook closed form") {
  // symmetric pair: alpha = min(C, 2 / (K11 + K22 - 2 K12)) for both points
  pb::TensorD x({2, 1}, {-1.0, 1.0});
  const std::vector<int> y = {0, 1};
  const double gamma = 0.5;
  const double k11 = 1.0, k12 = rbf_kernel(x.ptr(), x.ptr() + 1, 1, gamma);
  const double closed = 2.0 / (2.0 * k11 - 2.0 * k12);

  SUBCASE("unclipped") {
    const pb::RbfSvmModel m = pb::fit_rbf_svm(x, y, 2, 10.0, gamma);
    // head 1 treats class 1 as positive: dual = alpha * y
    CHECK(m.heads[1].dual[0] == doctest::Approx(-closed).epsilon(1e-3));
    CHECK(m.heads[1].dual[1] == doctest::Approx(closed).epsilon(1e-3));
    CHECK(m.heads[1].bias == doctest::Approx(0.0).epsilon(1e-3));
  }
  SUBCASE("clipped at the box") {
    const double c = closed / 2.0;
    const pb::RbfSvmModel m = pb::fit_rbf_svm(x, y, 2, c, gamma);
    CHECK(m.heads[1].dual[1] == doctest::Approx(c).epsilon(1e-6));
  }
}

TEST_CASE("rbf svm predictions agree with a dense qp oracle") {
  for (uint64_t seed : {401ull, 402ull, 403ull}) {
    std::vector<int> labels;
    const pb::TensorD x = blobs(14, 2, 3, 1.6, labels, seed);
    const long n = x.dim(0), d = x.dim(1);
    const double c = 1.0;

    const pb::RbfSvmModel model = pb::fit_rbf_svm(x, labels, 2, c, 0.0);
    REQUIRE(model.gamma > 0.0);

    std::vector<std::vector<double>> kernel(static_cast<size_t>(n),
                                            std::vector<double>(static_cast<size_t>(n)));
    for (long i = 0; i < n; ++i)
      for (long j = 0; j < n; ++j)
        kernel[static_cast<size_t>(i)][static_cast<size_t>(j)] =
            rbf_kernel(x.ptr() + i * d, x.ptr() + j * d, d, model.gamma);
    std::vector<double> ypm(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i) ypm[static_cast<size_t>(i)] = labels[static_cast<size_t>(i)] == 1 ? 1.0 : -1.0;
    const ref::QpSvm oracle = ref::qp_svm_dual(kernel, ypm, c);

    pb::Rng rng(seed + 7);
    const pb::TensorD q = ref::rand_tensor({40, d}, rng, -1.5, 4.5);
    const std::vector<int> got = pb::rbf_svm_classify(model, q);
    long agree = 0;
    for (long i = 0; i < q.dim(0); ++i) {
      double score = oracle.bias;
      for (long t = 0; t < n; ++t)
        score += oracle.alpha[static_cast<size_t>(t)] * ypm[static_cast<size_t>(t)] *
                 rbf_kernel(x.ptr() + t * d, q.ptr() + i * d, d, model.gamma);
      const int want = score > 0.0 ? 1 : 0;
      if (got[static_cast<size_t>(i)] == want) ++agree;
    }
    INFO("seed ", seed, " agreement ", agree, "/40");
    CHECK(agree >= 38);
  }
}

TEST_CASE("rbf svm respects the row cap and default gamma") {
  std::vector<int> labels;
  const pb::TensorD x = blobs(6, 2, 3, 1.0, labels, 341);
  CHECK_THROWS_AS(pb::fit_rbf_svm(x, labels, 2, 1.0, 0.0, 10), pb::UsageError);

  const pb::RbfSvmModel m = pb::fit_rbf_svm(x, labels, 2, 1.0, 0.0);
  double var = 0.0;
  for (long j = 0; j < 3; ++j) {
    double mean = 0.0, sq = 0.0;
    for (long i = 0; i < 12; ++i) mean += x.data[static_cast<size_t>(i * 3 + j)];
    mean /= 12.0;
    for (long i = 0; i < 12; ++i) {
      const double diff = x.data[static_cast<size_t>(i * 3 + j)] - mean;
      sq += diff * diff;
    }
    var += sq / 12.0;
  }
  var /= 3.0;
  CHECK(m.gamma == doctest::Approx(1.0 / (3.0 * var)).epsilon(1e-9));
}

TEST_CASE("decision tree fits pure and interval-structured data") {
  SUBCASE("pure labels give a single leaf") {
    pb::Rng rng(351);
    const pb::TensorD x = ref::rand_tensor({10, 3}, rng);
    const pb::DecisionTreeModel m = pb::fit_decision_tree(x, std::vector<int>(10, 4), 5);
    CHECK(m.nodes.size() == 1);
    CHECK(m.depth == 0);
    CHECK(m.nodes[0].leaf_class == 4);
  }
  SUBCASE("nested intervals need depth two") {
    // class 1 occupies the middle band, class 0 both ends
    pb::TensorD x({6, 1}, {0.0, 0.5, 1.5, 2.0, 3.0, 3.5});
    const std::vector<int> y = {0, 0, 1, 1, 0, 0};
    const pb::DecisionTreeModel shallow = pb::fit_decision_tree(x, y, 1);
    const pb::DecisionTreeModel deep = pb::fit_decision_tree(x, y, 3);
    CHECK(deep.depth == 2);
    CHECK(pb::tree_classify(deep, x) == y);
    long correct = 0;
    const std::vector<int> sp = pb::tree_classify(shallow, x);
    for (size_t i = 0; i < y.size(); ++i)
      if (sp[i] == y[i]) ++correct;
    CHECK(correct < 6);
  }
  SUBCASE("a parity layout has no positive single-feature gain and stays a leaf") {
    pb::TensorD x({4, 2}, {0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0});
    const pb::DecisionTreeModel m = pb::fit_decision_tree(x, {0, 1, 1, 0}, 3);
    CHECK(m.nodes.size() == 1);
    CHECK(m.depth == 0);
  }
}

TEST_CASE("decision tree depth zero yields the majority leaf") {
  pb::TensorD x({5, 1}, {1.0, 2.0, 3.0, 4.0, 5.0});
  const pb::DecisionTreeModel m = pb::fit_decision_tree(x, {1, 1, 0, 2, 2}, 0);
  CHECK(m.nodes.size() == 1);
  // counts tie between 1 and 2: smaller class index wins
  CHECK(m.nodes[0].leaf_class == 1);
}

TEST_CASE("decision tree split semantics send boundary values left") {
  pb::TensorD x({4, 1}, {1.0, 2.0, 3.0, 4.0});
  const std::vector<int> y = {0, 0, 1, 1};
  const pb::DecisionTreeModel m = pb::fit_decision_tree(x, y, 2);
  REQUIRE(m.nodes[0].feature == 0);
  CHECK(m.nodes[0].threshold == doctest::Approx(2.5));
  pb::TensorD q({3, 1}, {2.5, 2.500001, -10.0});
  CHECK(pb::tree_classify(m, q) == std::vector<int>{0, 1, 0});
}

TEST_CASE("deeper trees never fit worse on training data") {
  std::vector<int> labels;
  const pb::TensorD x = blobs(20, 3, 4, 2.8, labels, 352);
  double prev = -1.0;
  for (int depth : {1, 2, 4, 8}) {
    const pb::DecisionTreeModel m = pb::fit_decision_tree(x, labels, depth);
    const std::vector<int> pred = pb::tree_classify(m, x);
    long correct = 0;
    for (size_t i = 0; i < labels.size(); ++i)
      if (pred[i] == labels[i]) ++correct;
    const double acc = static_cast<double>(correct) / static_cast<double>(labels.size());
    CHECK(acc >= prev);
    CHECK(m.depth <= depth);
    prev = acc;
  }
}

TEST_CASE("stratified kfold balances classes across folds") {
  std::vector<int> y;
  for (int i = 0; i < 50; ++i) y.push_back(i % 5);
  const auto folds = pb::stratified_kfold(y, 5, 17);
  REQUIRE(folds.size() == 5);

  std::set<long> seen;
  for (const auto& fold : folds) {
    CHECK(fold.size() == 10);
    CHECK(std::is_sorted(fold.begin(), fold.end()));
    std::vector<int> counts(5, 0);
    for (long i : fold) {
      CHECK(seen.insert(i).second);  // exact partition, no repeats
      ++counts[static_cast<size_t>(y[static_cast<size_t>(i)])];
    }
    for (int c : counts) CHECK(c == 2);
  }
  CHECK(seen.size() == 50);

  CHECK(pb::stratified_kfold(y, 5, 17) == folds);
  CHECK(pb::stratified_kfold(y, 5, 18) != folds);
}

TEST_CASE("stratified kfold rejects impossible splits") {
  std::vector<int> y = {0, 0, 0, 1};
  CHECK_THROWS_AS(pb::stratified_kfold(y, 3, 0), pb::UsageError);
  CHECK_THROWS_AS(pb::stratified_kfold(y, 1, 0), pb::UsageError);
  CHECK_THROWS_AS(pb::stratified_kfold({}, 2, 0), pb::UsageError);
}

TEST_CASE("grid search ranks points and tolerates failures") {
  std::vector<int> labels;
  const pb::TensorD x = blobs(15, 2, 3, 0.8, labels, 361);

  const pb::FitFn fit = [](const std::map<std::string, double>& params,
                           const pb::TensorD& tx, const std::vector<int>& ty) {
    if (params.at("k") > 90.0) throw pb::ConfigError("k too large for fold");
    const pb::KnnModel m = pb::fit_knn(tx, ty, static_cast<int>(params.at("k")));
    return [m](const pb::TensorD& q) { return pb::knn_classify(m, q); };
  };

  const std::vector<std::map<std::string, double>> grid = {
      {{"k", 1.0}}, {{"k", 3.0}}, {{"k", 95.0}}};
  const pb::GridSearchResult result = pb::grid_search_cv(fit, grid, x, labels, 3, 19);

  REQUIRE(result.table.size() == 3);
  CHECK(result.best >= 0);
  CHECK(result.best < 2);  // the failing point cannot win
  CHECK_FALSE(result.table[static_cast<size_t>(result.best)].failed);
  CHECK(result.table[2].failed);
  CHECK(result.table[2].error.find("k too large") != std::string::npos);
  CHECK(result.table[0].mean_acc > 0.8);
  CHECK(result.table[0].stddev_acc >= 0.0);

  // deterministic under the same seed
  const pb::GridSearchResult again = pb::grid_search_cv(fit, grid, x, labels, 3, 19);
  CHECK(again.best == result.best);
  for (size_t i = 0; i < 3; ++i)
    CHECK(again.table[i].mean_acc == result.table[i].mean_acc);
}

TEST_CASE("grid search with only failing points raises a training error") {
  std::vector<int> labels;
  const pb::TensorD x = blobs(6, 2, 2, 0.8, labels, 362);
  const pb::FitFn fit = [](const std::map<std::string, double>&, const pb::TensorD&,
                           const std::vector<int>&)
      -> std::function<std::vector<int>(const pb::TensorD&)> {
    throw pb::ConfigError("always fails");
  };
  CHECK_THROWS_AS(pb::grid_search_cv(fit, {{{"a", 1.0}}}, x, labels, 2, 0),
                  pb::TrainingError);
}

TEST_CASE("grid search mean and stddev come from the fold accuracies") {
  // two folds, a classifier that is right on one fold and wrong on the other
  std::vector<int> labels = {0, 0, 1, 1};
  pb::TensorD x({4, 1}, {0.0, 1.0, 10.0, 11.0});
  const pb::FitFn fit = [](const std::map<std::string, double>&, const pb::TensorD&,
                           const std::vector<int>&) {
    return [](const pb::TensorD& q) {
      std::vector<int> out;
      for (long i = 0; i < q.dim(0); ++i) out.push_back(q.ptr()[i] >= 5.0 ? 1 : 0);
      return out;
    };
  };
  const pb::GridSearchResult r = pb::grid_search_cv(fit, {{{"p", 0.0}}}, x, labels, 2, 3);
  CHECK(r.table[0].mean_acc == doctest::Approx(1.0));
  CHECK(r.table[0].stddev_acc == doctest::Approx(0.0));
}
