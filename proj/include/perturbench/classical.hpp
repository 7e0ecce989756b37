#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "perturbench/tensor.hpp"

namespace pb {

// All classical models consume dense double matrices [n, d] with integer
// labels. Fitted models are immutable and deterministic at prediction time.

struct KnnModel {
  TensorD train;  // [n, d]
  std::vector<int> labels;
  int k = 3;
};

KnnModel fit_knn(const TensorD& x, const std::vector<int>& y, int k);
// Majority vote over the k nearest by Euclidean distance. Distance ties keep
// the lower training index; vote ties resolve to the tied class whose member
// is nearest.
std::vector<int> knn_classify(const KnnModel& model, const TensorD& queries);

struct TreeNode {
  int feature = -1;       // -1 marks a leaf
  double threshold = 0.0;
  int left = -1, right = -1;
  int leaf_class = -1;
  std::vector<long> class_counts;
};

struct DecisionTreeModel {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  int max_depth = 10;
  int depth = 0;  // measured

  int predict_one(const double* row) const;
};

// Greedy CART, Gini impurity, thresholds at midpoints of consecutive sorted
// unique feature values. Splits stop at max_depth, purity, or no positive
// gain. Leaf ties go to the smaller class index.
DecisionTreeModel fit_decision_tree(const TensorD& x, const std::vector<int>& y,
                                    int max_depth);
std::vector<int> tree_classify(const DecisionTreeModel& model, const TensorD& queries);

struct PcaTransform {
  std::vector<double> means;          // column means, length d
  TensorD axes;                       // [m, d], orthonormal rows
  std::vector<double> explained_ratio;  // length m, descending
  long retained = 0;
};

// Centers by column means and keeps the smallest leading set of covariance
// eigenvectors whose cumulative variance ratio reaches variance_target.
// Throws UndefinedValueError when the data has zero total variance.
PcaTransform fit_pca(const TensorD& x, double variance_target);
TensorD pca_project(const PcaTransform& t, const TensorD& x);
// Inverse map back to the original space (for reconstruction-error checks).
TensorD pca_reconstruct(const PcaTransform& t, const TensorD& reduced);

struct LinearSvmModel {
  TensorD weights;  // [classes, d]
  std::vector<double> biases;
  double lr = 0.01;
  double reg = 1e-4;
  int epochs = 30;
};

// One-vs-rest L2-regularized hinge loss, mini-batch SGD, constant step size.
// Prediction is argmax of the per-class scores, ties to the smaller class.
LinearSvmModel fit_linear_svm_sgd(const TensorD& x, const std::vector<int>& y,
                                  int classes, int epochs = 30, double lr = 0.01,
                                  double reg = 1e-4, uint64_t seed = 0,
                                  int batch_size = 32);
std::vector<int> linear_svm_classify(const LinearSvmModel& model, const TensorD& queries);

struct RbfSvmHead {
  std::vector<double> dual;  // alpha_i * y_i, y in {-1, +1}
  double bias = 0.0;
};

struct RbfSvmModel {
  TensorD train;  // [n, d], shared by all heads
  std::vector<RbfSvmHead> heads;  // one per class
  double gamma = 0.0;
  double c = 1.0;
};

// One-vs-rest soft-margin duals solved by maximal-violating-pair SMO to KKT
// tolerance 1e-3. gamma <= 0 selects 1 / (d * mean feature variance). Rows
// are capped (kernel matrix is n^2); exceeding the cap is a usage error.
RbfSvmModel fit_rbf_svm(const TensorD& x, const std::vector<int>& y, int classes,
                        double c = 1.0, double gamma = 0.0, long row_cap = 5000);
std::vector<int> rbf_svm_classify(const RbfSvmModel& model, const TensorD& queries);

// Partition of [0, n) into `folds` index sets with per-class counts differing
// by at most one; seeded per-class shuffle, round-robin assignment.
std::vector<std::vector<long>> stratified_kfold(const std::vector<int>& y,
                                                int folds, uint64_t seed);

struct GridPoint {
  std::map<std::string, double> params;
  double mean_acc = 0.0;
  double stddev_acc = 0.0;
  bool failed = false;
  std::string error;
};

struct GridSearchResult {
  std::vector<GridPoint> table;  // grid order preserved
  long best = -1;                // index into table; highest mean, earlier wins ties
};

// fit(params, train_x, train_y) -> classify(test_x) closure.
using FitFn = std::function<std::function<std::vector<int>(const TensorD&)>(
    const std::map<std::string, double>&, const TensorD&, const std::vector<int>&)>;

GridSearchResult grid_search_cv(const FitFn& fit,
                                const std::vector<std::map<std::string, double>>& grid,
                                const TensorD& x, const std::vector<int>& y,
                                int folds, uint64_t seed);

}  // namespace pb
