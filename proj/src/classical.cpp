#include "perturbench/classical.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "perturbench/parallel.hpp"
#include "perturbench/rng.hpp"

namespace pb {

namespace {

using RowMatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMapD = Eigen::Map<const RowMatD>;
using MapD = Eigen::Map<RowMatD>;

void expect_matrix(const char* op, const TensorD& x) {
  if (x.rank() != 2 || x.dim(0) < 1)
    throw UsageError(std::string(op) + ": need a nonempty [n,d] matrix, got " +
                     shape_str(x.shape));
}

void expect_labels(const char* op, const TensorD& x, const std::vector<int>& y) {
  if (static_cast<long>(y.size()) != x.dim(0))
    throw UsageError(std::string(op) + ": " + std::to_string(y.size()) + " labels for " +
                     std::to_string(x.dim(0)) + " rows");
}

int max_class(const std::vector<int>& y) {
  int m = 0;
  for (int v : y) {
    if (v < 0) throw UsageError("labels must be non-negative");
    m = std::max(m, v);
  }
  return m;
}

}  // namespace

KnnModel fit_knn(const TensorD& x, const std::vector<int>& y, int k) {
  expect_matrix("knn", x);
  expect_labels("knn", x, y);
  if (k < 1 || k > x.dim(0))
    throw ConfigError("knn: k = " + std::to_string(k) + " outside [1, " +
                      std::to_string(x.dim(0)) + "]");
  return KnnModel{x, y, k};
}

std::vector<int> knn_classify(const KnnModel& model, const TensorD& queries) {
  expect_matrix("knn", queries);
  const long n = model.train.dim(0), d = model.train.dim(1);
  if (queries.dim(1) != d)
    throw UsageError("knn: query width " + std::to_string(queries.dim(1)) +
                     " != training width " + std::to_string(d));
  const long q = queries.dim(0);
  std::vector<int> out(static_cast<size_t>(q));
  const int classes = max_class(model.labels) + 1;

  parallel_for(static_cast<size_t>(q), [&](size_t qi) {
    const double* qp = queries.ptr() + static_cast<long>(qi) * d;
    // squared distances accumulated in training-index order, so exact ties
    // are reproducible and match the brute-force oracle
    std::vector<std::pair<double, long>> dist(static_cast<size_t>(n));
    for (long t = 0; t < n; ++t) {
      const double* tp = model.train.ptr() + t * d;
      double s = 0.0;
      for (long j = 0; j < d; ++j) {
        const double diff = qp[j] - tp[j];
        s += diff * diff;
      }
      dist[static_cast<size_t>(t)] = {s, t};
    }
    std::partial_sort(dist.begin(), dist.begin() + model.k, dist.end());

    std::vector<int> counts(static_cast<size_t>(classes), 0);
    for (int i = 0; i < model.k; ++i)
      ++counts[static_cast<size_t>(
          model.labels[static_cast<size_t>(dist[static_cast<size_t>(i)].second)])];
    int best = 0;
    for (int c = 1; c < classes; ++c)
      if (counts[static_cast<size_t>(c)] > counts[static_cast<size_t>(best)]) best = c;
    // tie -> the tied class whose member appears first in the neighbor order
    for (int i = 0; i < model.k; ++i) {
      const int c = model.labels[static_cast<size_t>(dist[static_cast<size_t>(i)].second)];
      if (counts[static_cast<size_t>(c)] == counts[static_cast<size_t>(best)]) {
        best = c;
        break;
      }
    }
    out[qi] = best;
  });
  return out;
}

namespace {

double gini(const long* counts, int classes, long total) {
  if (total == 0) return 0.0;
  double g = 1.0;
  for (int c = 0; c < classes; ++c) {
    const double p = static_cast<double>(counts[c]) / static_cast<double>(total);
    g -= p * p;
  }
  return g;
}

struct TreeBuilder {
  const TensorD& x;
  const std::vector<int>& y;
  int classes;
  int max_depth;
  std::vector<TreeNode>& nodes;
  int measured_depth = 0;

  int build(std::vector<long>& rows, int depth) {
    const long d = x.dim(1);
    std::vector<long> counts(static_cast<size_t>(classes), 0);
    for (long r : rows) ++counts[static_cast<size_t>(y[static_cast<size_t>(r)])];

    TreeNode node;
    node.class_counts = counts;
    long best_count = -1;
    for (int c = 0; c < classes; ++c)
      if (counts[static_cast<size_t>(c)] > best_count) {
        best_count = counts[static_cast<size_t>(c)];
        node.leaf_class = c;  // ties keep the smaller class index
      }
    measured_depth = std::max(measured_depth, depth);

    const double parent = gini(counts.data(), classes, static_cast<long>(rows.size()));
    bool split_found = false;
    int best_feature = -1;
    double best_threshold = 0.0, best_gain = 0.0;

    if (depth < max_depth && parent > 0.0) {
      const long m = static_cast<long>(rows.size());
      std::vector<std::pair<double, int>> vals(static_cast<size_t>(m));
      std::vector<long> left_counts(static_cast<size_t>(classes));
      for (long f = 0; f < d; ++f) {
        for (long i = 0; i < m; ++i) {
          const long r = rows[static_cast<size_t>(i)];
          vals[static_cast<size_t>(i)] = {x.ptr()[r * d + f], y[static_cast<size_t>(r)]};
        }
        std::sort(vals.begin(), vals.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        std::fill(left_counts.begin(), left_counts.end(), 0L);
        for (long i = 0; i + 1 < m; ++i) {
          ++left_counts[static_cast<size_t>(vals[static_cast<size_t>(i)].second)];
          const double lo = vals[static_cast<size_t>(i)].first;
          const double hi = vals[static_cast<size_t>(i + 1)].first;
          if (lo == hi) continue;
          const double mid = lo + (hi - lo) / 2.0;
          if (!(mid > lo) || !(mid < hi)) continue;  // fp-degenerate gap
          const long nl = i + 1, nr = m - nl;
          double right_gini = 1.0, left_gini = 1.0;
          {
            double gl = 0.0, gr = 0.0;
            for (int c = 0; c < classes; ++c) {
              const double lc = static_cast<double>(left_counts[static_cast<size_t>(c)]);
              const double rc = static_cast<double>(counts[static_cast<size_t>(c)]) - lc;
              gl += lc * lc;
              gr += rc * rc;
            }
            left_gini = 1.0 - gl / (static_cast<double>(nl) * nl);
            right_gini = 1.0 - gr / (static_cast<double>(nr) * nr);
          }
          const double child = (nl * left_gini + nr * right_gini) / static_cast<double>(m);
          const double gain = parent - child;
          if (gain > best_gain + 1e-12) {
            best_gain = gain;
            best_feature = static_cast<int>(f);
            best_threshold = mid;
            split_found = true;
          }
        }
      }
    }

    const int my_index = static_cast<int>(nodes.size());
    nodes.push_back(node);
    if (!split_found) return my_index;

    std::vector<long> left, right;
    for (long r : rows)
      (x.ptr()[r * x.dim(1) + best_feature] <= best_threshold ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();

    nodes[static_cast<size_t>(my_index)].feature = best_feature;
    nodes[static_cast<size_t>(my_index)].threshold = best_threshold;
    nodes[static_cast<size_t>(my_index)].leaf_class = -1;
    const int l = build(left, depth + 1);
    nodes[static_cast<size_t>(my_index)].left = l;
    const int r = build(right, depth + 1);
    nodes[static_cast<size_t>(my_index)].right = r;
    return my_index;
  }
};

}  // namespace

DecisionTreeModel fit_decision_tree(const TensorD& x, const std::vector<int>& y,
                                    int max_depth) {
  expect_matrix("tree", x);
  expect_labels("tree", x, y);
  if (max_depth < 0) throw ConfigError("tree: max_depth must be >= 0");
  const int classes = max_class(y) + 1;

  DecisionTreeModel model;
  model.max_depth = max_depth;
  TreeBuilder builder{x, y, classes, max_depth, model.nodes};
  std::vector<long> rows(static_cast<size_t>(x.dim(0)));
  std::iota(rows.begin(), rows.end(), 0L);
  builder.build(rows, 0);
  model.depth = builder.measured_depth;
  return model;
}

int DecisionTreeModel::predict_one(const double* row) const {
  int at = 0;
  for (;;) {
    const TreeNode& n = nodes[static_cast<size_t>(at)];
    if (n.feature < 0) return n.leaf_class;
    at = row[n.feature] <= n.threshold ? n.left : n.right;
  }
}

std::vector<int> tree_classify(const DecisionTreeModel& model, const TensorD& queries) {
  expect_matrix("tree", queries);
  std::vector<int> out(static_cast<size_t>(queries.dim(0)));
  const long d = queries.dim(1);
  for (long i = 0; i < queries.dim(0); ++i)
    out[static_cast<size_t>(i)] = model.predict_one(queries.ptr() + i * d);
  return out;
}

PcaTransform fit_pca(const TensorD& x, double variance_target) {
  expect_matrix("pca", x);
  if (x.dim(0) < 2) throw UsageError("pca: need at least 2 rows");
  if (!(variance_target > 0.0 && variance_target <= 1.0))
    throw ConfigError("pca: variance target must be in (0,1], got " +
                      std::to_string(variance_target));
  const long n = x.dim(0), d = x.dim(1);

  PcaTransform t;
  t.means.assign(static_cast<size_t>(d), 0.0);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j) t.means[static_cast<size_t>(j)] += x.ptr()[i * d + j];
  for (auto& m : t.means) m /= static_cast<double>(n);

  RowMatD centered(n, d);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j)
      centered(i, j) = x.ptr()[i * d + j] - t.means[static_cast<size_t>(j)];
  RowMatD cov = centered.transpose() * centered / static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<RowMatD> solver(cov);
  if (solver.info() != Eigen::Success)
    throw TrainingError("pca: eigendecomposition failed");
  const auto& evals = solver.eigenvalues();    // ascending
  const auto& evecs = solver.eigenvectors();   // columns

  double total = 0.0;
  for (long j = 0; j < d; ++j) total += std::max(0.0, evals(j));
  if (total <= 0.0)
    throw UndefinedValueError("pca: zero total variance (all-constant data)");

  std::vector<double> ratios;
  long retained = 0;
  double cum = 0.0;
  for (long j = d - 1; j >= 0; --j) {
    const double lambda = std::max(0.0, evals(j));
    cum += lambda / total;
    ratios.push_back(lambda / total);
    ++retained;
    if (cum >= variance_target - 1e-9) break;
  }

  t.retained = retained;
  t.explained_ratio = ratios;
  t.axes = TensorD::zeros({retained, d});
  for (long m = 0; m < retained; ++m) {
    const long col = d - 1 - m;
    // deterministic sign: largest-magnitude entry positive
    long pivot = 0;
    for (long j = 1; j < d; ++j)
      if (std::fabs(evecs(j, col)) > std::fabs(evecs(pivot, col))) pivot = j;
    const double flip = evecs(pivot, col) < 0.0 ? -1.0 : 1.0;
    for (long j = 0; j < d; ++j)
      t.axes.ptr()[m * d + j] = flip * evecs(j, col);
  }
  return t;
}

TensorD pca_project(const PcaTransform& t, const TensorD& x) {
  expect_matrix("pca", x);
  const long n = x.dim(0), d = x.dim(1), m = t.retained;
  if (d != static_cast<long>(t.means.size()))
    throw UsageError("pca: width " + std::to_string(d) + " != fitted width " +
                     std::to_string(t.means.size()));
  RowMatD centered(n, d);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j)
      centered(i, j) = x.ptr()[i * d + j] - t.means[static_cast<size_t>(j)];
  TensorD out = TensorD::zeros({n, m});
  MapD(out.ptr(), n, m).noalias() = centered * CMapD(t.axes.ptr(), m, d).transpose();
  return out;
}

TensorD pca_reconstruct(const PcaTransform& t, const TensorD& reduced) {
  expect_matrix("pca", reduced);
  const long n = reduced.dim(0), m = t.retained, d = static_cast<long>(t.means.size());
  if (reduced.dim(1) != m)
    throw UsageError("pca: reduced width " + std::to_string(reduced.dim(1)) +
                     " != retained " + std::to_string(m));
  TensorD out = TensorD::zeros({n, d});
  MapD(out.ptr(), n, d).noalias() =
      CMapD(reduced.ptr(), n, m) * CMapD(t.axes.ptr(), m, d);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j) out.ptr()[i * d + j] += t.means[static_cast<size_t>(j)];
  return out;
}

LinearSvmModel fit_linear_svm_sgd(const TensorD& x, const std::vector<int>& y,
                                  int classes, int epochs, double lr, double reg,
                                  uint64_t seed, int batch_size) {
  expect_matrix("linear svm", x);
  expect_labels("linear svm", x, y);
  if (classes < 2 || max_class(y) >= classes)
    throw ConfigError("linear svm: labels exceed class count");
  if (epochs < 0 || batch_size < 1 || !(lr > 0.0) || reg < 0.0)
    throw ConfigError("linear svm: bad recipe (epochs/batch/lr/reg)");
  const long n = x.dim(0), d = x.dim(1);

  LinearSvmModel model;
  model.weights = TensorD::zeros({classes, d});
  model.biases.assign(static_cast<size_t>(classes), 0.0);
  model.lr = lr;
  model.reg = reg;
  model.epochs = epochs;

  Rng rng(seed);
  std::vector<long> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0L);
  std::vector<double> grad_w(static_cast<size_t>(classes) * d);
  std::vector<double> grad_b(static_cast<size_t>(classes));

  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    for (long at = 0; at < n; at += batch_size) {
      const long take = std::min<long>(batch_size, n - at);
      std::fill(grad_w.begin(), grad_w.end(), 0.0);
      std::fill(grad_b.begin(), grad_b.end(), 0.0);
      for (long i = 0; i < take; ++i) {
        const long r = order[static_cast<size_t>(at + i)];
        const double* row = x.ptr() + r * d;
        for (int c = 0; c < classes; ++c) {
          const double ysgn = y[static_cast<size_t>(r)] == c ? 1.0 : -1.0;
          double score = model.biases[static_cast<size_t>(c)];
          const double* w = model.weights.ptr() + static_cast<long>(c) * d;
          for (long j = 0; j < d; ++j) score += w[j] * row[j];
          if (ysgn * score < 1.0) {  // inside the hinge
            double* gw = grad_w.data() + static_cast<long>(c) * d;
            for (long j = 0; j < d; ++j) gw[j] -= ysgn * row[j];
            grad_b[static_cast<size_t>(c)] -= ysgn;
          }
        }
      }
      const double scale = lr / static_cast<double>(take);
      for (int c = 0; c < classes; ++c) {
        double* w = model.weights.ptr() + static_cast<long>(c) * d;
        const double* gw = grad_w.data() + static_cast<long>(c) * d;
        for (long j = 0; j < d; ++j) w[j] -= scale * gw[j] + lr * reg * w[j];
        model.biases[static_cast<size_t>(c)] -= scale * grad_b[static_cast<size_t>(c)];
      }
    }
    for (double v : model.weights.data)
      if (!std::isfinite(v))
        throw TrainingError("linear svm diverged at epoch " + std::to_string(epoch), epoch);
  }
  return model;
}

std::vector<int> linear_svm_classify(const LinearSvmModel& model, const TensorD& queries) {
  expect_matrix("linear svm", queries);
  const long classes = model.weights.dim(0), d = model.weights.dim(1);
  if (queries.dim(1) != d)
    throw UsageError("linear svm: query width " + std::to_string(queries.dim(1)) +
                     " != model width " + std::to_string(d));
  std::vector<int> out(static_cast<size_t>(queries.dim(0)));
  for (long i = 0; i < queries.dim(0); ++i) {
    const double* row = queries.ptr() + i * d;
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (long c = 0; c < classes; ++c) {
      double score = model.biases[static_cast<size_t>(c)];
      const double* w = model.weights.ptr() + c * d;
      for (long j = 0; j < d; ++j) score += w[j] * row[j];
      if (score > best_score) {  // ties keep the smaller class index
        best_score = score;
        best = static_cast<int>(c);
      }
    }
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

namespace {

// Soft-margin dual for one one-vs-rest head by maximal-violating-pair
// selection, libsvm-style, on a shared precomputed kernel matrix.
RbfSvmHead smo_solve(const TensorD& kernel, const std::vector<double>& ysgn,
                     double c, double tol) {
  const long n = kernel.dim(0);
  RbfSvmHead head;
  head.dual.assign(static_cast<size_t>(n), 0.0);
  std::vector<double> alpha(static_cast<size_t>(n), 0.0);
  std::vector<double> grad(static_cast<size_t>(n), -1.0);  // d/dalpha of the dual objective

  bool has_pos = false, has_neg = false;
  for (double v : ysgn) (v > 0 ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg) {
    head.bias = has_pos ? 1e9 : -1e9;  // degenerate head, decided by sign alone
    return head;
  }

  const long max_iters = std::max<long>(200000, 200 * n);
  for (long iter = 0; iter < max_iters; ++iter) {
    long i = -1, j = -1;
    double m_up = -std::numeric_limits<double>::infinity();
    double m_low = std::numeric_limits<double>::infinity();
    for (long t = 0; t < n; ++t) {
      const double v = -ysgn[static_cast<size_t>(t)] * grad[static_cast<size_t>(t)];
      const bool in_up = (ysgn[static_cast<size_t>(t)] > 0 && alpha[static_cast<size_t>(t)] < c) ||
                         (ysgn[static_cast<size_t>(t)] < 0 && alpha[static_cast<size_t>(t)] > 0);
      const bool in_low = (ysgn[static_cast<size_t>(t)] < 0 && alpha[static_cast<size_t>(t)] < c) ||
                          (ysgn[static_cast<size_t>(t)] > 0 && alpha[static_cast<size_t>(t)] > 0);
      if (in_up && v > m_up) {
        m_up = v;
        i = t;
      }
      if (in_low && v < m_low) {
        m_low = v;
        j = t;
      }
    }
    if (i < 0 || j < 0 || m_up - m_low <= tol) {
      head.bias = -(m_up + m_low) / 2.0;
      break;
    }

    const double yi = ysgn[static_cast<size_t>(i)], yj = ysgn[static_cast<size_t>(j)];
    const double kii = kernel.ptr()[i * n + i], kjj = kernel.ptr()[j * n + j];
    const double kij = kernel.ptr()[i * n + j];
    const double old_ai = alpha[static_cast<size_t>(i)], old_aj = alpha[static_cast<size_t>(j)];
    constexpr double kTau = 1e-12;

    if (yi != yj) {
      const double quad = std::max(kii + kjj + 2.0 * kij, kTau);
      const double delta = (-grad[static_cast<size_t>(i)] - grad[static_cast<size_t>(j)]) / quad;
      const double diff = old_ai - old_aj;
      alpha[static_cast<size_t>(i)] += delta;
      alpha[static_cast<size_t>(j)] += delta;
      if (diff > 0 && alpha[static_cast<size_t>(j)] < 0) {
        alpha[static_cast<size_t>(j)] = 0;
        alpha[static_cast<size_t>(i)] = diff;
      } else if (diff <= 0 && alpha[static_cast<size_t>(i)] < 0) {
        alpha[static_cast<size_t>(i)] = 0;
        alpha[static_cast<size_t>(j)] = -diff;
      }
      if (diff > 0 && alpha[static_cast<size_t>(i)] > c) {
        alpha[static_cast<size_t>(i)] = c;
        alpha[static_cast<size_t>(j)] = c - diff;
      } else if (diff <= 0 && alpha[static_cast<size_t>(j)] > c) {
        alpha[static_cast<size_t>(j)] = c;
        alpha[static_cast<size_t>(i)] = c + diff;
      }
    } else {
      const double quad = std::max(kii + kjj - 2.0 * kij, kTau);
      const double delta = (grad[static_cast<size_t>(i)] - grad[static_cast<size_t>(j)]) / quad;
      const double sum = old_ai + old_aj;
      alpha[static_cast<size_t>(i)] -= delta;
      alpha[static_cast<size_t>(j)] += delta;
      if (sum > c) {
        if (alpha[static_cast<size_t>(i)] > c) {
          alpha[static_cast<size_t>(i)] = c;
          alpha[static_cast<size_t>(j)] = sum - c;
        } else if (alpha[static_cast<size_t>(j)] > c) {
          alpha[static_cast<size_t>(j)] = c;
          alpha[static_cast<size_t>(i)] = sum - c;
        }
      } else {
        if (alpha[static_cast<size_t>(j)] < 0) {
          alpha[static_cast<size_t>(j)] = 0;
          alpha[static_cast<size_t>(i)] = sum;
        } else if (alpha[static_cast<size_t>(i)] < 0) {
          alpha[static_cast<size_t>(i)] = 0;
          alpha[static_cast<size_t>(j)] = sum;
        }
      }
    }

    const double dai = alpha[static_cast<size_t>(i)] - old_ai;
    const double daj = alpha[static_cast<size_t>(j)] - old_aj;
    if (dai == 0.0 && daj == 0.0) {  // numerically stuck pair
      head.bias = -(m_up + m_low) / 2.0;
      break;
    }
    const double* ki = kernel.ptr() + i * n;
    const double* kj = kernel.ptr() + j * n;
    for (long t = 0; t < n; ++t)
      grad[static_cast<size_t>(t)] += ysgn[static_cast<size_t>(t)] *
                                      (yi * dai * ki[t] + yj * daj * kj[t]);
  }

  for (long t = 0; t < n; ++t)
    head.dual[static_cast<size_t>(t)] = alpha[static_cast<size_t>(t)] * ysgn[static_cast<size_t>(t)];
  return head;
}

}  // namespace

RbfSvmModel fit_rbf_svm(const TensorD& x, const std::vector<int>& y, int classes,
                        double c, double gamma, long row_cap) {
  expect_matrix("rbf svm", x);
  expect_labels("rbf svm", x, y);
  if (classes < 2 || max_class(y) >= classes)
    throw ConfigError("rbf svm: labels exceed class count");
  if (!(c > 0.0)) throw ConfigError("rbf svm: C must be > 0");
  const long n = x.dim(0), d = x.dim(1);
  if (n > row_cap)
    throw UsageError("rbf svm: " + std::to_string(n) + " rows exceed the kernel cap of " +
                     std::to_string(row_cap) + "; subset the training data");

  if (gamma <= 0.0) {
    double var_sum = 0.0;
    for (long j = 0; j < d; ++j) {
      double mean = 0.0, sq = 0.0;
      for (long i = 0; i < n; ++i) mean += x.ptr()[i * d + j];
      mean /= static_cast<double>(n);
      for (long i = 0; i < n; ++i) {
        const double diff = x.ptr()[i * d + j] - mean;
        sq += diff * diff;
      }
      var_sum += sq / static_cast<double>(n);
    }
    const double mean_var = var_sum / static_cast<double>(d);
    if (mean_var <= 0.0)
      throw UndefinedValueError("rbf svm: zero feature variance, gamma undefined");
    gamma = 1.0 / (static_cast<double>(d) * mean_var);
  }

  RbfSvmModel model;
  model.train = x;
  model.gamma = gamma;
  model.c = c;

  // shared kernel matrix via |a-b|^2 = |a|^2 + |b|^2 - 2 a.b
  TensorD kernel = TensorD::zeros({n, n});
  {
    CMapD xm(x.ptr(), n, d);
    MapD km(kernel.ptr(), n, n);
    km.noalias() = xm * xm.transpose();
    std::vector<double> sq(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i) sq[static_cast<size_t>(i)] = km(i, i);
    for (long i = 0; i < n; ++i)
      for (long j = 0; j < n; ++j) {
        const double d2 = std::max(0.0, sq[static_cast<size_t>(i)] + sq[static_cast<size_t>(j)] -
                                            2.0 * km(i, j));
        km(i, j) = std::exp(-gamma * d2);
      }
  }

  constexpr double kKktTol = 1e-3;
  model.heads.resize(static_cast<size_t>(classes));
  std::vector<double> ysgn(static_cast<size_t>(n));
  for (int cls = 0; cls < classes; ++cls) {
    for (long i = 0; i < n; ++i)
      ysgn[static_cast<size_t>(i)] = y[static_cast<size_t>(i)] == cls ? 1.0 : -1.0;
    model.heads[static_cast<size_t>(cls)] = smo_solve(kernel, ysgn, c, kKktTol);
  }
  return model;
}

std::vector<int> rbf_svm_classify(const RbfSvmModel& model, const TensorD& queries) {
  expect_matrix("rbf svm", queries);
  const long n = model.train.dim(0), d = model.train.dim(1);
  if (queries.dim(1) != d)
    throw UsageError("rbf svm: query width " + std::to_string(queries.dim(1)) +
                     " != model width " + std::to_string(d));
  const long q = queries.dim(0);
  std::vector<int> out(static_cast<size_t>(q));
  parallel_for(static_cast<size_t>(q), [&](size_t qi) {
    const double* qp = queries.ptr() + static_cast<long>(qi) * d;
    std::vector<double> k(static_cast<size_t>(n));
    for (long t = 0; t < n; ++t) {
      const double* tp = model.train.ptr() + t * d;
      double s = 0.0;
      for (long j = 0; j < d; ++j) {
        const double diff = qp[j] - tp[j];
        s += diff * diff;
      }
      k[static_cast<size_t>(t)] = std::exp(-model.gamma * s);
    }
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (size_t cls = 0; cls < model.heads.size(); ++cls) {
      const RbfSvmHead& head = model.heads[cls];
      double score = head.bias;
      for (long t = 0; t < n; ++t) score += head.dual[static_cast<size_t>(t)] * k[static_cast<size_t>(t)];
      if (score > best_score) {
        best_score = score;
        best = static_cast<int>(cls);
      }
    }
    out[qi] = best;
  });
  return out;
}

std::vector<std::vector<long>> stratified_kfold(const std::vector<int>& y, int folds,
                                                uint64_t seed) {
  if (folds < 2) throw UsageError("kfold: need at least 2 folds");
  if (y.empty()) throw UsageError("kfold: empty labels");
  const int classes = max_class(y) + 1;
  std::vector<std::vector<long>> per_class(static_cast<size_t>(classes));
  for (size_t i = 0; i < y.size(); ++i)
    per_class[static_cast<size_t>(y[i])].push_back(static_cast<long>(i));

  std::vector<std::vector<long>> out(static_cast<size_t>(folds));
  for (int c = 0; c < classes; ++c) {
    auto& pool = per_class[static_cast<size_t>(c)];
    if (pool.empty()) continue;
    if (static_cast<int>(pool.size()) < folds)
      throw UsageError("kfold: class " + std::to_string(c) + " has only " +
                       std::to_string(pool.size()) + " members for " +
                       std::to_string(folds) + " folds");
    Rng rng(Rng::mix(seed, static_cast<uint64_t>(c)));
    rng.shuffle(pool);
    for (size_t i = 0; i < pool.size(); ++i)
      out[i % static_cast<size_t>(folds)].push_back(pool[i]);
  }
  for (auto& fold : out) std::sort(fold.begin(), fold.end());
  return out;
}

GridSearchResult grid_search_cv(const FitFn& fit,
                                const std::vector<std::map<std::string, double>>& grid,
                                const TensorD& x, const std::vector<int>& y,
                                int folds, uint64_t seed) {
  if (grid.empty()) throw UsageError("grid search: empty grid");
  expect_matrix("grid search", x);
  expect_labels("grid search", x, y);
  const auto fold_sets = stratified_kfold(y, folds, seed);
  const long n = x.dim(0), d = x.dim(1);

  GridSearchResult result;
  for (const auto& params : grid) {
    GridPoint point;
    point.params = params;
    std::vector<double> accs;
    try {
      for (const auto& holdout : fold_sets) {
        std::vector<char> in_holdout(static_cast<size_t>(n), 0);
        for (long i : holdout) in_holdout[static_cast<size_t>(i)] = 1;
        std::vector<long> train_rows;
        for (long i = 0; i < n; ++i)
          if (!in_holdout[static_cast<size_t>(i)]) train_rows.push_back(i);

        TensorD train_x = TensorD::zeros({static_cast<long>(train_rows.size()), d});
        std::vector<int> train_y;
        for (size_t i = 0; i < train_rows.size(); ++i) {
          std::copy(x.ptr() + train_rows[i] * d, x.ptr() + (train_rows[i] + 1) * d,
                    train_x.ptr() + static_cast<long>(i) * d);
          train_y.push_back(y[static_cast<size_t>(train_rows[i])]);
        }
        TensorD test_x = TensorD::zeros({static_cast<long>(holdout.size()), d});
        std::vector<int> test_y;
        for (size_t i = 0; i < holdout.size(); ++i) {
          std::copy(x.ptr() + holdout[i] * d, x.ptr() + (holdout[i] + 1) * d,
                    test_x.ptr() + static_cast<long>(i) * d);
          test_y.push_back(y[static_cast<size_t>(holdout[i])]);
        }

        const auto classify = fit(params, train_x, train_y);
        const std::vector<int> pred = classify(test_x);
        long hits = 0;
        for (size_t i = 0; i < pred.size(); ++i)
          if (pred[i] == test_y[i]) ++hits;
        accs.push_back(static_cast<double>(hits) / static_cast<double>(pred.size()));
      }
      double mean = 0.0;
      for (double a : accs) mean += a;
      mean /= static_cast<double>(accs.size());
      double var = 0.0;
      for (double a : accs) var += (a - mean) * (a - mean);
      point.mean_acc = mean;
      point.stddev_acc = std::sqrt(var / static_cast<double>(accs.size()));
    } catch (const Error& e) {
      point.failed = true;
      point.error = e.what();
    }
    result.table.push_back(std::move(point));
  }
  for (size_t i = 0; i < result.table.size(); ++i) {
    if (result.table[i].failed) continue;
    if (result.best < 0 ||
        result.table[i].mean_acc > result.table[static_cast<size_t>(result.best)].mean_acc)
      result.best = static_cast<long>(i);
  }
  if (result.best < 0) throw TrainingError("grid search: every grid point failed");
  return result;
}

}  // namespace pb
