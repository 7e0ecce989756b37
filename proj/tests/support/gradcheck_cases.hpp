#pragma once

// Named finite-difference gradient cases shared by the unit tests and the
// acceptance gate. Each case builds a scalar loss from fresh random leaves;
// non-scalar outputs are contracted against a fixed random vector so every
// output coordinate influences the loss.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "perturbench/gradcheck.hpp"
#include "perturbench/graph.hpp"
#include "perturbench/rng.hpp"
#include "perturbench/tensor.hpp"

namespace ref {

struct GradCase {
  std::string name;
  std::vector<std::pair<std::string, pb::TensorD>> leaves;
  std::function<pb::Var(pb::GraphD&, const std::vector<pb::Var>&)> build;
  long max_coords = 0;  // 0 probes everything
};

inline pb::TensorD gc_rand(pb::Shape shape, pb::Rng& rng, double lo = -1.0,
                           double hi = 1.0) {
  pb::TensorD t = pb::TensorD::zeros(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Values kept away from zero so ReLU probes never straddle the kink.
inline pb::TensorD gc_rand_offzero(pb::Shape shape, pb::Rng& rng) {
  pb::TensorD t = gc_rand(std::move(shape), rng);
  for (auto& v : t.data) v += (v >= 0 ? 0.05 : -0.05);
  return t;
}

// Values with pairwise gaps well above the probe step so max-pool window
// winners never flip during finite differencing.
inline pb::TensorD gc_rand_separated(pb::Shape shape, pb::Rng& rng) {
  for (;;) {
    pb::TensorD t = gc_rand(shape, rng);
    std::vector<double> sorted(t.data.begin(), t.data.end());
    std::sort(sorted.begin(), sorted.end());
    double gap = 1.0;
    for (size_t i = 1; i < sorted.size(); ++i)
      gap = std::min(gap, sorted[i] - sorted[i - 1]);
    if (gap > 1e-3) return t;
  }
}

// Contract an arbitrary tensor to a scalar: flatten, then matmul against a
// fixed random column captured by the closure.
inline pb::Var gc_reduce(pb::GraphD& g, pb::Var x, const pb::TensorD& column) {
  const pb::TensorD& v = g.value_of(x);
  const pb::Var flat = g.reshape(x, {1, v.numel()});
  return g.reshape(g.matmul(flat, g.value(column)), {1, 1});
}

inline std::vector<int> gc_labels(long n, long classes, pb::Rng& rng) {
  std::vector<int> labels(static_cast<size_t>(n));
  for (auto& l : labels) l = static_cast<int>(rng.uniform_index(static_cast<size_t>(classes)));
  return labels;
}

// One instance of every primitive case, randomized from the given seed.
inline std::vector<GradCase> primitive_cases(uint64_t seed) {
  std::vector<GradCase> cases;
  pb::Rng rng(seed);

  {
    GradCase c;
    c.name = "matmul";
    c.leaves = {{"a", gc_rand({3, 4}, rng)}, {"b", gc_rand({4, 5}, rng)}};
    pb::TensorD col = gc_rand({15, 1}, rng);
    c.build = [col](pb::GraphD& g, const std::vector<pb::Var>& l) {
      return gc_reduce(g, g.matmul(l[0], l[1]), col);
    };
    cases.push_back(std::move(c));
  }
  {
    GradCase c;
    c.name = "matmul_shared_leaf";
    c.leaves = {{"x", gc_rand({3, 3}, rng)}, {"w", gc_rand({3, 3}, rng)}};
    pb::TensorD col = gc_rand({9, 1}, rng);
    c.build = [col](pb::GraphD& g, const std::vector<pb::Var>& l) {
      return gc_reduce(g, g.matmul(g.matmul(l[0], l[1]), l[1]), col);
    };
    cases.push_back(std::move(c));
  }
  {
    GradCase c;
    c.name = "conv2d_3x3_s1_p1";
    c.leaves = {{"x", gc_rand({2, 5, 5, 3}, rng)}, {"w", gc_rand({3, 3, 3, 4}, rng)}};
    pb::TensorD col = gc_rand({2 * 5 * 5 * 4, 1}, rng);
    c.build = [col](pb::GraphD& g, const std::vector<pb::Var>& l) {
      return gc_reduce(g, g.conv2d(l[0], l[1], 1, 1), col);
    };
    cases.push_back(std::move(c));
  }
  {
    GradCase c;
    c.name = "conv2d_5x5_s2_p0";
    c.leaves = {{"x", gc_rand({1, 9, 9, 2}, rng)}, {"w", gc_rand({5, 5, 2, 3}, rng)}};
    pb::TensorD col = gc_rand({1 * 3 * 3 * 3, 1}, rng);
    c.build = [col](pb::GraphD& g, const std::vector<pb::Var>& l) {
      return gc_reduce(g, g.conv2d(l[0], l[1], 2, 0), col);
    };
    cases.push_back(std::move(c));
  }
  {
    GradCase c;
    c.name = "conv2d_1x1";
    c.leaves = {{"x", gc_rand({2, 4, 4, 3}, rng)}, {"w", gc_rand({1, 1, 3, 5}, rng)}};
    pb::TensorD col = gc_rand({2 * 4 * 4 * 5, 1}, rng);
    c.build = [col](pb::GraphD& g, const std::vector<pb::Var>& l) {
      return gc_reduce(g, g.conv2d(l[0], l[1], 1, 0), col);
    };
    cases.push_back(std::move(c));
  }
  {
    GradCase c;
    c.name = "maxpool2d_2x2";
    c.leaves = {{"x", gc_rand_separated({2, 6, 6, 2}, rng)}};
    pb::TensorD col = gc_rand({2 * 3 * 3 * 2, 1}, rng);
    c.build = [col](pb::GraphD& g, const std::vector<pb::Var>& l) {
      return gc_reduce(g, g.maxpool2d(l[0], 2, 2), col);
    };
    cases.push_back(std::move(c));
  }
  {
    GradCase c;
    c.name = "maxpool2d_3x3_s2";
    c.leaves = {{"x", gc_rand_separated({1, 7, 7, 3}, rng)}};
    pb::TensorD col = gc_rand({1 * 3 * 3 * 3, 1}, rng);
    c.build = [col](pb::GraphD& g, const std::vector<pb::Var>& l) {
      return gc_reduce(g, g.maxpool2d(l[0], 3, 2), col);
    };
    cases.push_back(std::move(c));
  }
  {
    GradCase c;
    c.name = "relu";
    c.leaves = {{"x", gc_rand_offzero({4, 9}, rng)}};
    pb::TensorD col = gc_rand({36, 1}, rng);
    c.build = [col](pb::GraphD& g, const std::vector<pb::Var>& l) {
      return gc_reduce(g, g.relu(l[0]), col);
    };
    cases.push_back(std::move(c));
  }
  {
    GradCase c;
    c.name = "bias_add";
    c.leaves = {{"x", gc_rand({4, 7}, rng)}, {"b", gc_rand({7}, rng)}};
    pb::TensorD col = gc_rand({28, 1}, rng);
    c.build = [col](pb::GraphD& g, const std::vector<pb::Var>& l) {
      return gc_reduce(g, g.bias_add(l[0], l[1]), col);
    };
    cases.push_back(std::move(c));
  }
  {
    GradCase c;
    c.name = "batchnorm_train_2d";
    c.leaves = {{"x", gc_rand({8, 5}, rng)},
                {"gamma", gc_rand({5}, rng, 0.5, 1.5)},
                {"beta", gc_rand({5}, rng)}};
    pb::TensorD col = gc_rand({40, 1}, rng);
    c.build = [col](pb::GraphD& g, const std::vector<pb::Var>& l) {
      return gc_reduce(g, g.batchnorm_train(l[0], l[1], l[2]), col);
    };
    cases.push_back(std::move(c));
  }
  {
    GradCase c;
    c.name = "batchnorm_train_nhwc";
    c.leaves = {{"x", gc_rand({2, 3, 3, 4}, rng)},
                {"gamma", gc_rand({4}, rng, 0.5, 1.5)},
                {"beta", gc_rand({4}, rng)}};
    pb::TensorD col = gc_rand({72, 1}, rng);
    c.build = [col](pb::GraphD& g, const std::vector<pb::Var>& l) {
      return gc_reduce(g, g.batchnorm_train(l[0], l[1], l[2]), col);
    };
    cases.push_back(std::move(c));
  }
  {
    GradCase c;
    c.name = "batchnorm_eval";
    c.leaves = {{"x", gc_rand({3, 4, 4, 2}, rng)},
                {"gamma", gc_rand({2}, rng, 0.5, 1.5)},
                {"beta", gc_rand({2}, rng)}};
    pb::TensorD rm = gc_rand({2}, rng, -0.2, 0.2);
    pb::TensorD rv = gc_rand({2}, rng, 0.5, 1.5);
    pb::TensorD col = gc_rand({96, 1}, rng);
    c.build = [rm, rv, col](pb::GraphD& g, const std::vector<pb::Var>& l) {
      return gc_reduce(g, g.batchnorm_eval(l[0], l[1], l[2], rm, rv), col);
    };
    cases.push_back(std::move(c));
  }
  {
    GradCase c;
    c.name = "softmax_cross_entropy";
    c.leaves = {{"logits", gc_rand({6, 10}, rng, -2.0, 2.0)}};
    std::vector<int> labels = gc_labels(6, 10, rng);
    c.build = [labels](pb::GraphD& g, const std::vector<pb::Var>& l) {
      return g.softmax_cross_entropy(l[0], labels);
    };
    cases.push_back(std::move(c));
  }
  {
    GradCase c;
    c.name = "resize_bilinear_up";
    c.leaves = {{"x", gc_rand({2, 5, 7, 3}, rng)}};
    pb::TensorD col = gc_rand({2 * 9 * 11 * 3, 1}, rng);
    c.build = [col](pb::GraphD& g, const std::vector<pb::Var>& l) {
      return gc_reduce(g, g.resize_bilinear(l[0], 9, 11), col);
    };
    cases.push_back(std::move(c));
  }
  {
    GradCase c;
    c.name = "resize_bilinear_down";
    c.leaves = {{"x", gc_rand({1, 6, 8, 2}, rng)}};
    pb::TensorD col = gc_rand({1 * 3 * 4 * 2, 1}, rng);
    c.build = [col](pb::GraphD& g, const std::vector<pb::Var>& l) {
      return gc_reduce(g, g.resize_bilinear(l[0], 3, 4), col);
    };
    cases.push_back(std::move(c));
  }
  {
    GradCase c;
    c.name = "channel_affine";
    c.leaves = {{"x", gc_rand({2, 4, 4, 3}, rng)}};
    std::vector<double> mean = {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3),
                                rng.uniform(-0.3, 0.3)};
    std::vector<double> stddev = {rng.uniform(0.5, 1.5), rng.uniform(0.5, 1.5),
                                  rng.uniform(0.5, 1.5)};
    pb::TensorD col = gc_rand({96, 1}, rng);
    c.build = [mean, stddev, col](pb::GraphD& g, const std::vector<pb::Var>& l) {
      return gc_reduce(g, g.channel_affine(l[0], mean, stddev), col);
    };
    cases.push_back(std::move(c));
  }
  {
    GradCase c;
    c.name = "reshape";
    c.leaves = {{"x", gc_rand({2, 12}, rng)}};
    pb::TensorD col = gc_rand({24, 1}, rng);
    c.build = [col](pb::GraphD& g, const std::vector<pb::Var>& l) {
      return gc_reduce(g, g.reshape(l[0], {4, 6}), col);
    };
    cases.push_back(std::move(c));
  }
  {
    GradCase c;
    c.name = "composed_conv_bn_relu_pool_linear";
    c.leaves = {{"x", gc_rand({2, 8, 8, 3}, rng, 0.0, 1.0)},
                {"w", gc_rand({3, 3, 3, 8}, rng, -0.5, 0.5)},
                {"gamma", gc_rand({8}, rng, 0.5, 1.5)},
                {"beta", gc_rand({8}, rng, 0.2, 0.6)},
                {"head_w", gc_rand({128, 10}, rng, -0.3, 0.3)},
                {"head_b", gc_rand({10}, rng)}};
    std::vector<int> labels = gc_labels(2, 10, rng);
    c.max_coords = 24;
    c.build = [labels](pb::GraphD& g, const std::vector<pb::Var>& l) {
      pb::Var x = g.conv2d(l[0], l[1], 1, 1);
      x = g.batchnorm_train(x, l[2], l[3]);
      x = g.relu(x);
      x = g.maxpool2d(x, 2, 2);
      x = g.reshape(x, {2, 128});
      x = g.bias_add(g.matmul(x, l[4]), l[5]);
      return g.softmax_cross_entropy(x, labels);
    };
    cases.push_back(std::move(c));
  }
  return cases;
}

// The full image-classifier composition assembled in double precision: four
// blocks of (conv3x3 - batchnorm - relu) x2 + maxpool over a bilinear resize
// and fixed channel normalization, then a linear head into cross-entropy.
inline GradCase surrogate_case(uint64_t seed, long side = 64, long max_coords = 2) {
  pb::Rng rng(seed);
  GradCase c;
  c.name = "assembled_surrogate";
  c.max_coords = max_coords;
  c.leaves.push_back({"input", gc_rand({1, side, side, 3}, rng, 0.0, 1.0)});
  const int widths[4] = {16, 32, 64, 128};
  int cin = 3;
  for (int b = 0; b < 4; ++b) {
    for (int j = 0; j < 2; ++j) {
      const std::string prefix = "b" + std::to_string(b) + ".c" + std::to_string(j);
      const double bound = std::sqrt(2.0 / (9.0 * cin));
      c.leaves.push_back({prefix + ".weight",
                          gc_rand({3, 3, cin, widths[b]}, rng, -bound, bound)});
      c.leaves.push_back({prefix + ".gamma", gc_rand({widths[b]}, rng, 0.8, 1.2)});
      c.leaves.push_back({prefix + ".beta", gc_rand({widths[b]}, rng, 0.1, 0.4)});
      cin = widths[b];
    }
  }
  const long flat = (side / 16) * (side / 16) * 128;
  c.leaves.push_back({"head.weight", gc_rand({flat, 10}, rng, -0.05, 0.05)});
  c.leaves.push_back({"head.bias", gc_rand({10}, rng, -0.1, 0.1)});
  std::vector<int> labels = gc_labels(1, 10, rng);

  c.build = [labels, side](pb::GraphD& g, const std::vector<pb::Var>& l) {
    pb::Var x = g.resize_bilinear(l[0], side, side);
    x = g.channel_affine(x, {0.485, 0.456, 0.406}, {0.229, 0.224, 0.225});
    size_t p = 1;
    for (int b = 0; b < 4; ++b) {
      for (int j = 0; j < 2; ++j) {
        x = g.conv2d(x, l[p], 1, 1);
        x = g.batchnorm_train(x, l[p + 1], l[p + 2]);
        x = g.relu(x);
        p += 3;
      }
      x = g.maxpool2d(x, 2, 2);
    }
    const pb::TensorD& xv = g.value_of(x);
    x = g.reshape(x, {xv.dim(0), xv.numel() / xv.dim(0)});
    x = g.bias_add(g.matmul(x, l[p]), l[p + 1]);
    return g.softmax_cross_entropy(x, labels);
  };
  return c;
}

inline pb::GradCheckReport run_case(const GradCase& c, uint64_t probe_seed) {
  pb::Rng rng(probe_seed);
  return pb::grad_check(c.build, c.leaves, 1e-5, c.max_coords,
                        c.max_coords > 0 ? &rng : nullptr);
}

// Narrows a case to a subset of its leaves: the rest become fixed graph
// constants, so finite differences probe only the kept ones. Lets a large
// composite case spread leaf coverage across many cheap instances.
inline GradCase restrict_case(const GradCase& c, const std::vector<size_t>& keep) {
  GradCase out;
  out.name = c.name;
  out.max_coords = c.max_coords;
  for (size_t i : keep) out.leaves.push_back(c.leaves[i]);
  auto fixed = std::make_shared<std::vector<std::pair<std::string, pb::TensorD>>>(c.leaves);
  auto kept = std::make_shared<std::vector<size_t>>(keep);
  out.build = [fixed, kept, inner = c.build](pb::GraphD& g, const std::vector<pb::Var>& l) {
    std::vector<pb::Var> all;
    size_t next = 0;
    for (size_t i = 0; i < fixed->size(); ++i) {
      if (std::find(kept->begin(), kept->end(), i) != kept->end())
        all.push_back(l[next++]);
      else
        all.push_back(g.value((*fixed)[static_cast<size_t>(i)].second));
    }
    return inner(g, all);
  };
  return out;
}

}  // namespace ref
