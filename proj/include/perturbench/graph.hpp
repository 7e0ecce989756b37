#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "perturbench/tensor.hpp"

namespace pb {

// Lightweight handle into a Graph's node arena.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense tensors. Nodes are appended in construction
// order, which is already a topological order, so backward() is a single
// reverse sweep visiting each node exactly once. A graph instance is
// single-threaded; independent graphs may run concurrently.
//
// Image tensors are NHWC. Convolution weights are [kh, kw, cin, cout] and
// convolution is cross-correlation (no kernel flip).
template <class S>
class Graph {
 public:
  struct BnStats {
    Tensor<S> mean;  // per-channel batch mean
    Tensor<S> var;   // per-channel biased batch variance
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf tensor. Gradients are accumulated for it when requires_grad is set.
  Var value(Tensor<S> v, bool requires_grad = false);

  // [m,k] x [k,n] -> [m,n]
  Var matmul(Var a, Var b);
  // x: [n,h,w,cin], w: [kh,kw,cin,cout] -> [n,oh,ow,cout]
  Var conv2d(Var x, Var w, int stride = 1, int pad = 0);
  // window k, stride s; ties on equal values go to the first element scanned
  Var maxpool2d(Var x, int k, int stride);
  Var relu(Var x);
  // b broadcast over the trailing dimension
  Var bias_add(Var x, Var b);
  // Normalizes over all axes but the last; batch statistics are retrievable
  // via bn_stats() for running-average updates.
  Var batchnorm_train(Var x, Var gamma, Var beta, double eps = 1e-5);
  Var batchnorm_eval(Var x, Var gamma, Var beta, const Tensor<S>& running_mean,
                     const Tensor<S>& running_var, double eps = 1e-5);
  // logits: [n, classes], integer labels in [0, classes); returns scalar mean loss
  Var softmax_cross_entropy(Var logits, const std::vector<int>& labels);
  // Half-pixel-centers bilinear interpolation, clamped at the borders.
  Var resize_bilinear(Var x, long out_h, long out_w);
  // y = (x - mean[c]) / stddev[c] on the trailing channel axis
  Var channel_affine(Var x, const std::vector<double>& mean,
                     const std::vector<double>& stddev);
  Var reshape(Var x, Shape target);

  // loss must be scalar. Gradients accumulate additively across every use of
  // a tensor. One backward sweep per graph.
  void backward(Var loss);

  const Tensor<S>& value_of(Var v) const { return node(v).value; }
  // Throws UsageError if v holds no gradient (inactive or backward not run).
  const Tensor<S>& grad_of(Var v) const;
  bool has_grad(Var v) const;
  const BnStats& bn_stats(Var bn_out) const;

  size_t size() const { return nodes_.size(); }

 private:
  struct NodeData {
    Tensor<S> value;
    Tensor<S> grad;               // allocated during backward for active nodes
    bool requires_grad = false;   // leaf flag
    bool active = false;          // lies on a path to a requires_grad leaf
    std::function<void(Graph&, int)> backprop;  // null for leaves
  };

  NodeData& node(Var v);
  const NodeData& node(Var v) const;
  Var append(Tensor<S> value, std::vector<int> inputs,
             std::function<void(Graph&, int)> backprop);
  // Accumulation buffer for an active node, allocated on first touch.
  Tensor<S>& grad_buf(int id);

  std::vector<NodeData> nodes_;
  std::map<int, BnStats> bn_stats_;
  bool backward_done_ = false;

  friend struct GraphOps;
};

extern template class Graph<float>;
extern template class Graph<double>;

using GraphF = Graph<float>;
using GraphD = Graph<double>;

}  // namespace pb
