#include "perturbench/graph.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <sstream>

namespace pb {

namespace {

template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using Map = Eigen::Map<RowMat<S>>;
template <class S>
using CMap = Eigen::Map<const RowMat<S>>;

std::string dims_msg(const char* op, const std::string& detail) {
  return std::string(op) + ": " + detail;
}

template <class S>
void expect_rank(const char* op, const Tensor<S>& t, int rank, const char* which) {
  if (t.rank() != rank)
    throw ConfigError(dims_msg(op, std::string(which) + " must have rank " +
                                       std::to_string(rank) + ", got shape " +
                                       shape_str(t.shape)));
}

// Gathers one image's receptive fields into rows of `cols` ([oh*ow, kh*kw*ci]).
// NHWC keeps the channel run contiguous, so each (ky,kx) tap is a memcpy.
template <class S>
void im2col(const S* x, long h, long w, long ci, int kh, int kw, int stride,
            int pad, long oh, long ow, S* cols) {
  const long k = static_cast<long>(kh) * kw * ci;
  for (long oy = 0; oy < oh; ++oy) {
    for (long ox = 0; ox < ow; ++ox) {
      S* row = cols + (oy * ow + ox) * k;
      for (int ky = 0; ky < kh; ++ky) {
        const long iy = oy * stride - pad + ky;
        S* dst = row + static_cast<long>(ky) * kw * ci;
        if (iy < 0 || iy >= h) {
          std::fill(dst, dst + static_cast<long>(kw) * ci, S(0));
          continue;
        }
        for (int kx = 0; kx < kw; ++kx) {
          const long ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= w) {
            std::fill(dst + static_cast<long>(kx) * ci,
                      dst + static_cast<long>(kx + 1) * ci, S(0));
          } else {
            std::memcpy(dst + static_cast<long>(kx) * ci,
                        x + (iy * w + ix) * ci, sizeof(S) * ci);
          }
        }
      }
    }
  }
}

// Transpose of im2col: scatter-adds column gradients back into the image.
template <class S>
void col2im_add(const S* cols, long h, long w, long ci, int kh, int kw,
                int stride, int pad, long oh, long ow, S* dx) {
  const long k = static_cast<long>(kh) * kw * ci;
  for (long oy = 0; oy < oh; ++oy) {
    for (long ox = 0; ox < ow; ++ox) {
      const S* row = cols + (oy * ow + ox) * k;
      for (int ky = 0; ky < kh; ++ky) {
        const long iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const long ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= w) continue;
          const S* src = row + (static_cast<long>(ky) * kw + kx) * ci;
          S* dst = dx + (iy * w + ix) * ci;
          for (long c = 0; c < ci; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

struct ResizeTap {
  long lo, hi;
  double frac;  // weight of hi; lo gets 1 - frac
};

// Half-pixel-centers sampling: src = (i + 0.5) * in/out - 0.5, clamped.
std::vector<ResizeTap> resize_taps(long in, long out) {
  std::vector<ResizeTap> taps(static_cast<size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (long i = 0; i < out; ++i) {
    double s = (static_cast<double>(i) + 0.5) * scale - 0.5;
    s = std::min(std::max(s, 0.0), static_cast<double>(in - 1));
    const long lo = static_cast<long>(std::floor(s));
    taps[static_cast<size_t>(i)] = {lo, std::min(lo + 1, in - 1), s - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

template <class S>
typename Graph<S>::NodeData& Graph<S>::node(Var v) {
  if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
    throw UsageError("graph: invalid tensor handle");
  return nodes_[static_cast<size_t>(v.id)];
}

template <class S>
const typename Graph<S>::NodeData& Graph<S>::node(Var v) const {
  if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
    throw UsageError("graph: invalid tensor handle");
  return nodes_[static_cast<size_t>(v.id)];
}

template <class S>
Var Graph<S>::append(Tensor<S> value, std::vector<int> inputs,
                     std::function<void(Graph&, int)> backprop) {
  NodeData nd;
  nd.value = std::move(value);
  for (int i : inputs)
    if (nodes_[static_cast<size_t>(i)].active) nd.active = true;
  if (nd.active) nd.backprop = std::move(backprop);
  nodes_.push_back(std::move(nd));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <class S>
Tensor<S>& Graph<S>::grad_buf(int id) {
  NodeData& nd = nodes_[static_cast<size_t>(id)];
  if (nd.grad.numel() == 0) nd.grad = Tensor<S>::zeros(nd.value.shape);
  return nd.grad;
}

template <class S>
Var Graph<S>::value(Tensor<S> v, bool requires_grad) {
  NodeData nd;
  nd.value = std::move(v);
  nd.requires_grad = requires_grad;
  nd.active = requires_grad;
  nodes_.push_back(std::move(nd));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <class S>
const Tensor<S>& Graph<S>::grad_of(Var v) const {
  const NodeData& nd = node(v);
  if (nd.grad.numel() == 0)
    throw UsageError("grad_of: tensor holds no gradient (not on an active path, or backward not run)");
  return nd.grad;
}

template <class S>
bool Graph<S>::has_grad(Var v) const {
  return node(v).grad.numel() > 0;
}

template <class S>
const typename Graph<S>::BnStats& Graph<S>::bn_stats(Var bn_out) const {
  auto it = bn_stats_.find(bn_out.id);
  if (it == bn_stats_.end())
    throw UsageError("bn_stats: tensor is not a batchnorm_train output");
  return it->second;
}

template <class S>
Var Graph<S>::matmul(Var a, Var b) {
  const Tensor<S>& ta = node(a).value;
  const Tensor<S>& tb = node(b).value;
  expect_rank("matmul", ta, 2, "lhs");
  expect_rank("matmul", tb, 2, "rhs");
  if (ta.dim(1) != tb.dim(0))
    throw ConfigError(dims_msg("matmul", "inner dimensions disagree: lhs " +
                                             shape_str(ta.shape) + " vs rhs " +
                                             shape_str(tb.shape)));
  const long m = ta.dim(0), k = ta.dim(1), n = tb.dim(1);
  Tensor<S> out = Tensor<S>::zeros({m, n});
  Map<S>(out.ptr(), m, n).noalias() =
      CMap<S>(ta.ptr(), m, k) * CMap<S>(tb.ptr(), k, n);

  const int ia = a.id, ib = b.id;
  return append(std::move(out), {ia, ib}, [ia, ib, m, k, n](Graph& g, int self) {
    const Tensor<S>& dy = g.nodes_[static_cast<size_t>(self)].grad;
    const Tensor<S>& va = g.nodes_[static_cast<size_t>(ia)].value;
    const Tensor<S>& vb = g.nodes_[static_cast<size_t>(ib)].value;
    if (g.nodes_[static_cast<size_t>(ia)].active) {
      Map<S>(g.grad_buf(ia).ptr(), m, k).noalias() +=
          CMap<S>(dy.ptr(), m, n) * CMap<S>(vb.ptr(), k, n).transpose();
    }
    if (g.nodes_[static_cast<size_t>(ib)].active) {
      Map<S>(g.grad_buf(ib).ptr(), k, n).noalias() +=
          CMap<S>(va.ptr(), m, k).transpose() * CMap<S>(dy.ptr(), m, n);
    }
  });
}

template <class S>
Var Graph<S>::conv2d(Var x, Var w, int stride, int pad) {
  const Tensor<S>& tx = node(x).value;
  const Tensor<S>& tw = node(w).value;
  expect_rank("conv2d", tx, 4, "input");
  expect_rank("conv2d", tw, 4, "weight");
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (pad < 0) throw ConfigError("conv2d: padding must be >= 0");
  const long n = tx.dim(0), h = tx.dim(1), wd = tx.dim(2), ci = tx.dim(3);
  const int kh = static_cast<int>(tw.dim(0)), kw = static_cast<int>(tw.dim(1));
  const long co = tw.dim(3);
  if (tw.dim(2) != ci)
    throw ConfigError(dims_msg("conv2d", "input channels " + std::to_string(ci) +
                                             " != weight cin " + std::to_string(tw.dim(2)) +
                                             " (input " + shape_str(tx.shape) + ", weight " +
                                             shape_str(tw.shape) + ")"));
  const long nh = h + 2L * pad - kh, nw = wd + 2L * pad - kw;
  const long oh = nh / stride + 1;
  const long ow = nw / stride + 1;
  if (nh < 0 || nw < 0 || oh < 1 || ow < 1)
    throw ConfigError(dims_msg("conv2d", "kernel " + std::to_string(kh) + "x" +
                                             std::to_string(kw) + " does not fit input " +
                                             shape_str(tx.shape)));
  const long k = static_cast<long>(kh) * kw * ci;

  Tensor<S> out = Tensor<S>::zeros({n, oh, ow, co});
  std::vector<S> cols(static_cast<size_t>(oh * ow * k));
  for (long i = 0; i < n; ++i) {
    im2col(tx.ptr() + i * h * wd * ci, h, wd, ci, kh, kw, stride, pad, oh, ow,
           cols.data());
    Map<S>(out.ptr() + i * oh * ow * co, oh * ow, co).noalias() =
        CMap<S>(cols.data(), oh * ow, k) * CMap<S>(tw.ptr(), k, co);
  }

  const int ix = x.id, iw = w.id;
  auto backprop = [ix, iw, stride, pad, n, h, wd, ci, kh, kw, co, oh, ow,
                   k](Graph& g, int self) {
    const Tensor<S>& dy = g.nodes_[static_cast<size_t>(self)].grad;
    const Tensor<S>& vx = g.nodes_[static_cast<size_t>(ix)].value;
    const Tensor<S>& vw = g.nodes_[static_cast<size_t>(iw)].value;
    const bool need_dx = g.nodes_[static_cast<size_t>(ix)].active;
    const bool need_dw = g.nodes_[static_cast<size_t>(iw)].active;
    std::vector<S> cols(static_cast<size_t>(oh * ow * k));
    for (long i = 0; i < n; ++i) {
      CMap<S> dyi(dy.ptr() + i * oh * ow * co, oh * ow, co);
      if (need_dw) {
        im2col(vx.ptr() + i * h * wd * ci, h, wd, ci, kh, kw, stride, pad, oh,
               ow, cols.data());
        Map<S>(g.grad_buf(iw).ptr(), k, co).noalias() +=
            CMap<S>(cols.data(), oh * ow, k).transpose() * dyi;
      }
      if (need_dx) {
        Map<S>(cols.data(), oh * ow, k).noalias() =
            dyi * CMap<S>(vw.ptr(), k, co).transpose();
        col2im_add(cols.data(), h, wd, ci, kh, kw, stride, pad, oh, ow,
                   g.grad_buf(ix).ptr() + i * h * wd * ci);
      }
    }
  };
  return append(std::move(out), {ix, iw}, std::move(backprop));
}

template <class S>
Var Graph<S>::maxpool2d(Var x, int kk, int stride) {
  const Tensor<S>& tx = node(x).value;
  expect_rank("maxpool2d", tx, 4, "input");
  if (kk < 1 || stride < 1) throw ConfigError("maxpool2d: window and stride must be >= 1");
  const long n = tx.dim(0), h = tx.dim(1), w = tx.dim(2), c = tx.dim(3);
  const long oh = (h - kk) / stride + 1, ow = (w - kk) / stride + 1;
  if (h < kk || w < kk || oh < 1 || ow < 1)
    throw ConfigError(dims_msg("maxpool2d", "window " + std::to_string(kk) +
                                                " does not fit input " + shape_str(tx.shape)));
  Tensor<S> out = Tensor<S>::zeros({n, oh, ow, c});
  auto argmax = std::make_shared<std::vector<long>>(out.data.size());
  const S* xp = tx.ptr();
  for (long i = 0; i < n; ++i) {
    for (long oy = 0; oy < oh; ++oy) {
      for (long ox = 0; ox < ow; ++ox) {
        for (long ch = 0; ch < c; ++ch) {
          S best{};
          long best_at = -1;
          for (int ky = 0; ky < kk; ++ky) {
            for (int kx = 0; kx < kk; ++kx) {
              const long iy = oy * stride + ky, ix = ox * stride + kx;
              const long at = ((i * h + iy) * w + ix) * c + ch;
              if (best_at < 0 || xp[at] > best) {
                best = xp[at];
                best_at = at;
              }
            }
          }
          const long o = ((i * oh + oy) * ow + ox) * c + ch;
          out.data[static_cast<size_t>(o)] = best;
          (*argmax)[static_cast<size_t>(o)] = best_at;
        }
      }
    }
  }
  const int ix = x.id;
  return append(std::move(out), {ix}, [ix, argmax](Graph& g, int self) {
    const Tensor<S>& dy = g.nodes_[static_cast<size_t>(self)].grad;
    Tensor<S>& dx = g.grad_buf(ix);
    for (size_t o = 0; o < dy.data.size(); ++o)
      dx.data[static_cast<size_t>((*argmax)[o])] += dy.data[o];
  });
}

template <class S>
Var Graph<S>::relu(Var x) {
  const Tensor<S>& tx = node(x).value;
  Tensor<S> out = tx;
  for (auto& v : out.data) v = v > S(0) ? v : S(0);
  const int ix = x.id;
  return append(std::move(out), {ix}, [ix](Graph& g, int self) {
    const Tensor<S>& dy = g.nodes_[static_cast<size_t>(self)].grad;
    const Tensor<S>& vx = g.nodes_[static_cast<size_t>(ix)].value;
    Tensor<S>& dx = g.grad_buf(ix);
    for (size_t i = 0; i < dy.data.size(); ++i)
      if (vx.data[i] > S(0)) dx.data[i] += dy.data[i];
  });
}

template <class S>
Var Graph<S>::bias_add(Var x, Var b) {
  const Tensor<S>& tx = node(x).value;
  const Tensor<S>& tb = node(b).value;
  expect_rank("bias_add", tb, 1, "bias");
  if (tx.rank() < 1 || tx.dim(tx.rank() - 1) != tb.dim(0))
    throw ConfigError(dims_msg("bias_add", "bias length " + std::to_string(tb.dim(0)) +
                                               " != trailing dimension of input " +
                                               shape_str(tx.shape)));
  const long c = tb.dim(0), rows = tx.numel() / c;
  Tensor<S> out = tx;
  for (long r = 0; r < rows; ++r)
    for (long j = 0; j < c; ++j) out.data[static_cast<size_t>(r * c + j)] += tb.data[static_cast<size_t>(j)];
  const int ix = x.id, ib = b.id;
  return append(std::move(out), {ix, ib}, [ix, ib, rows, c](Graph& g, int self) {
    const Tensor<S>& dy = g.nodes_[static_cast<size_t>(self)].grad;
    if (g.nodes_[static_cast<size_t>(ix)].active) {
      Tensor<S>& dx = g.grad_buf(ix);
      for (size_t i = 0; i < dy.data.size(); ++i) dx.data[i] += dy.data[i];
    }
    if (g.nodes_[static_cast<size_t>(ib)].active) {
      Tensor<S>& db = g.grad_buf(ib);
      for (long r = 0; r < rows; ++r)
        for (long j = 0; j < c; ++j)
          db.data[static_cast<size_t>(j)] += dy.data[static_cast<size_t>(r * c + j)];
    }
  });
}

template <class S>
Var Graph<S>::batchnorm_train(Var x, Var gamma, Var beta, double eps) {
  const Tensor<S>& tx = node(x).value;
  const Tensor<S>& tg = node(gamma).value;
  const Tensor<S>& tb = node(beta).value;
  if (tx.rank() < 2)
    throw ConfigError("batchnorm: input must have rank >= 2, got " + shape_str(tx.shape));
  const long c = tx.dim(tx.rank() - 1);
  if (tg.numel() != c || tb.numel() != c)
    throw ConfigError(dims_msg("batchnorm", "gamma/beta length must be " + std::to_string(c) +
                                                ", got " + shape_str(tg.shape) + " / " +
                                                shape_str(tb.shape)));
  const long rows = tx.numel() / c;
  if (rows < 2) throw ConfigError("batchnorm: needs at least 2 samples per channel");

  std::vector<double> mean(static_cast<size_t>(c), 0.0), var(static_cast<size_t>(c), 0.0);
  for (long r = 0; r < rows; ++r)
    for (long j = 0; j < c; ++j) mean[static_cast<size_t>(j)] += tx.data[static_cast<size_t>(r * c + j)];
  for (auto& m : mean) m /= static_cast<double>(rows);
  for (long r = 0; r < rows; ++r)
    for (long j = 0; j < c; ++j) {
      const double d = tx.data[static_cast<size_t>(r * c + j)] - mean[static_cast<size_t>(j)];
      var[static_cast<size_t>(j)] += d * d;
    }
  for (auto& v : var) v /= static_cast<double>(rows);

  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(c));
  auto mean_sh = std::make_shared<std::vector<double>>(mean);
  for (long j = 0; j < c; ++j)
    (*inv_std)[static_cast<size_t>(j)] = 1.0 / std::sqrt(var[static_cast<size_t>(j)] + eps);

  Tensor<S> out = Tensor<S>::zeros(tx.shape);
  for (long r = 0; r < rows; ++r)
    for (long j = 0; j < c; ++j) {
      const size_t at = static_cast<size_t>(r * c + j);
      const double xhat = (tx.data[at] - mean[static_cast<size_t>(j)]) * (*inv_std)[static_cast<size_t>(j)];
      out.data[at] = static_cast<S>(static_cast<double>(tg.data[static_cast<size_t>(j)]) * xhat +
                                    static_cast<double>(tb.data[static_cast<size_t>(j)]));
    }

  BnStats stats;
  stats.mean = Tensor<S>::zeros({c});
  stats.var = Tensor<S>::zeros({c});
  for (long j = 0; j < c; ++j) {
    stats.mean.data[static_cast<size_t>(j)] = static_cast<S>(mean[static_cast<size_t>(j)]);
    stats.var.data[static_cast<size_t>(j)] = static_cast<S>(var[static_cast<size_t>(j)]);
  }

  const int ix = x.id, ig = gamma.id, ibt = beta.id;
  Var out_var = append(std::move(out), {ix, ig, ibt},
                       [ix, ig, ibt, rows, c, inv_std, mean_sh](Graph& g, int self) {
    const Tensor<S>& dy = g.nodes_[static_cast<size_t>(self)].grad;
    const Tensor<S>& vx = g.nodes_[static_cast<size_t>(ix)].value;
    const Tensor<S>& vg = g.nodes_[static_cast<size_t>(ig)].value;
    // Per-channel reductions in double for stability.
    std::vector<double> sum_dy(static_cast<size_t>(c), 0.0), sum_dy_xhat(static_cast<size_t>(c), 0.0);
    for (long r = 0; r < rows; ++r)
      for (long j = 0; j < c; ++j) {
        const size_t at = static_cast<size_t>(r * c + j);
        const size_t jc = static_cast<size_t>(j);
        const double xhat = (vx.data[at] - (*mean_sh)[jc]) * (*inv_std)[jc];
        sum_dy[jc] += dy.data[at];
        sum_dy_xhat[jc] += dy.data[at] * xhat;
      }
    if (g.nodes_[static_cast<size_t>(ig)].active) {
      Tensor<S>& dg = g.grad_buf(ig);
      for (long j = 0; j < c; ++j) dg.data[static_cast<size_t>(j)] += static_cast<S>(sum_dy_xhat[static_cast<size_t>(j)]);
    }
    if (g.nodes_[static_cast<size_t>(ibt)].active) {
      Tensor<S>& db = g.grad_buf(ibt);
      for (long j = 0; j < c; ++j) db.data[static_cast<size_t>(j)] += static_cast<S>(sum_dy[static_cast<size_t>(j)]);
    }
    if (g.nodes_[static_cast<size_t>(ix)].active) {
      Tensor<S>& dx = g.grad_buf(ix);
      const double inv_rows = 1.0 / static_cast<double>(rows);
      for (long r = 0; r < rows; ++r)
        for (long j = 0; j < c; ++j) {
          const size_t at = static_cast<size_t>(r * c + j);
          const size_t jc = static_cast<size_t>(j);
          const double xhat = (vx.data[at] - (*mean_sh)[jc]) * (*inv_std)[jc];
          const double t = dy.data[at] - sum_dy[jc] * inv_rows - xhat * sum_dy_xhat[jc] * inv_rows;
          dx.data[at] += static_cast<S>(static_cast<double>(vg.data[jc]) * (*inv_std)[jc] * t);
        }
    }
  });
  bn_stats_.emplace(out_var.id, std::move(stats));
  return out_var;
}

template <class S>
Var Graph<S>::batchnorm_eval(Var x, Var gamma, Var beta,
                             const Tensor<S>& running_mean,
                             const Tensor<S>& running_var, double eps) {
  const Tensor<S>& tx = node(x).value;
  const Tensor<S>& tg = node(gamma).value;
  const Tensor<S>& tb = node(beta).value;
  if (tx.rank() < 2)
    throw ConfigError("batchnorm: input must have rank >= 2, got " + shape_str(tx.shape));
  const long c = tx.dim(tx.rank() - 1);
  if (tg.numel() != c || tb.numel() != c || running_mean.numel() != c || running_var.numel() != c)
    throw ConfigError(dims_msg("batchnorm", "parameter length must match channels " +
                                                std::to_string(c) + " (input " +
                                                shape_str(tx.shape) + ")"));
  const long rows = tx.numel() / c;
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(c));
  auto mean_sh = std::make_shared<std::vector<double>>(static_cast<size_t>(c));
  for (long j = 0; j < c; ++j) {
    (*inv_std)[static_cast<size_t>(j)] = 1.0 / std::sqrt(static_cast<double>(running_var.data[static_cast<size_t>(j)]) + eps);
    (*mean_sh)[static_cast<size_t>(j)] = static_cast<double>(running_mean.data[static_cast<size_t>(j)]);
  }
  Tensor<S> out = Tensor<S>::zeros(tx.shape);
  for (long r = 0; r < rows; ++r)
    for (long j = 0; j < c; ++j) {
      const size_t at = static_cast<size_t>(r * c + j);
      const size_t jc = static_cast<size_t>(j);
      out.data[at] = static_cast<S>(static_cast<double>(tg.data[jc]) *
                                        ((tx.data[at] - (*mean_sh)[jc]) * (*inv_std)[jc]) +
                                    static_cast<double>(tb.data[jc]));
    }
  const int ix = x.id, ig = gamma.id, ibt = beta.id;
  return append(std::move(out), {ix, ig, ibt},
                [ix, ig, ibt, rows, c, inv_std, mean_sh](Graph& g, int self) {
    const Tensor<S>& dy = g.nodes_[static_cast<size_t>(self)].grad;
    const Tensor<S>& vx = g.nodes_[static_cast<size_t>(ix)].value;
    const Tensor<S>& vg = g.nodes_[static_cast<size_t>(ig)].value;
    if (g.nodes_[static_cast<size_t>(ix)].active) {
      Tensor<S>& dx = g.grad_buf(ix);
      for (long r = 0; r < rows; ++r)
        for (long j = 0; j < c; ++j) {
          const size_t at = static_cast<size_t>(r * c + j);
          const size_t jc = static_cast<size_t>(j);
          dx.data[at] += static_cast<S>(static_cast<double>(vg.data[jc]) * (*inv_std)[jc] * dy.data[at]);
        }
    }
    if (g.nodes_[static_cast<size_t>(ig)].active) {
      Tensor<S>& dg = g.grad_buf(ig);
      for (long r = 0; r < rows; ++r)
        for (long j = 0; j < c; ++j) {
          const size_t at = static_cast<size_t>(r * c + j);
          const size_t jc = static_cast<size_t>(j);
          dg.data[jc] += static_cast<S>(dy.data[at] * ((vx.data[at] - (*mean_sh)[jc]) * (*inv_std)[jc]));
        }
    }
    if (g.nodes_[static_cast<size_t>(ibt)].active) {
      Tensor<S>& db = g.grad_buf(ibt);
      for (long r = 0; r < rows; ++r)
        for (long j = 0; j < c; ++j)
          db.data[static_cast<size_t>(j)] += dy.data[static_cast<size_t>(r * c + j)];
    }
  });
}

template <class S>
Var Graph<S>::softmax_cross_entropy(Var logits, const std::vector<int>& labels) {
  const Tensor<S>& tz = node(logits).value;
  expect_rank("softmax_cross_entropy", tz, 2, "logits");
  const long n = tz.dim(0), k = tz.dim(1);
  if (static_cast<long>(labels.size()) != n)
    throw ConfigError(dims_msg("softmax_cross_entropy",
                               "got " + std::to_string(labels.size()) + " labels for " +
                                   std::to_string(n) + " logit rows"));
  for (long i = 0; i < n; ++i)
    if (labels[static_cast<size_t>(i)] < 0 || labels[static_cast<size_t>(i)] >= k)
      throw ConfigError(dims_msg("softmax_cross_entropy",
                                 "label " + std::to_string(labels[static_cast<size_t>(i)]) +
                                     " at row " + std::to_string(i) + " outside [0, " +
                                     std::to_string(k) + ")"));

  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(n * k));
  double loss = 0.0;
  for (long i = 0; i < n; ++i) {
    const S* row = tz.ptr() + i * k;
    double mx = row[0];
    for (long j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double denom = 0.0;
    for (long j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
    const double lse = mx + std::log(denom);
    loss += lse - static_cast<double>(row[labels[static_cast<size_t>(i)]]);
    for (long j = 0; j < k; ++j)
      (*probs)[static_cast<size_t>(i * k + j)] = std::exp(static_cast<double>(row[j]) - lse);
  }
  loss /= static_cast<double>(n);

  auto labels_sh = std::make_shared<std::vector<int>>(labels);
  Tensor<S> out({1}, {static_cast<S>(loss)});
  const int iz = logits.id;
  return append(std::move(out), {iz}, [iz, n, k, probs, labels_sh](Graph& g, int self) {
    const S dloss = g.nodes_[static_cast<size_t>(self)].grad.data[0];
    Tensor<S>& dz = g.grad_buf(iz);
    const double scale = static_cast<double>(dloss) / static_cast<double>(n);
    for (long i = 0; i < n; ++i)
      for (long j = 0; j < k; ++j) {
        double p = (*probs)[static_cast<size_t>(i * k + j)];
        if (j == (*labels_sh)[static_cast<size_t>(i)]) p -= 1.0;
        dz.data[static_cast<size_t>(i * k + j)] += static_cast<S>(p * scale);
      }
  });
}

template <class S>
Var Graph<S>::resize_bilinear(Var x, long out_h, long out_w) {
  const Tensor<S>& tx = node(x).value;
  expect_rank("resize_bilinear", tx, 4, "input");
  if (out_h < 1 || out_w < 1)
    throw ConfigError("resize_bilinear: output size must be positive");
  const long n = tx.dim(0), h = tx.dim(1), w = tx.dim(2), c = tx.dim(3);
  auto ytaps = std::make_shared<std::vector<ResizeTap>>(resize_taps(h, out_h));
  auto xtaps = std::make_shared<std::vector<ResizeTap>>(resize_taps(w, out_w));

  Tensor<S> out = Tensor<S>::zeros({n, out_h, out_w, c});
  const S* xp = tx.ptr();
  for (long i = 0; i < n; ++i) {
    const S* img = xp + i * h * w * c;
    for (long oy = 0; oy < out_h; ++oy) {
      const ResizeTap& ty = (*ytaps)[static_cast<size_t>(oy)];
      for (long ox = 0; ox < out_w; ++ox) {
        const ResizeTap& tw = (*xtaps)[static_cast<size_t>(ox)];
        const double w00 = (1.0 - ty.frac) * (1.0 - tw.frac);
        const double w01 = (1.0 - ty.frac) * tw.frac;
        const double w10 = ty.frac * (1.0 - tw.frac);
        const double w11 = ty.frac * tw.frac;
        S* dst = out.ptr() + ((i * out_h + oy) * out_w + ox) * c;
        const S* p00 = img + (ty.lo * w + tw.lo) * c;
        const S* p01 = img + (ty.lo * w + tw.hi) * c;
        const S* p10 = img + (ty.hi * w + tw.lo) * c;
        const S* p11 = img + (ty.hi * w + tw.hi) * c;
        for (long ch = 0; ch < c; ++ch)
          dst[ch] = static_cast<S>(w00 * p00[ch] + w01 * p01[ch] + w10 * p10[ch] + w11 * p11[ch]);
      }
    }
  }
  const int ix = x.id;
  return append(std::move(out), {ix}, [ix, n, h, w, c, out_h, out_w, ytaps, xtaps](Graph& g, int self) {
    const Tensor<S>& dy = g.nodes_[static_cast<size_t>(self)].grad;
    Tensor<S>& dx = g.grad_buf(ix);
    for (long i = 0; i < n; ++i) {
      S* dimg = dx.ptr() + i * h * w * c;
      for (long oy = 0; oy < out_h; ++oy) {
        const ResizeTap& ty = (*ytaps)[static_cast<size_t>(oy)];
        for (long ox = 0; ox < out_w; ++ox) {
          const ResizeTap& tw = (*xtaps)[static_cast<size_t>(ox)];
          const double w00 = (1.0 - ty.frac) * (1.0 - tw.frac);
          const double w01 = (1.0 - ty.frac) * tw.frac;
          const double w10 = ty.frac * (1.0 - tw.frac);
          const double w11 = ty.frac * tw.frac;
          const S* src = dy.ptr() + ((i * out_h + oy) * out_w + ox) * c;
          S* p00 = dimg + (ty.lo * w + tw.lo) * c;
          S* p01 = dimg + (ty.lo * w + tw.hi) * c;
          S* p10 = dimg + (ty.hi * w + tw.lo) * c;
          S* p11 = dimg + (ty.hi * w + tw.hi) * c;
          for (long ch = 0; ch < c; ++ch) {
            const double d = src[ch];
            p00[ch] += static_cast<S>(w00 * d);
            p01[ch] += static_cast<S>(w01 * d);
            p10[ch] += static_cast<S>(w10 * d);
            p11[ch] += static_cast<S>(w11 * d);
          }
        }
      }
    }
  });
}

template <class S>
Var Graph<S>::channel_affine(Var x, const std::vector<double>& mean,
                             const std::vector<double>& stddev) {
  const Tensor<S>& tx = node(x).value;
  if (tx.rank() < 1)
    throw ConfigError("channel_affine: input must have rank >= 1");
  const long c = tx.dim(tx.rank() - 1);
  if (static_cast<long>(mean.size()) != c || static_cast<long>(stddev.size()) != c)
    throw ConfigError(dims_msg("channel_affine",
                               "mean/stddev length must equal trailing dimension " +
                                   std::to_string(c) + " of input " + shape_str(tx.shape)));
  for (double s : stddev)
    if (s <= 0.0) throw ConfigError("channel_affine: stddev entries must be positive");

  auto scale = std::make_shared<std::vector<double>>(static_cast<size_t>(c));
  for (long j = 0; j < c; ++j) (*scale)[static_cast<size_t>(j)] = 1.0 / stddev[static_cast<size_t>(j)];
  const long rows = tx.numel() / c;
  Tensor<S> out = Tensor<S>::zeros(tx.shape);
  for (long r = 0; r < rows; ++r)
    for (long j = 0; j < c; ++j) {
      const size_t at = static_cast<size_t>(r * c + j);
      out.data[at] = static_cast<S>((static_cast<double>(tx.data[at]) - mean[static_cast<size_t>(j)]) *
                                    (*scale)[static_cast<size_t>(j)]);
    }
  const int ix = x.id;
  return append(std::move(out), {ix}, [ix, rows, c, scale](Graph& g, int self) {
    const Tensor<S>& dy = g.nodes_[static_cast<size_t>(self)].grad;
    Tensor<S>& dx = g.grad_buf(ix);
    for (long r = 0; r < rows; ++r)
      for (long j = 0; j < c; ++j) {
        const size_t at = static_cast<size_t>(r * c + j);
        dx.data[at] += static_cast<S>(dy.data[at] * (*scale)[static_cast<size_t>(j)]);
      }
  });
}

template <class S>
Var Graph<S>::reshape(Var x, Shape target) {
  const Tensor<S>& tx = node(x).value;
  if (shape_numel(target) != tx.numel())
    throw ConfigError(dims_msg("reshape", "cannot view " + shape_str(tx.shape) + " as " +
                                              shape_str(target)));
  Tensor<S> out;
  out.shape = std::move(target);
  out.data = tx.data;
  const int ix = x.id;
  return append(std::move(out), {ix}, [ix](Graph& g, int self) {
    const Tensor<S>& dy = g.nodes_[static_cast<size_t>(self)].grad;
    Tensor<S>& dx = g.grad_buf(ix);
    for (size_t i = 0; i < dy.data.size(); ++i) dx.data[i] += dy.data[i];
  });
}

template <class S>
void Graph<S>::backward(Var loss) {
  if (backward_done_) throw UsageError("backward: already run on this graph");
  const NodeData& ln = node(loss);
  if (ln.value.numel() != 1)
    throw UsageError("backward: loss must be scalar, got shape " + shape_str(ln.value.shape));
  backward_done_ = true;
  if (!ln.active) return;  // nothing requires grad
  grad_buf(loss.id).data[0] = S(1);
  for (int id = loss.id; id >= 0; --id) {
    NodeData& nd = nodes_[static_cast<size_t>(id)];
    if (nd.active && nd.backprop && nd.grad.numel() > 0) nd.backprop(*this, id);
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace pb
