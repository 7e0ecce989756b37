#include "perturbench/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "perturbench/common.hpp"

namespace pb {

void TrainRecipe::validate() const {
  if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train: learning rate must be > 0");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.empty() || predicted.size() != truth.size())
    throw UsageError("accuracy: need equal-length nonempty label vectors, got " +
                     std::to_string(predicted.size()) + " vs " +
                     std::to_string(truth.size()));
  long hits = 0;
  for (size_t i = 0; i < predicted.size(); ++i)
    if (predicted[i] == truth[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

void write_training_log(const std::vector<EpochStats>& curve, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IngestionError("cannot open " + path + " for writing");
  out << "epoch,mean_loss,train_acc\n";
  for (const auto& e : curve)
    out << e.epoch << ',' << format_double(e.mean_loss, 9) << ','
        << format_double(e.train_acc, 9) << '\n';
  if (!out) throw IngestionError("short write on " + path);
}

TensorF& ParamStore::find(const std::string& name) {
  for (auto& [n, t] : trainable)
    if (n == name) return t;
  throw UsageError("params: no trainable tensor '" + name + "'");
}

const TensorF& ParamStore::find(const std::string& name) const {
  for (const auto& [n, t] : trainable)
    if (n == name) return t;
  throw UsageError("params: no trainable tensor '" + name + "'");
}

TensorF* ParamStore::find_buffer(const std::string& name) {
  for (auto& [n, t] : buffers)
    if (n == name) return &t;
  return nullptr;
}

namespace {

TensorF kaiming_uniform(Shape shape, long fan_in, Rng& rng) {
  TensorF t = TensorF::zeros(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

std::vector<int> argmax_rows(const TensorF& logits) {
  const long n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i) {
    const float* row = logits.ptr() + i * k;
    int best = 0;
    for (long j = 1; j < k; ++j)
      if (row[j] > row[best]) best = static_cast<int>(j);
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

struct Batch {
  TensorF input;
  std::vector<int> labels;
};

// Shared SGD core: shuffles, gathers batches, runs forward/backward, applies
// the step, and folds batch statistics into the running buffers.
TrainResult sgd_train(
    ParamStore& params, long n, long min_batch_rows, const TrainRecipe& recipe,
    const std::function<Batch(const std::vector<long>&)>& gather,
    const std::function<Var(GraphF&, Var, ForwardTapes*)>& fwd) {
  recipe.validate();
  if (n < 1) throw UsageError("train: empty dataset");

  constexpr double kBnMomentum = 0.1;
  TrainResult result;
  Rng rng(recipe.seed);
  std::vector<long> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0L);

  for (int epoch = 0; epoch < recipe.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    long seen = 0, hits = 0;
    for (long at = 0; at < n; at += recipe.batch_size) {
      const long take = std::min<long>(recipe.batch_size, n - at);
      if (take < min_batch_rows) break;  // trailing sliver, skip
      const std::vector<long> idx(order.begin() + at, order.begin() + at + take);
      Batch batch = gather(idx);

      GraphF g;
      const Var input = g.value(std::move(batch.input), false);
      ForwardTapes tapes;
      const Var logits = fwd(g, input, &tapes);
      const Var loss = g.softmax_cross_entropy(logits, batch.labels);
      const double loss_value = g.value_of(loss).data[0];
      if (!std::isfinite(loss_value))
        throw TrainingError("training diverged: loss " + std::to_string(loss_value) +
                                " at epoch " + std::to_string(epoch),
                            epoch);
      g.backward(loss);

      for (size_t p = 0; p < tapes.params.size(); ++p) {
        if (!g.has_grad(tapes.params[p])) continue;
        const TensorF& grad = g.grad_of(tapes.params[p]);
        TensorF& w = params.trainable[p].second;
        for (size_t i = 0; i < w.data.size(); ++i)
          w.data[i] -= static_cast<float>(recipe.lr) * grad.data[i];
      }
      for (const auto& [bn_out, prefix] : tapes.bn_outputs) {
        const auto& stats = g.bn_stats(bn_out);
        const long c = stats.mean.numel();
        const long rows = g.value_of(bn_out).numel() / c;
        const double unbias = rows > 1 ? static_cast<double>(rows) / (rows - 1) : 1.0;
        TensorF* rm = params.find_buffer(prefix + ".running_mean");
        TensorF* rv = params.find_buffer(prefix + ".running_var");
        for (long j = 0; j < c; ++j) {
          const size_t js = static_cast<size_t>(j);
          rm->data[js] = static_cast<float>((1.0 - kBnMomentum) * rm->data[js] +
                                            kBnMomentum * stats.mean.data[js]);
          rv->data[js] = static_cast<float>((1.0 - kBnMomentum) * rv->data[js] +
                                            kBnMomentum * unbias * stats.var.data[js]);
        }
      }

      loss_sum += loss_value * static_cast<double>(take);
      seen += take;
      const std::vector<int> pred = argmax_rows(g.value_of(logits));
      for (long i = 0; i < take; ++i)
        if (pred[static_cast<size_t>(i)] == batch.labels[static_cast<size_t>(i)]) ++hits;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = seen > 0 ? loss_sum / static_cast<double>(seen) : 0.0;
    stats.train_acc = seen > 0 ? static_cast<double>(hits) / static_cast<double>(seen) : 0.0;
    result.curve.push_back(stats);
  }
  return result;
}

}  // namespace

CnnSpec CnnSpec::surrogate() {
  CnnSpec s;
  s.arch = "surrogate";
  s.blocks = {{16, 3, 2}, {32, 3, 2}, {64, 3, 2}, {128, 3, 2}};
  return s;
}

CnnSpec CnnSpec::target() {
  CnnSpec s;
  s.arch = "target";
  s.blocks = {{32, 5, 1}, {64, 3, 1}, {96, 3, 1}};
  return s;
}

Cnn::Cnn(CnnSpec spec, uint64_t init_seed) : spec_(std::move(spec)) {
  if (spec_.blocks.empty()) throw ConfigError("cnn: needs at least one conv block");
  if (spec_.bridge_mean.size() != 3 || spec_.bridge_stddev.size() != 3)
    throw ConfigError("cnn: bridge normalization needs 3 channels");
  // checkpoints carry the bridge constants at f32; quantize up front so a
  // reloaded model reproduces this one bitwise
  for (double& v : spec_.bridge_mean) v = static_cast<double>(static_cast<float>(v));
  for (double& v : spec_.bridge_stddev) v = static_cast<double>(static_cast<float>(v));
  long side = spec_.input_side;
  Rng rng(init_seed);
  int cin = 3;
  for (size_t b = 0; b < spec_.blocks.size(); ++b) {
    const ConvBlockSpec& blk = spec_.blocks[b];
    if (blk.channels < 1 || blk.kernel < 1 || blk.convs < 1)
      throw ConfigError("cnn: malformed block spec");
    for (int j = 0; j < blk.convs; ++j) {
      const std::string prefix = "b" + std::to_string(b) + ".c" + std::to_string(j);
      const int k = blk.kernel;
      params_.trainable.emplace_back(
          prefix + ".weight",
          kaiming_uniform({k, k, cin, blk.channels}, static_cast<long>(k) * k * cin, rng));
      params_.trainable.emplace_back(prefix + ".bn.gamma", TensorF::full({blk.channels}, 1.0f));
      params_.trainable.emplace_back(prefix + ".bn.beta", TensorF::zeros({blk.channels}));
      params_.buffers.emplace_back(prefix + ".bn.running_mean", TensorF::zeros({blk.channels}));
      params_.buffers.emplace_back(prefix + ".bn.running_var", TensorF::full({blk.channels}, 1.0f));
      cin = blk.channels;
    }
    side /= 2;
    if (side < 1) throw ConfigError("cnn: too many pooling stages for input side");
  }
  const long flat = side * side * cin;
  params_.trainable.emplace_back("head.weight", kaiming_uniform({flat, 10}, flat, rng));
  params_.trainable.emplace_back("head.bias", TensorF::zeros({10}));
}

Var Cnn::forward(GraphF& g, Var input, bool batch_stats, bool trainable_params,
                 ForwardTapes* tapes) const {
  const TensorF& in_val = g.value_of(input);
  if (in_val.rank() != 4 || in_val.dim(3) != 3)
    throw UsageError("cnn: input must be [n,h,w,3], got " + shape_str(in_val.shape));

  ForwardTapes local;
  ForwardTapes& t = tapes ? *tapes : local;
  auto leaf = [&](const TensorF& tensor) {
    const Var v = g.value(tensor, trainable_params);
    t.params.push_back(v);
    return v;
  };

  // Resolution bridge: exact identity when sides already match, so keeping it
  // unconditional preserves one gradient path for all input sizes.
  Var x = g.resize_bilinear(input, spec_.input_side, spec_.input_side);
  x = g.channel_affine(x, spec_.bridge_mean, spec_.bridge_stddev);

  size_t p = 0;  // walks params_.trainable in construction order
  for (size_t b = 0; b < spec_.blocks.size(); ++b) {
    const ConvBlockSpec& blk = spec_.blocks[b];
    for (int j = 0; j < blk.convs; ++j) {
      const std::string prefix = "b" + std::to_string(b) + ".c" + std::to_string(j);
      const Var w = leaf(params_.trainable[p++].second);
      const Var gamma = leaf(params_.trainable[p++].second);
      const Var beta = leaf(params_.trainable[p++].second);
      x = g.conv2d(x, w, 1, blk.kernel / 2);
      if (batch_stats) {
        x = g.batchnorm_train(x, gamma, beta);
        t.bn_outputs.emplace_back(x, prefix + ".bn");
      } else {
        const TensorF* rm = nullptr;
        const TensorF* rv = nullptr;
        for (const auto& [n2, buf] : params_.buffers) {
          if (n2 == prefix + ".bn.running_mean") rm = &buf;
          if (n2 == prefix + ".bn.running_var") rv = &buf;
        }
        x = g.batchnorm_eval(x, gamma, beta, *rm, *rv);
      }
      x = g.relu(x);
    }
    x = g.maxpool2d(x, 2, 2);
  }
  const TensorF& xv = g.value_of(x);
  x = g.reshape(x, {xv.dim(0), xv.numel() / xv.dim(0)});
  const Var w = leaf(params_.trainable[p++].second);
  const Var bias = leaf(params_.trainable[p++].second);
  return g.bias_add(g.matmul(x, w), bias);
}

TensorF Cnn::logits(const ImageSet& set, int batch_size) const {
  const long n = set.size();
  TensorF out = TensorF::zeros({n, 10});
  for (long at = 0; at < n; at += batch_size) {
    const long take = std::min<long>(batch_size, n - at);
    std::vector<long> idx(static_cast<size_t>(take));
    std::iota(idx.begin(), idx.end(), at);
    const ImageSet chunk = take_images(set, idx);
    GraphF g;
    const Var input = g.value(chunk.images, false);
    const Var lg = forward(g, input, false, false, nullptr);
    const TensorF& lv = g.value_of(lg);
    std::copy(lv.data.begin(), lv.data.end(), out.data.begin() + at * 10);
  }
  return out;
}

std::vector<int> Cnn::predict(const ImageSet& set, int batch_size) const {
  return argmax_rows(logits(set, batch_size));
}

long Cnn::parameter_count() const {
  long total = 0;
  for (const auto& [n, t] : params_.trainable) total += t.numel();
  return total;
}

Checkpoint Cnn::to_checkpoint() const {
  Checkpoint ckpt;
  TensorF arch = TensorF::zeros({1});
  arch.data[0] = spec_.arch == "target" ? 1.0f : 0.0f;
  ckpt.add("meta/arch", arch);
  ckpt.add("meta/input_side", TensorF({1}, {static_cast<float>(spec_.input_side)}));
  TensorF blocks = TensorF::zeros({static_cast<long>(spec_.blocks.size()), 3});
  for (size_t b = 0; b < spec_.blocks.size(); ++b) {
    blocks.data[b * 3 + 0] = static_cast<float>(spec_.blocks[b].channels);
    blocks.data[b * 3 + 1] = static_cast<float>(spec_.blocks[b].kernel);
    blocks.data[b * 3 + 2] = static_cast<float>(spec_.blocks[b].convs);
  }
  ckpt.add("meta/blocks", blocks);
  TensorF bm = TensorF::zeros({3}), bs = TensorF::zeros({3});
  for (int i = 0; i < 3; ++i) {
    bm.data[static_cast<size_t>(i)] = static_cast<float>(spec_.bridge_mean[static_cast<size_t>(i)]);
    bs.data[static_cast<size_t>(i)] = static_cast<float>(spec_.bridge_stddev[static_cast<size_t>(i)]);
  }
  ckpt.add("meta/bridge_mean", bm);
  ckpt.add("meta/bridge_stddev", bs);
  for (const auto& [name, t] : params_.trainable) ckpt.add(name, t);
  for (const auto& [name, t] : params_.buffers) ckpt.add(name, t);
  return ckpt;
}

Cnn Cnn::from_checkpoint(const Checkpoint& ckpt) {
  CnnSpec spec;
  const float arch = ckpt.get("meta/arch").data[0];
  spec.arch = arch == 1.0f ? "target" : "surrogate";
  spec.input_side = static_cast<long>(ckpt.get("meta/input_side").data[0]);
  const TensorF& blocks = ckpt.get("meta/blocks");
  if (blocks.rank() != 2 || blocks.dim(1) != 3)
    throw FormatError("checkpoint: malformed meta/blocks");
  spec.blocks.clear();
  for (long b = 0; b < blocks.dim(0); ++b) {
    ConvBlockSpec blk;
    blk.channels = static_cast<int>(blocks.data[static_cast<size_t>(b * 3 + 0)]);
    blk.kernel = static_cast<int>(blocks.data[static_cast<size_t>(b * 3 + 1)]);
    blk.convs = static_cast<int>(blocks.data[static_cast<size_t>(b * 3 + 2)]);
    spec.blocks.push_back(blk);
  }
  const TensorF& bm = ckpt.get("meta/bridge_mean");
  const TensorF& bs = ckpt.get("meta/bridge_stddev");
  for (int i = 0; i < 3; ++i) {
    spec.bridge_mean[static_cast<size_t>(i)] = bm.data[static_cast<size_t>(i)];
    spec.bridge_stddev[static_cast<size_t>(i)] = bs.data[static_cast<size_t>(i)];
  }
  Cnn model(spec, 0);
  for (auto& [name, t] : model.params_.trainable) {
    const TensorF& stored = ckpt.get(name);
    if (stored.shape != t.shape)
      throw FormatError("checkpoint: tensor '" + name + "' has shape " +
                        shape_str(stored.shape) + ", model expects " + shape_str(t.shape));
    t = stored;
  }
  for (auto& [name, t] : model.params_.buffers) {
    const TensorF& stored = ckpt.get(name);
    if (stored.shape != t.shape)
      throw FormatError("checkpoint: buffer '" + name + "' has shape " +
                        shape_str(stored.shape) + ", model expects " + shape_str(t.shape));
    t = stored;
  }
  return model;
}

Mlp::Mlp(long input_dim, std::vector<long> hidden, long classes, uint64_t init_seed) {
  if (input_dim < 1 || classes < 2)
    throw ConfigError("mlp: need input_dim >= 1 and classes >= 2");
  widths_.push_back(input_dim);
  for (long hd : hidden) {
    if (hd < 1) throw ConfigError("mlp: hidden width must be >= 1");
    widths_.push_back(hd);
  }
  widths_.push_back(classes);
  Rng rng(init_seed);
  for (size_t l = 0; l + 1 < widths_.size(); ++l) {
    const long in = widths_[l], out = widths_[l + 1];
    const std::string prefix = "l" + std::to_string(l);
    params_.trainable.emplace_back(prefix + ".weight", kaiming_uniform({in, out}, in, rng));
    params_.trainable.emplace_back(prefix + ".bias", TensorF::zeros({out}));
  }
}

Mlp Mlp::ann_default(long input_dim, uint64_t init_seed) {
  return Mlp(input_dim, {256, 64, 16}, 10, init_seed);
}

Var Mlp::forward(GraphF& g, Var input, bool trainable_params, ForwardTapes* tapes) const {
  const TensorF& in_val = g.value_of(input);
  if (in_val.rank() != 2 || in_val.dim(1) != widths_.front())
    throw UsageError("mlp: input must be [n," + std::to_string(widths_.front()) +
                     "], got " + shape_str(in_val.shape));
  ForwardTapes local;
  ForwardTapes& t = tapes ? *tapes : local;
  Var x = input;
  size_t p = 0;
  for (size_t l = 0; l + 1 < widths_.size(); ++l) {
    const Var w = g.value(params_.trainable[p].second, trainable_params);
    t.params.push_back(w);
    ++p;
    const Var b = g.value(params_.trainable[p].second, trainable_params);
    t.params.push_back(b);
    ++p;
    x = g.bias_add(g.matmul(x, w), b);
    if (l + 2 < widths_.size()) x = g.relu(x);
  }
  return x;
}

TensorF Mlp::logits(const FeatureMatrix& features, int batch_size) const {
  const long n = features.rows(), d = features.cols(), k = widths_.back();
  TensorF out = TensorF::zeros({n, k});
  const TensorF all = features.values.cast<float>();
  for (long at = 0; at < n; at += batch_size) {
    const long take = std::min<long>(batch_size, n - at);
    TensorF chunk = TensorF::zeros({take, d});
    std::copy(all.data.begin() + at * d, all.data.begin() + (at + take) * d,
              chunk.data.begin());
    GraphF g;
    const Var input = g.value(std::move(chunk), false);
    const Var lg = forward(g, input, false, nullptr);
    const TensorF& lv = g.value_of(lg);
    std::copy(lv.data.begin(), lv.data.end(), out.data.begin() + at * k);
  }
  return out;
}

std::vector<int> Mlp::predict(const FeatureMatrix& features, int batch_size) const {
  return argmax_rows(logits(features, batch_size));
}

long Mlp::parameter_count() const {
  long total = 0;
  for (const auto& [n, t] : params_.trainable) total += t.numel();
  return total;
}

Checkpoint Mlp::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.add("meta/arch", TensorF({1}, {2.0f}));
  TensorF widths = TensorF::zeros({static_cast<long>(widths_.size())});
  for (size_t i = 0; i < widths_.size(); ++i)
    widths.data[i] = static_cast<float>(widths_[i]);
  ckpt.add("meta/widths", widths);
  for (const auto& [name, t] : params_.trainable) ckpt.add(name, t);
  return ckpt;
}

Mlp Mlp::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.get("meta/arch").data[0] != 2.0f)
    throw FormatError("checkpoint: not an mlp checkpoint");
  const TensorF& widths = ckpt.get("meta/widths");
  if (widths.numel() < 2) throw FormatError("checkpoint: malformed meta/widths");
  std::vector<long> hidden;
  for (long i = 1; i + 1 < widths.numel(); ++i)
    hidden.push_back(static_cast<long>(widths.data[static_cast<size_t>(i)]));
  Mlp model(static_cast<long>(widths.data[0]), hidden,
            static_cast<long>(widths.data[static_cast<size_t>(widths.numel() - 1)]), 0);
  for (auto& [name, t] : model.params_.trainable) {
    const TensorF& stored = ckpt.get(name);
    if (stored.shape != t.shape)
      throw FormatError("checkpoint: tensor '" + name + "' has shape " +
                        shape_str(stored.shape) + ", model expects " + shape_str(t.shape));
    t = stored;
  }
  return model;
}

TrainResult train_cnn(Cnn& model, const ImageSet& data, const TrainRecipe& recipe) {
  if (data.size() != static_cast<long>(data.labels.size()))
    throw UsageError("train: image/label count mismatch");
  for (int y : data.labels)
    if (y < 0 || y >= 10) throw ConfigError("train: label " + std::to_string(y) + " outside [0,10)");
  auto gather = [&](const std::vector<long>& idx) {
    const ImageSet chunk = take_images(data, idx);
    return Batch{chunk.images, chunk.labels};
  };
  auto fwd = [&](GraphF& g, Var input, ForwardTapes* tapes) {
    return model.forward(g, input, true, true, tapes);
  };
  return sgd_train(model.params(), data.size(), 2, recipe, gather, fwd);
}

TrainResult train_mlp(Mlp& model, const FeatureMatrix& data, const TrainRecipe& recipe) {
  if (data.rows() != static_cast<long>(data.labels.size()))
    throw UsageError("train: feature/label count mismatch");
  const long classes = model.widths().back();
  for (int y : data.labels)
    if (y < 0 || y >= classes)
      throw ConfigError("train: label " + std::to_string(y) + " outside [0," +
                        std::to_string(classes) + ")");
  const TensorF all = data.values.cast<float>();
  const long d = data.cols();
  auto gather = [&](const std::vector<long>& idx) {
    Batch b;
    b.input = TensorF::zeros({static_cast<long>(idx.size()), d});
    for (size_t i = 0; i < idx.size(); ++i) {
      std::copy(all.data.begin() + idx[i] * d, all.data.begin() + (idx[i] + 1) * d,
                b.input.data.begin() + static_cast<long>(i) * d);
      b.labels.push_back(data.labels[static_cast<size_t>(idx[i])]);
    }
    return b;
  };
  auto fwd = [&](GraphF& g, Var input, ForwardTapes* tapes) {
    return model.forward(g, input, true, tapes);
  };
  return sgd_train(model.params(), data.rows(), 1, recipe, gather, fwd);
}

}  // namespace pb
