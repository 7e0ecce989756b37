#pragma once

#include <string>
#include <utility>
#include <vector>

#include "perturbench/dataset.hpp"
#include "perturbench/graph.hpp"
#include "perturbench/hog.hpp"
#include "perturbench/rng.hpp"
#include "perturbench/tensor.hpp"

namespace pb {

struct TrainRecipe {
  int batch_size = 64;
  double lr = 0.01;
  int epochs = 30;
  uint64_t seed = 0;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double train_acc = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> curve;
};

void write_training_log(const std::vector<EpochStats>& curve,
                        const std::string& path);

double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth);

// Named parameter store shared by the network classes. Trainable entries get
// gradients; buffers hold batchnorm running statistics.
struct ParamStore {
  std::vector<std::pair<std::string, TensorF>> trainable;
  std::vector<std::pair<std::string, TensorF>> buffers;

  TensorF& find(const std::string& name);
  const TensorF& find(const std::string& name) const;
  TensorF* find_buffer(const std::string& name);
};

// Handles the trainer needs after building a forward pass: one graph leaf per
// trainable tensor (same order as ParamStore::trainable) and the batchnorm
// output nodes paired with their buffer name prefixes.
struct ForwardTapes {
  std::vector<Var> params;
  std::vector<std::pair<Var, std::string>> bn_outputs;
};

struct ConvBlockSpec {
  int channels = 0;
  int kernel = 3;
  int convs = 2;  // conv-bn-relu repetitions before the pool
};

struct CnnSpec {
  std::string arch;  // "surrogate" or "target"
  std::vector<ConvBlockSpec> blocks;
  long input_side = 64;  // side length after the resolution bridge
  // Per-channel normalization applied after the bridge resize.
  std::vector<double> bridge_mean = {0.485, 0.456, 0.406};
  std::vector<double> bridge_stddev = {0.229, 0.224, 0.225};

  // VGG-style stack: four blocks of conv3-bn-relu x2 + pool.
  static CnnSpec surrogate();
  // Architecturally distinct transfer target: three single-conv blocks,
  // wider channels, 5x5 first kernel.
  static CnnSpec target();
};

// Small image classifier over 64x64x3 inputs in [0,1]. The resolution bridge
// (bilinear resize to input_side + fixed channel normalization) is part of
// the forward pass, so input gradients exist in the canonical 64x64 space.
class Cnn {
 public:
  Cnn(CnnSpec spec, uint64_t init_seed);

  // Builds the forward pass for a [n,64,64,3] input already registered in g.
  // batch_stats selects batchnorm mode; trainable_params controls whether
  // parameter leaves require gradients. tapes receives the bookkeeping the
  // trainer and batchnorm updates need.
  Var forward(GraphF& g, Var input, bool batch_stats, bool trainable_params,
              ForwardTapes* tapes = nullptr) const;

  // Eval-mode logits for a whole set, batched internally.
  TensorF logits(const ImageSet& set, int batch_size = 128) const;
  std::vector<int> predict(const ImageSet& set, int batch_size = 128) const;

  Checkpoint to_checkpoint() const;
  static Cnn from_checkpoint(const Checkpoint& ckpt);

  const CnnSpec& spec() const { return spec_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  long parameter_count() const;

 private:
  CnnSpec spec_;
  ParamStore params_;
};

// Fully connected ReLU stack over feature vectors, softmax head.
// The grid's ann classifier uses hidden = {256, 64, 16}.
class Mlp {
 public:
  Mlp(long input_dim, std::vector<long> hidden, long classes, uint64_t init_seed);
  static Mlp ann_default(long input_dim, uint64_t init_seed);

  Var forward(GraphF& g, Var input, bool trainable_params,
              ForwardTapes* tapes = nullptr) const;

  TensorF logits(const FeatureMatrix& features, int batch_size = 256) const;
  std::vector<int> predict(const FeatureMatrix& features, int batch_size = 256) const;

  Checkpoint to_checkpoint() const;
  static Mlp from_checkpoint(const Checkpoint& ckpt);

  const std::vector<long>& widths() const { return widths_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  long parameter_count() const;

 private:
  Mlp() = default;
  std::vector<long> widths_;  // input, hidden..., classes
  ParamStore params_;
};

// Mini-batch SGD with a per-epoch seeded shuffle. Returns the loss curve;
// throws TrainingError carrying the epoch index if the loss goes non-finite.
// A trailing batch with fewer than two samples is skipped (batchnorm needs
// per-channel statistics).
TrainResult train_cnn(Cnn& model, const ImageSet& data, const TrainRecipe& recipe);
TrainResult train_mlp(Mlp& model, const FeatureMatrix& data, const TrainRecipe& recipe);

}  // namespace pb
