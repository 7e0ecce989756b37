#include "perturbench/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "perturbench/common.hpp"
#include "perturbench/container.hpp"
#include "perturbench/parallel.hpp"

namespace pb {

namespace {

constexpr long kCraftBatch = 64;
constexpr double kBudgetSlack = 1e-6;

float sign_of(float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); }

nlohmann::json config_to_json(const AttackConfig& c) {
  return {{"kind", c.kind},         {"epsilon", c.epsilon},
          {"alpha", c.alpha},       {"iterations", c.iterations},
          {"random_init", c.random_init}, {"seed", c.seed},
          {"bn_batch_stats", c.bn_batch_stats}};
}

AttackConfig config_from_json(const nlohmann::json& j) {
  AttackConfig c;
  c.kind = j.at("kind").get<std::string>();
  c.epsilon = j.at("epsilon").get<double>();
  c.alpha = j.value("alpha", 2.0 / 255.0);
  c.iterations = j.value("iterations", 10);
  c.random_init = j.value("random_init", true);
  c.seed = j.value("seed", uint64_t{0});
  c.bn_batch_stats = j.value("bn_batch_stats", false);
  return c;
}

// Input gradient of the mean cross-entropy over one sub-batch.
TensorF input_gradient(const Cnn& model, const TensorF& pixels,
                       const std::vector<int>& labels, bool bn_batch_stats,
                       const std::vector<long>& source_indices) {
  GraphF g;
  const Var input = g.value(pixels, true);
  const Var logits = model.forward(g, input, bn_batch_stats, false, nullptr);
  const Var loss = g.softmax_cross_entropy(logits, labels);
  g.backward(loss);
  TensorF grad = g.grad_of(input);
  const long per_image = grad.numel() / grad.dim(0);
  for (long i = 0; i < grad.dim(0); ++i)
    for (long j = 0; j < per_image; ++j)
      if (!std::isfinite(grad.data[static_cast<size_t>(i * per_image + j)]))
        throw AttackError("non-finite input gradient for image " +
                              std::to_string(source_indices[static_cast<size_t>(i)]),
                          source_indices[static_cast<size_t>(i)]);
  return grad;
}

void check_pixel_range(const ImageSet& batch) {
  for (float v : batch.images.data)
    if (!(v >= 0.0f && v <= 1.0f))
      throw UsageError("craft: source pixels must lie in [0,1], found " +
                       std::to_string(v));
}

// Budget and range invariants on the finished images; failure here is a bug,
// surfaced loudly rather than silently clipped.
void enforce_invariants(const ImageSet& adv, const TensorF& orig, double epsilon) {
  const long per_image = adv.images.numel() / adv.size();
  for (long i = 0; i < adv.size(); ++i) {
    for (long j = 0; j < per_image; ++j) {
      const size_t at = static_cast<size_t>(i * per_image + j);
      const float v = adv.images.data[at];
      if (!(v >= 0.0f && v <= 1.0f))
        throw AttackError("pixel " + std::to_string(v) + " escaped [0,1] on image " +
                              std::to_string(adv.source_indices[static_cast<size_t>(i)]),
                          adv.source_indices[static_cast<size_t>(i)]);
      if (std::fabs(static_cast<double>(v) - orig.data[at]) > epsilon + kBudgetSlack)
        throw AttackError("budget exceeded on image " +
                              std::to_string(adv.source_indices[static_cast<size_t>(i)]),
                          adv.source_indices[static_cast<size_t>(i)]);
    }
  }
}

std::vector<double> per_image_cosine(const TensorF& orig, const TensorF& adv) {
  const long n = orig.dim(0), per_image = orig.numel() / n;
  std::vector<double> out(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i)
    out[static_cast<size_t>(i)] =
        cosine_similarity(orig.ptr() + i * per_image, adv.ptr() + i * per_image, per_image);
  return out;
}

}  // namespace

void AttackConfig::validate() const {
  if (kind != "fgsm" && kind != "pgd")
    throw ConfigError("attack: unknown kind '" + kind + "' (fgsm or pgd)");
  if (!(epsilon > 0.0 && epsilon <= 1.0))
    throw ConfigError("attack: epsilon must be in (0,1], got " + std::to_string(epsilon));
  if (kind == "pgd") {
    if (!(alpha > 0.0)) throw ConfigError("attack: pgd alpha must be > 0");
    if (iterations < 1) throw ConfigError("attack: pgd iterations must be >= 1");
  }
}

AttackConfig AttackConfig::fgsm(double epsilon) {
  AttackConfig c;
  c.kind = "fgsm";
  c.epsilon = epsilon;
  return c;
}

AttackConfig AttackConfig::pgd(double epsilon, uint64_t seed) {
  AttackConfig c;
  c.kind = "pgd";
  c.epsilon = epsilon;
  c.seed = seed;
  return c;
}

double AdversarialSet::mean_cosine() const {
  if (cosine.empty()) throw UsageError("adversarial set: no cosine entries");
  double sum = 0.0;
  for (double v : cosine) sum += v;
  return sum / static_cast<double>(cosine.size());
}

double cosine_similarity(const float* a, const float* b, long n) {
  if (n < 1) throw UsageError("cosine: need at least one element");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (long i = 0; i < n; ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0)
    throw UndefinedValueError("cosine: zero-norm operand");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

AdversarialSet craft(const Cnn& surrogate, const ImageSet& batch,
                     const AttackConfig& config) {
  config.validate();
  if (config.kind == "fgsm")
    return craft_fgsm(surrogate, batch, config.epsilon, config.bn_batch_stats);
  return craft_pgd(surrogate, batch, config);
}

AdversarialSet craft_fgsm(const Cnn& surrogate, const ImageSet& batch,
                          double epsilon, bool bn_batch_stats) {
  AttackConfig config = AttackConfig::fgsm(epsilon);
  config.bn_batch_stats = bn_batch_stats;
  config.validate();
  check_pixel_range(batch);

  const long n = batch.size();
  const long per_image = batch.images.numel() / n;
  AdversarialSet result;
  result.config = config;
  result.images = batch;
  result.images.provenance = "fgsm";
  const std::vector<uint8_t> ckpt = checkpoint_bytes(surrogate.to_checkpoint());
  result.surrogate_hash = hex64(fnv1a64(ckpt.data(), ckpt.size()));

  parallel_for_chunks(static_cast<size_t>(n), kCraftBatch, [&](size_t b, size_t e) {
    std::vector<long> idx;
    for (size_t i = b; i < e; ++i) idx.push_back(static_cast<long>(i));
    const ImageSet chunk = take_images(batch, idx);
    // one gradient evaluation per batch, by construction
    const TensorF grad = input_gradient(surrogate, chunk.images, chunk.labels,
                                        bn_batch_stats, chunk.source_indices);
    for (size_t i = b; i < e; ++i) {
      const long local = static_cast<long>(i - b);
      float* dst = result.images.images.ptr() + static_cast<long>(i) * per_image;
      const float* src = chunk.images.ptr() + local * per_image;
      const float* gp = grad.ptr() + local * per_image;
      for (long j = 0; j < per_image; ++j) {
        const float step = static_cast<float>(epsilon) * sign_of(gp[j]);
        dst[j] = std::clamp(src[j] + step, 0.0f, 1.0f);
      }
    }
  });

  enforce_invariants(result.images, batch.images, epsilon);
  result.cosine = per_image_cosine(batch.images, result.images.images);
  result.images.meta["attack"] = config_to_json(config);
  result.images.meta["surrogate_hash"] = result.surrogate_hash;
  return result;
}

AdversarialSet craft_pgd(const Cnn& surrogate, const ImageSet& batch,
                         const AttackConfig& config) {
  if (config.kind != "pgd") throw UsageError("craft_pgd: config.kind must be pgd");
  config.validate();
  check_pixel_range(batch);

  const long n = batch.size();
  const long per_image = batch.images.numel() / n;
  const float eps = static_cast<float>(config.epsilon);
  AdversarialSet result;
  result.config = config;
  result.images = batch;
  result.images.provenance = "pgd";
  const std::vector<uint8_t> ckpt = checkpoint_bytes(surrogate.to_checkpoint());
  result.surrogate_hash = hex64(fnv1a64(ckpt.data(), ckpt.size()));

  parallel_for_chunks(static_cast<size_t>(n), kCraftBatch, [&](size_t b, size_t e) {
    std::vector<long> idx;
    for (size_t i = b; i < e; ++i) idx.push_back(static_cast<long>(i));
    const ImageSet chunk = take_images(batch, idx);
    const long rows = chunk.size();

    TensorF x = chunk.images;
    if (config.random_init) {
      // per-image stream keyed by source index, so batch order cannot matter
      for (long i = 0; i < rows; ++i) {
        Rng rng(Rng::mix(config.seed,
                         static_cast<uint64_t>(chunk.source_indices[static_cast<size_t>(i)])));
        float* xp = x.ptr() + i * per_image;
        for (long j = 0; j < per_image; ++j) {
          const float d = static_cast<float>(rng.uniform(-config.epsilon, config.epsilon));
          xp[j] = std::clamp(xp[j] + d, 0.0f, 1.0f);
        }
      }
    }

    for (int t = 0; t < config.iterations; ++t) {
      const TensorF grad = input_gradient(surrogate, x, chunk.labels,
                                          config.bn_batch_stats, chunk.source_indices);
      const float* orig = chunk.images.ptr();
      for (size_t j = 0; j < x.data.size(); ++j) {
        float v = x.data[j] + static_cast<float>(config.alpha) * sign_of(grad.data[j]);
        v = std::clamp(v, orig[j] - eps, orig[j] + eps);  // project onto the budget ball
        x.data[j] = std::clamp(v, 0.0f, 1.0f);
      }
    }

    std::copy(x.data.begin(), x.data.end(),
              result.images.images.data.begin() + static_cast<long>(b) * per_image);
  });

  enforce_invariants(result.images, batch.images, config.epsilon);
  result.cosine = per_image_cosine(batch.images, result.images.images);
  result.images.meta["attack"] = config_to_json(config);
  result.images.meta["surrogate_hash"] = result.surrogate_hash;
  return result;
}

void save_adversarial_set(const AdversarialSet& set, const std::string& path) {
  Checkpoint block;
  block.add("images", set.images.images);
  nlohmann::json header;
  header["kind"] = "adversarial_set";
  header["config"] = config_to_json(set.config);
  header["surrogate_hash"] = set.surrogate_hash;
  header["provenance"] = set.images.provenance;
  header["labels"] = set.images.labels;
  header["source_indices"] = set.images.source_indices;
  header["cosine"] = set.cosine;
  header["meta"] = set.images.meta;
  write_container(path, std::move(header), checkpoint_bytes(block));
}

AdversarialSet load_adversarial_set(const std::string& path) {
  auto [header, payload] = read_container(path);
  if (header.value("kind", "") != "adversarial_set")
    throw FormatError(path + ": not an adversarial-set file");
  Checkpoint block;
  try {
    block = checkpoint_from_bytes(payload.data(), payload.size());
  } catch (const FormatError& e) {
    throw CorruptionError(path + ": " + e.what());
  }
  AdversarialSet set;
  set.images.images = block.get("images");
  set.images.labels = header.at("labels").get<std::vector<int>>();
  set.images.source_indices = header.value("source_indices", std::vector<long>{});
  set.images.provenance = header.value("provenance", "");
  set.images.meta = header.value("meta", nlohmann::json::object());
  set.config = config_from_json(header.at("config"));
  set.surrogate_hash = header.value("surrogate_hash", "");
  set.cosine = header.value("cosine", std::vector<double>{});
  if (set.images.size() != static_cast<long>(set.images.labels.size()))
    throw CorruptionError(path + ": image/label count mismatch");
  return set;
}

}  // namespace pb
