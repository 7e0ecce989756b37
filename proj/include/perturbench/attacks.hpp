#pragma once

#include <string>
#include <vector>

#include "perturbench/dataset.hpp"
#include "perturbench/nn.hpp"

namespace pb {

struct AttackConfig {
  std::string kind = "fgsm";  // fgsm | pgd
  double epsilon = 4.0 / 255.0;
  double alpha = 2.0 / 255.0;  // pgd step size
  int iterations = 10;         // pgd only
  bool random_init = true;     // pgd start at x + U(-eps, eps), clamped
  uint64_t seed = 0;
  bool bn_batch_stats = false;  // craft with batch statistics instead of running

  void validate() const;
  static AttackConfig fgsm(double epsilon);
  static AttackConfig pgd(double epsilon, uint64_t seed);
};

// Crafted images plus bookkeeping. images.provenance carries the attack kind
// and images.meta the config and surrogate hash, so downstream stages can
// refuse to fit on attacked data.
struct AdversarialSet {
  ImageSet images;
  std::vector<double> cosine;  // per-image similarity to the source pixels
  AttackConfig config;
  std::string surrogate_hash;

  double mean_cosine() const;
};

// Untargeted cross-entropy attacks on the frozen surrogate. Both enforce, per
// image: max |adv - orig| <= epsilon + 1e-6 and all pixels in [0, 1]; a
// violation or a non-finite gradient raises AttackError with the image index.
// PGD draws its start per pixel from a per-image stream seeded by
// mix(config.seed, source_index), so results do not depend on batch order.
AdversarialSet craft_fgsm(const Cnn& surrogate, const ImageSet& batch,
                          double epsilon, bool bn_batch_stats = false);
AdversarialSet craft_pgd(const Cnn& surrogate, const ImageSet& batch,
                         const AttackConfig& config);
AdversarialSet craft(const Cnn& surrogate, const ImageSet& batch,
                     const AttackConfig& config);

// <a,b> / (|a| |b|); throws UndefinedValueError on a zero-norm operand.
double cosine_similarity(const float* a, const float* b, long n);

void save_adversarial_set(const AdversarialSet& set, const std::string& path);
AdversarialSet load_adversarial_set(const std::string& path);

}  // namespace pb
