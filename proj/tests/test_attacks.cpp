#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "perturbench/attacks.hpp"
#include "perturbench/errors.hpp"
#include "perturbench/nn.hpp"
#include "perturbench/rng.hpp"

namespace {

pb::ImageSet random_images(long n, uint64_t seed) {
  pb::Rng rng(seed);
  pb::ImageSet set;
  set.images = pb::TensorF::zeros({n, 64, 64, 3});
  for (auto& v : set.images.data) v = static_cast<float>(rng.uniform01());
  for (long i = 0; i < n; ++i) {
    set.labels.push_back(static_cast<int>(rng.uniform_index(10)));
    set.source_indices.push_back(i * 3 + 1);
  }
  return set;
}

const pb::Cnn& surrogate() {
  static const pb::Cnn model(pb::CnnSpec::surrogate(), 77);
  return model;
}

void check_budget(const pb::AdversarialSet& adv, const pb::ImageSet& orig,
                  double epsilon) {
  REQUIRE(adv.images.images.shape == orig.images.shape);
  for (size_t i = 0; i < adv.images.images.data.size(); ++i) {
    const float a = adv.images.images.data[i];
    const float o = orig.images.data[i];
    REQUIRE(a >= 0.0f);
    REQUIRE(a <= 1.0f);
    REQUIRE(std::fabs(static_cast<double>(a) - static_cast<double>(o)) <=
            epsilon + 1e-6);
  }
}

}  // namespace

TEST_CASE("fgsm steps are exactly one budget unit before clamping") {
  const pb::ImageSet batch = random_images(4, 201);
  const double eps = 8.0 / 255.0;
  const pb::AdversarialSet adv = pb::craft_fgsm(surrogate(), batch, eps);

  check_budget(adv, batch, eps);
  CHECK(adv.images.provenance == "fgsm");
  CHECK(adv.config.kind == "fgsm");
  CHECK(adv.images.labels == batch.labels);
  CHECK(adv.images.source_indices == batch.source_indices);
  CHECK(adv.cosine.size() == 4);
  CHECK(adv.surrogate_hash.size() > 0);

  // every pixel is clamp(x - eps), clamp(x), or clamp(x + eps)
  long moved = 0;
  for (size_t i = 0; i < adv.images.images.data.size(); ++i) {
    const double o = static_cast<double>(batch.images.data[i]);
    const double a = static_cast<double>(adv.images.images.data[i]);
    const double lo = std::max(0.0, std::min(1.0, o - eps));
    const double mid = std::max(0.0, std::min(1.0, o));
    const double hi = std::max(0.0, std::min(1.0, o + eps));
    const bool matches = std::fabs(a - lo) < 1e-7 || std::fabs(a - mid) < 1e-7 ||
                         std::fabs(a - hi) < 1e-7;
    REQUIRE(matches);
    if (std::fabs(a - o) > 1e-7) ++moved;
  }
  // an untrained but non-degenerate surrogate moves nearly every pixel
  CHECK(moved > static_cast<long>(adv.images.images.data.size() / 2));
}

TEST_CASE("crafting is deterministic for a fixed surrogate and batch") {
  const pb::ImageSet batch = random_images(3, 202);
  const pb::AdversarialSet a = pb::craft_fgsm(surrogate(), batch, 4.0 / 255.0);
  const pb::AdversarialSet b = pb::craft_fgsm(surrogate(), batch, 4.0 / 255.0);
  CHECK(a.images.images.data == b.images.images.data);

  pb::AttackConfig cfg = pb::AttackConfig::pgd(4.0 / 255.0, 9);
  cfg.iterations = 3;
  const pb::AdversarialSet p1 = pb::craft_pgd(surrogate(), batch, cfg);
  const pb::AdversarialSet p2 = pb::craft_pgd(surrogate(), batch, cfg);
  CHECK(p1.images.images.data == p2.images.images.data);
}

TEST_CASE("pgd stays inside the ball and depends on its seed") {
  const pb::ImageSet batch = random_images(3, 203);
  pb::AttackConfig cfg = pb::AttackConfig::pgd(8.0 / 255.0, 10);
  cfg.iterations = 4;
  const pb::AdversarialSet adv = pb::craft_pgd(surrogate(), batch, cfg);
  check_budget(adv, batch, cfg.epsilon);
  CHECK(adv.images.provenance == "pgd");

  pb::AttackConfig other = cfg;
  other.seed = 11;
  const pb::AdversarialSet adv2 = pb::craft_pgd(surrogate(), batch, other);
  CHECK(adv.images.images.data != adv2.images.images.data);
}

TEST_CASE("pgd start does not depend on batch order") {
  const pb::ImageSet batch = random_images(4, 204);
  pb::AttackConfig cfg = pb::AttackConfig::pgd(8.0 / 255.0, 12);
  cfg.iterations = 2;
  const pb::AdversarialSet full = pb::craft_pgd(surrogate(), batch, cfg);

  // craft the last image alone; per-image seeding must reproduce it
  const pb::ImageSet solo = pb::take_images(batch, {3});
  const pb::AdversarialSet part = pb::craft_pgd(surrogate(), solo, cfg);
  const long stride = 64 * 64 * 3;
  for (long p = 0; p < stride; ++p)
    CHECK(part.images.images.data[static_cast<size_t>(p)] ==
          full.images.images.data[static_cast<size_t>(3 * stride + p)]);
}

TEST_CASE("dispatch follows the config kind and validates it") {
  const pb::ImageSet batch = random_images(2, 205);
  pb::AttackConfig cfg = pb::AttackConfig::fgsm(4.0 / 255.0);
  const pb::AdversarialSet adv = pb::craft(surrogate(), batch, cfg);
  CHECK(adv.images.provenance == "fgsm");

  cfg.kind = "cw";
  CHECK_THROWS_AS(pb::craft(surrogate(), batch, cfg), pb::ConfigError);
  cfg.kind = "pgd";
  cfg.iterations = 0;
  CHECK_THROWS_AS(pb::craft(surrogate(), batch, cfg), pb::ConfigError);
  cfg.iterations = 10;
  cfg.epsilon = 1.5;
  CHECK_THROWS_AS(pb::craft(surrogate(), batch, cfg), pb::ConfigError);
  cfg.epsilon = 4.0 / 255.0;
  cfg.alpha = 0.0;
  CHECK_THROWS_AS(pb::craft(surrogate(), batch, cfg), pb::ConfigError);
}

TEST_CASE("cosine similarity values and failure modes") {
  const float a[3] = {1.0f, 0.0f, 0.0f};
  const float b[3] = {0.0f, 1.0f, 0.0f};
  const float c[3] = {2.0f, 0.0f, 0.0f};
  const float z[3] = {0.0f, 0.0f, 0.0f};
  CHECK(pb::cosine_similarity(a, b, 3) == doctest::Approx(0.0));
  CHECK(pb::cosine_similarity(a, c, 3) == doctest::Approx(1.0));
  CHECK(pb::cosine_similarity(b, b, 3) == doctest::Approx(1.0));
  CHECK_THROWS_AS(pb::cosine_similarity(a, z, 3), pb::UndefinedValueError);
  CHECK_THROWS_AS(pb::cosine_similarity(a, b, 0), pb::UsageError);
}

TEST_CASE("per-image cosine tracks the crafted perturbation") {
  const pb::ImageSet batch = random_images(2, 206);
  const pb::AdversarialSet adv = pb::craft_fgsm(surrogate(), batch, 4.0 / 255.0);
  const long stride = 64 * 64 * 3;
  for (long i = 0; i < 2; ++i) {
    const double want = pb::cosine_similarity(batch.images.ptr() + i * stride,
                                              adv.images.images.ptr() + i * stride,
                                              stride);
    CHECK(adv.cosine[static_cast<size_t>(i)] == doctest::Approx(want).epsilon(1e-12));
    CHECK(adv.cosine[static_cast<size_t>(i)] > 0.9);  // small budget, high overlap
  }
  CHECK(adv.mean_cosine() ==
        doctest::Approx((adv.cosine[0] + adv.cosine[1]) / 2.0));
}

TEST_CASE("adversarial cache round trip keeps pixels and config") {
  const pb::ImageSet batch = random_images(2, 207);
  pb::AttackConfig cfg = pb::AttackConfig::pgd(8.0 / 255.0, 13);
  cfg.iterations = 2;
  const pb::AdversarialSet adv = pb::craft_pgd(surrogate(), batch, cfg);

  const auto path = std::filesystem::temp_directory_path() / "pbtest_adv.bin";
  pb::save_adversarial_set(adv, path.string());
  const pb::AdversarialSet back = pb::load_adversarial_set(path.string());
  std::filesystem::remove(path);

  CHECK(back.images.images.data == adv.images.images.data);
  CHECK(back.images.labels == adv.images.labels);
  CHECK(back.images.provenance == "pgd");
  CHECK(back.config.kind == "pgd");
  CHECK(back.config.epsilon == doctest::Approx(cfg.epsilon));
  CHECK(back.config.seed == 13);
  CHECK(back.surrogate_hash == adv.surrogate_hash);
  CHECK(back.cosine == adv.cosine);
}
