#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "doctest.h"
#include "perturbench/container.hpp"
#include "perturbench/dataset.hpp"
#include "perturbench/errors.hpp"
#include "perturbench/rng.hpp"

namespace {

constexpr long kRecordLen = 3073;

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("pbtest_ds_" + std::to_string(reinterpret_cast<uintptr_t>(this)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

// Official batch layout: label byte, then 1024 red, 1024 green, 1024 blue.
void write_batch(const std::string& path, long records,
                 bool poison_label = false, long truncate_to = -1) {
  std::vector<uint8_t> bytes;
  bytes.reserve(static_cast<size_t>(records * kRecordLen));
  for (long r = 0; r < records; ++r) {
    bytes.push_back(poison_label && r == records / 2
                        ? uint8_t(10)
                        : static_cast<uint8_t>(r % 10));
    for (int plane = 0; plane < 3; ++plane)
      for (int p = 0; p < 1024; ++p)
        bytes.push_back(static_cast<uint8_t>((r + plane * 40 + p) % 256));
  }
  if (truncate_to >= 0) bytes.resize(static_cast<size_t>(truncate_to));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<long>(bytes.size()));
}

pb::ImageSet tiny_set(long n, long side, long channels, uint64_t seed) {
  pb::Rng rng(seed);
  pb::ImageSet set;
  set.images = pb::TensorF::zeros({n, side, side, channels});
  for (auto& v : set.images.data) v = static_cast<float>(rng.uniform01());
  for (long i = 0; i < n; ++i) {
    set.labels.push_back(static_cast<int>(i % 4));
    set.source_indices.push_back(100 + i);
  }
  return set;
}

}  // namespace

TEST_CASE("official batch files parse to NHWC floats in [0,1]") {
  TempDir dir;
  write_batch(dir.file("test_batch.bin"), 10000);
  const pb::ImageSet set = pb::load_cifar10(dir.path.string(), "test");

  CHECK(set.size() == 10000);
  CHECK(set.height() == 64);
  CHECK(set.width() == 64);
  CHECK(set.channels() == 3);
  CHECK(set.provenance == "clean");
  CHECK(set.meta.at("split") == "test");
  for (long r = 0; r < 30; ++r)
    CHECK(set.labels[static_cast<size_t>(r)] == static_cast<int>(r % 10));

  // corner pixels survive the 2x half-pixel-center upsample exactly, so the
  // planar -> interleaved -> /255 path is directly observable there
  const float* img1 = set.images.ptr() + 64 * 64 * 3;  // record 1
  CHECK(img1[0] == doctest::Approx((1 + 0 * 40 + 0) % 256 / 255.0).epsilon(1e-7));
  CHECK(img1[1] == doctest::Approx((1 + 1 * 40 + 0) % 256 / 255.0).epsilon(1e-7));
  CHECK(img1[2] == doctest::Approx((1 + 2 * 40 + 0) % 256 / 255.0).epsilon(1e-7));

  for (float v : set.images.data) {
    REQUIRE(v >= 0.0f);
    REQUIRE(v <= 1.0f);
  }
}

TEST_CASE("upsampling preserves the image mean closely") {
  TempDir dir;
  write_batch(dir.file("test_batch.bin"), 10000);
  const pb::ImageSet set = pb::load_cifar10(dir.path.string(), "test", 20, 7);
  // the source records cycle bytes 0..255, so per-image means sit near 0.5
  const long stride = 64 * 64 * 3;
  for (long i = 0; i < set.size(); ++i) {
    const float* img = set.images.ptr() + i * stride;
    double mean = 0.0;
    for (long p = 0; p < stride; ++p) mean += img[p];
    mean /= static_cast<double>(stride);
    CHECK(mean == doctest::Approx(0.5).epsilon(0.05));
  }
}

TEST_CASE("stratified subsets draw equal class counts") {
  TempDir dir;
  write_batch(dir.file("test_batch.bin"), 10000);
  const pb::ImageSet set = pb::load_cifar10(dir.path.string(), "test", 50, 11);
  CHECK(set.size() == 50);
  std::vector<int> counts(10, 0);
  for (int l : set.labels) ++counts[static_cast<size_t>(l)];
  for (int c : counts) CHECK(c == 5);
  CHECK(set.meta.at("subset_seed") == 11);

  // same seed reproduces the selection, another seed changes it
  const pb::ImageSet again = pb::load_cifar10(dir.path.string(), "test", 50, 11);
  CHECK(again.source_indices == set.source_indices);
  const pb::ImageSet other = pb::load_cifar10(dir.path.string(), "test", 50, 12);
  CHECK(other.source_indices != set.source_indices);
}

TEST_CASE("batch ingestion rejects damaged files") {
  TempDir dir;
  SUBCASE("missing file") {
    CHECK_THROWS_AS(pb::load_cifar10(dir.path.string(), "test"), pb::IngestionError);
  }
  SUBCASE("truncated record") {
    write_batch(dir.file("test_batch.bin"), 10000, false, 10000 * kRecordLen - 100);
    CHECK_THROWS_WITH_AS(pb::load_cifar10(dir.path.string(), "test"),
                         doctest::Contains("byte offset"), pb::IngestionError);
  }
  SUBCASE("wrong record count") {
    write_batch(dir.file("test_batch.bin"), 200);
    CHECK_THROWS_AS(pb::load_cifar10(dir.path.string(), "test"), pb::FormatError);
  }
  SUBCASE("label out of range") {
    write_batch(dir.file("test_batch.bin"), 10000, true);
    CHECK_THROWS_WITH_AS(pb::load_cifar10(dir.path.string(), "test"),
                         doctest::Contains("label 10"), pb::FormatError);
  }
  SUBCASE("unknown split") {
    CHECK_THROWS_AS(pb::load_cifar10(dir.path.string(), "validation"), pb::ConfigError);
  }
  SUBCASE("oversized subset") {
    write_batch(dir.file("test_batch.bin"), 10000);
    CHECK_THROWS_AS(pb::load_cifar10(dir.path.string(), "test", 10001, 0),
                    pb::ConfigError);
  }
}

TEST_CASE("stratified index selection") {
  std::vector<int> labels;
  for (int i = 0; i < 30; ++i) labels.push_back(i % 3);

  SUBCASE("equal counts with remainder to low classes") {
    const std::vector<long> idx = pb::stratified_indices(labels, 7, 3, 5);
    CHECK(idx.size() == 7);
    CHECK(std::is_sorted(idx.begin(), idx.end()));
    std::vector<int> counts(3, 0);
    for (long i : idx) ++counts[static_cast<size_t>(labels[static_cast<size_t>(i)])];
    CHECK(counts[0] == 3);
    CHECK(counts[1] == 2);
    CHECK(counts[2] == 2);
  }
  SUBCASE("deterministic per seed") {
    CHECK(pb::stratified_indices(labels, 9, 3, 5) == pb::stratified_indices(labels, 9, 3, 5));
    CHECK(pb::stratified_indices(labels, 9, 3, 5) != pb::stratified_indices(labels, 9, 3, 6));
  }
  SUBCASE("class too small") {
    // three of class 0 but a single class 1: an even take of 4 wants 2 of each
    const std::vector<int> lopsided = {0, 0, 0, 1};
    CHECK_THROWS_AS(pb::stratified_indices(lopsided, 4, 2, 0), pb::ConfigError);
  }
  SUBCASE("label outside class range") {
    CHECK_THROWS_AS(pb::stratified_indices(labels, 3, 2, 0), pb::ConfigError);
  }
  SUBCASE("non-positive take") {
    CHECK_THROWS_AS(pb::stratified_indices(labels, 0, 3, 0), pb::ConfigError);
  }
}

TEST_CASE("take_images copies rows with bookkeeping") {
  const pb::ImageSet set = tiny_set(5, 8, 3, 55);
  const pb::ImageSet picked = pb::take_images(set, {4, 1});
  CHECK(picked.size() == 2);
  CHECK(picked.labels == std::vector<int>{0, 1});
  CHECK(picked.source_indices == std::vector<long>{104, 101});
  const long stride = 8 * 8 * 3;
  for (long p = 0; p < stride; ++p)
    CHECK(picked.images.data[static_cast<size_t>(p)] ==
          set.images.data[static_cast<size_t>(4 * stride + p)]);
  CHECK_THROWS_AS(pb::take_images(set, {5}), pb::UsageError);
}

TEST_CASE("grayscale uses BT.709 luma") {
  const pb::ImageSet set = tiny_set(2, 4, 3, 56);
  const pb::ImageSet gray = pb::to_grayscale(set);
  CHECK(gray.channels() == 1);
  CHECK(gray.labels == set.labels);
  for (long p = 0; p < 2 * 4 * 4; ++p) {
    const float* rgb = set.images.ptr() + p * 3;
    const float want = 0.2125f * rgb[0] + 0.7154f * rgb[1] + 0.0721f * rgb[2];
    CHECK(gray.images.data[static_cast<size_t>(p)] == doctest::Approx(want).epsilon(1e-6));
  }
  CHECK_THROWS_AS(pb::to_grayscale(gray), pb::ConfigError);
}

TEST_CASE("image set cache round trip") {
  TempDir dir;
  pb::ImageSet set = tiny_set(3, 8, 3, 57);
  set.provenance = "pgd";
  set.meta["note"] = "round-trip";
  const std::string path = dir.file("set.bin");
  pb::save_set(set, path);
  const pb::ImageSet back = pb::load_set(path);
  CHECK(back.images.shape == set.images.shape);
  CHECK(back.images.data == set.images.data);
  CHECK(back.labels == set.labels);
  CHECK(back.source_indices == set.source_indices);
  CHECK(back.provenance == "pgd");
  CHECK(back.meta.at("note") == "round-trip");
}

TEST_CASE("image set loader refuses foreign containers") {
  TempDir dir;
  const std::string path = dir.file("other.bin");
  pb::write_container(path, {{"kind", "something_else"}}, {1, 2, 3, 4});
  CHECK_THROWS_AS(pb::load_set(path), pb::FormatError);
}

TEST_CASE("class name table is the canonical ordering") {
  const auto& names = pb::cifar10_class_names();
  REQUIRE(names.size() == 10);
  CHECK(names[0] == "airplane");
  CHECK(names[9] == "truck");
}
