#include "perturbench/dataset.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "perturbench/common.hpp"
#include "perturbench/container.hpp"
#include "perturbench/graph.hpp"
#include "perturbench/rng.hpp"

namespace pb {

namespace {

constexpr long kRecordLen = 1 + 3 * 32 * 32;  // label byte + RGB planes
constexpr long kRecordsPerBatch = 10000;

// One official batch file: planar RGB records -> NHWC float rows appended to
// pixels/labels.
void read_batch(const std::string& path, std::vector<float>& pixels,
                std::vector<int>& labels) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IngestionError("cannot open " + path);
  const long size = static_cast<long>(in.tellg());
  in.seekg(0);
  if (size % kRecordLen != 0)
    throw IngestionError(path + ": truncated record at byte offset " +
                         std::to_string(size - size % kRecordLen));
  const long records = size / kRecordLen;
  if (records != kRecordsPerBatch)
    throw FormatError(path + ": record length mismatch: expected " +
                      std::to_string(kRecordsPerBatch) + " records of " +
                      std::to_string(kRecordLen) + " bytes, file holds " +
                      std::to_string(records));

  std::vector<uint8_t> rec(static_cast<size_t>(kRecordLen));
  for (long r = 0; r < records; ++r) {
    if (!in.read(reinterpret_cast<char*>(rec.data()), kRecordLen))
      throw IngestionError(path + ": short read at byte offset " +
                           std::to_string(r * kRecordLen));
    if (rec[0] > 9)
      throw FormatError(path + ": label " + std::to_string(int(rec[0])) +
                        " out of range at record " + std::to_string(r));
    labels.push_back(static_cast<int>(rec[0]));
    const uint8_t* red = rec.data() + 1;
    const uint8_t* green = red + 1024;
    const uint8_t* blue = green + 1024;
    const size_t base = pixels.size();
    pixels.resize(base + 3 * 1024);
    float* out = pixels.data() + base;
    for (long p = 0; p < 1024; ++p) {
      out[p * 3 + 0] = static_cast<float>(red[p]) / 255.0f;
      out[p * 3 + 1] = static_cast<float>(green[p]) / 255.0f;
      out[p * 3 + 2] = static_cast<float>(blue[p]) / 255.0f;
    }
  }
}

TensorF resize_batch(const TensorF& images, long oh, long ow) {
  GraphF g;
  const Var in = g.value(images, false);
  const Var out = g.resize_bilinear(in, oh, ow);
  return g.value_of(out);
}

}  // namespace

ImageSet load_cifar10(const std::string& dir, const std::string& split,
                      long subset_size, uint64_t seed) {
  std::vector<std::string> files;
  if (split == "train") {
    for (int i = 1; i <= 5; ++i)
      files.push_back(join_path(dir, "data_batch_" + std::to_string(i) + ".bin"));
  } else if (split == "test") {
    files.push_back(join_path(dir, "test_batch.bin"));
  } else {
    throw ConfigError("load_cifar10: unknown split '" + split + "' (train or test)");
  }

  std::vector<float> pixels;
  std::vector<int> labels;
  for (const auto& f : files) read_batch(f, pixels, labels);

  const long n = static_cast<long>(labels.size());
  ImageSet set;
  set.images = TensorF({n, 32, 32, 3}, std::move(pixels));
  set.labels = std::move(labels);
  set.source_indices.resize(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i) set.source_indices[static_cast<size_t>(i)] = i;
  set.meta["split"] = split;

  if (subset_size > 0) {
    if (subset_size > n)
      throw ConfigError("load_cifar10: subset " + std::to_string(subset_size) +
                        " exceeds split size " + std::to_string(n));
    set = take_images(set, stratified_indices(set.labels, subset_size, 10, seed));
    set.meta["split"] = split;
    set.meta["subset_seed"] = seed;
  }

  set.images = resize_batch(set.images, 64, 64);
  return set;
}

std::vector<long> stratified_indices(const std::vector<int>& labels, long take,
                                     int num_classes, uint64_t seed) {
  if (take <= 0) throw ConfigError("stratified_indices: take must be positive");
  std::vector<std::vector<long>> per_class(static_cast<size_t>(num_classes));
  for (size_t i = 0; i < labels.size(); ++i) {
    const int c = labels[i];
    if (c < 0 || c >= num_classes)
      throw ConfigError("stratified_indices: label " + std::to_string(c) +
                        " outside [0, " + std::to_string(num_classes) + ")");
    per_class[static_cast<size_t>(c)].push_back(static_cast<long>(i));
  }
  const long base = take / num_classes;
  const long rem = take % num_classes;
  std::vector<long> out;
  out.reserve(static_cast<size_t>(take));
  for (int c = 0; c < num_classes; ++c) {
    const long want = base + (c < rem ? 1 : 0);
    auto& pool = per_class[static_cast<size_t>(c)];
    if (static_cast<long>(pool.size()) < want)
      throw ConfigError("stratified_indices: class " + std::to_string(c) + " has " +
                        std::to_string(pool.size()) + " members, need " +
                        std::to_string(want));
    Rng rng(Rng::mix(seed, static_cast<uint64_t>(c)));
    rng.shuffle(pool);
    out.insert(out.end(), pool.begin(), pool.begin() + want);
  }
  std::sort(out.begin(), out.end());
  return out;
}

ImageSet take_images(const ImageSet& set, const std::vector<long>& indices) {
  const long h = set.height(), w = set.width(), c = set.channels();
  const long stride = h * w * c;
  ImageSet out;
  out.images = TensorF::zeros({static_cast<long>(indices.size()), h, w, c});
  out.provenance = set.provenance;
  out.meta = set.meta;
  for (size_t i = 0; i < indices.size(); ++i) {
    const long src = indices[i];
    if (src < 0 || src >= set.size())
      throw UsageError("take_images: index " + std::to_string(src) + " outside set of " +
                       std::to_string(set.size()));
    std::memcpy(out.images.ptr() + static_cast<long>(i) * stride,
                set.images.ptr() + src * stride, sizeof(float) * stride);
    out.labels.push_back(set.labels[static_cast<size_t>(src)]);
    out.source_indices.push_back(set.source_indices[static_cast<size_t>(src)]);
  }
  return out;
}

ImageSet to_grayscale(const ImageSet& set) {
  if (set.channels() != 3)
    throw ConfigError("to_grayscale: expected 3 channels, got " +
                      std::to_string(set.channels()));
  const long n = set.size(), h = set.height(), w = set.width();
  ImageSet out;
  out.labels = set.labels;
  out.source_indices = set.source_indices;
  out.provenance = set.provenance;
  out.meta = set.meta;
  out.images = TensorF::zeros({n, h, w, 1});
  const float* src = set.images.ptr();
  float* dst = out.images.ptr();
  const long pixels = n * h * w;
  for (long p = 0; p < pixels; ++p)
    dst[p] = 0.2125f * src[p * 3] + 0.7154f * src[p * 3 + 1] + 0.0721f * src[p * 3 + 2];
  return out;
}

void save_set(const ImageSet& set, const std::string& path) {
  if (set.size() != static_cast<long>(set.labels.size()))
    throw UsageError("save_set: " + std::to_string(set.size()) + " images vs " +
                     std::to_string(set.labels.size()) + " labels");
  Checkpoint block;
  block.add("images", set.images);
  nlohmann::json header;
  header["kind"] = "image_set";
  header["provenance"] = set.provenance;
  header["labels"] = set.labels;
  header["source_indices"] = set.source_indices;
  header["meta"] = set.meta;
  write_container(path, std::move(header), checkpoint_bytes(block));
}

ImageSet load_set(const std::string& path) {
  auto [header, payload] = read_container(path);
  if (header.value("kind", "") != "image_set")
    throw FormatError(path + ": not an image-set file");
  Checkpoint block;
  try {
    block = checkpoint_from_bytes(payload.data(), payload.size());
  } catch (const FormatError& e) {
    throw CorruptionError(path + ": " + e.what());
  }
  ImageSet set;
  set.images = block.get("images");
  set.labels = header.at("labels").get<std::vector<int>>();
  set.source_indices = header.value("source_indices", std::vector<long>{});
  set.provenance = header.value("provenance", "clean");
  set.meta = header.value("meta", nlohmann::json::object());
  if (set.images.rank() != 4 || set.size() != static_cast<long>(set.labels.size()))
    throw CorruptionError(path + ": image/label count mismatch");
  return set;
}

const std::vector<std::string>& cifar10_class_names() {
  static const std::vector<std::string> names = {
      "airplane", "automobile", "bird", "cat", "deer",
      "dog", "frog", "horse", "ship", "truck"};
  return names;
}

}  // namespace pb
