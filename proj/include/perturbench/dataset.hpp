#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "perturbench/tensor.hpp"

namespace pb {

// A batch of images with labels. Pixels are floats in [0, 1], layout NHWC.
// provenance records whether the pixels are untouched or attack outputs;
// downstream fitting refuses anything but "clean".
struct ImageSet {
  TensorF images;                    // [n, h, w, c]
  std::vector<int> labels;           // class ids, 0-based
  std::vector<long> source_indices;  // position within the originating split
  std::string provenance = "clean";  // clean | fgsm | pgd
  nlohmann::json meta = nlohmann::json::object();

  long size() const { return images.rank() == 4 ? images.dim(0) : 0; }
  long height() const { return images.dim(1); }
  long width() const { return images.dim(2); }
  long channels() const { return images.dim(3); }
};

// Reads the official binary batches (data_batch_1..5.bin for "train",
// test_batch.bin for "test") from dir, scales to [0,1], optionally takes a
// class-stratified subset of subset_size (0 = everything), then upsamples
// 32x32 -> 64x64 bilinearly. seed fixes the stratified selection.
ImageSet load_cifar10(const std::string& dir, const std::string& split,
                      long subset_size = 0, uint64_t seed = 0);

// BT.709 luma: Y = 0.2125 R + 0.7154 G + 0.0721 B. Output keeps shape
// [n, h, w, 1].
ImageSet to_grayscale(const ImageSet& set);

// Class-stratified index selection: equal per-class counts, remainder
// assigned to the lowest class ids, seeded per-class shuffle, result sorted
// ascending. Exposed for the splitters and tests.
std::vector<long> stratified_indices(const std::vector<int>& labels, long take,
                                     int num_classes, uint64_t seed);

ImageSet take_images(const ImageSet& set, const std::vector<long>& indices);

// Persisted set: u32 header length, JSON header (labels, provenance, meta,
// payload checksum), then the image tensor in the checkpoint wire layout.
void save_set(const ImageSet& set, const std::string& path);
ImageSet load_set(const std::string& path);

const std::vector<std::string>& cifar10_class_names();

}  // namespace pb
