#pragma once

#include <string>
#include <vector>

#include "perturbench/dataset.hpp"
#include "perturbench/tensor.hpp"

namespace pb {

// Histogram-of-oriented-gradients parameters. The Cn profiles pair each
// parameter set with the attack budget used alongside it in the evaluation
// grid; epsilon_tag is carried as metadata only.
struct HogConfig {
  std::string name = "custom";
  int pixels_per_cell = 8;
  int orientations = 9;       // bins over [0, 180) degrees
  int cells_per_block = 2;    // block side length, in cells
  std::string epsilon_tag;    // e.g. "4/255", informational
  bool bilinear_vote = false; // soft-assign magnitude to the two nearest bins
  bool l2hys = false;         // clip-at-0.2 + renormalize variant

  void validate() const;  // throws ConfigError on nonsense values
};

// The eight named profiles (C1..C8) used by the evaluation grid.
const std::vector<HogConfig>& hog_profiles();
const HogConfig& hog_profile(const std::string& name);  // ConfigError if unknown

// Cells use a floor grid, blocks slide with stride 1 cell:
//   cells = floor(side / pixels_per_cell)
//   blocks = cells - cells_per_block + 1
//   length = blocks^2 * cells_per_block^2 * orientations
long descriptor_length(const HogConfig& cfg, long image_side);

// Descriptor of one single-channel image (row-major, any h == w side).
// Gradients are halved central differences with replicated edges,
// orientations fold into [0, 180), votes go to the containing bin (or split
// bilinearly), blocks are L2-normalized with v / sqrt(|v|^2 + 1e-5^2)
// (optionally L2-Hys). Throws UndefinedValueError only on NaN input.
std::vector<double> hog_descriptor(const float* image, long h, long w,
                                   const HogConfig& cfg);

// Row-per-image feature matrix extracted from a grayscale set.
struct FeatureMatrix {
  TensorD values;  // [n, d]
  std::vector<int> labels;
  HogConfig config;
  std::string provenance = "clean";

  long rows() const { return values.rank() == 2 ? values.dim(0) : 0; }
  long cols() const { return values.rank() == 2 ? values.dim(1) : 0; }
  const double* row(long i) const { return values.ptr() + i * cols(); }
};

// Converts to grayscale internally when given 3-channel images.
FeatureMatrix extract_features(const ImageSet& set, const HogConfig& cfg);

// Same container layout as the image-set cache; payload is the row-major
// 32-bit float block.
void save_features(const FeatureMatrix& fm, const std::string& path);
FeatureMatrix load_features(const std::string& path);

// label, then one column per descriptor entry.
void export_features_csv(const FeatureMatrix& fm, const std::string& path);

}  // namespace pb
