#include "perturbench/hog.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "perturbench/common.hpp"
#include "perturbench/container.hpp"
#include "perturbench/parallel.hpp"

namespace pb {

void HogConfig::validate() const {
  if (pixels_per_cell < 1)
    throw ConfigError("hog: pixels_per_cell must be >= 1, got " +
                      std::to_string(pixels_per_cell));
  if (orientations < 1)
    throw ConfigError("hog: orientations must be >= 1, got " +
                      std::to_string(orientations));
  if (cells_per_block < 1)
    throw ConfigError("hog: cells_per_block must be >= 1, got " +
                      std::to_string(cells_per_block));
}

const std::vector<HogConfig>& hog_profiles() {
  static const std::vector<HogConfig> profiles = [] {
    auto mk = [](const char* name, int ppc, int orient, int cpb, const char* eps) {
      HogConfig c;
      c.name = name;
      c.pixels_per_cell = ppc;
      c.orientations = orient;
      c.cells_per_block = cpb;
      c.epsilon_tag = eps;
      return c;
    };
    return std::vector<HogConfig>{
        mk("C1", 8, 6, 1, "4/255"),  mk("C2", 6, 6, 1, "4/255"),
        mk("C3", 10, 6, 1, "4/255"), mk("C4", 8, 6, 2, "4/255"),
        mk("C5", 8, 6, 3, "4/255"),  mk("C6", 8, 9, 1, "4/255"),
        mk("C7", 8, 3, 1, "4/255"),  mk("C8", 8, 6, 1, "8/255"),
    };
  }();
  return profiles;
}

const HogConfig& hog_profile(const std::string& name) {
  for (const auto& p : hog_profiles())
    if (p.name == name) return p;
  throw ConfigError("hog: unknown profile '" + name + "' (C1..C8)");
}

long descriptor_length(const HogConfig& cfg, long image_side) {
  cfg.validate();
  const long cells = image_side / cfg.pixels_per_cell;
  const long blocks = cells - cfg.cells_per_block + 1;
  if (blocks < 1)
    throw ConfigError("hog: " + std::to_string(cells) + " cells cannot host blocks of " +
                      std::to_string(cfg.cells_per_block));
  return blocks * blocks * static_cast<long>(cfg.cells_per_block) * cfg.cells_per_block *
         cfg.orientations;
}

std::vector<double> hog_descriptor(const float* image, long h, long w,
                                   const HogConfig& cfg) {
  cfg.validate();
  const int ppc = cfg.pixels_per_cell;
  const int nbins = cfg.orientations;
  const int cpb = cfg.cells_per_block;
  const long cells_y = h / ppc, cells_x = w / ppc;
  const long blocks_y = cells_y - cpb + 1, blocks_x = cells_x - cpb + 1;
  if (blocks_y < 1 || blocks_x < 1)
    throw ConfigError("hog: image " + std::to_string(h) + "x" + std::to_string(w) +
                      " too small for " + std::to_string(cpb) + "-cell blocks of " +
                      std::to_string(ppc) + " px");

  // Cell histograms of magnitude-weighted orientation votes. Gradients are
  // halved central differences with replicated borders; orientations fold to
  // the unsigned [0, 180) range.
  std::vector<double> hist(static_cast<size_t>(cells_y * cells_x * nbins), 0.0);
  const double bin_width = 180.0 / nbins;
  const long span_y = cells_y * ppc, span_x = cells_x * ppc;
  for (long y = 0; y < span_y; ++y) {
    for (long x = 0; x < span_x; ++x) {
      const long xm = x > 0 ? x - 1 : 0, xp = x < w - 1 ? x + 1 : w - 1;
      const long ym = y > 0 ? y - 1 : 0, yp = y < h - 1 ? y + 1 : h - 1;
      const double gx = (static_cast<double>(image[y * w + xp]) - image[y * w + xm]) / 2.0;
      const double gy = (static_cast<double>(image[yp * w + x]) - image[ym * w + x]) / 2.0;
      if (std::isnan(gx) || std::isnan(gy))
        throw UndefinedValueError("hog: NaN pixel at (" + std::to_string(x) + ", " +
                                  std::to_string(y) + ")");
      const double mag = std::sqrt(gx * gx + gy * gy);
      if (mag == 0.0) continue;
      double deg = std::atan2(gy, gx) * (180.0 / 3.14159265358979323846);
      deg = std::fmod(deg, 180.0);
      if (deg < 0.0) deg += 180.0;

      double* cell = hist.data() + ((y / ppc) * cells_x + (x / ppc)) * nbins;
      if (cfg.bilinear_vote) {
        // Split between the two nearest bin centers, circular over 180.
        const double t = deg / bin_width - 0.5;
        const double fl = std::floor(t);
        const double frac = t - fl;
        int b0 = static_cast<int>(fl);
        b0 = ((b0 % nbins) + nbins) % nbins;
        const int b1 = (b0 + 1) % nbins;
        cell[b0] += mag * (1.0 - frac);
        cell[b1] += mag * frac;
      } else {
        int bin = static_cast<int>(deg / bin_width);
        if (bin >= nbins) bin = nbins - 1;  // fp edge at exactly 180 - ulp
        cell[bin] += mag;
      }
    }
  }

  // Sliding blocks, stride one cell; concatenation is blocks row-major, cells
  // within a block row-major, bins ascending.
  const long block_len = static_cast<long>(cpb) * cpb * nbins;
  std::vector<double> out(static_cast<size_t>(blocks_y * blocks_x * block_len));
  constexpr double kNormEps = 1e-5;
  std::vector<double> block(static_cast<size_t>(block_len));
  for (long by = 0; by < blocks_y; ++by) {
    for (long bx = 0; bx < blocks_x; ++bx) {
      long at = 0;
      for (int cy = 0; cy < cpb; ++cy)
        for (int cx = 0; cx < cpb; ++cx) {
          const double* cell = hist.data() + ((by + cy) * cells_x + (bx + cx)) * nbins;
          for (int b = 0; b < nbins; ++b) block[static_cast<size_t>(at++)] = cell[b];
        }
      double norm2 = 0.0;
      for (double v : block) norm2 += v * v;
      double inv = 1.0 / std::sqrt(norm2 + kNormEps * kNormEps);
      if (cfg.l2hys) {
        for (auto& v : block) v = std::min(v * inv, 0.2);
        norm2 = 0.0;
        for (double v : block) norm2 += v * v;
        inv = 1.0 / std::sqrt(norm2 + kNormEps * kNormEps);
        for (auto& v : block) v *= inv;
      } else {
        for (auto& v : block) v *= inv;
      }
      std::copy(block.begin(), block.end(),
                out.begin() + (by * blocks_x + bx) * block_len);
    }
  }
  return out;
}

FeatureMatrix extract_features(const ImageSet& set, const HogConfig& cfg) {
  const ImageSet* gray = &set;
  ImageSet converted;
  if (set.channels() == 3) {
    converted = to_grayscale(set);
    gray = &converted;
  } else if (set.channels() != 1) {
    throw ConfigError("extract_features: expected 1 or 3 channels, got " +
                      std::to_string(set.channels()));
  }

  const long n = gray->size(), h = gray->height(), w = gray->width();
  if (h != w)
    throw ConfigError("extract_features: images must be square, got " +
                      std::to_string(h) + "x" + std::to_string(w));
  const long d = descriptor_length(cfg, h);

  FeatureMatrix fm;
  fm.values = TensorD::zeros({n, d});
  fm.labels = gray->labels;
  fm.config = cfg;
  fm.provenance = gray->provenance;
  const float* base = gray->images.ptr();
  parallel_for(static_cast<size_t>(n), [&](size_t i) {
    const std::vector<double> desc =
        hog_descriptor(base + static_cast<long>(i) * h * w, h, w, cfg);
    std::copy(desc.begin(), desc.end(), fm.values.ptr() + static_cast<long>(i) * d);
  });
  for (double v : fm.values.data)
    if (!std::isfinite(v))
      throw UndefinedValueError("extract_features: non-finite descriptor entry");
  return fm;
}

namespace {

nlohmann::json config_to_json(const HogConfig& c) {
  return {{"name", c.name},
          {"pixels_per_cell", c.pixels_per_cell},
          {"orientations", c.orientations},
          {"cells_per_block", c.cells_per_block},
          {"epsilon_tag", c.epsilon_tag},
          {"bilinear_vote", c.bilinear_vote},
          {"l2hys", c.l2hys}};
}

HogConfig config_from_json(const nlohmann::json& j) {
  HogConfig c;
  c.name = j.value("name", "custom");
  c.pixels_per_cell = j.at("pixels_per_cell").get<int>();
  c.orientations = j.at("orientations").get<int>();
  c.cells_per_block = j.at("cells_per_block").get<int>();
  c.epsilon_tag = j.value("epsilon_tag", "");
  c.bilinear_vote = j.value("bilinear_vote", false);
  c.l2hys = j.value("l2hys", false);
  return c;
}

}  // namespace

void save_features(const FeatureMatrix& fm, const std::string& path) {
  nlohmann::json header;
  header["kind"] = "feature_matrix";
  header["config"] = config_to_json(fm.config);
  header["provenance"] = fm.provenance;
  header["labels"] = fm.labels;
  header["rows"] = fm.rows();
  header["cols"] = fm.cols();
  std::vector<uint8_t> payload(static_cast<size_t>(fm.rows() * fm.cols()) * 4);
  const TensorF narrow = fm.values.cast<float>();
  std::memcpy(payload.data(), narrow.ptr(), payload.size());
  write_container(path, std::move(header), payload);
}

FeatureMatrix load_features(const std::string& path) {
  auto [header, payload] = read_container(path);
  if (header.value("kind", "") != "feature_matrix")
    throw FormatError(path + ": not a feature-matrix file");
  const long rows = header.at("rows").get<long>();
  const long cols = header.at("cols").get<long>();
  if (payload.size() != static_cast<size_t>(rows * cols) * 4)
    throw CorruptionError(path + ": payload holds " + std::to_string(payload.size()) +
                          " bytes, header promises " + std::to_string(rows * cols * 4));
  TensorF narrow = TensorF::zeros({rows, cols});
  std::memcpy(narrow.ptr(), payload.data(), payload.size());
  FeatureMatrix fm;
  fm.values = narrow.cast<double>();
  fm.labels = header.at("labels").get<std::vector<int>>();
  fm.config = config_from_json(header.at("config"));
  fm.provenance = header.value("provenance", "clean");
  if (static_cast<long>(fm.labels.size()) != rows)
    throw CorruptionError(path + ": label count mismatch");
  return fm;
}

void export_features_csv(const FeatureMatrix& fm, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IngestionError("cannot open " + path + " for writing");
  std::vector<std::string> head = {"label"};
  for (long j = 0; j < fm.cols(); ++j) head.push_back("f" + std::to_string(j));
  out << csv_row(head);
  for (long i = 0; i < fm.rows(); ++i) {
    std::vector<std::string> row = {std::to_string(fm.labels[static_cast<size_t>(i)])};
    const double* r = fm.row(i);
    for (long j = 0; j < fm.cols(); ++j) row.push_back(format_double(r[j], 9));
    out << csv_row(row);
  }
  if (!out) throw IngestionError("short write on " + path);
}

}  // namespace pb
