// Command-line front end for the adversarial-transfer benchmark pipeline:
//   fetch-data -> train-surrogate / train-target -> craft -> evaluate -> report
// plus extract-hog and tune for standalone feature and hyperparameter work.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include "perturbench/attacks.hpp"
#include "perturbench/classical.hpp"
#include "perturbench/common.hpp"
#include "perturbench/container.hpp"
#include "perturbench/dataset.hpp"
#include "perturbench/defaults.hpp"
#include "perturbench/errors.hpp"
#include "perturbench/harness.hpp"
#include "perturbench/hog.hpp"
#include "perturbench/manifest.hpp"
#include "perturbench/nn.hpp"
#include "perturbench/parallel.hpp"
#include "perturbench/rng.hpp"

namespace {

using nlohmann::json;

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? v : fallback;
}

std::string default_data_dir() {
  return env_or("PB_DATA_DIR", "data/cifar-10-batches-bin");
}

const std::vector<std::string>& batch_files() {
  static const std::vector<std::string> files = {
      "data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
      "data_batch_4.bin", "data_batch_5.bin", "test_batch.bin"};
  return files;
}

// 4/255 -> "4_255", for artifact file names.
std::string epsilon_slug(double eps) {
  std::string label = pb::epsilon_label(eps);
  for (char& ch : label)
    if (ch == '/') ch = '_';
  return label;
}

std::string adv_artifact_name(const std::string& kind, double eps) {
  return "adv_" + kind + "_" + epsilon_slug(eps) + ".bin";
}

void print_json(const json& j) { std::cout << j.dump() << "\n"; }

void add_data_inputs(pb::RunManifest& manifest, const std::string& dir,
                     const std::string& split) {
  if (split == "train" || split == "all")
    for (int i = 1; i <= 5; ++i)
      manifest.add_input(pb::join_path(dir, "data_batch_" + std::to_string(i) + ".bin"));
  if (split == "test" || split == "all")
    manifest.add_input(pb::join_path(dir, "test_batch.bin"));
}

// ---------------------------------------------------------------------------
// fetch-data

constexpr long kBatchBytes = 30730000;  // 10000 records x 3073 bytes
constexpr const char* kCifarUrl =
    "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz";
constexpr const char* kCifarTarMd5 = "c32a1d4ab5d03f1284b67883e8d87530";

bool dataset_present(const std::string& dir, std::string* why) {
  for (const auto& f : batch_files()) {
    const std::string path = pb::join_path(dir, f);
    if (!pb::file_exists(path)) {
      *why = "missing " + path;
      return false;
    }
    const auto bytes = pb::read_file(path);
    if (static_cast<long>(bytes.size()) != kBatchBytes) {
      *why = path + " is " + std::to_string(bytes.size()) + " bytes, expected " +
             std::to_string(kBatchBytes);
      return false;
    }
    if (bytes[0] > 9) {
      *why = path + " first label byte is " + std::to_string(int(bytes[0]));
      return false;
    }
  }
  return true;
}

int cmd_fetch_data(const std::string& dir, const std::string& url, uint64_t seed) {
  std::string why;
  if (!dataset_present(dir, &why)) {
    // Download is best-effort: many sandboxes only reach package mirrors.
    pb::ensure_dir(dir);
    const std::string tarball = pb::join_path(dir, "cifar-10-binary.tar.gz");
    const std::string fetch = "curl -fsSL --retry 2 -o '" + tarball + "' '" + url + "'";
    const int rc = std::system(fetch.c_str());
    if (rc != 0)
      throw pb::IngestionError(
          "dataset not found (" + why + ") and download failed (exit " +
          std::to_string(rc) + "); fetch " + std::string(kCifarUrl) +
          " manually, or run scripts/fetch_cifar10_hf.py, then re-run fetch-data");
    const std::string checksum =
        "echo '" + std::string(kCifarTarMd5) + "  " + tarball + "' | md5sum -c --quiet";
    if (std::system(checksum.c_str()) != 0)
      throw pb::IngestionError("checksum mismatch on " + tarball +
                               "; expected md5 " + kCifarTarMd5);
    const std::string extract =
        "tar -xzf '" + tarball + "' -C '" + dir + "' --strip-components=1";
    if (std::system(extract.c_str()) != 0)
      throw pb::IngestionError("could not extract " + tarball);
    if (!dataset_present(dir, &why))
      throw pb::IngestionError("dataset still incomplete after extraction: " + why);
  }

  pb::RunManifest manifest("fetch-data", {{"data_dir", dir}, {"url", url}}, seed);
  for (const auto& f : batch_files()) manifest.add_input(pb::join_path(dir, f));
  manifest.write_beside(pb::join_path(dir, "dataset"));
  print_json({{"status", "ok"},
              {"data_dir", dir},
              {"files", batch_files().size()},
              {"bytes_per_file", kBatchBytes}});
  return 0;
}

// ---------------------------------------------------------------------------
// train-surrogate / train-target

int cmd_train_cnn(const std::string& arch, const std::string& data_dir, long subset,
                  long holdout_subset, int epochs, double lr, int batch,
                  uint64_t seed, const std::string& out) {
  const pb::CnnSpec spec =
      arch == "surrogate" ? pb::CnnSpec::surrogate() : pb::CnnSpec::target();
  pb::TrainRecipe recipe;
  recipe.batch_size = batch;
  recipe.lr = lr;
  recipe.epochs = epochs;
  recipe.seed = seed;
  recipe.validate();

  pb::ImageSet train = pb::load_cifar10(data_dir, "train", subset, seed);
  pb::Cnn model(spec, pb::Rng::mix(seed, pb::fnv1a64(arch)));
  const pb::TrainResult result = pb::train_cnn(model, train, recipe);

  pb::save_checkpoint(model.to_checkpoint(), out);
  pb::write_training_log(result.curve, out + ".log.csv");

  const pb::ImageSet holdout = pb::load_cifar10(data_dir, "test", holdout_subset, seed);
  const double holdout_acc = pb::accuracy(model.predict(holdout), holdout.labels);

  pb::RunManifest manifest("train-" + arch,
                           {{"data_dir", data_dir},
                            {"subset", subset},
                            {"holdout_subset", holdout_subset},
                            {"epochs", epochs},
                            {"lr", lr},
                            {"batch", batch}},
                           seed);
  add_data_inputs(manifest, data_dir, "all");
  manifest.add_output(out);
  manifest.add_output(out + ".log.csv");
  manifest.write_beside(out);

  print_json({{"arch", arch},
              {"checkpoint", out},
              {"parameters", model.parameter_count()},
              {"final_train_acc", result.curve.empty() ? 0.0 : result.curve.back().train_acc},
              {"holdout_acc", holdout_acc}});
  return 0;
}

// ---------------------------------------------------------------------------
// craft

int cmd_craft(const std::string& surrogate_path, const std::string& data_dir,
              const std::string& attack, const std::string& epsilon_text,
              const std::string& alpha_text, int iterations, bool no_random_init,
              const std::string& protocol, long subset, uint64_t seed,
              std::string out, const std::string& work) {
  pb::AttackConfig config;
  config.kind = attack;
  config.epsilon = pb::parse_epsilon(epsilon_text);
  config.alpha = pb::parse_epsilon(alpha_text);
  config.iterations = iterations;
  config.random_init = !no_random_init;
  config.seed = seed;
  config.validate();

  if (protocol != "holdout" && protocol != "paper")
    throw pb::ConfigError("protocol must be 'holdout' or 'paper', got '" + protocol + "'");
  if (!pb::file_exists(surrogate_path))
    throw pb::OrchestrationError("missing surrogate checkpoint " + surrogate_path +
                                     "; run train-surrogate first",
                                 surrogate_path);
  const std::string split = protocol == "paper" ? "train" : "test";
  if (subset == 0)
    subset = protocol == "paper" ? pb::defaults::kTrainSubset : pb::defaults::kEvalSubset;

  const pb::Cnn surrogate = pb::Cnn::from_checkpoint(pb::load_checkpoint(surrogate_path));
  pb::ImageSet images = pb::load_cifar10(data_dir, split, subset, seed);
  pb::AdversarialSet adv = pb::craft(surrogate, images, config);
  adv.images.meta["protocol"] = protocol;
  adv.images.meta["subset"] = subset;
  adv.images.meta["subset_seed"] = seed;

  if (out.empty()) out = pb::join_path(work, adv_artifact_name(attack, config.epsilon));
  pb::ensure_dir(work);
  pb::save_adversarial_set(adv, out);

  pb::RunManifest manifest("craft",
                           {{"surrogate", surrogate_path},
                            {"attack", attack},
                            {"epsilon", pb::epsilon_label(config.epsilon)},
                            {"alpha", pb::epsilon_label(config.alpha)},
                            {"iterations", iterations},
                            {"random_init", config.random_init},
                            {"protocol", protocol},
                            {"subset", subset}},
                           seed);
  manifest.add_input(surrogate_path);
  add_data_inputs(manifest, data_dir, split);
  manifest.add_output(out);
  manifest.write_beside(out);

  print_json({{"attack", attack},
              {"epsilon", pb::epsilon_label(config.epsilon)},
              {"images", adv.images.size()},
              {"mean_cosine", adv.mean_cosine()},
              {"out", out}});
  return 0;
}

// ---------------------------------------------------------------------------
// extract-hog

pb::HogConfig resolve_hog_config(const std::string& text) {
  if (!text.empty() && text.front() == '{') {
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      throw pb::ConfigError(std::string("bad --config JSON: ") + e.what());
    }
    pb::HogConfig cfg;
    cfg.name = j.value("name", "custom");
    cfg.pixels_per_cell = j.value("pixels_per_cell", cfg.pixels_per_cell);
    cfg.orientations = j.value("orientations", cfg.orientations);
    cfg.cells_per_block = j.value("cells_per_block", cfg.cells_per_block);
    cfg.epsilon_tag = j.value("epsilon_tag", cfg.epsilon_tag);
    cfg.bilinear_vote = j.value("bilinear_vote", cfg.bilinear_vote);
    cfg.l2hys = j.value("l2hys", cfg.l2hys);
    cfg.validate();
    return cfg;
  }
  return pb::hog_profile(text);
}

pb::ImageSet load_any_image_set(const std::string& path) {
  const auto [header, payload] = pb::read_container(path);
  const std::string kind = header.value("kind", "");
  if (kind == "image_set") return pb::load_set(path);
  if (kind == "adversarial_set") return pb::load_adversarial_set(path).images;
  throw pb::FormatError(path + " holds '" + kind +
                        "', expected an image or adversarial set");
}

int cmd_extract_hog(const std::string& config_text, const std::string& input,
                    const std::string& split, long subset, const std::string& data_dir,
                    uint64_t seed, std::string out, const std::string& csv,
                    const std::string& work) {
  const pb::HogConfig cfg = resolve_hog_config(config_text);
  pb::ImageSet images;
  if (!input.empty()) {
    if (!pb::file_exists(input))
      throw pb::OrchestrationError("missing input set " + input, input);
    images = load_any_image_set(input);
  } else {
    images = pb::load_cifar10(data_dir, split, subset, seed);
  }

  const pb::FeatureMatrix fm = pb::extract_features(images, cfg);
  if (out.empty())
    out = pb::join_path(work, "features_" + cfg.name + "_" + fm.provenance + ".bin");
  pb::ensure_dir(work);
  pb::save_features(fm, out);
  if (!csv.empty()) pb::export_features_csv(fm, csv);

  pb::RunManifest manifest("extract-hog",
                           {{"config", cfg.name},
                            {"pixels_per_cell", cfg.pixels_per_cell},
                            {"orientations", cfg.orientations},
                            {"cells_per_block", cfg.cells_per_block},
                            {"input", input},
                            {"split", split},
                            {"subset", subset}},
                           seed);
  if (!input.empty()) manifest.add_input(input);
  else add_data_inputs(manifest, data_dir, split);
  manifest.add_output(out);
  if (!csv.empty()) manifest.add_output(csv);
  manifest.write_beside(out);

  print_json({{"config", cfg.name},
              {"rows", fm.rows()},
              {"cols", fm.cols()},
              {"provenance", fm.provenance},
              {"out", out}});
  return 0;
}

// ---------------------------------------------------------------------------
// tune

int cmd_tune(const std::string& data_dir, long subset, int folds,
             const std::string& config_name, uint64_t seed, const std::string& out,
             const std::string& work) {
  const pb::HogConfig cfg = pb::hog_profile(config_name);
  const pb::ImageSet train = pb::load_cifar10(data_dir, "train", subset, seed);
  const pb::FeatureMatrix fm = pb::extract_features(train, cfg);
  const pb::TensorD& x = fm.values;
  const std::vector<int>& y = fm.labels;

  json tables = json::object();
  pb::TunedParams tuned;

  const auto record = [&tables](const std::string& name, const pb::GridSearchResult& r) {
    json t = json::array();
    for (const auto& p : r.table) {
      json row = {{"params", p.params},
                  {"mean_acc", p.mean_acc},
                  {"stddev_acc", p.stddev_acc},
                  {"failed", p.failed}};
      if (p.failed) row["error"] = p.error;
      t.push_back(std::move(row));
    }
    tables[name] = {{"grid", t}, {"best", r.best}};
  };

  {
    std::vector<std::map<std::string, double>> grid;
    for (int k : {3, 5, 9, 15}) grid.push_back({{"k", double(k)}});
    const pb::FitFn fit = [](const std::map<std::string, double>& p, const pb::TensorD& tx,
                             const std::vector<int>& ty) {
      auto model = std::make_shared<pb::KnnModel>(pb::fit_knn(tx, ty, int(p.at("k"))));
      return [model](const pb::TensorD& q) { return pb::knn_classify(*model, q); };
    };
    const auto r = pb::grid_search_cv(fit, grid, x, y, folds, seed);
    tuned.knn_k = int(r.table[size_t(r.best)].params.at("k"));
    record("knn", r);
  }
  {
    std::vector<std::map<std::string, double>> grid;
    for (int d : {3, 5, 10, 15}) grid.push_back({{"depth", double(d)}});
    const pb::FitFn fit = [](const std::map<std::string, double>& p, const pb::TensorD& tx,
                             const std::vector<int>& ty) {
      auto model = std::make_shared<pb::DecisionTreeModel>(
          pb::fit_decision_tree(tx, ty, int(p.at("depth"))));
      return [model](const pb::TensorD& q) { return pb::tree_classify(*model, q); };
    };
    const auto r = pb::grid_search_cv(fit, grid, x, y, folds, seed);
    tuned.tree_depth = int(r.table[size_t(r.best)].params.at("depth"));
    record("tree", r);
  }
  {
    std::vector<std::map<std::string, double>> grid;
    for (double v : {0.70, 0.80, 0.90, 0.95}) grid.push_back({{"pca", v}});
    const pb::TunedParams base = tuned;
    const pb::FitFn fit = [base, seed](const std::map<std::string, double>& p,
                                       const pb::TensorD& tx, const std::vector<int>& ty) {
      auto pca = std::make_shared<pb::PcaTransform>(pb::fit_pca(tx, p.at("pca")));
      auto model = std::make_shared<pb::LinearSvmModel>(
          pb::fit_linear_svm_sgd(pb::pca_project(*pca, tx), ty, 10, base.lsvm_epochs,
                                 base.lsvm_lr, base.lsvm_reg, seed));
      return [pca, model](const pb::TensorD& q) {
        return pb::linear_svm_classify(*model, pb::pca_project(*pca, q));
      };
    };
    const auto r = pb::grid_search_cv(fit, grid, x, y, folds, seed);
    tuned.lsvm_pca = r.table[size_t(r.best)].params.at("pca");
    record("lsvm", r);
  }
  {
    std::vector<std::map<std::string, double>> grid;
    for (double v : {0.70, 0.80, 0.90, 0.95})
      for (double c : {0.1, 1.0, 10.0}) grid.push_back({{"pca", v}, {"c", c}});
    const pb::FitFn fit = [](const std::map<std::string, double>& p, const pb::TensorD& tx,
                             const std::vector<int>& ty) {
      auto pca = std::make_shared<pb::PcaTransform>(pb::fit_pca(tx, p.at("pca")));
      auto model = std::make_shared<pb::RbfSvmModel>(
          pb::fit_rbf_svm(pb::pca_project(*pca, tx), ty, 10, p.at("c")));
      return [pca, model](const pb::TensorD& q) {
        return pb::rbf_svm_classify(*model, pb::pca_project(*pca, q));
      };
    };
    const auto r = pb::grid_search_cv(fit, grid, x, y, folds, seed);
    tuned.ksvm_pca = r.table[size_t(r.best)].params.at("pca");
    tuned.ksvm_c = r.table[size_t(r.best)].params.at("c");
    record("ksvm", r);
  }

  pb::ensure_dir(work);
  const json doc = {{"selected", tuned.to_json()},
                    {"tables", tables},
                    {"config", cfg.name},
                    {"subset", subset},
                    {"folds", folds}};
  pb::write_file_atomic(out, doc.dump(2) + "\n");

  pb::RunManifest manifest("tune",
                           {{"data_dir", data_dir},
                            {"subset", subset},
                            {"folds", folds},
                            {"config", cfg.name}},
                           seed);
  add_data_inputs(manifest, data_dir, "train");
  manifest.add_output(out);
  manifest.write_beside(out);

  print_json({{"selected", tuned.to_json()}, {"out", out}});
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (ch == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

int cmd_evaluate(const std::string& data_dir, const std::string& work,
                 const std::string& protocol, long train_subset, long eval_subset,
                 const std::string& configs, const std::string& classifiers,
                 const std::string& tuned_path, uint64_t seed, std::string out) {
  pb::ExperimentPlan plan;
  plan.configs = split_list(configs);
  plan.classifiers = split_list(classifiers);
  plan.protocol = protocol;
  plan.seed = seed;
  if (!tuned_path.empty()) {
    if (!pb::file_exists(tuned_path))
      throw pb::OrchestrationError("missing tuned-parameter file " + tuned_path,
                                   tuned_path);
    const auto bytes = pb::read_file(tuned_path);
    const json doc = json::parse(bytes.begin(), bytes.end());
    plan.tuned = pb::TunedParams::from_json(doc.value("selected", doc));
  }

  pb::EvaluationInputs inputs;
  inputs.train = pb::load_cifar10(data_dir, "train", train_subset, seed);
  if (protocol == "holdout")
    inputs.eval = pb::load_cifar10(data_dir, "test", eval_subset, seed);

  pb::RunManifest manifest("evaluate",
                           {{"data_dir", data_dir},
                            {"work", work},
                            {"protocol", protocol},
                            {"train_subset", train_subset},
                            {"eval_subset", eval_subset},
                            {"configs", plan.configs},
                            {"classifiers", plan.classifiers},
                            {"tuned", tuned_path}},
                           seed);
  add_data_inputs(manifest, data_dir, "all");

  // Attack caches: every epsilon the chosen configs pair with, both kinds.
  for (const std::string& name : plan.configs) {
    const pb::HogConfig cfg = pb::hog_profile(name);
    const double eps = pb::parse_epsilon(cfg.epsilon_tag);
    for (const char* kind : {"fgsm", "pgd"}) {
      const std::string key = pb::attack_key(kind, eps);
      if (inputs.attacks.count(key)) continue;
      const std::string path = pb::join_path(work, adv_artifact_name(kind, eps));
      if (!pb::file_exists(path))
        throw pb::OrchestrationError("missing attack cache " + path + " (key '" + key +
                                         "'); run craft --attack " + kind +
                                         " --epsilon " + cfg.epsilon_tag + " first",
                                     path);
      pb::AdversarialSet adv = pb::load_adversarial_set(path);
      const std::string stored_protocol = adv.images.meta.value("protocol", "holdout");
      if (stored_protocol != protocol)
        throw pb::OrchestrationError("attack cache " + path + " was crafted under the '" +
                                     stored_protocol + "' protocol, not '" + protocol + "'");
      manifest.add_input(path);
      inputs.attacks.emplace(key, std::move(adv));
    }
  }

  pb::Cnn surrogate_model{pb::CnnSpec::surrogate(), 0};
  pb::Cnn target_model{pb::CnnSpec::target(), 0};
  const std::string surrogate_path = pb::join_path(work, "surrogate.ckpt");
  const std::string target_path = pb::join_path(work, "target.ckpt");
  if (pb::file_exists(surrogate_path) && pb::file_exists(target_path)) {
    surrogate_model = pb::Cnn::from_checkpoint(pb::load_checkpoint(surrogate_path));
    target_model = pb::Cnn::from_checkpoint(pb::load_checkpoint(target_path));
    inputs.surrogate = &surrogate_model;
    inputs.target = &target_model;
    manifest.add_input(surrogate_path);
    manifest.add_input(target_path);
  }

  const pb::EvaluationReport report = pb::run_evaluation(plan, inputs);
  if (out.empty()) out = pb::join_path(work, "report");
  pb::write_report_files(report, out);
  for (const char* f : {"report.json", "cells.csv", "plot_accuracy.csv",
                        "plot_reversal.csv", "plot_block_size.csv",
                        "plot_retention.csv", "plot_correlations.csv"})
    manifest.add_output(pb::join_path(out, f));
  manifest.write_beside(pb::join_path(out, "report.json"));

  long failed = 0;
  for (const auto& cell : report.cells) failed += cell.failed ? 1 : 0;
  print_json({{"cells", report.cells.size()},
              {"failed", failed},
              {"reversal_classical", std::to_string(report.reversal_classical) + "/" +
                                         std::to_string(report.total_classical)},
              {"mean_cosine_fgsm", report.mean_cosine_fgsm},
              {"mean_cosine_pgd", report.mean_cosine_pgd},
              {"out", out}});
  return 0;
}

// ---------------------------------------------------------------------------
// report

int cmd_report(const std::string& report_dir) {
  const std::string path = pb::join_path(report_dir, "report.json");
  if (!pb::file_exists(path))
    throw pb::OrchestrationError("missing " + path + "; run evaluate first", path);
  const auto bytes = pb::read_file(path);
  json doc;
  try {
    doc = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw pb::FormatError(path + ": " + e.what());
  }

  std::printf("protocol %s, seed %llu\n", doc.value("protocol", "?").c_str(),
              static_cast<unsigned long long>(doc.value("seed", 0ULL)));
  std::printf("%-6s %-6s %9s %9s %9s %10s %10s\n", "config", "clf", "acc_orig",
              "acc_fgsm", "acc_pgd", "drop_fgsm", "drop_pgd");
  for (const auto& cell : doc["cells"]) {
    if (cell.value("failed", false)) {
      std::printf("%-6s %-6s FAILED: %s\n", cell.value("config", "?").c_str(),
                  cell.value("classifier", "?").c_str(), cell.value("error", "").c_str());
      continue;
    }
    std::printf("%-6s %-6s %9.3f %9.3f %9.3f %9.1f%% %9.1f%%\n",
                cell.value("config", "?").c_str(), cell.value("classifier", "?").c_str(),
                cell.value("acc_orig", 0.0), cell.value("acc_fgsm", 0.0),
                cell.value("acc_pgd", 0.0), cell.value("drop_fgsm", 0.0),
                cell.value("drop_pgd", 0.0));
  }
  const auto& rev = doc["reversal"];
  std::printf("reversal: classical %ld/%ld, all %ld/%ld\n",
              rev.value("classical", 0L), rev.value("classical_total", 0L),
              rev.value("all", 0L), rev.value("all_total", 0L));
  for (const auto& b : doc["baseline"])
    std::printf("baseline %-9s clean %.3f fgsm %.3f pgd %.3f\n",
                b.value("net", "?").c_str(), b.value("clean", 0.0),
                b.value("fgsm", 0.0), b.value("pgd", 0.0));
  for (const auto& c : doc["checks"])
    std::printf("check %-26s %s  %s\n", c.value("name", "?").c_str(),
                c.value("pass", false) ? "PASS" : "FAIL",
                c.value("detail", "").c_str());
  std::printf("mean cosine: fgsm %.4f pgd %.4f\n",
              doc["mean_cosine"].value("fgsm", 0.0),
              doc["mean_cosine"].value("pgd", 0.0));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-paradigm adversarial-transfer benchmark"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (0 = hardware default)");

  std::string data_dir = default_data_dir();
  std::string work = "artifacts";
  uint64_t seed = 0;

  auto* fetch = app.add_subcommand("fetch-data", "Download or verify the CIFAR-10 binaries");
  std::string fetch_url = kCifarUrl;
  fetch->add_option("--data-dir", data_dir, "Dataset directory")->capture_default_str();
  fetch->add_option("--url", fetch_url, "Override the download URL");
  fetch->add_option("--seed", seed, "Run seed recorded in the manifest");

  const auto add_train_flags = [&](CLI::App* cmd, long* subset, long* holdout,
                                   int* epochs, double* lr, int* batch,
                                   std::string* out) {
    cmd->add_option("--data-dir", data_dir, "Dataset directory")->capture_default_str();
    cmd->add_option("--subset", *subset, "Stratified training subset size")
        ->capture_default_str();
    cmd->add_option("--holdout-subset", *holdout, "Held-out accuracy subset")
        ->capture_default_str();
    cmd->add_option("--epochs", *epochs, "Training epochs")->capture_default_str();
    cmd->add_option("--lr", *lr, "Learning rate")->capture_default_str();
    cmd->add_option("--batch", *batch, "Mini-batch size")->capture_default_str();
    cmd->add_option("--seed", seed, "Seed for subset, init, and shuffles");
    cmd->add_option("--out", *out, "Checkpoint path")->capture_default_str();
    cmd->add_option("--work", work, "Artifact directory")->capture_default_str();
  };

  auto* train_s = app.add_subcommand("train-surrogate", "Train the attack surrogate CNN");
  long ts_subset = pb::defaults::kTrainSubset, ts_holdout = pb::defaults::kEvalSubset;
  int ts_epochs = pb::defaults::kSurrogateEpochs, ts_batch = pb::defaults::kCnnBatch;
  double ts_lr = pb::defaults::kSurrogateLr;
  std::string ts_out;
  add_train_flags(train_s, &ts_subset, &ts_holdout, &ts_epochs, &ts_lr, &ts_batch, &ts_out);

  auto* train_t = app.add_subcommand("train-target", "Train the transfer-target CNN");
  long tt_subset = pb::defaults::kTrainSubset, tt_holdout = pb::defaults::kEvalSubset;
  int tt_epochs = pb::defaults::kTargetEpochs, tt_batch = pb::defaults::kCnnBatch;
  double tt_lr = pb::defaults::kTargetLr;
  std::string tt_out;
  add_train_flags(train_t, &tt_subset, &tt_holdout, &tt_epochs, &tt_lr, &tt_batch, &tt_out);

  auto* craft = app.add_subcommand("craft", "Craft adversarial examples on the surrogate");
  std::string craft_attack = "fgsm", craft_eps = "4/255", craft_alpha = "2/255";
  std::string craft_surrogate, craft_out, craft_protocol = "holdout";
  int craft_iters = pb::defaults::kPgdIterations;
  long craft_subset = 0;
  bool craft_no_rand = false;
  craft->add_option("--surrogate", craft_surrogate, "Surrogate checkpoint (default <work>/surrogate.ckpt)");
  craft->add_option("--data-dir", data_dir, "Dataset directory")->capture_default_str();
  craft->add_option("--attack", craft_attack, "fgsm or pgd")->capture_default_str();
  craft->add_option("--epsilon", craft_eps, "Budget, e.g. 8/255")->capture_default_str();
  craft->add_option("--alpha", craft_alpha, "PGD step size")->capture_default_str();
  craft->add_option("--iterations", craft_iters, "PGD iterations")->capture_default_str();
  craft->add_flag("--no-random-init", craft_no_rand, "Start PGD at the clean image");
  craft->add_option("--protocol", craft_protocol, "holdout (test split) or paper (train split)")
      ->capture_default_str();
  craft->add_option("--subset", craft_subset, "Images to attack (0 = protocol default)");
  craft->add_option("--seed", seed, "Seed (subset selection + PGD starts)");
  craft->add_option("--out", craft_out, "Output path (default <work>/adv_<attack>_<eps>.bin)");
  craft->add_option("--work", work, "Artifact directory")->capture_default_str();

  auto* extract = app.add_subcommand("extract-hog", "Extract HOG features from a set");
  std::string ex_config = "C1", ex_input, ex_split = "test", ex_out, ex_csv;
  long ex_subset = pb::defaults::kEvalSubset;
  extract->add_option("--config", ex_config, "Profile id (C1..C8) or JSON")
      ->capture_default_str();
  extract->add_option("--input", ex_input, "Persisted image/adversarial set (overrides --split)");
  extract->add_option("--split", ex_split, "train or test")->capture_default_str();
  extract->add_option("--subset", ex_subset, "Stratified subset size")->capture_default_str();
  extract->add_option("--data-dir", data_dir, "Dataset directory")->capture_default_str();
  extract->add_option("--seed", seed, "Subset seed");
  extract->add_option("--out", ex_out, "Feature file (default <work>/features_<config>_<prov>.bin)");
  extract->add_option("--csv", ex_csv, "Also export label+feature CSV here");
  extract->add_option("--work", work, "Artifact directory")->capture_default_str();

  auto* tune = app.add_subcommand("tune", "Cross-validated hyperparameter grids");
  long tune_subset = pb::defaults::kTuneSubset;
  int tune_folds = pb::defaults::kTuneFolds;
  std::string tune_config = "C1", tune_out;
  tune->add_option("--data-dir", data_dir, "Dataset directory")->capture_default_str();
  tune->add_option("--subset", tune_subset, "Training subset for CV")->capture_default_str();
  tune->add_option("--folds", tune_folds, "Stratified folds")->capture_default_str();
  tune->add_option("--config", tune_config, "HOG profile for tuning features")
      ->capture_default_str();
  tune->add_option("--seed", seed, "CV fold seed");
  tune->add_option("--out", tune_out, "Output json (default <work>/tuned.json)");
  tune->add_option("--work", work, "Artifact directory")->capture_default_str();

  auto* evaluate = app.add_subcommand("evaluate", "Run the train-clean / evaluate-attacked grid");
  std::string ev_protocol = "holdout", ev_configs = "C1,C4,C5,C7,C8";
  std::string ev_classifiers = "knn,tree,lsvm,ksvm,ann", ev_tuned, ev_out;
  long ev_train_subset = pb::defaults::kTrainSubset, ev_eval_subset = pb::defaults::kEvalSubset;
  evaluate->add_option("--data-dir", data_dir, "Dataset directory")->capture_default_str();
  evaluate->add_option("--work", work, "Artifact directory with checkpoints and attack caches")
      ->capture_default_str();
  evaluate->add_option("--protocol", ev_protocol, "holdout or paper")->capture_default_str();
  evaluate->add_option("--train-subset", ev_train_subset, "Classifier training rows")
      ->capture_default_str();
  evaluate->add_option("--eval-subset", ev_eval_subset, "Held-out evaluation rows")
      ->capture_default_str();
  evaluate->add_option("--configs", ev_configs, "Comma-separated HOG profiles")
      ->capture_default_str();
  evaluate->add_option("--classifiers", ev_classifiers, "Comma-separated classifier ids")
      ->capture_default_str();
  evaluate->add_option("--tuned", ev_tuned, "tuned.json from the tune subcommand");
  evaluate->add_option("--seed", seed, "Run seed");
  evaluate->add_option("--out", ev_out, "Report directory (default <work>/report)");

  auto* report = app.add_subcommand("report", "Pretty-print a persisted report");
  std::string rp_dir = "artifacts/report";
  report->add_option("--dir", rp_dir, "Report directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << nlohmann::json({{"error", "usage"}, {"message", e.what()}}).dump()
              << "\n";
    std::cerr << app.help() << "\n";
    return 2;
  }

  if (threads > 0) pb::set_thread_count(threads);

  try {
    if (fetch->parsed()) return cmd_fetch_data(data_dir, fetch_url, seed);
    if (train_s->parsed()) {
      if (ts_out.empty()) ts_out = pb::join_path(work, "surrogate.ckpt");
      pb::ensure_dir(work);
      return cmd_train_cnn("surrogate", data_dir, ts_subset, ts_holdout, ts_epochs,
                           ts_lr, ts_batch, seed, ts_out);
    }
    if (train_t->parsed()) {
      if (tt_out.empty()) tt_out = pb::join_path(work, "target.ckpt");
      pb::ensure_dir(work);
      return cmd_train_cnn("target", data_dir, tt_subset, tt_holdout, tt_epochs,
                           tt_lr, tt_batch, seed, tt_out);
    }
    if (craft->parsed()) {
      if (craft_surrogate.empty())
        craft_surrogate = pb::join_path(work, "surrogate.ckpt");
      return cmd_craft(craft_surrogate, data_dir, craft_attack, craft_eps, craft_alpha,
                       craft_iters, craft_no_rand, craft_protocol, craft_subset, seed,
                       craft_out, work);
    }
    if (extract->parsed())
      return cmd_extract_hog(ex_config, ex_input, ex_split, ex_subset, data_dir, seed,
                             ex_out, ex_csv, work);
    if (tune->parsed()) {
      if (tune_out.empty()) tune_out = pb::join_path(work, "tuned.json");
      pb::ensure_dir(work);
      return cmd_tune(data_dir, tune_subset, tune_folds, tune_config, seed, tune_out, work);
    }
    if (evaluate->parsed())
      return cmd_evaluate(data_dir, work, ev_protocol, ev_train_subset, ev_eval_subset,
                          ev_configs, ev_classifiers, ev_tuned, seed, ev_out);
    if (report->parsed()) return cmd_report(rp_dir);
  } catch (const pb::Error& e) {
    std::cerr << nlohmann::json({{"error", pb::error_kind_name(e.kind())},
                                 {"message", e.what()}})
                     .dump()
              << "\n";
    switch (e.kind()) {
      case pb::ErrorKind::Config:
      case pb::ErrorKind::Usage:
        return 2;
      case pb::ErrorKind::Orchestration:
        return 3;
      default:
        return 1;
    }
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json({{"error", "internal"}, {"message", e.what()}}).dump()
              << "\n";
    return 1;
  }
  return 0;
}
