#include "perturbench/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "perturbench/common.hpp"
#include "perturbench/parallel.hpp"
#include "perturbench/rng.hpp"

namespace pb {

double relative_drop(double acc_orig, double acc_attack) {
  if (!(acc_orig > 0.0))
    throw UndefinedValueError("relative drop undefined: clean accuracy is " +
                              format_double(acc_orig));
  return (acc_orig - acc_attack) / acc_orig * 100.0;
}

double retention(double acc_orig, double acc_attack) {
  if (!(acc_orig > 0.0))
    throw UndefinedValueError("retention undefined: clean accuracy is " +
                              format_double(acc_orig));
  return acc_attack / acc_orig * 100.0;
}

double pearson_correlation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw UsageError("correlation: length mismatch " + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()));
  const size_t n = a.size();
  if (n < 3) throw UsageError("correlation: need at least 3 samples");
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (saa <= 0.0 || sbb <= 0.0)
    throw UndefinedValueError("correlation undefined over a constant vector");
  return sab / std::sqrt(saa * sbb);
}

nlohmann::json TunedParams::to_json() const {
  return {{"knn_k", knn_k},       {"tree_depth", tree_depth}, {"lsvm_pca", lsvm_pca},
          {"ksvm_pca", ksvm_pca}, {"ksvm_c", ksvm_c},         {"lsvm_lr", lsvm_lr},
          {"lsvm_reg", lsvm_reg}, {"lsvm_epochs", lsvm_epochs}};
}

TunedParams TunedParams::from_json(const nlohmann::json& j) {
  TunedParams t;
  t.knn_k = j.value("knn_k", t.knn_k);
  t.tree_depth = j.value("tree_depth", t.tree_depth);
  t.lsvm_pca = j.value("lsvm_pca", t.lsvm_pca);
  t.ksvm_pca = j.value("ksvm_pca", t.ksvm_pca);
  t.ksvm_c = j.value("ksvm_c", t.ksvm_c);
  t.lsvm_lr = j.value("lsvm_lr", t.lsvm_lr);
  t.lsvm_reg = j.value("lsvm_reg", t.lsvm_reg);
  t.lsvm_epochs = j.value("lsvm_epochs", t.lsvm_epochs);
  return t;
}

std::string attack_key(const std::string& kind, double epsilon) {
  return kind + ":" + epsilon_label(epsilon);
}

namespace {

constexpr int kClasses = 10;

void require_clean(const FeatureMatrix& fm) {
  if (fm.provenance != "clean")
    throw OrchestrationError("refusing to fit on features with provenance '" +
                             fm.provenance + "'; classifiers train on clean data only");
}

FeatureMatrix project_matrix(const PcaTransform& pca, const FeatureMatrix& fm) {
  FeatureMatrix out;
  out.values = pca_project(pca, fm.values);
  out.labels = fm.labels;
  out.config = fm.config;
  out.provenance = fm.provenance;
  return out;
}

std::vector<int> argmax_rows(const TensorF& logits) {
  const long n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i) {
    int best = 0;
    for (long j = 1; j < c; ++j)
      if (logits.ptr()[i * c + j] > logits.ptr()[i * c + best]) best = static_cast<int>(j);
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

// Fits one classifier on clean features and returns a scorer over feature
// matrices. PCA-backed classifiers carry their transform in the closure.
std::function<double(const FeatureMatrix&)> fit_cell(
    const std::string& classifier, const TunedParams& tuned,
    const FeatureMatrix& clean_train, uint64_t seed) {
  require_clean(clean_train);
  const auto score_with = [](auto classify) {
    return [classify](const FeatureMatrix& fm) {
      return accuracy(classify(fm), fm.labels);
    };
  };

  if (classifier == "knn") {
    auto model = std::make_shared<KnnModel>(
        fit_knn(clean_train.values, clean_train.labels, tuned.knn_k));
    return score_with([model](const FeatureMatrix& fm) {
      return knn_classify(*model, fm.values);
    });
  }
  if (classifier == "tree") {
    auto model = std::make_shared<DecisionTreeModel>(
        fit_decision_tree(clean_train.values, clean_train.labels, tuned.tree_depth));
    return score_with([model](const FeatureMatrix& fm) {
      return tree_classify(*model, fm.values);
    });
  }
  if (classifier == "lsvm") {
    auto pca = std::make_shared<PcaTransform>(
        fit_pca(clean_train.values, tuned.lsvm_pca));
    auto model = std::make_shared<LinearSvmModel>(fit_linear_svm_sgd(
        pca_project(*pca, clean_train.values), clean_train.labels, kClasses,
        tuned.lsvm_epochs, tuned.lsvm_lr, tuned.lsvm_reg, seed));
    return score_with([pca, model](const FeatureMatrix& fm) {
      return linear_svm_classify(*model, pca_project(*pca, fm.values));
    });
  }
  if (classifier == "ksvm") {
    auto pca = std::make_shared<PcaTransform>(
        fit_pca(clean_train.values, tuned.ksvm_pca));
    auto model = std::make_shared<RbfSvmModel>(
        fit_rbf_svm(pca_project(*pca, clean_train.values), clean_train.labels,
                    kClasses, tuned.ksvm_c));
    return score_with([pca, model](const FeatureMatrix& fm) {
      return rbf_svm_classify(*model, pca_project(*pca, fm.values));
    });
  }
  if (classifier == "ann") {
    auto model = std::make_shared<Mlp>(
        Mlp::ann_default(clean_train.cols(), Rng::mix(seed, 0x616e6e)));
    TrainRecipe recipe;
    recipe.seed = Rng::mix(seed, 1);
    train_mlp(*model, clean_train, recipe);
    return score_with([model](const FeatureMatrix& fm) {
      return model->predict(fm);
    });
  }
  throw ConfigError("unknown classifier '" + classifier +
                    "'; expected knn|tree|lsvm|ksvm|ann");
}

bool is_classical(const std::string& classifier) { return classifier != "ann"; }

struct ParamView {
  std::string name;
  std::function<double(const CellResult&)> get;
};

double checked_accuracy(const Cnn& net, const ImageSet& set) {
  return accuracy(net.predict(set), set.labels);
}

std::string fmt_pct(double v) {
  std::ostringstream os;
  os.precision(1);
  os << std::fixed << v;
  return os.str();
}

}  // namespace

EvaluationReport run_evaluation(const ExperimentPlan& plan, const EvaluationInputs& in) {
  if (plan.protocol != "holdout" && plan.protocol != "paper")
    throw ConfigError("protocol must be 'holdout' or 'paper', got '" + plan.protocol + "'");
  if (plan.configs.empty() || plan.classifiers.empty())
    throw ConfigError("experiment plan needs at least one config and one classifier");
  if (in.train.size() < 1) throw OrchestrationError("empty training set");

  const ImageSet& eval_set = plan.protocol == "paper" ? in.train : in.eval;
  if (eval_set.size() < 1) throw OrchestrationError("empty evaluation set");

  // One surrogate per plan: all attack sets must agree on their origin.
  std::string surrogate_hash;
  for (const auto& [key, att] : in.attacks) {
    if (att.images.size() != eval_set.size())
      throw OrchestrationError("attack set '" + key + "' holds " +
                               std::to_string(att.images.size()) + " images but the " +
                               plan.protocol + " evaluation set holds " +
                               std::to_string(eval_set.size()));
    if (att.images.labels != eval_set.labels)
      throw OrchestrationError("attack set '" + key +
                               "' labels disagree with the evaluation set");
    if (surrogate_hash.empty()) surrogate_hash = att.surrogate_hash;
    if (att.surrogate_hash != surrogate_hash)
      throw OrchestrationError("attack set '" + key +
                               "' was crafted on a different surrogate checkpoint");
  }

  EvaluationReport report;
  report.protocol = plan.protocol;
  report.seed = plan.seed;

  struct ConfigSlice {
    HogConfig cfg;
    double epsilon = 0.0;
    FeatureMatrix clean_train, clean_eval, fgsm_eval, pgd_eval;
  };

  for (const std::string& name : plan.configs) {
    ConfigSlice slice;
    slice.cfg = hog_profile(name);
    if (slice.cfg.epsilon_tag.empty())
      throw ConfigError("config '" + name + "' carries no attack budget");
    slice.epsilon = parse_epsilon(slice.cfg.epsilon_tag);

    for (const char* kind : {"fgsm", "pgd"}) {
      const std::string key = attack_key(kind, slice.epsilon);
      if (!in.attacks.count(key))
        throw OrchestrationError("missing attack set '" + key + "' needed by config " +
                                 name + "; craft it first");
      const AdversarialSet& att = in.attacks.at(key);
      if (att.images.provenance != kind)
        throw OrchestrationError("attack set '" + key + "' has provenance '" +
                                 att.images.provenance + "'");
    }

    slice.clean_train = extract_features(in.train, slice.cfg);
    slice.clean_eval = extract_features(eval_set, slice.cfg);
    slice.fgsm_eval =
        extract_features(in.attacks.at(attack_key("fgsm", slice.epsilon)).images, slice.cfg);
    slice.pgd_eval =
        extract_features(in.attacks.at(attack_key("pgd", slice.epsilon)).images, slice.cfg);

    for (const std::string& classifier : plan.classifiers) {
      CellResult cell;
      cell.config = name;
      cell.classifier = classifier;
      cell.hog = slice.cfg;
      cell.epsilon = slice.epsilon;
      const auto start = std::chrono::steady_clock::now();
      try {
        const uint64_t cell_seed =
            Rng::mix(plan.seed, fnv1a64(name + "/" + classifier));
        const auto score = fit_cell(classifier, plan.tuned, slice.clean_train, cell_seed);
        cell.acc_orig = score(slice.clean_eval);
        cell.acc_fgsm = score(slice.fgsm_eval);
        cell.acc_pgd = score(slice.pgd_eval);
        cell.drop_fgsm = relative_drop(cell.acc_orig, cell.acc_fgsm);
        cell.drop_pgd = relative_drop(cell.acc_orig, cell.acc_pgd);
        cell.retention_fgsm = retention(cell.acc_orig, cell.acc_fgsm);
        cell.retention_pgd = retention(cell.acc_orig, cell.acc_pgd);
      } catch (const Error& e) {
        cell.failed = true;
        cell.error = e.what();
      }
      cell.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      report.cells.push_back(std::move(cell));
    }
  }

  std::sort(report.cells.begin(), report.cells.end(),
            [](const CellResult& a, const CellResult& b) {
              return std::tie(a.config, a.classifier) < std::tie(b.config, b.classifier);
            });

  for (const CellResult& cell : report.cells) {
    if (cell.failed) continue;
    const bool reversed = cell.drop_fgsm > cell.drop_pgd;
    ++report.total_all;
    report.reversal_all += reversed ? 1 : 0;
    if (is_classical(cell.classifier)) {
      ++report.total_classical;
      report.reversal_classical += reversed ? 1 : 0;
    }
  }

  const std::vector<ParamView> params = {
      {"pixels_per_cell", [](const CellResult& c) { return double(c.hog.pixels_per_cell); }},
      {"orientations", [](const CellResult& c) { return double(c.hog.orientations); }},
      {"cells_per_block", [](const CellResult& c) { return double(c.hog.cells_per_block); }},
      {"epsilon", [](const CellResult& c) { return c.epsilon; }},
  };
  const std::vector<ParamView> metrics = {
      {"acc_orig", [](const CellResult& c) { return c.acc_orig; }},
      {"acc_fgsm", [](const CellResult& c) { return c.acc_fgsm; }},
      {"acc_pgd", [](const CellResult& c) { return c.acc_pgd; }},
      {"retention_fgsm", [](const CellResult& c) { return c.retention_fgsm; }},
      {"retention_pgd", [](const CellResult& c) { return c.retention_pgd; }},
  };
  for (const auto& p : params) {
    for (const auto& m : metrics) {
      CorrelationEntry entry;
      entry.parameter = p.name;
      entry.metric = m.name;
      std::vector<double> a, b;
      for (const CellResult& cell : report.cells) {
        if (cell.failed) continue;
        a.push_back(p.get(cell));
        b.push_back(m.get(cell));
      }
      try {
        entry.r = pearson_correlation(a, b);
        entry.defined = true;
      } catch (const Error&) {
        entry.r = 0.0;
        entry.defined = false;
      }
      report.correlations.push_back(entry);
    }
  }

  // Phenomenon checks. Failures are reported, not thrown: partial results
  // beat aborted runs, and the acceptance gate re-asserts them.
  {
    PhenomenonCheck check{"reversal_tally_classical", false, ""};
    check.pass = report.total_classical > 0 &&
                 4 * report.reversal_classical >= 3 * report.total_classical;
    check.detail = "fgsm drop exceeded pgd drop in " +
                   std::to_string(report.reversal_classical) + " of " +
                   std::to_string(report.total_classical) + " classical cells";
    report.checks.push_back(check);
  }
  {
    // Matched configs that differ only in attack budget: higher epsilon must
    // not drop less.
    PhenomenonCheck check{"epsilon_monotonicity", true, ""};
    int pairs = 0;
    std::string bad;
    for (const CellResult& lo : report.cells) {
      if (lo.failed) continue;
      for (const CellResult& hi : report.cells) {
        if (hi.failed || hi.classifier != lo.classifier) continue;
        if (hi.epsilon <= lo.epsilon) continue;
        if (hi.hog.pixels_per_cell != lo.hog.pixels_per_cell ||
            hi.hog.orientations != lo.hog.orientations ||
            hi.hog.cells_per_block != lo.hog.cells_per_block)
          continue;
        ++pairs;
        if (hi.drop_fgsm < lo.drop_fgsm) {
          check.pass = false;
          bad += " " + lo.classifier + "(" + lo.config + "->" + hi.config + " " +
                 fmt_pct(lo.drop_fgsm) + "->" + fmt_pct(hi.drop_fgsm) + ")";
        }
      }
    }
    if (pairs > 0) {
      check.detail = bad.empty()
                         ? "fgsm relative drop non-decreasing in epsilon over " +
                               std::to_string(pairs) + " matched pairs"
                         : "violations:" + bad;
      report.checks.push_back(check);
    }
  }
  {
    // Matched configs that differ only in block size: fgsm accuracy must not
    // fall by more than the desk-noise slack as blocks grow.
    constexpr double kSlack = 0.02;
    PhenomenonCheck check{"block_monotonicity", true, ""};
    int pairs = 0;
    std::string bad;
    for (const CellResult& lo : report.cells) {
      if (lo.failed) continue;
      for (const CellResult& hi : report.cells) {
        if (hi.failed || hi.classifier != lo.classifier) continue;
        if (hi.hog.cells_per_block <= lo.hog.cells_per_block) continue;
        if (hi.hog.pixels_per_cell != lo.hog.pixels_per_cell ||
            hi.hog.orientations != lo.hog.orientations || hi.epsilon != lo.epsilon)
          continue;
        ++pairs;
        if (hi.acc_fgsm < lo.acc_fgsm - kSlack) {
          check.pass = false;
          bad += " " + lo.classifier + "(B" + std::to_string(lo.hog.cells_per_block) +
                 "->B" + std::to_string(hi.hog.cells_per_block) + " " +
                 fmt_pct(lo.acc_fgsm * 100) + "->" + fmt_pct(hi.acc_fgsm * 100) + ")";
        }
      }
    }
    if (pairs > 0) {
      check.detail = bad.empty() ? "fgsm accuracy non-decreasing in block size over " +
                                       std::to_string(pairs) + " matched pairs"
                                 : "violations:" + bad;
      report.checks.push_back(check);
    }
  }

  double cos_fgsm = 0.0, cos_pgd = 0.0;
  long n_fgsm = 0, n_pgd = 0;
  for (const auto& [key, att] : in.attacks) {
    if (att.config.kind == "fgsm") {
      cos_fgsm += att.mean_cosine();
      ++n_fgsm;
    } else {
      cos_pgd += att.mean_cosine();
      ++n_pgd;
    }
  }
  report.mean_cosine_fgsm = n_fgsm ? cos_fgsm / n_fgsm : 0.0;
  report.mean_cosine_pgd = n_pgd ? cos_pgd / n_pgd : 0.0;

  double baseline_eps = 0.0;
  for (const auto& [key, att] : in.attacks) {
    const double eps = att.config.epsilon;
    if (eps > baseline_eps && in.attacks.count(attack_key("fgsm", eps)) &&
        in.attacks.count(attack_key("pgd", eps)))
      baseline_eps = eps;
  }
  if (in.surrogate && in.target && baseline_eps > 0.0) {
    const ImageSet& fgsm_imgs = in.attacks.at(attack_key("fgsm", baseline_eps)).images;
    const ImageSet& pgd_imgs = in.attacks.at(attack_key("pgd", baseline_eps)).images;
    for (const auto& [name, net] : {std::pair<std::string, const Cnn*>{"surrogate", in.surrogate},
                                    {"target", in.target}}) {
      NetAccuracy row;
      row.net = name;
      row.clean = checked_accuracy(*net, eval_set);
      row.fgsm = checked_accuracy(*net, fgsm_imgs);
      row.pgd = checked_accuracy(*net, pgd_imgs);
      report.baseline.push_back(row);
    }
    {
      const NetAccuracy& s = report.baseline[0];
      PhenomenonCheck check{"surrogate_hierarchy", s.pgd <= s.fgsm,
                            "surrogate accuracy fgsm " + fmt_pct(s.fgsm * 100) +
                                "% vs pgd " + fmt_pct(s.pgd * 100) +
                                "% (white-box pgd should hit harder)"};
      report.checks.push_back(check);
    }
    {
      const NetAccuracy& s = report.baseline[0];
      const NetAccuracy& t = report.baseline[1];
      bool ok = s.clean > 0 && t.clean > 0;
      const double s_drop = ok ? relative_drop(s.clean, s.fgsm) : 0.0;
      const double t_drop = ok ? relative_drop(t.clean, t.fgsm) : 0.0;
      PhenomenonCheck check{"transfer_gap", ok && s_drop > t_drop,
                            "fgsm relative drop: surrogate " + fmt_pct(s_drop) +
                                "% vs transfer target " + fmt_pct(t_drop) + "%"};
      report.checks.push_back(check);
    }
  }

  report.environment = {
      {"threads", thread_count()},
      {"train_rows", in.train.size()},
      {"eval_rows", eval_set.size()},
      {"attack_sets", static_cast<long>(in.attacks.size())},
      {"baseline_epsilon", baseline_eps > 0 ? epsilon_label(baseline_eps) : ""},
      {"surrogate_hash", surrogate_hash},
      {"tuned", plan.tuned.to_json()},
  };
  return report;
}

nlohmann::json EvaluationReport::to_json() const {
  nlohmann::json cells_json = nlohmann::json::array();
  for (const CellResult& c : cells) {
    nlohmann::json row = {
        {"config", c.config},
        {"classifier", c.classifier},
        {"pixels_per_cell", c.hog.pixels_per_cell},
        {"orientations", c.hog.orientations},
        {"cells_per_block", c.hog.cells_per_block},
        {"epsilon", c.epsilon},
        {"failed", c.failed},
        {"wall_seconds", c.wall_seconds},
    };
    if (c.failed) {
      row["error"] = c.error;
    } else {
      row["acc_orig"] = c.acc_orig;
      row["acc_fgsm"] = c.acc_fgsm;
      row["acc_pgd"] = c.acc_pgd;
      row["drop_fgsm"] = c.drop_fgsm;
      row["drop_pgd"] = c.drop_pgd;
      row["retention_fgsm"] = c.retention_fgsm;
      row["retention_pgd"] = c.retention_pgd;
    }
    cells_json.push_back(std::move(row));
  }

  nlohmann::json corr = nlohmann::json::array();
  for (const CorrelationEntry& e : correlations)
    corr.push_back({{"parameter", e.parameter},
                    {"metric", e.metric},
                    {"r", e.r},
                    {"defined", e.defined}});

  nlohmann::json base = nlohmann::json::array();
  for (const NetAccuracy& b : baseline)
    base.push_back({{"net", b.net}, {"clean", b.clean}, {"fgsm", b.fgsm}, {"pgd", b.pgd}});

  nlohmann::json checks_json = nlohmann::json::array();
  for (const PhenomenonCheck& c : checks)
    checks_json.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});

  return {
      {"protocol", protocol},
      {"seed", seed},
      {"cells", cells_json},
      {"correlations", corr},
      {"baseline", base},
      {"checks", checks_json},
      {"reversal", {{"classical", reversal_classical},
                    {"classical_total", total_classical},
                    {"all", reversal_all},
                    {"all_total", total_all}}},
      {"mean_cosine", {{"fgsm", mean_cosine_fgsm}, {"pgd", mean_cosine_pgd}}},
      {"environment", environment},
  };
}

void write_report_files(const EvaluationReport& report, const std::string& dir) {
  ensure_dir(dir);
  // Wall times go to timing.csv only, so report.json and cells.csv hash
  // identically across reruns with the same seed.
  nlohmann::json doc = report.to_json();
  for (auto& cell : doc["cells"]) cell.erase("wall_seconds");
  write_file_atomic(join_path(dir, "report.json"), doc.dump(2) + "\n");

  std::string timing = csv_row({"config", "classifier", "wall_seconds"});
  for (const CellResult& c : report.cells)
    timing += csv_row({c.config, c.classifier, format_double(c.wall_seconds)});
  write_file_atomic(join_path(dir, "timing.csv"), timing);

  std::string cells = csv_row({"config", "classifier", "epsilon", "acc_orig", "acc_fgsm",
                               "acc_pgd", "drop_fgsm", "drop_pgd", "retention_fgsm",
                               "retention_pgd", "failed", "error"});
  std::string acc = csv_row({"config", "classifier", "acc_orig", "acc_fgsm", "acc_pgd"});
  std::string rev = csv_row({"config", "classifier", "drop_fgsm", "drop_pgd"});
  std::string blk = csv_row({"config", "classifier", "cells_per_block", "acc_fgsm"});
  std::string ret = csv_row({"config", "classifier", "retention_fgsm", "retention_pgd"});
  for (const CellResult& c : report.cells) {
    cells += csv_row({c.config, c.classifier, format_double(c.epsilon),
                      format_double(c.acc_orig), format_double(c.acc_fgsm),
                      format_double(c.acc_pgd), format_double(c.drop_fgsm),
                      format_double(c.drop_pgd), format_double(c.retention_fgsm),
                      format_double(c.retention_pgd), c.failed ? "1" : "0", c.error});
    if (c.failed) continue;
    acc += csv_row({c.config, c.classifier, format_double(c.acc_orig),
                    format_double(c.acc_fgsm), format_double(c.acc_pgd)});
    rev += csv_row({c.config, c.classifier, format_double(c.drop_fgsm),
                    format_double(c.drop_pgd)});
    blk += csv_row({c.config, c.classifier, std::to_string(c.hog.cells_per_block),
                    format_double(c.acc_fgsm)});
    ret += csv_row({c.config, c.classifier, format_double(c.retention_fgsm),
                    format_double(c.retention_pgd)});
  }
  write_file_atomic(join_path(dir, "cells.csv"), cells);
  write_file_atomic(join_path(dir, "plot_accuracy.csv"), acc);
  write_file_atomic(join_path(dir, "plot_reversal.csv"), rev);
  write_file_atomic(join_path(dir, "plot_block_size.csv"), blk);
  write_file_atomic(join_path(dir, "plot_retention.csv"), ret);

  std::string corr = csv_row({"parameter", "metric", "r", "defined"});
  for (const CorrelationEntry& e : report.correlations)
    corr += csv_row({e.parameter, e.metric, format_double(e.r), e.defined ? "1" : "0"});
  write_file_atomic(join_path(dir, "plot_correlations.csv"), corr);
}

}  // namespace pb
