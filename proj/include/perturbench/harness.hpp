#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "perturbench/attacks.hpp"
#include "perturbench/classical.hpp"
#include "perturbench/dataset.hpp"
#include "perturbench/hog.hpp"
#include "perturbench/nn.hpp"

namespace pb {

// (orig - attacked) / orig * 100. Negative when the attack helps.
// acc_orig must be positive; zero raises UndefinedValueError.
double relative_drop(double acc_orig, double acc_attack);
// attacked / orig * 100; same domain rule. retention + relative_drop = 100.
double retention(double acc_orig, double acc_attack);
// Sample Pearson r; lengths must match and be >= 3, both sides non-constant
// (else UndefinedValueError).
double pearson_correlation(const std::vector<double>& a, const std::vector<double>& b);

struct TunedParams {
  int knn_k = 3;
  int tree_depth = 10;
  double lsvm_pca = 0.95;
  double ksvm_pca = 0.80;
  double ksvm_c = 1.0;
  double lsvm_lr = 0.01;
  double lsvm_reg = 1e-4;
  int lsvm_epochs = 30;

  nlohmann::json to_json() const;
  static TunedParams from_json(const nlohmann::json& j);
};

struct ExperimentPlan {
  std::vector<std::string> configs = {"C1", "C4", "C5", "C7", "C8"};
  std::vector<std::string> classifiers = {"knn", "tree", "lsvm", "ksvm", "ann"};
  std::string protocol = "holdout";  // holdout | paper
  uint64_t seed = 0;
  TunedParams tuned;
};

struct CellResult {
  std::string config;      // profile name
  std::string classifier;  // knn | tree | lsvm | ksvm | ann
  HogConfig hog;
  double epsilon = 0.0;
  double acc_orig = 0.0, acc_fgsm = 0.0, acc_pgd = 0.0;
  double drop_fgsm = 0.0, drop_pgd = 0.0;
  double retention_fgsm = 0.0, retention_pgd = 0.0;
  double wall_seconds = 0.0;
  bool failed = false;
  std::string error;
};

struct NetAccuracy {
  std::string net;  // surrogate | target
  double clean = 0.0, fgsm = 0.0, pgd = 0.0;
};

struct CorrelationEntry {
  std::string parameter;  // pixels_per_cell | orientations | cells_per_block | epsilon
  std::string metric;     // acc_orig | acc_fgsm | acc_pgd | retention_fgsm | retention_pgd
  double r = 0.0;
  bool defined = false;  // false when either side is constant over the grid
};

struct PhenomenonCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct EvaluationReport {
  std::vector<CellResult> cells;  // sorted by (config, classifier)
  std::vector<CorrelationEntry> correlations;
  std::vector<NetAccuracy> baseline;
  std::vector<PhenomenonCheck> checks;
  long reversal_classical = 0, total_classical = 0;
  long reversal_all = 0, total_all = 0;
  std::string protocol;
  uint64_t seed = 0;
  nlohmann::json environment;
  double mean_cosine_fgsm = 0.0, mean_cosine_pgd = 0.0;

  nlohmann::json to_json() const;
};

// Everything run_evaluation consumes. Attack sets are keyed "kind:epsilon"
// with the epsilon in n/255 form, e.g. "fgsm:4/255". Under the holdout
// protocol the attacks must be crafted from `eval`; under the 'paper' protocol
// from `train` (which is then also the evaluation set).
struct EvaluationInputs {
  ImageSet train;
  ImageSet eval;
  std::map<std::string, AdversarialSet> attacks;
  const Cnn* surrogate = nullptr;  // both optional; enables the baseline rows
  const Cnn* target = nullptr;
};

std::string attack_key(const std::string& kind, double epsilon);

// Algorithm: per config, extract clean/fgsm/pgd features at the config's
// paired epsilon, fit every classifier on CLEAN training features only, score
// all three sets. Missing attack sets raise OrchestrationError naming the
// key; a failing cell is recorded and the run continues.
EvaluationReport run_evaluation(const ExperimentPlan& plan, const EvaluationInputs& in);

// report.json, cells.csv, and the plot-data CSVs under dir.
void write_report_files(const EvaluationReport& report, const std::string& dir);

}  // namespace pb
