#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "perturbench/graph.hpp"
#include "perturbench/rng.hpp"

namespace pb {

// Central-difference check of reverse-mode gradients, double precision only.
// The builder receives a fresh graph plus leaf handles (in the order the
// leaves were passed) and must return a scalar loss; it is re-invoked for
// every probe, so it must be a pure function of the leaf values.
struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  long checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst = 0.0;
  bool ok(double tol) const { return worst <= tol; }
};

// max_coords == 0 probes every coordinate; otherwise that many coordinates
// per leaf are sampled with rng (required in that case). Relative error uses
// denominator max(|analytic|, |numeric|, 1e-6).
GradCheckReport grad_check(
    const std::function<Var(GraphD&, const std::vector<Var>&)>& build,
    const std::vector<std::pair<std::string, TensorD>>& leaves,
    double h = 1e-5, long max_coords = 0, Rng* rng = nullptr);

}  // namespace pb
