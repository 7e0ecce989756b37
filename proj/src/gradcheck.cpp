#include "perturbench/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "perturbench/errors.hpp"

namespace pb {

namespace {

double eval_loss(const std::function<Var(GraphD&, const std::vector<Var>&)>& build,
                 const std::vector<std::pair<std::string, TensorD>>& leaves) {
  GraphD g;
  std::vector<Var> vars;
  vars.reserve(leaves.size());
  for (const auto& [name, t] : leaves) vars.push_back(g.value(t, false));
  const Var loss = build(g, vars);
  const TensorD& lv = g.value_of(loss);
  if (lv.numel() != 1)
    throw UsageError("grad_check: builder must return a scalar loss, got " +
                     shape_str(lv.shape));
  return lv.data[0];
}

}  // namespace

GradCheckReport grad_check(
    const std::function<Var(GraphD&, const std::vector<Var>&)>& build,
    const std::vector<std::pair<std::string, TensorD>>& leaves, double h,
    long max_coords, Rng* rng) {
  if (max_coords > 0 && rng == nullptr)
    throw UsageError("grad_check: coordinate sampling needs an rng");

  // One analytic pass with every leaf active.
  GraphD g;
  std::vector<Var> vars;
  for (const auto& [name, t] : leaves) vars.push_back(g.value(t, true));
  const Var loss = build(g, vars);
  g.backward(loss);

  GradCheckReport report;
  auto probe = leaves;  // mutable copy the FD evaluations perturb in place
  for (size_t li = 0; li < leaves.size(); ++li) {
    GradCheckEntry entry;
    entry.name = leaves[li].first;
    const TensorD* analytic =
        g.has_grad(vars[li]) ? &g.grad_of(vars[li]) : nullptr;

    const long n = leaves[li].second.numel();
    std::vector<long> coords;
    if (max_coords == 0 || n <= max_coords) {
      coords.resize(static_cast<size_t>(n));
      for (long i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    } else {
      for (long i = 0; i < max_coords; ++i)
        coords.push_back(static_cast<long>(rng->uniform_index(static_cast<uint64_t>(n))));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }

    for (long c : coords) {
      const double saved = probe[li].second.data[static_cast<size_t>(c)];
      probe[li].second.data[static_cast<size_t>(c)] = saved + h;
      const double up = eval_loss(build, probe);
      probe[li].second.data[static_cast<size_t>(c)] = saved - h;
      const double down = eval_loss(build, probe);
      probe[li].second.data[static_cast<size_t>(c)] = saved;

      const double numeric = (up - down) / (2.0 * h);
      const double an = analytic ? analytic->data[static_cast<size_t>(c)] : 0.0;
      const double denom = std::max({std::fabs(numeric), std::fabs(an), 1e-6});
      entry.max_rel_err = std::max(entry.max_rel_err, std::fabs(numeric - an) / denom);
      ++entry.checked;
    }
    report.worst = std::max(report.worst, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace pb
