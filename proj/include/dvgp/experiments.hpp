#pragma once

#include <algorithm>
#include <map>
#include <vector>

#include "dvgp/model.hpp"
#include "dvgp/synthetic.hpp"
#include "dvgp/types.hpp"

namespace dvgp {

inline double median(std::vector<double> values) {
  require(!values.empty(), "median: empty sample");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

struct SweepRun {
  double rate = 0.0;
  std::uint64_t seed = 0;
  double final_elbo = 0.0;
  std::vector<FitTracePoint> trace;
};

struct SweepResult {
  std::vector<SweepRun> runs;
  std::map<double, double> median_final_elbo;  // keyed by failure rate
};

/// Failure-robustness grid: fits the same GPLVM problem once per
/// (rate, seed) pair. Runs sharing a seed share data draws and
/// initialization, so each seed gives a paired comparison across rates;
/// final ELBOs are clean (failure-free) evaluations at the returned
/// parameters.
inline SweepResult failure_sweep(const Dataset &data, Index q, Index m, int workers,
                                 long max_iters, const std::vector<double> &rates, int n_seeds,
                                 std::uint64_t base_seed, int threads = 0) {
  require(!data.x.has_value(), "failure_sweep: expects output-only (GPLVM) data");
  SweepResult result;
  for (const double rate : rates) {
    std::vector<double> finals;
    for (int s = 0; s < n_seeds; ++s) {
      FitOptions opts;
      opts.max_iters = max_iters;
      opts.workers = workers;
      opts.failure_rate = rate;
      opts.seed = base_seed + static_cast<std::uint64_t>(s);
      opts.threads = threads;
      opts.grad_tol = 0.0;  // run the full iteration budget
      opts.value_tol = 0.0;
      const FittedModel model = fit_gplvm(data, q, m, opts);
      result.runs.push_back({rate, opts.seed, model.elbo, model.trace});
      finals.push_back(model.elbo);
    }
    result.median_final_elbo[rate] = median(finals);
  }
  return result;
}

struct ArdRun {
  std::uint64_t seed = 0;
  Vector weights_sorted;  // descending ARD precisions
  double dominance = 0.0; // largest / second largest
};

/// Fits a GPLVM with q latent dimensions on data whose intrinsic dimension
/// is 1 and reports how strongly the leading ARD weight dominates.
inline std::vector<ArdRun> ard_collapse_runs(const Dataset &data, Index q, Index m, int n_seeds,
                                             long max_iters, std::uint64_t base_seed,
                                             int threads = 0) {
  require(q >= 2, "ard_collapse_runs: need at least two latent dimensions to compare");
  std::vector<ArdRun> runs;
  for (int s = 0; s < n_seeds; ++s) {
    FitOptions opts;
    opts.max_iters = max_iters;
    opts.seed = base_seed + static_cast<std::uint64_t>(s);
    opts.threads = threads;
    const FittedModel model = fit_gplvm(data, q, m, opts);
    ArdRun run;
    run.seed = opts.seed;
    run.weights_sorted = model.ard_weights();
    std::sort(run.weights_sorted.data(), run.weights_sorted.data() + run.weights_sorted.size(),
              std::greater<double>());
    run.dominance = run.weights_sorted(0) / std::max(run.weights_sorted(1), 1e-300);
    runs.push_back(std::move(run));
  }
  return runs;
}

}  // namespace dvgp
