#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dvgp/csv.hpp"
#include "dvgp/experiments.hpp"
#include "dvgp/gradcheck.hpp"
#include "dvgp/model.hpp"
#include "dvgp/serialize.hpp"
#include "dvgp/synthetic.hpp"
#include "dvgp/types.hpp"

namespace dvgp::cli {

struct RunConfig {
  std::string command;  // fit | gradcheck | failure-sweep | ard-report
  std::string mode = "sgpr";
  std::string data_path;
  Index m = 10;
  Index q = 2;
  int workers = 1;
  double failure_rate = 0.0;
  std::uint64_t seed = 0;
  long max_iters = 500;
  std::string out_dir;
  std::vector<double> rates = {0.0, 0.01, 0.02};
  int sweep_seeds = 10;
  int gradcheck_instances = 20;

  void validate() const {
    require(command == "fit" || command == "gradcheck" || command == "failure-sweep" ||
                command == "ard-report",
            "config: unknown command '" + command + "'");
    require(mode == "sgpr" || mode == "gplvm", "config: mode must be sgpr or gplvm");
    require(failure_rate >= 0.0 && failure_rate <= 1.0,
            "config: failure rate must lie in [0, 1]");
    require(m >= 1, "config: m must be at least 1");
    require(q >= 1, "config: q must be at least 1");
    require(workers >= 1, "config: worker count must be at least 1");
    require(max_iters >= 0, "config: max-iters must be nonnegative");
    require(sweep_seeds >= 1, "config: sweep-seeds must be at least 1");
    for (double r : rates)
      require(r >= 0.0 && r <= 1.0, "config: every sweep rate must lie in [0, 1]");
    if (command == "fit") require(!data_path.empty(), "config: fit requires --data");
  }
};

namespace detail {

inline void ensure_out_dir(const std::string &dir) {
  if (dir.empty()) return;
  std::filesystem::create_directories(dir);
}

/// One JSON object per line, flushed per line so a truncated run still
/// leaves a parseable prefix.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string &path) {
    if (path.empty()) return;
    out_.open(path);
    require(out_.good(), "metrics: cannot open " + path);
  }

  void write(const FitTracePoint &pt) {
    if (!out_.is_open()) return;
    nlohmann::json line = {{"iter", pt.iter},
                           {"elbo", pt.elbo},
                           {"grad_norm", pt.grad_norm},
                           {"alive_workers", pt.alive_workers},
                           {"elapsed_ms", pt.elapsed_ms}};
    out_ << line.dump() << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
};

inline void write_json_file(const std::string &path, const nlohmann::json &j) {
  std::ofstream out(path);
  require(out.good(), "cannot open " + path);
  out << j.dump(2) << "\n";
}

inline std::string joined(const std::string &dir, const std::string &name) {
  return (std::filesystem::path(dir) / name).string();
}

inline Dataset built_in_gplvm_fixture() { return make_latent_curve(40, 4, 0.05, 7); }

}  // namespace detail

inline int run_fit(const RunConfig &config) {
  const Dataset data = ingest_csv(config.data_path);
  FitOptions opts;
  opts.max_iters = config.max_iters;
  opts.workers = config.workers;
  opts.failure_rate = config.failure_rate;
  opts.seed = config.seed;

  FittedModel model;
  if (config.mode == "sgpr") {
    require(data.x.has_value(), "fit: sgpr mode needs x_ input columns in the CSV");
    model = fit_sparse_gp(data, config.m, opts);
  } else {
    require(!data.x.has_value(), "fit: gplvm mode expects a CSV with only y_ columns");
    model = fit_gplvm(data, config.q, config.m, opts);
  }

  detail::ensure_out_dir(config.out_dir);
  if (!config.out_dir.empty()) {
    detail::MetricsWriter metrics(detail::joined(config.out_dir, "metrics.jsonl"));
    for (const FitTracePoint &pt : model.trace) metrics.write(pt);
    save_model(model, detail::joined(config.out_dir, "model.json"));
    nlohmann::json summary = {{"command", "fit"},
                              {"mode", config.mode},
                              {"n", data.n()},
                              {"d", data.d()},
                              {"m", config.m},
                              {"q", config.q},
                              {"workers", config.workers},
                              {"failure_rate", config.failure_rate},
                              {"seed", config.seed},
                              {"iterations", model.trace.size()},
                              {"final_elbo", model.elbo},
                              {"warnings", model.warnings}};
    if (config.mode == "gplvm") {
      Vector w = model.ard_weights();
      summary["ard_weights"] = std::vector<double>(w.data(), w.data() + w.size());
    }
    detail::write_json_file(detail::joined(config.out_dir, "summary.json"), summary);
  }
  for (const std::string &w : model.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "final elbo: " << model.elbo << " after " << model.trace.size() << " iterations\n";
  return 0;
}

inline int run_gradcheck(const RunConfig &config) {
  GradCheckReport total;
  for (int i = 0; i < config.gradcheck_instances; ++i) {
    const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(i);
    total.absorb(check_kernel_gradients(seed));
    total.absorb(check_bound_gradients(random_gradcheck_instance(seed, i % 2 == 1)));
  }
  std::cout << "gradcheck over " << config.gradcheck_instances << " instances\n";
  for (const auto &[name, err] : total.per_block)
    std::cout << "  " << name << ": max rel err " << err << "\n";
  std::cout << "max relative error: " << total.max_rel_err << "\n";

  if (!config.out_dir.empty()) {
    detail::ensure_out_dir(config.out_dir);
    nlohmann::json j = {{"command", "gradcheck"},
                        {"instances", config.gradcheck_instances},
                        {"seed", config.seed},
                        {"max_rel_err", total.max_rel_err},
                        {"per_block", total.per_block}};
    detail::write_json_file(detail::joined(config.out_dir, "gradcheck.json"), j);
  }
  constexpr double kTolerance = 1e-5;
  if (total.max_rel_err >= kTolerance) {
    std::cerr << "gradcheck FAILED: " << total.max_rel_err << " >= " << kTolerance << "\n";
    return 1;
  }
  return 0;
}

inline int run_failure_sweep(const RunConfig &config) {
  const Dataset data =
      config.data_path.empty() ? detail::built_in_gplvm_fixture() : ingest_csv(config.data_path);
  require(!data.x.has_value(), "failure-sweep: expects output-only (gplvm) data");

  const SweepResult sweep = failure_sweep(data, config.q, config.m, config.workers,
                                          config.max_iters, config.rates, config.sweep_seeds,
                                          config.seed);

  detail::ensure_out_dir(config.out_dir);
  if (!config.out_dir.empty()) {
    for (const SweepRun &run : sweep.runs) {
      std::ostringstream name;
      name << "trace_rate" << run.rate << "_seed" << run.seed << ".jsonl";
      detail::MetricsWriter metrics(detail::joined(config.out_dir, name.str()));
      for (const FitTracePoint &pt : run.trace) metrics.write(pt);
    }
    nlohmann::json meds = nlohmann::json::object();
    for (const auto &[rate, med] : sweep.median_final_elbo)
      meds[std::to_string(rate)] = med;
    nlohmann::json j = {{"command", "failure-sweep"},
                        {"rates", config.rates},
                        {"seeds", config.sweep_seeds},
                        {"iterations", config.max_iters},
                        {"workers", config.workers},
                        {"median_final_elbo", meds}};
    detail::write_json_file(detail::joined(config.out_dir, "sweep_summary.json"), j);
  }

  std::cout << "median final elbo by failure rate:\n";
  for (const auto &[rate, med] : sweep.median_final_elbo)
    std::cout << "  rate " << rate << ": " << med << "\n";
  return 0;
}

inline int run_ard_report(const RunConfig &config) {
  const Dataset data =
      config.data_path.empty() ? detail::built_in_gplvm_fixture() : ingest_csv(config.data_path);
  require(!data.x.has_value(), "ard-report: expects output-only (gplvm) data");

  FitOptions opts;
  opts.max_iters = config.max_iters;
  opts.workers = config.workers;
  opts.failure_rate = config.failure_rate;
  opts.seed = config.seed;
  const FittedModel model = fit_gplvm(data, config.q, config.m, opts);

  Vector weights = model.ard_weights();
  std::vector<double> sorted(weights.data(), weights.data() + weights.size());
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());

  std::cout << "ard weights (descending):\n";
  for (double w : sorted) std::cout << "  " << w << "\n";
  if (sorted.size() >= 2)
    std::cout << "dominance ratio (largest / second): " << sorted[0] / sorted[1] << "\n";

  if (!config.out_dir.empty()) {
    detail::ensure_out_dir(config.out_dir);
    nlohmann::json j = {{"command", "ard-report"},
                        {"q", config.q},
                        {"m", config.m},
                        {"seed", config.seed},
                        {"final_elbo", model.elbo},
                        {"ard_weights_sorted", sorted}};
    detail::write_json_file(detail::joined(config.out_dir, "ard.json"), j);
  }
  return 0;
}

/// Dispatch with machine-readable errors: any failure prints a one-line
/// JSON error object to stderr and exits nonzero.
inline int run(const RunConfig &config) {
  try {
    config.validate();
    if (config.command == "fit") return run_fit(config);
    if (config.command == "gradcheck") return run_gradcheck(config);
    if (config.command == "failure-sweep") return run_failure_sweep(config);
    return run_ard_report(config);
  } catch (const std::exception &e) {
    nlohmann::json err = {{"error", {{"type", typeid(e).name()}, {"message", e.what()}}}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
}

}  // namespace dvgp::cli
