#include <CLI11.hpp>

#include "dvgp/cli.hpp"

int main(int argc, char **argv) {
  CLI::App app{"distributed variational inference for sparse GP regression and the Bayesian GPLVM"};
  app.require_subcommand(1);

  dvgp::cli::RunConfig config;
  auto add_common = [&](CLI::App *cmd) {
    cmd->add_option("--data", config.data_path, "input CSV (x_*/y_* columns)");
    cmd->add_option("--m", config.m, "number of inducing points");
    cmd->add_option("--q", config.q, "latent dimension (gplvm)");
    cmd->add_option("--workers", config.workers, "worker count");
    cmd->add_option("--failure-rate", config.failure_rate,
                    "per-worker per-iteration failure probability");
    cmd->add_option("--seed", config.seed, "random seed");
    cmd->add_option("--max-iters", config.max_iters, "optimizer iteration budget");
    cmd->add_option("--out", config.out_dir, "output directory");
  };

  CLI::App *fit = app.add_subcommand("fit", "fit one model and emit metrics + model container");
  fit->add_option("--mode", config.mode, "sgpr | gplvm");
  add_common(fit);

  CLI::App *gradcheck =
      app.add_subcommand("gradcheck", "finite-difference verification of every gradient block");
  gradcheck->add_option("--instances", config.gradcheck_instances, "number of random instances");
  add_common(gradcheck);

  CLI::App *sweep = app.add_subcommand(
      "failure-sweep", "grid of failure rates x seeds with per-iteration ELBO traces");
  sweep->add_option("--rates", config.rates, "failure rates to sweep");
  sweep->add_option("--sweep-seeds", config.sweep_seeds, "number of seeds per rate");
  add_common(sweep);

  CLI::App *ard = app.add_subcommand("ard-report", "fit a gplvm and print sorted ARD weights");
  add_common(ard);

  CLI11_PARSE(app, argc, argv);

  if (fit->parsed()) config.command = "fit";
  if (gradcheck->parsed()) config.command = "gradcheck";
  if (sweep->parsed()) config.command = "failure-sweep";
  if (ard->parsed()) config.command = "ard-report";
  return dvgp::cli::run(config);
}
