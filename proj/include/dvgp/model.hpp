#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dvgp/distributed.hpp"
#include "dvgp/elbo.hpp"
#include "dvgp/optimize.hpp"
#include "dvgp/types.hpp"

namespace dvgp {

/// Outputs Y (n x d) and, in regression mode, the observed inputs X (n x q).
struct Dataset {
  Matrix y;
  std::optional<Matrix> x;

  Index n() const { return y.rows(); }
  Index d() const { return y.cols(); }

  void validate() const {
    require(y.rows() >= 1, "Dataset: need at least one data point");
    if (x) require(x->rows() == y.rows(), "Dataset: X and Y row counts differ");
  }
};

struct FitOptions {
  long max_iters = 500;
  double grad_tol = 1e-4;
  double value_tol = 1e-9;
  int workers = 1;
  double failure_rate = 0.0;
  std::uint64_t seed = 0;
  int threads = 0;  // 0: DVGP_THREADS env or hardware concurrency

  bool optimize_inducing = true;
  bool optimize_hyperparams = true;
  bool optimize_noise = true;
  bool optimize_embeddings = true;

  std::optional<Matrix> initial_z;
  std::optional<Matrix> initial_mu;  // GPLVM; n x q
  std::optional<Matrix> initial_s;   // GPLVM; n x q, all-zero rows clamp to deltas
  std::optional<double> initial_sigma_f_sq;
  std::optional<Vector> initial_alpha;
  std::optional<double> initial_beta;
};

struct FitTracePoint {
  long iter = 0;
  double elbo = 0.0;
  double grad_norm = 0.0;
  int alive_workers = 0;
  double elapsed_ms = 0.0;
};

struct FittedModel {
  Mode mode = Mode::regression;
  Matrix z;
  double log_sigma_f_sq = 0.0;
  Vector log_alpha;
  double log_beta = 0.0;
  QuDistribution qu;
  Matrix mu;  // n x q, GPLVM only
  Matrix s;   // n x q, GPLVM only
  double elbo = 0.0;  // clean (failure-free) evaluation at the returned parameters
  std::uint64_t seed = 0;
  std::vector<FitTracePoint> trace;
  std::vector<std::string> warnings;

  KernelHyperparams theta() const { return KernelHyperparams::from_log(log_sigma_f_sq, log_alpha); }
  double beta() const { return std::exp(log_beta); }
  InducingSet inducing() const { return InducingSet(z); }
  /// Per-dimension relevance: the ARD precisions alpha_q.
  Vector ard_weights() const { return log_alpha.array().exp(); }
  bool fitted() const { return qu.mean.size() > 0; }
};

/// PCA initialization of the variational embeddings: mu holds the first q
/// principal-component scores of centered Y, rescaled to unit variance per
/// dimension; every variance starts at 0.1.
inline std::vector<VariationalEmbedding> init_embeddings(const Matrix &y, Index q) {
  require(q >= 1, "init_embeddings: latent dimension must be positive");
  require(q <= y.cols(), "init_embeddings: latent dimension exceeds the output dimension");
  const Index n = y.rows();
  const Matrix centered = y.rowwise() - y.colwise().mean();
  Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Matrix scores =
      svd.matrixU().leftCols(q) * svd.singularValues().head(q).asDiagonal();
  for (Index c = 0; c < q; ++c) {
    if (n < 2) break;
    const double sd = std::sqrt(scores.col(c).squaredNorm() / static_cast<double>(n - 1));
    if (sd > 1e-12) scores.col(c) /= sd;
  }
  std::vector<VariationalEmbedding> embeddings;
  embeddings.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    embeddings.emplace_back(scores.row(i).transpose(), Vector::Constant(q, 0.1));
  return embeddings;
}

namespace detail {

inline double pooled_variance(const Matrix &y) {
  const double count = static_cast<double>(y.size());
  if (count < 2) return 0.0;
  const double mean = y.mean();
  return (y.array() - mean).square().sum() / (count - 1.0);
}

inline Vector column_variances(const Matrix &x) {
  Vector v(x.cols());
  for (Index c = 0; c < x.cols(); ++c) {
    if (x.rows() < 2) {
      v(c) = 0.0;
      continue;
    }
    const double mean = x.col(c).mean();
    v(c) = (x.col(c).array() - mean).square().sum() / static_cast<double>(x.rows() - 1);
  }
  return v;
}

/// Random m-subset of the rows of `source` without replacement; when
/// m exceeds n the extras are perturbed copies of resampled rows.
inline Matrix sample_inducing_rows(const Matrix &source, Index m, std::mt19937_64 &rng,
                                   std::vector<std::string> &warnings) {
  const Index n = source.rows();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  for (Index i = 0; i < std::min(m, n); ++i) {
    std::uniform_int_distribution<Index> pick(i, n - 1);
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(pick(rng))]);
  }
  Matrix z(m, source.cols());
  for (Index i = 0; i < std::min(m, n); ++i) z.row(i) = source.row(order[static_cast<std::size_t>(i)]);
  if (m > n) {
    warnings.push_back("more inducing points than data points; extras are jittered resamples");
    const Vector sd = column_variances(source).array().sqrt().max(1e-3).matrix();
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (Index i = n; i < m; ++i) {
      std::uniform_int_distribution<Index> pick(0, n - 1);
      z.row(i) = source.row(pick(rng));
      for (Index c = 0; c < source.cols(); ++c) z(i, c) += 0.01 * sd(c) * gauss(rng);
    }
  }
  return z;
}

struct FitProblem {
  std::vector<DataPoint> points;
  Mode mode = Mode::regression;
  ParamBlocks blocks;  // initial values; clamped blocks stay at these
  Index m = 0, q = 0;
};

inline FittedModel run_fit(FitProblem problem, const FitOptions &opts,
                           std::vector<std::string> warnings) {
  const Index n = static_cast<Index>(problem.points.size());
  const Index q = problem.q;
  const bool gplvm = problem.mode == Mode::gplvm;

  Cluster cluster(problem.points, opts.workers, opts.threads);
  FailureInjector injector(opts.failure_rate, opts.seed ^ 0x9e3779b97f4a7c15ULL);
  ParamLayout layout(problem.m, q, gplvm ? n : 0, opts.optimize_inducing,
                     opts.optimize_hyperparams, opts.optimize_noise, opts.optimize_embeddings);

  ParamBlocks current = problem.blocks;
  int last_alive = opts.workers;
  const auto rejected = [&] {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return std::pair<double, Vector>{nan, Vector::Constant(layout.size(), nan)};
  };
  auto objective = [&](const Vector &x) -> std::pair<double, Vector> {
    ParamBlocks b = current;
    layout.unpack(x, b);
    const std::vector<bool> failed = injector.next(cluster.worker_count());
    IterationOutcome outcome;
    try {
      GlobalParams params(b.inducing(), b.theta(), b.beta());
      if (gplvm) {
        const Matrix s_nat = b.log_s.array().exp();
        outcome = cluster.gplvm_iteration(params, b.mu, s_nat, failed);
      } else {
        outcome = cluster.regression_iteration(params, failed);
      }
    } catch (const SingularKernelError &) {
      return rejected();  // unusable trial point
    } catch (const ContractError &) {
      return rejected();  // over/underflowed trial parameters
    }
    last_alive = cluster.last_alive_count();
    if (!outcome.report) return rejected();  // iteration skipped: all workers failed
    Vector grad = layout.pack_bound_gradient(*outcome.report, b);
    return {-outcome.report->elbo, -grad};
  };

  std::vector<FitTracePoint> trace;
  auto iter_start = std::chrono::steady_clock::now();
  auto observer = [&](int iter, double f, double grad_inf) {
    const auto now = std::chrono::steady_clock::now();
    FitTracePoint pt;
    pt.iter = iter;
    pt.elbo = -f;
    pt.grad_norm = grad_inf;
    pt.alive_workers = last_alive;
    pt.elapsed_ms = std::chrono::duration<double, std::milli>(now - iter_start).count();
    iter_start = now;
    trace.push_back(pt);
  };

  ScgOptions scg_opts;
  scg_opts.max_iters = static_cast<int>(opts.max_iters);
  scg_opts.grad_tol = opts.grad_tol;
  scg_opts.value_tol = opts.value_tol;

  Vector x_final = layout.pack(current);
  if (opts.max_iters > 0 && layout.size() > 0) {
    const ScgResult result = scg_minimize(objective, x_final, scg_opts, observer);
    x_final = result.x;
  }
  layout.unpack(x_final, current);

  // Clean final evaluation and the optimal q(u) at the returned parameters.
  std::vector<DataPoint> final_points = problem.points;
  if (gplvm) {
    const Matrix s_nat = current.log_s.array().exp();
    for (Index i = 0; i < n; ++i)
      final_points[static_cast<std::size_t>(i)].embedding =
          VariationalEmbedding(current.mu.row(i).transpose(), s_nat.row(i).transpose());
  }
  const InducingSet inducing = current.inducing();
  const KernelHyperparams theta = current.theta();
  const SufficientStats stats = accumulate_stats(final_points, inducing, theta);
  const double beta = current.beta();

  FittedModel model;
  model.mode = problem.mode;
  model.z = current.z;
  model.log_sigma_f_sq = current.log_sigma_f_sq;
  model.log_alpha = current.log_alpha;
  model.log_beta = current.log_beta;
  model.qu = optimal_qu(stats, inducing, theta, beta);
  if (gplvm) {
    model.mu = current.mu;
    model.s = current.log_s.array().exp();
  }
  model.elbo = bound_value(compute_bound_terms(stats, inducing, theta, beta), stats, beta);
  model.seed = opts.seed;
  model.trace = std::move(trace);
  model.warnings = std::move(warnings);
  return model;
}

}  // namespace detail

/// Sparse GP regression: Z initialized to a random subset of X, ARD
/// precisions to the inverse per-dimension input variances, signal
/// variance to the variance of Y, beta to 100 / var(Y).
inline FittedModel fit_sparse_gp(const Dataset &data, Index m, const FitOptions &opts = {}) {
  data.validate();
  require(data.x.has_value(), "fit_sparse_gp: dataset has no inputs");
  require(m >= 1, "fit_sparse_gp: need at least one inducing point");
  const Matrix &x = *data.x;
  const Index n = data.n();
  const Index q = x.cols();

  std::vector<std::string> warnings;
  if (m > n) warnings.push_back("m > n: more inducing points than data");
  std::mt19937_64 rng(opts.seed);

  double var_y = detail::pooled_variance(data.y);
  if (var_y < 1e-12) {
    warnings.push_back("outputs have (near-)zero variance; falling back to unit scales");
    var_y = 1.0;
  }
  const double sf2 = opts.initial_sigma_f_sq.value_or(var_y);
  const double beta = opts.initial_beta.value_or(100.0 / var_y);
  Vector alpha;
  if (opts.initial_alpha) {
    alpha = *opts.initial_alpha;
  } else {
    alpha = detail::column_variances(x).array().max(1e-12).inverse().matrix();
  }

  detail::FitProblem problem;
  problem.mode = Mode::regression;
  problem.m = m;
  problem.q = q;
  problem.blocks.z =
      opts.initial_z ? *opts.initial_z : detail::sample_inducing_rows(x, m, rng, warnings);
  problem.blocks.log_sigma_f_sq = std::log(sf2);
  problem.blocks.log_alpha = alpha.array().log();
  problem.blocks.log_beta = std::log(beta);
  problem.points.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    problem.points.push_back({data.y.row(i), VariationalEmbedding::at_point(x.row(i).transpose())});
  return detail::run_fit(std::move(problem), opts, std::move(warnings));
}

/// Bayesian GPLVM: embeddings initialized by PCA (or the provided
/// overrides), Z to a random subset of the initial embedding means.
/// All-zero initial variances clamp the embeddings to deltas and route the
/// fit through the regression protocol (the zero-variance special case).
inline FittedModel fit_gplvm(const Dataset &data, Index q, Index m, const FitOptions &opts = {}) {
  data.validate();
  require(!data.x.has_value(), "fit_gplvm: dataset already has inputs; use fit_sparse_gp");
  require(q >= 1 && m >= 1, "fit_gplvm: latent dimension and inducing count must be positive");
  const Index n = data.n();

  std::vector<std::string> warnings;
  std::mt19937_64 rng(opts.seed);

  Matrix mu0, s0;
  if (opts.initial_mu) {
    mu0 = *opts.initial_mu;
    s0 = opts.initial_s ? *opts.initial_s : Matrix::Constant(n, q, 0.1);
  } else {
    const auto embeddings = init_embeddings(data.y, q);
    mu0.resize(n, q);
    s0.resize(n, q);
    for (Index i = 0; i < n; ++i) {
      mu0.row(i) = embeddings[static_cast<std::size_t>(i)].mu.transpose();
      s0.row(i) = embeddings[static_cast<std::size_t>(i)].s.transpose();
    }
  }
  require(mu0.rows() == n && mu0.cols() == q && s0.rows() == n && s0.cols() == q,
          "fit_gplvm: embedding initializers have the wrong shape");

  double var_y = detail::pooled_variance(data.y);
  if (var_y < 1e-12) {
    warnings.push_back("outputs have (near-)zero variance; falling back to unit scales");
    var_y = 1.0;
  }
  const double sf2 = opts.initial_sigma_f_sq.value_or(var_y);
  const double beta = opts.initial_beta.value_or(100.0 / var_y);
  const Vector alpha = opts.initial_alpha.value_or(Vector::Ones(q));

  detail::FitProblem problem;
  problem.m = m;
  problem.q = q;
  problem.blocks.z =
      opts.initial_z ? *opts.initial_z : detail::sample_inducing_rows(mu0, m, rng, warnings);
  problem.blocks.log_sigma_f_sq = std::log(sf2);
  problem.blocks.log_alpha = alpha.array().log();
  problem.blocks.log_beta = std::log(beta);

  const bool deltas = s0.isZero(0.0);
  if (deltas) {
    require(!opts.optimize_embeddings,
            "fit_gplvm: zero-variance embeddings must be clamped (optimize_embeddings = false)");
    problem.mode = Mode::regression;
  } else {
    require((s0.array() > 0.0).all(),
            "fit_gplvm: initial variances must be all positive or all zero");
    problem.mode = Mode::gplvm;
    problem.blocks.mu = mu0;
    problem.blocks.log_s = s0.array().log();
  }
  problem.points.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    problem.points.push_back(
        {data.y.row(i), VariationalEmbedding(mu0.row(i).transpose(), s0.row(i).transpose())});
  return detail::run_fit(std::move(problem), opts, std::move(warnings));
}

struct PredictResult {
  Matrix mean;  // n* x d
  Vector var;   // n*, shared across output dimensions
};

/// Posterior prediction through the inducing points:
///   mean = K*m K_mm^{-1} qu.mean
///   var  = k** - diag(K*m K_mm^{-1} K_m*) + diag(K*m K_mm^{-1} qu.cov K_mm^{-1} K_m*)
/// with beta^{-1} observation noise added on request.
inline PredictResult predict(const FittedModel &model, const Matrix &xstar,
                             bool include_noise = false) {
  require(model.fitted(), "predict: model is not fitted");
  require(xstar.cols() == model.z.cols(), "predict: query dimension must match the model");
  const KernelHyperparams theta = model.theta();
  const InducingSet inducing = model.inducing();
  const Matrix kmm = jittered_kmm(inducing, theta);
  Eigen::LLT<Matrix> llt(kmm);
  if (llt.info() != Eigen::Success) throw SingularKernelError("K_mm");

  const Matrix ksm = kernel_matrix(xstar, model.z, theta);  // n* x m
  const Matrix t = llt.solve(ksm.transpose());              // m x n*

  PredictResult result;
  result.mean = ksm * llt.solve(model.qu.mean);
  const Vector q1 = ksm.cwiseProduct(t.transpose()).rowwise().sum();
  const Vector q2 = (t.transpose() * model.qu.cov).cwiseProduct(t.transpose()).rowwise().sum();
  result.var = (theta.sigma_f_sq() - q1.array() + q2.array()).matrix();
  if (include_noise) result.var.array() += 1.0 / model.beta();
  return result;
}

}  // namespace dvgp
