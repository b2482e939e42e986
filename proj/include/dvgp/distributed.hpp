#pragma once

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <future>
#include <optional>
#include <random>
#include <thread>
#include <utility>
#include <vector>

#include "dvgp/elbo.hpp"
#include "dvgp/stats.hpp"
#include "dvgp/types.hpp"

namespace dvgp {

enum class Mode { regression, gplvm };

/// Contiguous range of point indices owned by one worker.
struct Shard {
  Index begin = 0;
  Index end = 0;

  Index size() const { return end - begin; }
  bool empty() const { return begin == end; }
};

namespace detail {

inline bool is_power_of_two(int x) { return x > 0 && (x & (x - 1)) == 0; }

inline void halve_ranges(std::vector<Shard> &ranges, int levels) {
  for (int l = 0; l < levels; ++l) {
    std::vector<Shard> next;
    next.reserve(ranges.size() * 2);
    for (const Shard &r : ranges) {
      const Index mid = r.begin + (r.size() + 1) / 2;
      next.push_back({r.begin, std::min(mid, r.end)});
      next.push_back({std::min(mid, r.end), r.end});
    }
    ranges = std::move(next);
  }
}

}  // namespace detail

/// Near-equal contiguous shards. Power-of-two worker counts cut the fixed
/// reduction tree of stats.hpp, so results are bit-identical across
/// 1, 2, 4, 8, ... workers; other counts use the plain balanced split.
inline std::vector<Shard> partition(Index n, int n_workers) {
  require(n_workers >= 1, "partition: need at least one worker");
  require(n >= 0, "partition: negative point count");
  if (detail::is_power_of_two(n_workers)) {
    std::vector<Shard> ranges{{0, n}};
    int levels = 0;
    for (int w = n_workers; w > 1; w /= 2) ++levels;
    detail::halve_ranges(ranges, levels);
    return ranges;
  }
  std::vector<Shard> shards;
  shards.reserve(static_cast<std::size_t>(n_workers));
  const Index base = n / n_workers;
  const Index extra = n % n_workers;
  Index at = 0;
  for (int w = 0; w < n_workers; ++w) {
    const Index len = base + (w < extra ? 1 : 0);
    shards.push_back({at, at + len});
    at += len;
  }
  return shards;
}

/// Parameters shared by every worker: inducing locations, kernel
/// hyperparameters, noise precision.
struct GlobalParams {
  InducingSet inducing;
  KernelHyperparams theta;
  double beta;

  GlobalParams(InducingSet inducing_in, KernelHyperparams theta_in, double beta_in)
      : inducing(std::move(inducing_in)), theta(std::move(theta_in)), beta(beta_in) {
    require(beta > 0.0, "GlobalParams: beta must be positive");
    require(inducing.input_dim() == theta.input_dim(),
            "GlobalParams: inducing dimension must match the kernel dimension");
  }
};

/// Per-iteration record emitted by the iteration drivers.
struct IterationTrace {
  long iteration = 0;
  double elbo = std::numeric_limits<double>::quiet_NaN();
  std::vector<bool> alive;
  double elapsed_ms = 0.0;
};

/// Master -> workers, phase 1. log_theta is [log sigma_f^2, log alpha...].
/// In GPLVM mode the message also carries the worker's own embedding slice
/// (the joint optimizer updates local variables between iterations).
struct BroadcastParams {
  long iter = 0;
  Matrix z;
  Vector log_theta;
  double log_beta = 0.0;
  Mode mode = Mode::regression;
  Matrix mu;  // shard_size x q, GPLVM only
  Matrix s;   // shard_size x q, GPLVM only
};

/// Workers -> master, phase 1: the shard's partial sums. Regression mode
/// additionally ships the moment tensors the master needs to assemble the
/// Z and alpha gradients without a second round trip.
struct PartialStats {
  long iter = 0;
  long shard_id = 0;
  SufficientStats stats;
  std::optional<RegressionMoments> moments;
};

/// Master -> workers, phase 2 (GPLVM): the reduced aggregates
/// A = K_mm + beta * sum_psi2 and B = sum_psi1t_y. The Cholesky factor of
/// A is optional; workers refactorize when it is absent.
struct BroadcastAggregates {
  long iter = 0;
  Matrix a;
  Matrix b;
  std::optional<Matrix> chol_a;  // lower-triangular factor
};

/// Workers -> master, phase 2 (GPLVM): the shard's contribution to the
/// global gradient blocks plus the local embedding gradients.
struct PartialGrads {
  long iter = 0;
  long shard_id = 0;
  Matrix grad_z;
  Vector grad_alpha;
  Matrix grad_mu;  // shard_size x q
  Matrix grad_s;   // shard_size x q
};

namespace detail {

inline Matrix chol_solve(const Matrix &l, const Matrix &rhs) {
  Matrix y = l.template triangularView<Eigen::Lower>().solve(rhs);
  return l.transpose().template triangularView<Eigen::Upper>().solve(y);
}

}  // namespace detail

/// One worker: owns its contiguous shard of (Y_i, embedding_i) rows and
/// answers broadcast messages. Pure message-in / message-out; the only
/// mutable state is the embedding slice refreshed by phase-1 broadcasts
/// and the current iteration number used to reject stale messages.
class Worker {
 public:
  Worker(long id, Shard shard, std::vector<DataPoint> points)
      : id_(id), shard_(shard), points_(std::move(points)) {
    require(static_cast<Index>(points_.size()) == shard_.size(),
            "Worker: shard size disagrees with the data slice");
  }

  long id() const { return id_; }
  const Shard &shard() const { return shard_; }

  PartialStats compute_stats(const BroadcastParams &msg) {
    require(msg.iter > iter_, "worker " + std::to_string(id_) +
                                  ": phase-1 message for iteration " + std::to_string(msg.iter) +
                                  " rejected (already at " + std::to_string(iter_) + ")");
    iter_ = msg.iter;
    mode_ = msg.mode;
    theta_.emplace(KernelHyperparams::from_log(msg.log_theta(0), msg.log_theta.tail(msg.log_theta.size() - 1)));
    inducing_.emplace(msg.z);
    beta_ = std::exp(msg.log_beta);
    if (msg.mode == Mode::gplvm && msg.mu.size() > 0) {
      require(msg.mu.rows() == shard_.size() && msg.s.rows() == shard_.size(),
              "worker " + std::to_string(id_) + ": embedding slice has the wrong row count");
      for (Index i = 0; i < shard_.size(); ++i)
        points_[static_cast<std::size_t>(i)].embedding =
            VariationalEmbedding(msg.mu.row(i).transpose(), msg.s.row(i).transpose());
    }

    PartialStats reply;
    reply.iter = iter_;
    reply.shard_id = id_;
    reply.stats = accumulate_stats(points_, 0, shard_.size(), *inducing_, *theta_);
    if (msg.mode == Mode::regression)
      reply.moments = accumulate_moments(points_, 0, shard_.size(), *inducing_, *theta_);
    return reply;
  }

  PartialGrads compute_grads(const BroadcastAggregates &msg) const {
    require(msg.iter == iter_, "worker " + std::to_string(id_) +
                                   ": phase-2 message for iteration " + std::to_string(msg.iter) +
                                   " rejected (expected " + std::to_string(iter_) + ")");
    require(theta_ && inducing_, "worker " + std::to_string(id_) + ": phase 2 before phase 1");

    const Index m = inducing_->count();
    const Index q = inducing_->input_dim();
    const Index d = msg.b.cols();
    const Matrix chol =
        msg.chol_a ? *msg.chol_a : Matrix(Eigen::LLT<Matrix>(msg.a).matrixL());

    // Re-derive the bound weights from the broadcast aggregates.
    const Matrix a_inv_b = detail::chol_solve(chol, msg.b);
    const Matrix a_inv = detail::chol_solve(chol, Matrix::Identity(m, m));
    const Matrix kmm = jittered_kmm(*inducing_, *theta_);
    const Matrix kmm_inv = Eigen::LLT<Matrix>(kmm).solve(Matrix::Identity(m, m));
    const double dd = static_cast<double>(d);
    const Matrix w1 = beta_ * beta_ * a_inv_b;
    const Matrix w2 = 0.5 * beta_ * dd * (kmm_inv - a_inv) -
                      0.5 * beta_ * beta_ * beta_ * (a_inv_b * a_inv_b.transpose());

    PartialGrads reply;
    reply.iter = iter_;
    reply.shard_id = id_;
    reply.grad_mu.resize(shard_.size(), q);
    reply.grad_s.resize(shard_.size(), q);
    if (shard_.empty()) {
      reply.grad_z = Matrix::Zero(m, q);
      reply.grad_alpha = Vector::Zero(q);
      return reply;
    }

    struct ZAlpha {
      Matrix z;
      Vector alpha;
    };
    ZAlpha total = reduce_tree<ZAlpha>(
        0, shard_.size(),
        [&](Index i) {
          const PointGrads pg = point_grad_contributions(points_[static_cast<std::size_t>(i)],
                                                         *inducing_, *theta_, w1, w2);
          if (pg.mu.size() == q) {
            reply.grad_mu.row(i) = pg.mu.transpose();
            reply.grad_s.row(i) = pg.s.transpose();
          } else {
            reply.grad_mu.row(i).setZero();
            reply.grad_s.row(i).setZero();
          }
          return ZAlpha{pg.z, pg.alpha};
        },
        [](ZAlpha a, const ZAlpha &b) {
          a.z += b.z;
          a.alpha += b.alpha;
          return a;
        });
    reply.grad_z = std::move(total.z);
    reply.grad_alpha = std::move(total.alpha);
    return reply;
  }

 private:
  long id_;
  Shard shard_;
  std::vector<DataPoint> points_;
  long iter_ = 0;
  Mode mode_ = Mode::regression;
  std::optional<KernelHyperparams> theta_;
  std::optional<InducingSet> inducing_;
  double beta_ = 1.0;
};

/// Reproducible stream of per-worker failure masks: i.i.d. Bernoulli(rate)
/// per worker per iteration. true = failed.
class FailureInjector {
 public:
  FailureInjector(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {
    require(rate >= 0.0 && rate <= 1.0, "FailureInjector: rate must lie in [0, 1]");
  }

  std::vector<bool> next(int n_workers) {
    std::vector<bool> failed(static_cast<std::size_t>(n_workers));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto &&flag : failed) flag = u(rng_) < rate_;
    return failed;
  }

 private:
  double rate_;
  std::mt19937_64 rng_;
};

inline int thread_budget_from_env() {
  if (const char *env = std::getenv("DVGP_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

struct IterationOutcome {
  std::optional<BoundReport> report;  // empty: iteration skipped (all workers failed)
  IterationTrace trace;
};

/// Master plus its pool of in-process workers. All communication goes
/// through the message structs above; the master reduces replies pairwise
/// in shard order, so failure-free results do not depend on the worker
/// count (bit-exactly so for power-of-two counts).
class Cluster {
 public:
  Cluster(std::vector<DataPoint> points, int n_workers, int thread_budget = 0)
      : n_(static_cast<Index>(points.size())),
        shards_(partition(static_cast<Index>(points.size()), n_workers)),
        threads_(thread_budget >= 1 ? thread_budget : thread_budget_from_env()) {
    require(!points.empty(), "Cluster: need at least one data point");
    for (std::size_t w = 0; w < shards_.size(); ++w) {
      const Shard &sh = shards_[w];
      std::vector<DataPoint> slice(points.begin() + sh.begin, points.begin() + sh.end);
      workers_.emplace_back(static_cast<long>(w), sh, std::move(slice));
    }
  }

  int worker_count() const { return static_cast<int>(workers_.size()); }
  Index point_count() const { return n_; }
  const std::vector<Shard> &shards() const { return shards_; }
  int last_alive_count() const { return last_alive_; }

  IterationOutcome regression_iteration(const GlobalParams &params,
                                        const std::vector<bool> &failed) {
    return run(params, nullptr, nullptr, failed);
  }

  IterationOutcome gplvm_iteration(const GlobalParams &params, const Matrix &mu, const Matrix &s,
                                   const std::vector<bool> &failed) {
    require(mu.rows() == n_ && s.rows() == n_,
            "gplvm_iteration: embeddings must cover every data point");
    return run(params, &mu, &s, failed);
  }

 private:
  IterationOutcome run(const GlobalParams &params, const Matrix *mu, const Matrix *s,
                       const std::vector<bool> &failed) {
    require(static_cast<int>(failed.size()) == worker_count(),
            "iteration: failure mask length must equal the worker count");
    const auto start = std::chrono::steady_clock::now();
    const Mode mode = mu ? Mode::gplvm : Mode::regression;
    ++iteration_;

    IterationOutcome out;
    out.trace.iteration = iteration_;
    out.trace.alive.resize(failed.size());
    for (std::size_t w = 0; w < failed.size(); ++w) out.trace.alive[w] = !failed[w];
    last_alive_ = static_cast<int>(std::count(out.trace.alive.begin(), out.trace.alive.end(), true));

    const bool all_failed =
        std::all_of(failed.begin(), failed.end(), [](bool f) { return f; });
    if (all_failed) {
      out.trace.elapsed_ms = elapsed_since(start);
      return out;  // skipped; parameters untouched by the caller
    }

    // Phase 1: broadcast globals, collect partial statistics.
    std::vector<std::optional<PartialStats>> replies(workers_.size());
    parallel_for_alive(failed, [&](std::size_t w) {
      BroadcastParams msg;
      msg.iter = iteration_;
      msg.z = params.inducing.z;
      msg.log_theta.resize(1 + params.theta.input_dim());
      msg.log_theta(0) = params.theta.log_sigma_f_sq();
      msg.log_theta.tail(params.theta.input_dim()) = params.theta.log_alpha();
      msg.log_beta = std::log(params.beta);
      msg.mode = mode;
      if (mode == Mode::gplvm) {
        const Shard &sh = shards_[w];
        msg.mu = mu->middleRows(sh.begin, sh.size());
        msg.s = s->middleRows(sh.begin, sh.size());
      }
      replies[w] = workers_[w].compute_stats(msg);
    });

    std::vector<std::optional<SufficientStats>> stat_parts(workers_.size());
    std::vector<std::optional<RegressionMoments>> moment_parts(workers_.size());
    for (std::size_t w = 0; w < workers_.size(); ++w) {
      if (!replies[w]) continue;
      require(replies[w]->iter == iteration_ && replies[w]->shard_id == static_cast<long>(w),
              "master: stale phase-1 reply rejected");
      if (replies[w]->stats.n_points == 0) continue;  // empty shard: exact identity
      stat_parts[w] = std::move(replies[w]->stats);
      if (replies[w]->moments) moment_parts[w] = std::move(*replies[w]->moments);
    }
    auto stats = merge_partials(std::move(stat_parts),
                                [](SufficientStats a, const SufficientStats &b) { return a + b; });
    if (!stats) {
      out.trace.elapsed_ms = elapsed_since(start);
      return out;  // only empty shards survived
    }

    const BoundTerms terms = compute_bound_terms(*stats, params.inducing, params.theta, params.beta);

    BoundReport report;
    report.elbo = bound_value(terms, *stats, params.beta);
    report.grad_z = Matrix::Zero(params.inducing.count(), params.inducing.input_dim());
    report.grad_theta = Vector::Zero(1 + params.theta.input_dim());
    add_global_grad_parts(terms, *stats, params.inducing, params.theta, params.beta, report);

    if (mode == Mode::regression) {
      auto moments =
          merge_partials(std::move(moment_parts),
                         [](RegressionMoments a, const RegressionMoments &b) { return a + b; });
      add_regression_moment_grads(terms, *stats, *moments, params.inducing, params.theta, report);
    } else {
      // Phase 2: broadcast reduced aggregates, collect gradient partials.
      BroadcastAggregates agg;
      agg.iter = iteration_;
      agg.a = terms.a;
      agg.b = stats->sum_psi1t_y;
      agg.chol_a = Matrix(terms.a_llt.matrixL());

      std::vector<std::optional<PartialGrads>> grad_replies(workers_.size());
      parallel_for_alive(failed, [&](std::size_t w) {
        grad_replies[w] = workers_[w].compute_grads(agg);
      });

      report.grad_mu = Matrix::Zero(n_, params.inducing.input_dim());
      report.grad_s = Matrix::Zero(n_, params.inducing.input_dim());
      std::vector<std::optional<PartialGrads>> za_parts(workers_.size());
      for (std::size_t w = 0; w < workers_.size(); ++w) {
        if (!grad_replies[w]) continue;
        require(grad_replies[w]->iter == iteration_ &&
                    grad_replies[w]->shard_id == static_cast<long>(w),
                "master: stale phase-2 reply rejected");
        const Shard &sh = shards_[w];
        if (sh.empty()) continue;
        report.grad_mu.middleRows(sh.begin, sh.size()) = grad_replies[w]->grad_mu;
        report.grad_s.middleRows(sh.begin, sh.size()) = grad_replies[w]->grad_s;
        za_parts[w] = std::move(grad_replies[w]);
      }
      auto za = merge_partials(std::move(za_parts), [](PartialGrads a, const PartialGrads &b) {
        a.grad_z += b.grad_z;
        a.grad_alpha += b.grad_alpha;
        return a;
      });
      if (za) {
        report.grad_z += za->grad_z;
        report.grad_theta.tail(params.theta.input_dim()) += za->grad_alpha;
      }
    }

    out.report = std::move(report);
    out.trace.elbo = out.report->elbo;
    out.trace.elapsed_ms = elapsed_since(start);
    return out;
  }

  template <typename Fn>
  void parallel_for_alive(const std::vector<bool> &failed, Fn fn) {
    std::vector<std::size_t> alive;
    for (std::size_t w = 0; w < workers_.size(); ++w)
      if (!failed[w]) alive.push_back(w);
    if (threads_ <= 1 || alive.size() <= 1) {
      for (std::size_t w : alive) fn(w);
      return;
    }
    for (std::size_t at = 0; at < alive.size(); at += static_cast<std::size_t>(threads_)) {
      const std::size_t stop = std::min(alive.size(), at + static_cast<std::size_t>(threads_));
      std::vector<std::future<void>> batch;
      batch.reserve(stop - at);
      for (std::size_t i = at; i < stop; ++i)
        batch.push_back(std::async(std::launch::async, [&fn, w = alive[i]] { fn(w); }));
      for (auto &f : batch) f.get();
    }
  }

  static double elapsed_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
        .count();
  }

  Index n_;
  std::vector<Shard> shards_;
  std::vector<Worker> workers_;
  int threads_;
  long iteration_ = 0;
  int last_alive_ = 0;
};

}  // namespace dvgp
