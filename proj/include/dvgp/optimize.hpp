#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dvgp/elbo.hpp"
#include "dvgp/kernel.hpp"
#include "dvgp/types.hpp"

namespace dvgp {

/// The optimization variables in their natural shapes. Positivity-bound
/// quantities (sigma_f^2, alpha, beta, s) live in log space; gradients are
/// chained through the exponential when packed.
struct ParamBlocks {
  Matrix z;
  double log_sigma_f_sq = 0.0;
  Vector log_alpha;
  double log_beta = 0.0;
  Matrix mu;     // n x q in GPLVM mode, 0 x 0 otherwise
  Matrix log_s;  // n x q in GPLVM mode, 0 x 0 otherwise

  KernelHyperparams theta() const {
    return KernelHyperparams::from_log(log_sigma_f_sq, log_alpha);
  }
  double beta() const { return std::exp(log_beta); }
  InducingSet inducing() const { return InducingSet(z); }
};

struct BlockSpan {
  std::string name;
  Index offset;
  Index size;
};

/// Flat view over the selected parameter blocks, in the fixed order
/// vec(Z), log sigma_f^2, log alpha, log beta, vec(mu), vec(log s)
/// (matrices vectorized column-major). pack/unpack round-trip exactly;
/// blocks() is the index map.
class ParamLayout {
 public:
  ParamLayout(Index m, Index q, Index n_embeddings, bool opt_z = true, bool opt_hyp = true,
              bool opt_beta = true, bool opt_embeddings = true)
      : m_(m), q_(q), n_(n_embeddings), opt_z_(opt_z), opt_hyp_(opt_hyp), opt_beta_(opt_beta),
        opt_embeddings_(opt_embeddings && n_embeddings > 0) {
    require(m >= 1 && q >= 1 && n_embeddings >= 0, "ParamLayout: invalid dimensions");
    Index off = 0;
    auto add = [&](const std::string &name, Index size) {
      spans_.push_back({name, off, size});
      off += size;
    };
    if (opt_z_) add("z", m_ * q_);
    if (opt_hyp_) {
      add("log_sigma_f_sq", 1);
      add("log_alpha", q_);
    }
    if (opt_beta_) add("log_beta", 1);
    if (opt_embeddings_) {
      add("mu", n_ * q_);
      add("log_s", n_ * q_);
    }
    total_ = off;
  }

  Index size() const { return total_; }
  const std::vector<BlockSpan> &blocks() const { return spans_; }

  Vector pack(const ParamBlocks &p) const {
    Vector x(total_);
    for (const BlockSpan &b : spans_) {
      auto seg = x.segment(b.offset, b.size);
      if (b.name == "z")
        seg = Eigen::Map<const Vector>(p.z.data(), b.size);
      else if (b.name == "log_sigma_f_sq")
        seg(0) = p.log_sigma_f_sq;
      else if (b.name == "log_alpha")
        seg = p.log_alpha;
      else if (b.name == "log_beta")
        seg(0) = p.log_beta;
      else if (b.name == "mu")
        seg = Eigen::Map<const Vector>(p.mu.data(), b.size);
      else
        seg = Eigen::Map<const Vector>(p.log_s.data(), b.size);
    }
    return x;
  }

  /// Overwrites the selected blocks of `p` from the flat vector; blocks not
  /// under optimization keep their current values.
  void unpack(const Vector &x, ParamBlocks &p) const {
    require(x.size() == total_, "ParamLayout::unpack: size mismatch");
    for (const BlockSpan &b : spans_) {
      const auto seg = x.segment(b.offset, b.size);
      if (b.name == "z")
        Eigen::Map<Vector>(p.z.data(), b.size) = seg;
      else if (b.name == "log_sigma_f_sq")
        p.log_sigma_f_sq = seg(0);
      else if (b.name == "log_alpha")
        p.log_alpha = seg;
      else if (b.name == "log_beta")
        p.log_beta = seg(0);
      else if (b.name == "mu")
        Eigen::Map<Vector>(p.mu.data(), b.size) = seg;
      else
        Eigen::Map<Vector>(p.log_s.data(), b.size) = seg;
    }
  }

  /// Gradient of the bound w.r.t. the packed (log-space) coordinates.
  Vector pack_bound_gradient(const BoundReport &report, const ParamBlocks &at) const {
    Vector g(total_);
    for (const BlockSpan &b : spans_) {
      auto seg = g.segment(b.offset, b.size);
      if (b.name == "z")
        seg = Eigen::Map<const Vector>(report.grad_z.data(), b.size);
      else if (b.name == "log_sigma_f_sq")
        seg(0) = std::exp(at.log_sigma_f_sq) * report.grad_theta(0);
      else if (b.name == "log_alpha")
        seg = at.log_alpha.array().exp() * report.grad_theta.tail(q_).array();
      else if (b.name == "log_beta")
        seg(0) = std::exp(at.log_beta) * report.grad_beta;
      else if (b.name == "mu")
        seg = Eigen::Map<const Vector>(report.grad_mu.data(), b.size);
      else {
        const Matrix chained = at.log_s.array().exp() * report.grad_s.array();
        seg = Eigen::Map<const Vector>(chained.data(), b.size);
      }
    }
    return g;
  }

 private:
  Index m_, q_, n_;
  bool opt_z_, opt_hyp_, opt_beta_, opt_embeddings_;
  std::vector<BlockSpan> spans_;
  Index total_ = 0;
};

/// Central differences with per-coordinate step h * max(1, |x_i|).
/// Coordinates whose perturbed evaluations are non-finite are marked NaN.
template <typename F>
Vector finite_diff_grad(F &&f, const Vector &x, double h_scale) {
  Vector g(x.size());
  Vector xp = x;
  for (Index i = 0; i < x.size(); ++i) {
    const double h = h_scale * std::max(1.0, std::abs(x(i)));
    xp(i) = x(i) + h;
    const double fp = f(xp);
    xp(i) = x(i) - h;
    const double fm = f(xp);
    xp(i) = x(i);
    g(i) = (std::isfinite(fp) && std::isfinite(fm))
               ? (fp - fm) / (2.0 * h)
               : std::numeric_limits<double>::quiet_NaN();
  }
  return g;
}

enum class ScgStop { max_iters, grad_tol, value_tol, stalled };

struct ScgOptions {
  int max_iters = 500;
  double grad_tol = 1e-4;
  double value_tol = 1e-9;
};

struct ScgResult {
  Vector x;
  double value = 0.0;
  std::vector<double> trace;  // objective value per iteration, best-seen
  int iterations = 0;
  ScgStop reason = ScgStop::max_iters;
};

/// Scaled conjugate gradients (Moller-style trust-region scaling) for
/// minimizing a smooth objective. Curvature along the search direction is
/// estimated from an exact gradient evaluation at a perturbed point, never
/// from objective differences. Non-finite trial evaluations reject the
/// step and raise the scaling parameter.
template <typename Objective, typename Observer>
ScgResult scg_minimize(Objective &&objective, const Vector &x0, const ScgOptions &opts,
                       Observer &&observe) {
  const Index dim = x0.size();
  require(dim >= 1, "scg_minimize: empty parameter vector");

  Vector x = x0;
  auto [f, g] = objective(x);
  if (!std::isfinite(f) || !g.allFinite())
    throw ContractError("scg_minimize: objective is not finite at the starting point");

  Vector r = -g;
  Vector p = r;
  double lambda = 1e-6, lambda_bar = 0.0;
  bool success = true;
  double delta_raw = 0.0, p_norm2 = 0.0;
  constexpr double kSigma0 = 1e-4;
  constexpr double kLambdaCap = 1e100;

  ScgResult result;
  result.x = x;
  result.value = f;
  result.trace.push_back(f);

  for (int k = 1; k <= opts.max_iters; ++k) {
    result.iterations = k;
    if (r.lpNorm<Eigen::Infinity>() <= opts.grad_tol) {
      result.reason = ScgStop::grad_tol;
      result.iterations = k - 1;
      break;
    }
    if (success) {
      p_norm2 = p.squaredNorm();
      if (p_norm2 == 0.0) {
        result.reason = ScgStop::grad_tol;
        break;
      }
      const double sigma = kSigma0 / std::sqrt(p_norm2);
      auto [fs, gs] = objective(x + sigma * p);
      (void)fs;
      // Unknown curvature (non-finite probe) falls back to the pure
      // trust-region step delta = lambda |p|^2.
      delta_raw = gs.allFinite() ? p.dot(gs + r) / sigma : 0.0;
    }
    double delta = delta_raw + (lambda - lambda_bar) * p_norm2;
    if (delta <= 0.0) {
      lambda_bar = 2.0 * (lambda - delta / p_norm2);
      delta = -delta + lambda * p_norm2;
      lambda = lambda_bar;
    }
    const double mu = p.dot(r);
    const double alpha = mu / delta;

    auto [f_new, g_new] = objective(x + alpha * p);
    const bool trial_ok = std::isfinite(f_new) && g_new.allFinite();
    const double comparison = trial_ok ? 2.0 * delta * (f - f_new) / (mu * mu) : -1.0;

    if (comparison >= 0.0) {
      const double improvement = f - f_new;
      x += alpha * p;
      f = f_new;
      const Vector r_old = r;
      r = -g_new;
      lambda_bar = 0.0;
      success = true;
      if (f < result.value) {
        result.value = f;
        result.x = x;
      }
      if (k % static_cast<int>(dim) == 0) {
        p = r;  // periodic restart
      } else {
        const double beta_cg = (r.squaredNorm() - r.dot(r_old)) / mu;
        p = r + beta_cg * p;
      }
      if (comparison >= 0.75) lambda = std::max(lambda * 0.25, 1e-15);
      result.trace.push_back(f);
      observe(k, f, r.lpNorm<Eigen::Infinity>());
      if (improvement < opts.value_tol * std::max(1.0, std::abs(f))) {
        result.reason = ScgStop::value_tol;
        break;
      }
    } else {
      lambda_bar = lambda;
      success = false;
      result.trace.push_back(f);
      observe(k, f, r.lpNorm<Eigen::Infinity>());
    }
    if (comparison < 0.25) lambda += delta * (1.0 - comparison) / p_norm2;
    if (!std::isfinite(lambda) || lambda > kLambdaCap) {
      result.reason = ScgStop::stalled;
      break;
    }
  }
  return result;
}

template <typename Objective>
ScgResult scg_minimize(Objective &&objective, const Vector &x0, const ScgOptions &opts = {}) {
  return scg_minimize(std::forward<Objective>(objective), x0, opts,
                      [](int, double, double) {});
}

}  // namespace dvgp
