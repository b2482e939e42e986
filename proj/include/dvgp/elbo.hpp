#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "dvgp/kernel.hpp"
#include "dvgp/psi.hpp"
#include "dvgp/stats.hpp"
#include "dvgp/types.hpp"

namespace dvgp {

/// Relative jitter added to the K_mm diagonal before every factorization.
constexpr double kJitterScale = 1e-6;

inline Matrix jittered_kmm(const InducingSet &inducing, const KernelHyperparams &theta) {
  Matrix kmm = kernel_matrix(inducing.z, inducing.z, theta);
  kmm.diagonal().array() += kJitterScale * theta.sigma_f_sq();
  return kmm;
}

/// Optimal Gaussian q(u) over inducing values; cov is shared across the
/// d output dimensions.
struct QuDistribution {
  Matrix mean;  // m x d
  Matrix cov;   // m x m, symmetric positive definite
};

/// Factorizations and gradient weights shared by the bound value and all
/// gradient blocks. K_mm here is always the jittered matrix; its jitter is
/// proportional to sigma_f^2, so d K_mm / d sigma_f^2 = K_mm / sigma_f^2
/// still holds exactly.
struct BoundTerms {
  Matrix kmm;                // jittered K_mm
  Eigen::LLT<Matrix> kmm_llt;
  Matrix a;                  // K_mm + beta * sum_psi2
  Eigen::LLT<Matrix> a_llt;
  double logdet_kmm = 0.0;
  double logdet_a = 0.0;
  Matrix a_inv_b;            // A^{-1} B, m x d
  double w0 = 0.0;           // dF / d sum_psi0
  Matrix w1;                 // dF / d sum_psi1t_y, m x d
  Matrix w2;                 // dF / d sum_psi2, m x m symmetric
  Matrix wk;                 // dF / d K_mm, m x m symmetric
};

namespace detail {

inline double logdet_from_llt(const Eigen::LLT<Matrix> &llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace detail

inline BoundTerms compute_bound_terms(const SufficientStats &stats, const InducingSet &inducing,
                                      const KernelHyperparams &theta, double beta) {
  require(stats.n_points >= 1, "compute_bound_terms: stats must cover at least one point");
  require(beta > 0.0, "compute_bound_terms: beta must be positive");
  require(stats.inducing_count() == inducing.count(),
          "compute_bound_terms: stats were accumulated for a different inducing count");
  const double d = static_cast<double>(stats.output_dim());

  BoundTerms t;
  t.kmm = jittered_kmm(inducing, theta);
  t.kmm_llt.compute(t.kmm);
  if (!t.kmm.allFinite() || t.kmm_llt.info() != Eigen::Success)
    throw SingularKernelError("K_mm");
  t.a = t.kmm + beta * stats.sum_psi2;
  t.a_llt.compute(t.a);
  if (!t.a.allFinite() || t.a_llt.info() != Eigen::Success) throw SingularKernelError("A");
  t.logdet_kmm = detail::logdet_from_llt(t.kmm_llt);
  t.logdet_a = detail::logdet_from_llt(t.a_llt);
  t.a_inv_b = t.a_llt.solve(stats.sum_psi1t_y);

  const Index m = inducing.count();
  const Matrix a_inv = t.a_llt.solve(Matrix::Identity(m, m));
  const Matrix kmm_inv = t.kmm_llt.solve(Matrix::Identity(m, m));
  const Matrix outer = t.a_inv_b * t.a_inv_b.transpose();  // A^{-1} B B^T A^{-1}

  t.w0 = -0.5 * beta * d;
  t.w1 = beta * beta * t.a_inv_b;
  t.w2 = 0.5 * beta * d * (kmm_inv - a_inv) - 0.5 * beta * beta * beta * outer;
  t.wk = 0.5 * d * (kmm_inv - a_inv) - 0.5 * beta * d * kmm_inv * stats.sum_psi2 * kmm_inv -
         0.5 * beta * beta * outer;
  return t;
}

inline double bound_value(const BoundTerms &t, const SufficientStats &stats, double beta) {
  const double d = static_cast<double>(stats.output_dim());
  const double n = static_cast<double>(stats.n_points);
  const double tr_kmm_inv_psi2 = t.kmm_llt.solve(stats.sum_psi2).trace();
  const double tr_bt_ainv_b = stats.sum_psi1t_y.cwiseProduct(t.a_inv_b).sum();
  return 0.5 * d * t.logdet_kmm - 0.5 * d * t.logdet_a +
         0.5 * n * d * std::log(beta / (2.0 * M_PI)) -
         0.5 * beta * (stats.sum_yy + d * stats.sum_psi0 - d * tr_kmm_inv_psi2) +
         0.5 * beta * beta * tr_bt_ainv_b - stats.sum_kl;
}

/// The factorized evidence lower bound
///   F = d/2 log|K_mm| - d/2 log|A| - nd/2 log(2 pi / beta)
///       - beta/2 (sum_yy + d sum_psi0 - d tr(K_mm^{-1} sum_psi2))
///       + beta^2/2 tr(B^T A^{-1} B) - sum_kl,
/// with A = K_mm + beta sum_psi2 and B = sum_psi1t_y.
inline double assemble_bound(const SufficientStats &stats, const InducingSet &inducing,
                             const KernelHyperparams &theta, double beta, Index output_dim) {
  require(output_dim == stats.output_dim(),
          "assemble_bound: output_dim disagrees with the accumulated statistics");
  const BoundTerms t = compute_bound_terms(stats, inducing, theta, beta);
  return bound_value(t, stats, beta);
}

/// q(u) = N(mean, cov) with cov = K_mm A^{-1} K_mm and mean = beta K_mm A^{-1} B.
inline QuDistribution optimal_qu(const SufficientStats &stats, const InducingSet &inducing,
                                 const KernelHyperparams &theta, double beta) {
  const BoundTerms t = compute_bound_terms(stats, inducing, theta, beta);
  QuDistribution qu;
  qu.mean = beta * t.kmm * t.a_inv_b;
  Matrix cov = t.kmm * t.a_llt.solve(t.kmm);
  qu.cov = 0.5 * (cov + cov.transpose());
  return qu;
}

/// KL(q(X_i) || p(X_i)) against the fixed N(0, I) prior, with gradients.
struct KlTerm {
  double value;
  Vector grad_mu;
  Vector grad_s;
};

inline KlTerm kl_term(const VariationalEmbedding &e) {
  require((e.s.array() > 0.0).all(), "kl_term: variances must be strictly positive");
  KlTerm kl;
  kl.value = kl_value(e);
  kl.grad_mu = e.mu;
  kl.grad_s = (0.5 * (1.0 - e.s.array().inverse())).matrix();
  return kl;
}

/// Bound value plus gradient blocks in natural parameter space.
/// grad_theta is [d/d sigma_f_sq, d/d alpha_1, ..., d/d alpha_q].
/// grad_mu / grad_s are n x q in GPLVM mode and empty in regression mode.
struct BoundReport {
  double elbo = 0.0;
  Matrix grad_z;
  Vector grad_theta;
  double grad_beta = 0.0;
  Matrix grad_mu;
  Matrix grad_s;

  bool all_finite() const {
    return std::isfinite(elbo) && grad_z.allFinite() && grad_theta.allFinite() &&
           std::isfinite(grad_beta) && grad_mu.allFinite() && grad_s.allFinite();
  }
};

/// Gradient contributions that depend only on the reduced statistics:
/// the K_mm chain-rule parts of grad_z / grad_theta, the full sigma_f^2
/// gradient, and the full beta gradient.
inline void add_global_grad_parts(const BoundTerms &t, const SufficientStats &stats,
                                  const InducingSet &inducing, const KernelHyperparams &theta,
                                  double beta, BoundReport &out) {
  const Index m = inducing.count();
  const Index q = inducing.input_dim();
  const double d = static_cast<double>(stats.output_dim());
  const double n = static_cast<double>(stats.n_points);

  const KmmGrads kg = kmm_grads(inducing, theta);
  for (Index k = 0; k < q; ++k) {
    const Matrix &gz = kg.d_z[static_cast<std::size_t>(k)];
    for (Index j = 0; j < m; ++j)
      out.grad_z(j, k) += 2.0 * t.wk.row(j).dot(gz.row(j));
    out.grad_theta(1 + k) += t.wk.cwiseProduct(kg.d_alpha[static_cast<std::size_t>(k)]).sum();
  }

  // sigma_f^2: K_mm scales linearly (jitter included), B linearly, psi2
  // quadratically, psi0 linearly.
  const double sf2 = theta.sigma_f_sq();
  out.grad_theta(0) += t.wk.cwiseProduct(t.kmm).sum() / sf2 + t.w0 * n +
                       t.w1.cwiseProduct(stats.sum_psi1t_y).sum() / sf2 +
                       2.0 * t.w2.cwiseProduct(stats.sum_psi2).sum() / sf2;

  const double tr_ainv_psi2 = t.a_llt.solve(stats.sum_psi2).trace();
  const double tr_kmminv_psi2 = t.kmm_llt.solve(stats.sum_psi2).trace();
  const double tr_bt_ainv_b = stats.sum_psi1t_y.cwiseProduct(t.a_inv_b).sum();
  const double tr_quad = t.a_inv_b.cwiseProduct(stats.sum_psi2 * t.a_inv_b).sum();
  out.grad_beta += 0.5 * n * d / beta - 0.5 * d * tr_ainv_psi2 - 0.5 * stats.sum_yy -
                   0.5 * d * stats.sum_psi0 + 0.5 * d * tr_kmminv_psi2 + beta * tr_bt_ainv_b -
                   0.5 * beta * beta * tr_quad;
}

/// One point's contribution to the data-dependent gradient blocks,
/// contracted against the bound weights w1/w2. grad_mu / grad_s include
/// the KL penalty and are produced only for stochastic embeddings.
struct PointGrads {
  Matrix z;      // m x q
  Vector alpha;  // q
  Vector mu;     // q (empty for delta embeddings)
  Vector s;      // q (empty for delta embeddings)
};

inline PointGrads point_grad_contributions(const DataPoint &point, const InducingSet &inducing,
                                           const KernelHyperparams &theta, const Matrix &w1,
                                           const Matrix &w2) {
  const Index m = inducing.count();
  const Index q = inducing.input_dim();
  const PsiPoint p = psi_point(point.embedding, inducing, theta);
  const PsiGrads g = psi_grads(point.embedding, inducing, theta, p);
  const Vector v = w1 * point.y.transpose();  // dF/d psi1_i

  PointGrads pg;
  pg.z.resize(m, q);
  pg.alpha.resize(q);
  const bool local = !point.embedding.deterministic();
  if (local) {
    pg.mu.resize(q);
    pg.s.resize(q);
  }

  for (Index k = 0; k < q; ++k) {
    const Matrix &gz2 = g.d_psi2_d_z[static_cast<std::size_t>(k)];
    for (Index j = 0; j < m; ++j)
      pg.z(j, k) = v(j) * g.d_psi1_d_z(j, k) + 2.0 * w2.row(j).dot(gz2.row(j));
    pg.alpha(k) = v.dot(g.d_psi1_d_alpha.col(k)) +
                  w2.cwiseProduct(g.d_psi2_d_alpha[static_cast<std::size_t>(k)]).sum();
    if (local) {
      pg.mu(k) = v.dot(g.d_psi1_d_mu.col(k)) +
                 w2.cwiseProduct(g.d_psi2_d_mu[static_cast<std::size_t>(k)]).sum();
      pg.s(k) = v.dot(g.d_psi1_d_s.col(k)) +
                w2.cwiseProduct(g.d_psi2_d_s[static_cast<std::size_t>(k)]).sum();
    }
  }
  if (local) {
    const KlTerm kl = kl_term(point.embedding);
    pg.mu -= kl.grad_mu;
    pg.s -= kl.grad_s;
  }
  return pg;
}

/// Master-side contraction of the regression moment tensors: recovers the
/// per-point Z and alpha contributions for delta embeddings without
/// touching the data again. Expansion of the s = 0 derivative factor
/// alpha_k (x_ik - Z_jk) against the first/second moments.
inline void add_regression_moment_grads(const BoundTerms &t, const SufficientStats &stats,
                                        const RegressionMoments &moments,
                                        const InducingSet &inducing,
                                        const KernelHyperparams &theta, BoundReport &out) {
  const Index m = inducing.count();
  const Index q = inducing.input_dim();
  const Matrix &z = inducing.z;
  const Vector &alpha = theta.alpha();
  const Matrix &b = stats.sum_psi1t_y;

  for (Index k = 0; k < q; ++k) {
    const Matrix &c1 = moments.c1[static_cast<std::size_t>(k)];
    const Matrix &d1 = moments.d1[static_cast<std::size_t>(k)];
    const Matrix &c2 = moments.c2[static_cast<std::size_t>(k)];
    const Matrix &d2 = moments.d2[static_cast<std::size_t>(k)];

    for (Index j = 0; j < m; ++j) {
      const double psi1_part = t.w1.row(j).dot(c1.row(j) - z(j, k) * b.row(j));
      const double psi2_part =
          t.w2.row(j).dot(c2.row(j) - z(j, k) * stats.sum_psi2.row(j));
      out.grad_z(j, k) += alpha(k) * psi1_part + 2.0 * alpha(k) * psi2_part;
    }

    double alpha_part = 0.0;
    for (Index j = 0; j < m; ++j)
      alpha_part += -0.5 * t.w1.row(j).dot(d1.row(j) - 2.0 * z(j, k) * c1.row(j) +
                                           z(j, k) * z(j, k) * b.row(j));
    for (Index a = 0; a < m; ++a) {
      for (Index bb = 0; bb < m; ++bb) {
        const double dz = z(a, k) - z(bb, k);
        const double sz = z(a, k) + z(bb, k);
        const double second = d2(a, bb) - sz * c2(a, bb) + 0.25 * sz * sz * stats.sum_psi2(a, bb);
        alpha_part += t.w2(a, bb) * (-0.25 * dz * dz * stats.sum_psi2(a, bb) - second);
      }
    }
    out.grad_theta(1 + k) += alpha_part;
  }
}

/// Single-process reference path: the bound and every gradient block,
/// chained through the per-point psi gradients. The distributed module
/// produces the same report through the master/worker protocol.
inline BoundReport bound_grads(const std::vector<DataPoint> &points, const SufficientStats &stats,
                               const InducingSet &inducing, const KernelHyperparams &theta,
                               double beta, bool with_local_grads) {
  const Index m = inducing.count();
  const Index q = inducing.input_dim();
  const Index n = static_cast<Index>(points.size());
  const BoundTerms t = compute_bound_terms(stats, inducing, theta, beta);

  BoundReport out;
  out.elbo = bound_value(t, stats, beta);
  out.grad_z = Matrix::Zero(m, q);
  out.grad_theta = Vector::Zero(q + 1);
  if (with_local_grads) {
    out.grad_mu = Matrix::Zero(n, q);
    out.grad_s = Matrix::Zero(n, q);
  }
  add_global_grad_parts(t, stats, inducing, theta, beta, out);

  for (Index i = 0; i < n; ++i) {
    const PointGrads pg =
        point_grad_contributions(points[static_cast<std::size_t>(i)], inducing, theta, t.w1, t.w2);
    out.grad_z += pg.z;
    out.grad_theta.tail(q) += pg.alpha;
    if (with_local_grads) {
      require(pg.mu.size() == q, "bound_grads: local gradients need stochastic embeddings");
      out.grad_mu.row(i) = pg.mu.transpose();
      out.grad_s.row(i) = pg.s.transpose();
    }
  }
  return out;
}

}  // namespace dvgp
