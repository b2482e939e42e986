#pragma once

#include <cmath>
#include <vector>

#include "dvgp/kernel.hpp"
#include "dvgp/types.hpp"

namespace dvgp {

/// Expectations of kernel quantities under one diagonal Gaussian input:
///   psi0 = <k(X, X)>,  psi1_j = <k(X, Z_j)>,  psi2_ab = <k(Z_a, X) k(X, Z_b)>.
struct PsiPoint {
  double psi0;
  Vector psi1;
  Matrix psi2;
};

inline PsiPoint psi_point(const VariationalEmbedding &e, const InducingSet &inducing,
                          const KernelHyperparams &theta) {
  const Matrix &z = inducing.z;
  const Index m = z.rows();
  const Index q = theta.input_dim();
  require(e.dim() == q && z.cols() == q, "psi_point: dimensions must agree");

  PsiPoint p;
  p.psi0 = theta.sigma_f_sq();

  if (e.deterministic()) {
    // Delta density: the statistics collapse to plain kernel evaluations.
    // Computed through kernel_matrix so the s = 0 limit is exact by
    // construction rather than by cancellation inside the product forms.
    p.psi1 = kernel_matrix(z, e.mu.transpose(), theta).col(0);
    p.psi2 = p.psi1 * p.psi1.transpose();
    return p;
  }

  const Vector &alpha = theta.alpha();
  const double sf2 = theta.sigma_f_sq();

  // psi1_j = sf2 / prod_q sqrt(s_q a_q + 1) * exp(-1/2 sum_q a_q (Z_jq - mu_q)^2 / (s_q a_q + 1))
  Vector denom1 = (e.s.array() * alpha.array() + 1.0).matrix();
  const double norm1 = sf2 / std::sqrt(denom1.prod());
  p.psi1.resize(m);
  for (Index j = 0; j < m; ++j) {
    double expo = 0.0;
    for (Index c = 0; c < q; ++c) {
      const double diff = z(j, c) - e.mu(c);
      expo += alpha(c) * diff * diff / denom1(c);
    }
    p.psi1(j) = norm1 * std::exp(-0.5 * expo);
  }

  // psi2_ab = sf2^2 / prod_q sqrt(2 s_q a_q + 1)
  //           * exp(sum_q [-a_q (Z_aq - Z_bq)^2 / 4
  //                        - a_q (mu_q - (Z_aq + Z_bq)/2)^2 / (2 s_q a_q + 1)])
  Vector denom2 = (2.0 * e.s.array() * alpha.array() + 1.0).matrix();
  const double norm2 = sf2 * sf2 / std::sqrt(denom2.prod());
  p.psi2.resize(m, m);
  for (Index a = 0; a < m; ++a) {
    for (Index b = a; b < m; ++b) {
      double expo = 0.0;
      for (Index c = 0; c < q; ++c) {
        const double dz = z(a, c) - z(b, c);
        const double dm = e.mu(c) - 0.5 * (z(a, c) + z(b, c));
        expo += -0.25 * alpha(c) * dz * dz - alpha(c) * dm * dm / denom2(c);
      }
      const double value = norm2 * std::exp(expo);
      p.psi2(a, b) = value;
      p.psi2(b, a) = value;
    }
  }
  return p;
}

/// All partial derivatives of the psi statistics for one point.
///
/// psi0 depends only on sigma_f^2 (derivative 1); every other psi0 block
/// is identically zero and therefore not materialized.
///
/// Z blocks exploit the indicator structure of the derivatives:
///  - d_psi1_d_z(j, k) is the only nonzero entry of d psi1 / d Z_jk
///    (it is the derivative of psi1_j; d psi1_m / d Z_jk = 0 for m != j).
///  - d_psi2_d_z[k] holds the one-sided factor matrix G_k with
///      d psi2_ab / d Z_jk = I(a = j) G_k(j, b) + I(b = j) G_k(j, a),
///    the same convention as KmmGrads::d_z.
/// The remaining blocks are full derivatives.
struct PsiGrads {
  Matrix d_psi1_d_z;               // m x q
  Vector d_psi1_d_sigma_f_sq;      // m
  Matrix d_psi1_d_alpha;           // m x q
  Matrix d_psi1_d_mu;              // m x q
  Matrix d_psi1_d_s;               // m x q
  std::vector<Matrix> d_psi2_d_z;  // q one-sided m x m factors
  Matrix d_psi2_d_sigma_f_sq;      // m x m
  std::vector<Matrix> d_psi2_d_alpha;
  std::vector<Matrix> d_psi2_d_mu;
  std::vector<Matrix> d_psi2_d_s;
};

inline PsiGrads psi_grads(const VariationalEmbedding &e, const InducingSet &inducing,
                          const KernelHyperparams &theta, const PsiPoint &p) {
  const Matrix &z = inducing.z;
  const Index m = z.rows();
  const Index q = theta.input_dim();
  require(e.dim() == q && z.cols() == q, "psi_grads: dimensions must agree");

  const Vector &alpha = theta.alpha();
  const double sf2 = theta.sigma_f_sq();
  Vector denom1 = (e.s.array() * alpha.array() + 1.0).matrix();
  Vector denom2 = (2.0 * e.s.array() * alpha.array() + 1.0).matrix();

  PsiGrads g;
  g.d_psi1_d_sigma_f_sq = p.psi1 / sf2;
  g.d_psi2_d_sigma_f_sq = 2.0 * p.psi2 / sf2;
  g.d_psi1_d_z.resize(m, q);
  g.d_psi1_d_alpha.resize(m, q);
  g.d_psi1_d_mu.resize(m, q);
  g.d_psi1_d_s.resize(m, q);
  g.d_psi2_d_z.assign(static_cast<std::size_t>(q), Matrix(m, m));
  g.d_psi2_d_alpha.assign(static_cast<std::size_t>(q), Matrix(m, m));
  g.d_psi2_d_mu.assign(static_cast<std::size_t>(q), Matrix(m, m));
  g.d_psi2_d_s.assign(static_cast<std::size_t>(q), Matrix(m, m));

  for (Index c = 0; c < q; ++c) {
    const double a_c = alpha(c);
    const double s_c = e.s(c);
    const double d1 = denom1(c);
    const double d2 = denom2(c);
    for (Index j = 0; j < m; ++j) {
      const double diff = e.mu(c) - z(j, c);
      const double r = diff / d1;
      g.d_psi1_d_z(j, c) = p.psi1(j) * a_c * r;
      g.d_psi1_d_alpha(j, c) = -0.5 * p.psi1(j) * (diff * diff / (d1 * d1) + s_c / d1);
      g.d_psi1_d_mu(j, c) = -p.psi1(j) * a_c * r;
      g.d_psi1_d_s(j, c) = p.psi1(j) * (0.5 * (a_c * r) * (a_c * r) - 0.5 * a_c / d1);
    }
    Matrix &gz = g.d_psi2_d_z[static_cast<std::size_t>(c)];
    Matrix &ga = g.d_psi2_d_alpha[static_cast<std::size_t>(c)];
    Matrix &gm = g.d_psi2_d_mu[static_cast<std::size_t>(c)];
    Matrix &gs = g.d_psi2_d_s[static_cast<std::size_t>(c)];
    for (Index a = 0; a < m; ++a) {
      for (Index b = 0; b < m; ++b) {
        const double dz = z(a, c) - z(b, c);
        const double mid = e.mu(c) - 0.5 * (z(a, c) + z(b, c));
        const double v = p.psi2(a, b);
        gz(a, b) = v * (-0.5 * a_c * dz + a_c * mid / d2);
        ga(a, b) = v * (-0.25 * dz * dz - (mid / d2) * (mid / d2) - s_c / d2);
        gm(a, b) = v * (-2.0 * a_c * mid / d2);
        gs(a, b) = v * (2.0 * (a_c * mid / d2) * (a_c * mid / d2) - a_c / d2);
      }
    }
  }
  return g;
}

inline PsiGrads psi_grads(const VariationalEmbedding &e, const InducingSet &inducing,
                          const KernelHyperparams &theta) {
  return psi_grads(e, inducing, theta, psi_point(e, inducing, theta));
}

}  // namespace dvgp
