#pragma once

// Test-only oracles. Each one recomputes a quantity the library produces,
// through an independent route: dense matrix algebra instead of per-point
// accumulation, LDLT instead of LLT, Monte Carlo instead of closed forms,
// quadrature instead of the collapsed bound.

#include <cmath>
#include <random>
#include <utility>

#include "dvgp/kernel.hpp"
#include "dvgp/types.hpp"

namespace oracles {

using dvgp::Index;
using dvgp::Matrix;
using dvgp::Vector;

inline double kernel_scalar(const Vector &a, const Vector &b, double sf2, const Vector &alpha) {
  double dist = 0.0;
  for (Index c = 0; c < a.size(); ++c) dist += alpha(c) * (a(c) - b(c)) * (a(c) - b(c));
  return sf2 * std::exp(-0.5 * dist);
}

/// Cross-kernel via the expanded squared-distance identity (vectorized;
/// different arithmetic than the library's difference loop).
inline Matrix kernel_gemm(const Matrix &x1, const Matrix &x2, double sf2, const Vector &alpha) {
  const Matrix s1 = x1 * alpha.array().sqrt().matrix().asDiagonal();
  const Matrix s2 = x2 * alpha.array().sqrt().matrix().asDiagonal();
  const Vector n1 = s1.rowwise().squaredNorm();
  const Vector n2 = s2.rowwise().squaredNorm();
  Matrix d2 = (-2.0 * s1 * s2.transpose()).colwise() + n1;
  d2.rowwise() += n2.transpose();
  return sf2 * (-0.5 * d2.array()).exp();
}

/// Exact dense GP log marginal likelihood, summed over output columns:
/// sum_c log N(y_c; 0, K_nn + beta^{-1} I).
inline double exact_gp_log_marginal(const Matrix &x, const Matrix &y,
                                    const dvgp::KernelHyperparams &theta, double beta) {
  const Index n = x.rows();
  const double d = static_cast<double>(y.cols());
  Matrix c = kernel_gemm(x, x, theta.sigma_f_sq(), theta.alpha());
  c.diagonal().array() += 1.0 / beta;
  const Eigen::LDLT<Matrix> ldlt(c);
  const double logdet = ldlt.vectorD().array().log().sum();
  const double quad = y.cwiseProduct(ldlt.solve(y)).sum();
  return -0.5 * static_cast<double>(n) * d * std::log(2.0 * M_PI) - 0.5 * d * logdet - 0.5 * quad;
}

/// Exact dense GP posterior (latent mean and variance, no observation noise).
inline std::pair<Matrix, Vector> exact_gp_posterior(const Matrix &x, const Matrix &y,
                                                    const dvgp::KernelHyperparams &theta,
                                                    double beta, const Matrix &xstar) {
  Matrix c = kernel_gemm(x, x, theta.sigma_f_sq(), theta.alpha());
  c.diagonal().array() += 1.0 / beta;
  const Eigen::LDLT<Matrix> ldlt(c);
  const Matrix ks = kernel_gemm(xstar, x, theta.sigma_f_sq(), theta.alpha());
  const Matrix mean = ks * ldlt.solve(y);
  const Matrix sol = ldlt.solve(ks.transpose());
  const Vector var =
      (theta.sigma_f_sq() - ks.cwiseProduct(sol.transpose()).rowwise().sum().array()).matrix();
  return {mean, var};
}

/// Monolithic dense evaluation of the regression bound: full n x m kernel
/// matrix, aggregates by single matrix products, LDLT factorizations.
inline double dense_regression_bound(const Matrix &x, const Matrix &y, const Matrix &z,
                                     const dvgp::KernelHyperparams &theta, double beta,
                                     double jitter_scale) {
  const Index n = x.rows();
  const double d = static_cast<double>(y.cols());
  const double sf2 = theta.sigma_f_sq();
  Matrix kmm = kernel_gemm(z, z, sf2, theta.alpha());
  kmm.diagonal().array() += jitter_scale * sf2;
  const Matrix knm = kernel_gemm(x, z, sf2, theta.alpha());
  const Matrix psi2 = knm.transpose() * knm;
  const Matrix b = knm.transpose() * y;
  const double psi0 = static_cast<double>(n) * sf2;
  const Matrix a = kmm + beta * psi2;

  const Eigen::LDLT<Matrix> kmm_ldlt(kmm);
  const Eigen::LDLT<Matrix> a_ldlt(a);
  const double logdet_kmm = kmm_ldlt.vectorD().array().log().sum();
  const double logdet_a = a_ldlt.vectorD().array().log().sum();
  return 0.5 * d * logdet_kmm - 0.5 * d * logdet_a +
         0.5 * static_cast<double>(n) * d * std::log(beta / (2.0 * M_PI)) -
         0.5 * beta * (y.squaredNorm() + d * psi0 - d * kmm_ldlt.solve(psi2).trace()) +
         0.5 * beta * beta * b.cwiseProduct(a_ldlt.solve(b)).sum();
}

/// Monolithic dense evaluation of the GPLVM bound: the psi aggregates are
/// built from whole n x m / n x q arrays, not from per-point statistics.
inline double dense_gplvm_bound(const Matrix &mu, const Matrix &s, const Matrix &y,
                                const Matrix &z, const dvgp::KernelHyperparams &theta, double beta,
                                double jitter_scale) {
  const Index n = mu.rows();
  const Index m = z.rows();
  const Index q = z.cols();
  const double d = static_cast<double>(y.cols());
  const double sf2 = theta.sigma_f_sq();
  const Vector alpha = theta.alpha();

  Matrix psi1(n, m);
  for (Index i = 0; i < n; ++i) {
    double norm = sf2;
    for (Index c = 0; c < q; ++c) norm /= std::sqrt(s(i, c) * alpha(c) + 1.0);
    for (Index j = 0; j < m; ++j) {
      double expo = 0.0;
      for (Index c = 0; c < q; ++c)
        expo += alpha(c) * (z(j, c) - mu(i, c)) * (z(j, c) - mu(i, c)) / (s(i, c) * alpha(c) + 1.0);
      psi1(i, j) = norm * std::exp(-0.5 * expo);
    }
  }
  Matrix psi2 = Matrix::Zero(m, m);
  for (Index a = 0; a < m; ++a)
    for (Index bb = 0; bb < m; ++bb) {
      double total = 0.0;
      for (Index i = 0; i < n; ++i) {
        double expo = 0.0, norm = sf2 * sf2;
        for (Index c = 0; c < q; ++c) {
          const double denom = 2.0 * alpha(c) * s(i, c) + 1.0;
          const double dz = z(a, c) - z(bb, c);
          const double mid = mu(i, c) - 0.5 * (z(a, c) + z(bb, c));
          expo += -0.25 * alpha(c) * dz * dz - alpha(c) * mid * mid / denom;
          norm /= std::sqrt(denom);
        }
        total += norm * std::exp(expo);
      }
      psi2(a, bb) = total;
    }
  double kl = 0.0;
  for (Index i = 0; i < n; ++i)
    for (Index c = 0; c < q; ++c)
      kl += 0.5 * (s(i, c) - std::log(s(i, c)) + mu(i, c) * mu(i, c) - 1.0);

  Matrix kmm = kernel_gemm(z, z, sf2, alpha);
  kmm.diagonal().array() += jitter_scale * sf2;
  const Matrix b = psi1.transpose() * y;
  const Matrix a_mat = kmm + beta * psi2;
  const Eigen::LDLT<Matrix> kmm_ldlt(kmm);
  const Eigen::LDLT<Matrix> a_ldlt(a_mat);
  return 0.5 * d * kmm_ldlt.vectorD().array().log().sum() -
         0.5 * d * a_ldlt.vectorD().array().log().sum() +
         0.5 * static_cast<double>(n) * d * std::log(beta / (2.0 * M_PI)) -
         0.5 * beta * (y.squaredNorm() + d * static_cast<double>(n) * sf2 -
                       d * kmm_ldlt.solve(psi2).trace()) +
         0.5 * beta * beta * b.cwiseProduct(a_ldlt.solve(b)).sum() - kl;
}

struct McPsi {
  Vector psi1_mean, psi1_se;
  Matrix psi2_mean, psi2_se;
};

/// Monte-Carlo estimates of psi1 and psi2 with per-entry standard errors,
/// sampling X ~ N(mu, diag(s)).
inline McPsi mc_psi(const Vector &mu, const Vector &s, const Matrix &z,
                    const dvgp::KernelHyperparams &theta, long n_samples, std::uint64_t seed) {
  const Index m = z.rows();
  const Index q = z.cols();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Vector sum1 = Vector::Zero(m), sumsq1 = Vector::Zero(m);
  Matrix sum2 = Matrix::Zero(m, m), sumsq2 = Matrix::Zero(m, m);
  Vector xi(q), k_row(m);
  const Vector sd = s.array().sqrt();
  for (long t = 0; t < n_samples; ++t) {
    for (Index c = 0; c < q; ++c) xi(c) = mu(c) + sd(c) * gauss(rng);
    for (Index j = 0; j < m; ++j)
      k_row(j) = kernel_scalar(xi, z.row(j).transpose(), theta.sigma_f_sq(), theta.alpha());
    sum1 += k_row;
    sumsq1 += k_row.cwiseProduct(k_row);
    sum2 += k_row * k_row.transpose();
    sumsq2 += (k_row * k_row.transpose()).cwiseProduct(k_row * k_row.transpose());
  }
  const double cnt = static_cast<double>(n_samples);
  McPsi out;
  out.psi1_mean = sum1 / cnt;
  out.psi2_mean = sum2 / cnt;
  out.psi1_se =
      ((sumsq1.array() / cnt - out.psi1_mean.array().square()).max(0.0) / cnt).sqrt();
  out.psi2_se =
      ((sumsq2.array() / cnt - out.psi2_mean.array().square()).max(0.0) / cnt).sqrt();
  return out;
}

/// Monte-Carlo estimate (mean, standard error) of KL(q || p) with
/// q = N(mu, diag(s)) and p = N(0, I).
inline std::pair<double, double> mc_kl(const Vector &mu, const Vector &s, long n_samples,
                                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Vector sd = s.array().sqrt();
  double sum = 0.0, sumsq = 0.0;
  for (long t = 0; t < n_samples; ++t) {
    double log_q = 0.0, log_p = 0.0;
    for (Index c = 0; c < mu.size(); ++c) {
      const double eps = gauss(rng);
      const double x = mu(c) + sd(c) * eps;
      log_q += -0.5 * std::log(2.0 * M_PI * s(c)) - 0.5 * eps * eps;
      log_p += -0.5 * std::log(2.0 * M_PI) - 0.5 * x * x;
    }
    const double v = log_q - log_p;
    sum += v;
    sumsq += v * v;
  }
  const double cnt = static_cast<double>(n_samples);
  const double mean = sum / cnt;
  const double var = std::max(0.0, sumsq / cnt - mean * mean);
  return {mean, std::sqrt(var / cnt)};
}

/// Gauss-Hermite nodes/weights (physicists' convention) via Golub-Welsch.
inline std::pair<Vector, Vector> gauss_hermite(int n) {
  Matrix j = Matrix::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    const double off = std::sqrt(static_cast<double>(i) / 2.0);
    j(i, i - 1) = off;
    j(i - 1, i) = off;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(j);
  const Vector nodes = es.eigenvalues();
  Vector weights(n);
  for (int i = 0; i < n; ++i) {
    const double v0 = es.eigenvectors()(0, i);
    weights(i) = std::sqrt(M_PI) * v0 * v0;
  }
  return {nodes, weights};
}

}  // namespace oracles
