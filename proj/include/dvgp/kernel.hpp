#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "dvgp/types.hpp"

namespace dvgp {

/// Hyperparameters of the RBF-ARD kernel
///
///   k(x, x') = sigma_f^2 * exp(-1/2 * sum_q alpha_q * (x_q - x'_q)^2)
///
/// The canonical storage is log-space (unconstrained for optimization);
/// the natural values are cached once at construction so repeated reads
/// are cheap and bit-stable.
class KernelHyperparams {
 public:
  static KernelHyperparams from_values(double sigma_f_sq, Vector alpha) {
    require(sigma_f_sq > 0.0, "KernelHyperparams: sigma_f_sq must be positive");
    require(alpha.size() >= 1, "KernelHyperparams: alpha must be non-empty");
    require((alpha.array() > 0.0).all(), "KernelHyperparams: alpha entries must be positive");
    return KernelHyperparams(std::log(sigma_f_sq), alpha.array().log().matrix());
  }

  static KernelHyperparams from_log(double log_sigma_f_sq, Vector log_alpha) {
    require(log_alpha.size() >= 1, "KernelHyperparams: log_alpha must be non-empty");
    require(std::isfinite(log_sigma_f_sq) && log_alpha.allFinite(),
            "KernelHyperparams: log-space parameters must be finite");
    return KernelHyperparams(log_sigma_f_sq, std::move(log_alpha));
  }

  double sigma_f_sq() const { return sf2_; }
  const Vector &alpha() const { return alpha_; }
  double log_sigma_f_sq() const { return log_sf2_; }
  const Vector &log_alpha() const { return log_alpha_; }
  Index input_dim() const { return log_alpha_.size(); }

 private:
  KernelHyperparams(double log_sf2, Vector log_alpha)
      : log_sf2_(log_sf2),
        log_alpha_(std::move(log_alpha)),
        sf2_(std::exp(log_sf2_)),
        alpha_(log_alpha_.array().exp().matrix()) {}

  double log_sf2_;
  Vector log_alpha_;
  double sf2_;
  Vector alpha_;
};

/// Locations of the m inducing points, one per row.
/// Duplicate rows are rejected: they make K_mm singular up to jitter.
struct InducingSet {
  Matrix z;

  explicit InducingSet(Matrix z_in) : z(std::move(z_in)) {
    require(z.rows() >= 1, "InducingSet: need at least one inducing point");
    for (Index a = 0; a < z.rows(); ++a)
      for (Index b = a + 1; b < z.rows(); ++b)
        require(z.row(a) != z.row(b), "InducingSet: rows " + std::to_string(a) + " and " +
                                          std::to_string(b) + " are identical");
  }

  Index count() const { return z.rows(); }
  Index input_dim() const { return z.cols(); }
};

/// Diagonal Gaussian over one latent input: mean mu, variance diag(s).
/// s == 0 exactly encodes a delta distribution (regression mode where the
/// input is observed); s is kept in natural space here and re-parameterized
/// to log-space only inside the optimizer packing.
struct VariationalEmbedding {
  Vector mu;
  Vector s;

  VariationalEmbedding(Vector mu_in, Vector s_in) : mu(std::move(mu_in)), s(std::move(s_in)) {
    require(mu.size() == s.size(), "VariationalEmbedding: mu and s must have equal length");
    require((s.array() >= 0.0).all(), "VariationalEmbedding: variances must be nonnegative");
  }

  /// Delta distribution at mu (all variances exactly zero).
  static VariationalEmbedding at_point(Vector x) {
    Vector zero = Vector::Zero(x.size());
    return VariationalEmbedding(std::move(x), std::move(zero));
  }

  bool deterministic() const { return s.isZero(0.0); }
  Index dim() const { return mu.size(); }
};

/// Cross-covariance matrix: entry (a, b) = k(X1_a, X2_b).
inline Matrix kernel_matrix(const Matrix &x1, const Matrix &x2, const KernelHyperparams &theta) {
  const Index q = theta.input_dim();
  require(x1.cols() == q && x2.cols() == q,
          "kernel_matrix: input column counts must match the kernel dimension");
  const Vector &alpha = theta.alpha();
  const double sf2 = theta.sigma_f_sq();

  Matrix k(x1.rows(), x2.rows());
  for (Index a = 0; a < x1.rows(); ++a) {
    for (Index b = 0; b < x2.rows(); ++b) {
      double dist = 0.0;
      for (Index c = 0; c < q; ++c) {
        const double diff = x1(a, c) - x2(b, c);
        dist += alpha(c) * diff * diff;
      }
      k(a, b) = sf2 * std::exp(-0.5 * dist);
    }
  }
  return k;
}

/// Gradients of K_mm = kernel_matrix(Z, Z).
///
/// d_z holds one m-by-m matrix per input dimension k with the one-sided
/// derivative G_k(a, b) = d k(Z_a, Z_b) / d Z_ak (zero on the diagonal);
/// the full derivative of entry (a, b) w.r.t. Z_jk is
///   I(a = j) * G_k(j, b) + I(b = j) * G_k(j, a).
/// d_sigma_f_sq and d_alpha are complete symmetric matrices.
struct KmmGrads {
  std::vector<Matrix> d_z;
  Matrix d_sigma_f_sq;
  std::vector<Matrix> d_alpha;
};

inline KmmGrads kmm_grads(const InducingSet &inducing, const KernelHyperparams &theta) {
  const Matrix &z = inducing.z;
  const Index m = z.rows();
  const Index q = theta.input_dim();
  require(z.cols() == q, "kmm_grads: inducing dimension must match the kernel dimension");
  const Vector &alpha = theta.alpha();
  const Matrix kmm = kernel_matrix(z, z, theta);

  KmmGrads grads;
  grads.d_sigma_f_sq = kmm / theta.sigma_f_sq();
  grads.d_z.assign(static_cast<std::size_t>(q), Matrix::Zero(m, m));
  grads.d_alpha.assign(static_cast<std::size_t>(q), Matrix::Zero(m, m));
  for (Index k = 0; k < q; ++k) {
    Matrix &gz = grads.d_z[static_cast<std::size_t>(k)];
    Matrix &ga = grads.d_alpha[static_cast<std::size_t>(k)];
    for (Index a = 0; a < m; ++a) {
      for (Index b = 0; b < m; ++b) {
        const double diff = z(a, k) - z(b, k);
        if (a != b) gz(a, b) = -alpha(k) * diff * kmm(a, b);
        ga(a, b) = -0.5 * diff * diff * kmm(a, b);
      }
    }
  }
  return grads;
}

}  // namespace dvgp
