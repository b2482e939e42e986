#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "dvgp/elbo.hpp"
#include "dvgp/optimize.hpp"
#include "dvgp/stats.hpp"
#include "dvgp/types.hpp"

namespace dvgp {

/// Relative error with a unit floor: |a - b| / max(1, |a|, |b|). The floor
/// keeps near-zero gradient entries comparable without dividing by noise.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::map<std::string, double> per_block;

  void absorb(const GradCheckReport &other) {
    max_rel_err = std::max(max_rel_err, other.max_rel_err);
    for (const auto &[k, v] : other.per_block) {
      auto it = per_block.find(k);
      if (it == per_block.end())
        per_block[k] = v;
      else
        it->second = std::max(it->second, v);
    }
  }
};

struct GradCheckInstance {
  std::vector<DataPoint> points;
  ParamBlocks blocks;
  Index m = 0, q = 0, d = 0;
  bool gplvm = false;
};

/// Small random problem: n <= 20, m <= 6, q <= 4, d <= 3, with either
/// delta embeddings (regression) or strictly positive variances (GPLVM).
inline GradCheckInstance random_gradcheck_instance(std::uint64_t seed, bool gplvm) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto draw_int = [&](Index lo, Index hi) {
    return lo + static_cast<Index>(unit(rng) * static_cast<double>(hi - lo + 1));
  };

  GradCheckInstance inst;
  inst.gplvm = gplvm;
  const Index n = draw_int(2, 20);
  inst.m = draw_int(1, 6);
  inst.q = draw_int(1, 4);
  inst.d = draw_int(1, 3);

  inst.blocks.z.resize(inst.m, inst.q);
  for (Index i = 0; i < inst.m; ++i)
    for (Index c = 0; c < inst.q; ++c) inst.blocks.z(i, c) = 3.0 * (unit(rng) - 0.5);
  inst.blocks.log_sigma_f_sq = std::log(0.5 + 1.5 * unit(rng));
  inst.blocks.log_alpha.resize(inst.q);
  for (Index c = 0; c < inst.q; ++c) inst.blocks.log_alpha(c) = std::log(0.3 + 1.7 * unit(rng));
  inst.blocks.log_beta = std::log(0.5 + 4.5 * unit(rng));

  Matrix mu(n, inst.q), s(n, inst.q);
  for (Index i = 0; i < n; ++i)
    for (Index c = 0; c < inst.q; ++c) {
      mu(i, c) = 3.0 * (unit(rng) - 0.5);
      s(i, c) = 0.05 + 0.55 * unit(rng);
    }
  if (gplvm) {
    inst.blocks.mu = mu;
    inst.blocks.log_s = s.array().log();
  }

  inst.points.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Eigen::RowVectorXd y(inst.d);
    for (Index c = 0; c < inst.d; ++c) y(c) = 1.5 * gauss(rng);
    if (gplvm)
      inst.points.push_back({y, VariationalEmbedding(mu.row(i).transpose(), s.row(i).transpose())});
    else
      inst.points.push_back({y, VariationalEmbedding::at_point(mu.row(i).transpose())});
  }
  return inst;
}

inline double bound_at(const GradCheckInstance &inst, const ParamLayout &layout, const Vector &x) {
  ParamBlocks b = inst.blocks;
  layout.unpack(x, b);
  std::vector<DataPoint> points = inst.points;
  if (inst.gplvm) {
    const Matrix s_nat = b.log_s.array().exp();
    for (std::size_t i = 0; i < points.size(); ++i)
      points[i].embedding = VariationalEmbedding(b.mu.row(static_cast<Index>(i)).transpose(),
                                                 s_nat.row(static_cast<Index>(i)).transpose());
  }
  const InducingSet inducing = b.inducing();
  const KernelHyperparams theta = b.theta();
  const SufficientStats stats = accumulate_stats(points, inducing, theta);
  return assemble_bound(stats, inducing, theta, b.beta(), stats.output_dim());
}

/// Compares every analytic gradient block of the bound against central
/// finite differences in the packed (log-space) coordinates.
inline GradCheckReport check_bound_gradients(const GradCheckInstance &inst, double h = 1e-5) {
  const Index n = static_cast<Index>(inst.points.size());
  const ParamLayout layout(inst.m, inst.q, inst.gplvm ? n : 0);
  const Vector x0 = layout.pack(inst.blocks);

  const InducingSet inducing = inst.blocks.inducing();
  const KernelHyperparams theta = inst.blocks.theta();
  const SufficientStats stats = accumulate_stats(inst.points, inducing, theta);
  const BoundReport report =
      bound_grads(inst.points, stats, inducing, theta, inst.blocks.beta(), inst.gplvm);
  const Vector analytic = layout.pack_bound_gradient(report, inst.blocks);
  const Vector numeric =
      finite_diff_grad([&](const Vector &x) { return bound_at(inst, layout, x); }, x0, h);

  GradCheckReport out;
  for (const BlockSpan &b : layout.blocks()) {
    double worst = 0.0;
    for (Index i = 0; i < b.size; ++i)
      worst = std::max(worst, rel_err(analytic(b.offset + i), numeric(b.offset + i)));
    out.per_block[b.name] = worst;
    out.max_rel_err = std::max(out.max_rel_err, worst);
  }
  return out;
}

/// Finite-difference verification of the kernel-level gradients
/// (kmm_grads and psi_grads) on one random instance.
inline GradCheckReport check_kernel_gradients(std::uint64_t seed, double h = 1e-5) {
  const GradCheckInstance inst = random_gradcheck_instance(seed, true);
  const InducingSet inducing = inst.blocks.inducing();
  const KernelHyperparams theta = inst.blocks.theta();
  const DataPoint &point = inst.points.front();
  const Index m = inst.m, q = inst.q;

  GradCheckReport out;
  auto record = [&](const std::string &name, double err) {
    auto it = out.per_block.find(name);
    if (it == out.per_block.end())
      out.per_block[name] = err;
    else
      it->second = std::max(it->second, err);
    out.max_rel_err = std::max(out.max_rel_err, err);
  };

  // K_mm blocks.
  const KmmGrads kg = kmm_grads(inducing, theta);
  auto kmm_at = [&](const Matrix &z, double sf2_mult, Index alpha_idx, double alpha_mult) {
    Vector alpha = theta.alpha();
    if (alpha_idx >= 0) alpha(alpha_idx) *= alpha_mult;
    const auto th = KernelHyperparams::from_values(theta.sigma_f_sq() * sf2_mult, alpha);
    return kernel_matrix(z, z, th);
  };
  for (Index j = 0; j < m; ++j) {
    for (Index k = 0; k < q; ++k) {
      const double hz = h * std::max(1.0, std::abs(inducing.z(j, k)));
      Matrix zp = inducing.z, zm = inducing.z;
      zp(j, k) += hz;
      zm(j, k) -= hz;
      const Matrix fd = (kmm_at(zp, 1.0, -1, 1.0) - kmm_at(zm, 1.0, -1, 1.0)) / (2.0 * hz);
      for (Index a = 0; a < m; ++a)
        for (Index b = 0; b < m; ++b) {
          const double one_sided = kg.d_z[static_cast<std::size_t>(k)](j, b) * (a == j) +
                                   kg.d_z[static_cast<std::size_t>(k)](j, a) * (b == j);
          record("kmm_z", rel_err(one_sided, fd(a, b)));
        }
    }
  }
  {
    const double hs = h * std::max(1.0, theta.sigma_f_sq());
    const double mp = (theta.sigma_f_sq() + hs) / theta.sigma_f_sq();
    const double mm = (theta.sigma_f_sq() - hs) / theta.sigma_f_sq();
    const Matrix fd = (kmm_at(inducing.z, mp, -1, 1.0) - kmm_at(inducing.z, mm, -1, 1.0)) / (2.0 * hs);
    for (Index a = 0; a < m; ++a)
      for (Index b = 0; b < m; ++b) record("kmm_sigma_f_sq", rel_err(kg.d_sigma_f_sq(a, b), fd(a, b)));
  }
  for (Index k = 0; k < q; ++k) {
    const double a_k = theta.alpha()(k);
    const double ha = h * std::max(1.0, a_k);
    const Matrix fd =
        (kmm_at(inducing.z, 1.0, k, (a_k + ha) / a_k) - kmm_at(inducing.z, 1.0, k, (a_k - ha) / a_k)) /
        (2.0 * ha);
    for (Index a = 0; a < m; ++a)
      for (Index b = 0; b < m; ++b)
        record("kmm_alpha", rel_err(kg.d_alpha[static_cast<std::size_t>(k)](a, b), fd(a, b)));
  }

  // psi blocks, every variable group.
  const PsiGrads pg = psi_grads(point.embedding, inducing, theta);
  auto psi_at = [&](const Matrix &z, double sf2, const Vector &alpha, const Vector &mu,
                    const Vector &s) {
    return psi_point(VariationalEmbedding(mu, s), InducingSet(z),
                     KernelHyperparams::from_values(sf2, alpha));
  };
  const Vector mu0 = point.embedding.mu, s0 = point.embedding.s;
  const double sf20 = theta.sigma_f_sq();
  const Vector alpha0 = theta.alpha();

  for (Index j = 0; j < m; ++j)
    for (Index k = 0; k < q; ++k) {
      const double hz = h * std::max(1.0, std::abs(inducing.z(j, k)));
      Matrix zp = inducing.z, zm = inducing.z;
      zp(j, k) += hz;
      zm(j, k) -= hz;
      const PsiPoint pp = psi_at(zp, sf20, alpha0, mu0, s0);
      const PsiPoint pm = psi_at(zm, sf20, alpha0, mu0, s0);
      for (Index a = 0; a < m; ++a) {
        const double fd1 = (pp.psi1(a) - pm.psi1(a)) / (2.0 * hz);
        record("psi1_z", rel_err(a == j ? pg.d_psi1_d_z(j, k) : 0.0, fd1));
        for (Index b = 0; b < m; ++b) {
          const double fd2 = (pp.psi2(a, b) - pm.psi2(a, b)) / (2.0 * hz);
          const Matrix &gz = pg.d_psi2_d_z[static_cast<std::size_t>(k)];
          const double one_sided = gz(j, b) * (a == j) + gz(j, a) * (b == j);
          record("psi2_z", rel_err(one_sided, fd2));
        }
      }
    }

  auto check_scalar_group = [&](const std::string &name1, const std::string &name2, double base,
                                auto eval, const Vector &d1_col, const Matrix &d2_full) {
    const double hh = h * std::max(1.0, std::abs(base));
    const PsiPoint pp = eval(base + hh);
    const PsiPoint pm = eval(base - hh);
    for (Index a = 0; a < m; ++a) {
      record(name1, rel_err(d1_col(a), (pp.psi1(a) - pm.psi1(a)) / (2.0 * hh)));
      for (Index b = 0; b < m; ++b)
        record(name2, rel_err(d2_full(a, b), (pp.psi2(a, b) - pm.psi2(a, b)) / (2.0 * hh)));
    }
  };

  check_scalar_group("psi1_sigma_f_sq", "psi2_sigma_f_sq", sf20,
                     [&](double v) { return psi_at(inducing.z, v, alpha0, mu0, s0); },
                     pg.d_psi1_d_sigma_f_sq, pg.d_psi2_d_sigma_f_sq);
  for (Index k = 0; k < q; ++k) {
    check_scalar_group("psi1_alpha", "psi2_alpha", alpha0(k),
                       [&](double v) {
                         Vector alpha = alpha0;
                         alpha(k) = v;
                         return psi_at(inducing.z, sf20, alpha, mu0, s0);
                       },
                       pg.d_psi1_d_alpha.col(k), pg.d_psi2_d_alpha[static_cast<std::size_t>(k)]);
    check_scalar_group("psi1_mu", "psi2_mu", mu0(k),
                       [&](double v) {
                         Vector mu = mu0;
                         mu(k) = v;
                         return psi_at(inducing.z, sf20, alpha0, mu, s0);
                       },
                       pg.d_psi1_d_mu.col(k), pg.d_psi2_d_mu[static_cast<std::size_t>(k)]);
    check_scalar_group("psi1_s", "psi2_s", s0(k),
                       [&](double v) {
                         Vector s = s0;
                         s(k) = v;
                         return psi_at(inducing.z, sf20, alpha0, mu0, s);
                       },
                       pg.d_psi1_d_s.col(k), pg.d_psi2_d_s[static_cast<std::size_t>(k)]);
  }

  // psi0: only the sigma_f^2 derivative is nonzero and equals 1.
  record("psi0_sigma_f_sq", rel_err(1.0, (psi_at(inducing.z, sf20 + h, alpha0, mu0, s0).psi0 -
                                          psi_at(inducing.z, sf20 - h, alpha0, mu0, s0).psi0) /
                                             (2.0 * h)));
  return out;
}

}  // namespace dvgp
