#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "dvgp/kernel.hpp"
#include "dvgp/psi.hpp"
#include "dvgp/types.hpp"

namespace dvgp {

/// Fixed binary reduction tree over [begin, end): a range splits at
/// begin + ceil(len / 2), recursively, down to single elements.
///
/// Summing through this tree gives a floating-point result that depends
/// only on the index range, not on where the range was previously cut at
/// tree boundaries. Partitioning [0, n) into 2^k shards along the same
/// tree and pairwise-merging the shard partials therefore reproduces the
/// single-shard result bit for bit.
template <typename T, typename LeafFn, typename MergeFn>
T reduce_tree(Index begin, Index end, const LeafFn &leaf, const MergeFn &merge) {
  if (end - begin == 1) return leaf(begin);
  const Index mid = begin + (end - begin + 1) / 2;
  T left = reduce_tree<T>(begin, mid, leaf, merge);
  T right = reduce_tree<T>(mid, end, leaf, merge);
  return merge(std::move(left), std::move(right));
}

/// Pairwise merge of per-shard partials along the same tree. Empty
/// partials (std::nullopt) act as the exact additive identity, so failed
/// or empty shards drop out without perturbing the surviving sums.
template <typename T, typename MergeFn>
std::optional<T> merge_partials(std::vector<std::optional<T>> level, const MergeFn &merge) {
  while (level.size() > 1) {
    std::vector<std::optional<T>> next;
    next.reserve((level.size() + 1) / 2);
    for (std::size_t i = 0; i + 1 < level.size(); i += 2) {
      if (level[i] && level[i + 1])
        next.emplace_back(merge(std::move(*level[i]), std::move(*level[i + 1])));
      else if (level[i])
        next.emplace_back(std::move(level[i]));
      else
        next.emplace_back(std::move(level[i + 1]));
    }
    if (level.size() % 2 == 1) next.emplace_back(std::move(level.back()));
    level = std::move(next);
  }
  return level.empty() ? std::nullopt : std::move(level.front());
}

/// One data point: output row Y_i and the (possibly delta) input density.
struct DataPoint {
  Eigen::RowVectorXd y;
  VariationalEmbedding embedding;
};

/// Accumulated partial terms of the factorized bound:
///   sum_psi2    = sum_i psi2_i            (m x m)
///   sum_psi1t_y = sum_i psi1_i y_i        (m x d)
///   sum_psi0    = sum_i psi0_i
///   sum_yy      = sum_i y_i y_i^T
///   sum_kl      = sum_i KL(q(X_i) || p(X_i))   (0 for delta embeddings)
struct SufficientStats {
  Matrix sum_psi2;
  Matrix sum_psi1t_y;
  double sum_psi0 = 0.0;
  double sum_yy = 0.0;
  double sum_kl = 0.0;
  long n_points = 0;

  static SufficientStats zero(Index m, Index d) {
    SufficientStats s;
    s.sum_psi2 = Matrix::Zero(m, m);
    s.sum_psi1t_y = Matrix::Zero(m, d);
    return s;
  }

  SufficientStats &operator+=(const SufficientStats &other) {
    sum_psi2 += other.sum_psi2;
    sum_psi1t_y += other.sum_psi1t_y;
    sum_psi0 += other.sum_psi0;
    sum_yy += other.sum_yy;
    sum_kl += other.sum_kl;
    n_points += other.n_points;
    return *this;
  }

  friend SufficientStats operator+(SufficientStats a, const SufficientStats &b) {
    a += b;
    return a;
  }

  Index inducing_count() const { return sum_psi2.rows(); }
  Index output_dim() const { return sum_psi1t_y.cols(); }
};

/// KL(N(mu, diag(s)) || N(0, I)) = 1/2 (sum_q (s_q - log s_q) + mu^T mu - Q).
/// See elbo.hpp for the gradient-carrying variant.
inline double kl_value(const VariationalEmbedding &e) {
  require((e.s.array() > 0.0).all(), "kl_value: variances must be positive");
  return 0.5 * ((e.s.array() - e.s.array().log()).sum() + e.mu.squaredNorm() -
                static_cast<double>(e.dim()));
}

inline SufficientStats point_stats(const DataPoint &point, const InducingSet &inducing,
                                   const KernelHyperparams &theta) {
  const PsiPoint p = psi_point(point.embedding, inducing, theta);
  SufficientStats s;
  s.sum_psi2 = p.psi2;
  s.sum_psi1t_y = p.psi1 * point.y;
  s.sum_psi0 = p.psi0;
  s.sum_yy = point.y.squaredNorm();
  s.sum_kl = point.embedding.deterministic() ? 0.0 : kl_value(point.embedding);
  s.n_points = 1;
  return s;
}

/// Sum of per-point statistics over shard[begin, end), reduced through the
/// fixed tree. Empty shards yield all-zero stats with n_points = 0.
inline SufficientStats accumulate_stats(const std::vector<DataPoint> &points, Index begin,
                                        Index end, const InducingSet &inducing,
                                        const KernelHyperparams &theta) {
  require(begin >= 0 && end <= static_cast<Index>(points.size()) && begin <= end,
          "accumulate_stats: invalid shard range");
  if (!points.empty()) {
    const Index q = points.front().embedding.dim();
    const Index d = points.front().y.size();
    for (const DataPoint &p : points) {
      require(p.embedding.dim() == q, "accumulate_stats: embeddings must share one dimension");
      require(p.y.size() == d, "accumulate_stats: outputs must share one dimension");
    }
    require(q == inducing.input_dim(), "accumulate_stats: embedding vs inducing dimension");
  }
  const Index d = points.empty() ? 0 : points.front().y.size();
  if (begin == end) return SufficientStats::zero(inducing.count(), d);
  return reduce_tree<SufficientStats>(
      begin, end, [&](Index i) { return point_stats(points[static_cast<std::size_t>(i)], inducing, theta); },
      [](SufficientStats a, const SufficientStats &b) { return a + b; });
}

inline SufficientStats accumulate_stats(const std::vector<DataPoint> &points,
                                        const InducingSet &inducing,
                                        const KernelHyperparams &theta) {
  return accumulate_stats(points, 0, static_cast<Index>(points.size()), inducing, theta);
}

/// First- and second-moment tensors that let the master assemble the Z and
/// alpha gradients in regression mode (delta embeddings) from a single
/// map-reduce round. With k_i the kernel row of point i,
///   c1[k](j, b) = sum_i k_i(j) y_i(b) x_i(k)     d1[k](j, b) = ... x_i(k)^2
///   c2[k](a, b) = sum_i k_i(a) k_i(b) x_i(k)     d2[k](a, b) = ... x_i(k)^2
/// All are shard-additive, constant-size in n.
struct RegressionMoments {
  std::vector<Matrix> c1, d1;  // q entries, each m x d
  std::vector<Matrix> c2, d2;  // q entries, each m x m

  static RegressionMoments zero(Index m, Index d, Index q) {
    RegressionMoments t;
    t.c1.assign(static_cast<std::size_t>(q), Matrix::Zero(m, d));
    t.d1.assign(static_cast<std::size_t>(q), Matrix::Zero(m, d));
    t.c2.assign(static_cast<std::size_t>(q), Matrix::Zero(m, m));
    t.d2.assign(static_cast<std::size_t>(q), Matrix::Zero(m, m));
    return t;
  }

  RegressionMoments &operator+=(const RegressionMoments &other) {
    for (std::size_t k = 0; k < c1.size(); ++k) {
      c1[k] += other.c1[k];
      d1[k] += other.d1[k];
      c2[k] += other.c2[k];
      d2[k] += other.d2[k];
    }
    return *this;
  }

  friend RegressionMoments operator+(RegressionMoments a, const RegressionMoments &b) {
    a += b;
    return a;
  }
};

inline RegressionMoments point_moments(const DataPoint &point, const InducingSet &inducing,
                                       const KernelHyperparams &theta) {
  require(point.embedding.deterministic(),
          "point_moments: regression moments are defined for delta embeddings only");
  const Index q = inducing.input_dim();
  const Vector k_row = kernel_matrix(inducing.z, point.embedding.mu.transpose(), theta).col(0);
  const Matrix ky = k_row * point.y;           // m x d
  const Matrix kk = k_row * k_row.transpose(); // m x m
  RegressionMoments t;
  t.c1.reserve(static_cast<std::size_t>(q));
  t.d1.reserve(static_cast<std::size_t>(q));
  t.c2.reserve(static_cast<std::size_t>(q));
  t.d2.reserve(static_cast<std::size_t>(q));
  for (Index k = 0; k < q; ++k) {
    const double x = point.embedding.mu(k);
    t.c1.push_back(ky * x);
    t.d1.push_back(ky * (x * x));
    t.c2.push_back(kk * x);
    t.d2.push_back(kk * (x * x));
  }
  return t;
}

inline RegressionMoments accumulate_moments(const std::vector<DataPoint> &points, Index begin,
                                            Index end, const InducingSet &inducing,
                                            const KernelHyperparams &theta) {
  const Index d = points.empty() ? 0 : points.front().y.size();
  if (begin == end) return RegressionMoments::zero(inducing.count(), d, inducing.input_dim());
  return reduce_tree<RegressionMoments>(
      begin, end,
      [&](Index i) { return point_moments(points[static_cast<std::size_t>(i)], inducing, theta); },
      [](RegressionMoments a, const RegressionMoments &b) { return a + b; });
}

}  // namespace dvgp
