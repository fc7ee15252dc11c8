#pragma once

// Representation-alignment metrics between two feature sets of the same n
// samples. All functions take rows as samples and accept any dense Eigen
// expression; the scalar type follows the first argument.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "alignlab/common.hpp"
#include "alignlab/errors.hpp"
#include "alignlab/text_format.hpp"

namespace alignlab {

template <typename Scalar>
struct Embedding {
  Matrix<Scalar> values;
  bool centered = false;
  bool normalized = false;
  bool truncated = false;
  std::vector<Index> zero_rows;  // rows left unnormalized by preprocess_for_mknn
};

using EmbeddingMatrix = Embedding<double>;

enum class Metric { Cka, CkaUnbiased, CkaRbf, Svcca, MutualKnn };

inline std::string_view metric_name(Metric m) {
  switch (m) {
    case Metric::Cka:
      return "cka";
    case Metric::CkaUnbiased:
      return "cka_unbiased";
    case Metric::CkaRbf:
      return "cka_rbf";
    case Metric::Svcca:
      return "svcca";
    case Metric::MutualKnn:
      return "mutual_knn";
  }
  return "cka";
}

inline Metric parse_metric(std::string_view name) {
  for (auto m : {Metric::Cka, Metric::CkaUnbiased, Metric::CkaRbf, Metric::Svcca, Metric::MutualKnn})
    if (metric_name(m) == name) return m;
  throw ConfigError("unknown metric '" + std::string(name) + "'");
}

struct MetricParams {
  Index knn_k = 100;
  double svcca_keep = 0.99;
  double svcca_ridge = 1e-10;
  /// Clip + row-normalize before mutual-KNN (used for external embeddings).
  bool mknn_preprocess = false;
};

struct MknnDiagnostics {
  bool duplicate_rows = false;
};

namespace detail {

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& z) {
  if (!z.allFinite()) throw NonFiniteError("embedding contains non-finite values");
}

template <typename D1, typename D2>
void require_same_rows(const Eigen::MatrixBase<D1>& a, const Eigen::MatrixBase<D2>& b) {
  if (a.rows() != b.rows()) throw ShapeError("feature sets must share the sample count");
}

template <typename Derived>
bool is_centered(const Eigen::MatrixBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  if (z.size() == 0) return true;
  const Scalar scale = std::max(Scalar(1), z.cwiseAbs().maxCoeff());
  // 1e-9 for double; single precision gets the same number of ulps.
  const Scalar tol = std::max(Scalar(1e-9), Scalar(1e7) * std::numeric_limits<Scalar>::epsilon()) * scale;
  return (z.colwise().mean().cwiseAbs().array() <= tol).all();
}

template <typename Derived>
void require_centered(const Eigen::MatrixBase<Derived>& z) {
  if (!is_centered(z)) throw PreconditionError("input must be column-centered");
}

// Unbiased HSIC of two n x n kernels: zeroed diagonals, n(n-3) normalization.
template <typename Scalar>
Scalar unbiased_hsic(const Matrix<Scalar>& k, const Matrix<Scalar>& l) {
  const auto n = static_cast<Scalar>(k.rows());
  Matrix<Scalar> kt = k;
  Matrix<Scalar> lt = l;
  kt.diagonal().setZero();
  lt.diagonal().setZero();
  const Vector<Scalar> k_rows = kt.rowwise().sum();
  const Vector<Scalar> l_rows = lt.rowwise().sum();
  const Scalar trace_kl = kt.cwiseProduct(lt).sum();
  const Scalar sum_k = k_rows.sum();
  const Scalar sum_l = l_rows.sum();
  return (trace_kl + sum_k * sum_l / ((n - 1) * (n - 2)) - Scalar(2) / (n - 2) * k_rows.dot(l_rows)) /
         (n * (n - 3));
}

template <typename Scalar>
Scalar unbiased_cka_from_kernels(const Matrix<Scalar>& k, const Matrix<Scalar>& l) {
  const Scalar kl = unbiased_hsic(k, l);
  const Scalar kk = unbiased_hsic(k, k);
  const Scalar ll = unbiased_hsic(l, l);
  // Self-HSIC of a constant kernel is zero up to rounding.
  auto degenerate = [](Scalar self, const Matrix<Scalar>& m) {
    const auto n = static_cast<Scalar>(m.rows());
    const Scalar scale = m.squaredNorm() / (n * (n - 3));
    return !(self > Scalar(1e-12) * scale) || !(self > std::numeric_limits<Scalar>::min());
  };
  if (degenerate(kk, k) || degenerate(ll, l))
    throw DegenerateMetricError("unbiased CKA undefined for a zero-variance kernel");
  return kl / std::sqrt(kk * ll);
}

template <typename Derived>
std::vector<typename Derived::Scalar> pairwise_distances(const Eigen::MatrixBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  const Index n = z.rows();
  std::vector<Scalar> d;
  d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) d.push_back((z.row(i) - z.row(j)).norm());
  return d;
}

// Sorted k nearest neighbours of every row, self excluded, ties by index.
// Distances are sums of squared coordinate differences so equal geometry
// yields bit-equal distances.
template <typename Derived>
std::vector<std::vector<Index>> knn_lists(const Eigen::MatrixBase<Derived>& z, Index k) {
  using Scalar = typename Derived::Scalar;
  const Index n = z.rows();
  std::vector<std::vector<Index>> lists(static_cast<std::size_t>(n));
  std::vector<std::pair<Scalar, Index>> cand;
  cand.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    cand.clear();
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      Scalar dist = 0;
      for (Index c = 0; c < z.cols(); ++c) {
        const Scalar diff = z(i, c) - z(j, c);
        dist += diff * diff;
      }
      cand.emplace_back(dist, j);
    }
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    auto& out = lists[static_cast<std::size_t>(i)];
    out.reserve(static_cast<std::size_t>(k));
    for (Index t = 0; t < k; ++t) out.push_back(cand[static_cast<std::size_t>(t)].second);
    std::sort(out.begin(), out.end());
  }
  return lists;
}

template <typename Derived>
bool has_duplicate_rows(const Eigen::MatrixBase<Derived>& z) {
  std::vector<Index> order(static_cast<std::size_t>(z.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  auto less = [&](Index a, Index b) {
    for (Index c = 0; c < z.cols(); ++c)
      if (z(a, c) != z(b, c)) return z(a, c) < z(b, c);
    return false;
  };
  std::sort(order.begin(), order.end(), less);
  for (std::size_t t = 1; t < order.size(); ++t)
    if (!less(order[t - 1], order[t])) return true;
  return false;
}

// Linear-interpolation quantile of a non-empty sample.
template <typename Scalar>
Scalar quantile(std::vector<Scalar> values, double q) {
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const auto frac = static_cast<Scalar>(pos - static_cast<double>(lo));
  return values[lo] + frac * (values[hi] - values[lo]);
}

template <typename Scalar>
Matrix<Scalar> inverse_sqrt_spd(const Matrix<Scalar>& m) {
  const Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> eig(m);
  const Vector<Scalar> inv = eig.eigenvalues().cwiseMax(std::numeric_limits<Scalar>::min()).cwiseSqrt().cwiseInverse();
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

// Principal-component scores explaining at least `keep` of the variance.
template <typename Scalar>
Matrix<Scalar> reduce_by_variance(const Matrix<Scalar>& z, double keep) {
  const Eigen::BDCSVD<Matrix<Scalar>> svd(z, Eigen::ComputeThinU);
  const Vector<Scalar> var = svd.singularValues().cwiseAbs2();
  const Scalar total = var.sum();
  if (!(total > Scalar(0))) throw DegenerateMetricError("SVCCA undefined for a rank-0 side");
  Index kept = 0;
  Scalar acc = 0;
  while (kept < var.size()) {
    acc += var(kept++);
    if (acc >= static_cast<Scalar>(keep) * total) break;
  }
  return svd.matrixU().leftCols(kept) * svd.singularValues().head(kept).asDiagonal();
}

}  // namespace detail

/// Subtracts column means. Constant columns become exactly zero.
template <typename Derived>
Embedding<typename Derived::Scalar> center_columns(const Eigen::MatrixBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  if (z.rows() < 2) throw ShapeError("centering needs at least two samples");
  detail::require_finite(z);
  Embedding<Scalar> out;
  out.values = z;
  for (Index j = 0; j < z.cols(); ++j) {
    auto col = out.values.col(j);
    if (col.maxCoeff() == col.minCoeff())
      col.setZero();
    else
      col.array() -= col.mean();
  }
  out.centered = true;
  return out;
}

/// Linear-kernel HSIC, ||Z1^T Z2||_F^2 / (n-1)^2. Inputs must be centered.
template <typename D1, typename D2>
typename D1::Scalar hsic_linear(const Eigen::MatrixBase<D1>& z1, const Eigen::MatrixBase<D2>& z2) {
  using Scalar = typename D1::Scalar;
  detail::require_same_rows(z1, z2);
  detail::require_centered(z1);
  detail::require_centered(z2);
  const auto m = static_cast<Scalar>(z1.rows() - 1);
  return (z1.transpose() * z2).squaredNorm() / (m * m);
}

/// Same quantity through the Gram matrices, Tr(Z1 Z1^T Z2 Z2^T) / (n-1)^2.
template <typename D1, typename D2>
typename D1::Scalar hsic_linear_trace(const Eigen::MatrixBase<D1>& z1, const Eigen::MatrixBase<D2>& z2) {
  using Scalar = typename D1::Scalar;
  detail::require_same_rows(z1, z2);
  detail::require_centered(z1);
  detail::require_centered(z2);
  const Matrix<Scalar> k = z1 * z1.transpose();
  const Matrix<Scalar> l = z2 * z2.transpose();
  const auto m = static_cast<Scalar>(z1.rows() - 1);
  return (k * l).trace() / (m * m);
}

template <typename D1, typename D2>
typename D1::Scalar cka_linear(const Eigen::MatrixBase<D1>& z1, const Eigen::MatrixBase<D2>& z2) {
  using Scalar = typename D1::Scalar;
  const Scalar xy = hsic_linear(z1, z2);
  const Scalar xx = hsic_linear(z1, z1);
  const Scalar yy = hsic_linear(z2, z2);
  if (!(xx > Scalar(0)) || !(yy > Scalar(0)))
    throw DegenerateMetricError("CKA undefined for a zero-variance feature set");
  return xy / std::sqrt(xx * yy);
}

/// Unbiased HSIC estimator on linear kernels. May be slightly negative.
template <typename D1, typename D2>
typename D1::Scalar cka_unbiased(const Eigen::MatrixBase<D1>& z1, const Eigen::MatrixBase<D2>& z2) {
  using Scalar = typename D1::Scalar;
  detail::require_same_rows(z1, z2);
  if (z1.rows() < 4) throw ShapeError("unbiased CKA needs at least four samples");
  detail::require_finite(z1);
  detail::require_finite(z2);
  const Matrix<Scalar> k = z1 * z1.transpose();
  const Matrix<Scalar> l = z2 * z2.transpose();
  return detail::unbiased_cka_from_kernels(k, l);
}

/// Median pairwise Euclidean distance between rows.
template <typename Derived>
typename Derived::Scalar median_pairwise_distance(const Eigen::MatrixBase<Derived>& z) {
  if (z.rows() < 2) throw ShapeError("bandwidth needs at least two samples");
  return detail::quantile(detail::pairwise_distances(z), 0.5);
}

/// exp(-||zi - zj||^2 / (2 sigma^2)).
template <typename Derived>
Matrix<typename Derived::Scalar> rbf_kernel(const Eigen::MatrixBase<Derived>& z, typename Derived::Scalar sigma) {
  using Scalar = typename Derived::Scalar;
  const Index n = z.rows();
  Matrix<Scalar> k(n, n);
  const Scalar denom = Scalar(2) * sigma * sigma;
  for (Index i = 0; i < n; ++i) {
    k(i, i) = Scalar(1);
    for (Index j = i + 1; j < n; ++j) k(i, j) = k(j, i) = std::exp(-(z.row(i) - z.row(j)).squaredNorm() / denom);
  }
  return k;
}

/// Unbiased CKA on RBF kernels; each side's bandwidth is its own median
/// pairwise distance.
template <typename D1, typename D2>
typename D1::Scalar cka_rbf(const Eigen::MatrixBase<D1>& z1, const Eigen::MatrixBase<D2>& z2) {
  using Scalar = typename D1::Scalar;
  detail::require_same_rows(z1, z2);
  if (z1.rows() < 4) throw ShapeError("RBF CKA needs at least four samples");
  detail::require_finite(z1);
  detail::require_finite(z2);
  const Scalar s1 = median_pairwise_distance(z1);
  const Scalar s2 = static_cast<Scalar>(median_pairwise_distance(z2));
  if (!(s1 > Scalar(0)) || !(s2 > Scalar(0)))
    throw DegenerateMetricError("RBF bandwidth is zero (median pairwise distance 0)");
  const Matrix<Scalar> k = rbf_kernel(z1, s1);
  const Matrix<Scalar> l = rbf_kernel(z2.template cast<Scalar>(), s2);
  return detail::unbiased_cka_from_kernels(k, l);
}

/// Mean fraction of shared k-nearest neighbours:
/// (1 / (n k)) sum_i |knn_k(Z1, i) ∩ knn_k(Z2, i)|.
template <typename D1, typename D2>
double mutual_knn(const Eigen::MatrixBase<D1>& z1, const Eigen::MatrixBase<D2>& z2, Index k,
                  MknnDiagnostics* diagnostics = nullptr) {
  detail::require_same_rows(z1, z2);
  const Index n = z1.rows();
  if (k < 1 || k >= n) throw ShapeError("mutual-KNN needs 1 <= k < n");
  detail::require_finite(z1);
  detail::require_finite(z2);
  if (diagnostics) diagnostics->duplicate_rows = detail::has_duplicate_rows(z1) || detail::has_duplicate_rows(z2);
  const auto a = detail::knn_lists(z1, k);
  const auto b = detail::knn_lists(z2, k);
  std::size_t shared = 0;
  std::vector<Index> common;
  for (std::size_t i = 0; i < a.size(); ++i) {
    common.clear();
    std::set_intersection(a[i].begin(), a[i].end(), b[i].begin(), b[i].end(), std::back_inserter(common));
    shared += common.size();
  }
  return static_cast<double>(shared) / (static_cast<double>(n) * static_cast<double>(k));
}

/// Clips every entry to the matrix-wide 95th-percentile magnitude, then
/// scales rows to unit length. All-zero rows are left as is and listed.
template <typename Derived>
Embedding<typename Derived::Scalar> preprocess_for_mknn(const Eigen::MatrixBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  detail::require_finite(z);
  Embedding<Scalar> out;
  out.values = z;
  if (z.size() == 0) return out;
  std::vector<Scalar> mags(out.values.data(), out.values.data() + out.values.size());
  for (auto& v : mags) v = std::abs(v);
  const Scalar cap = detail::quantile(std::move(mags), 0.95);
  out.values = out.values.cwiseMax(-cap).cwiseMin(cap);
  out.truncated = true;
  for (Index i = 0; i < out.values.rows(); ++i) {
    const Scalar norm = out.values.row(i).norm();
    if (norm > Scalar(0))
      out.values.row(i) /= norm;
    else
      out.zero_rows.push_back(i);
  }
  out.normalized = true;
  return out;
}

/// SVCCA: per-side SVD keeping the fewest components that explain `keep` of
/// the variance, then the mean canonical correlation of the reduced sets.
/// Inputs must be centered.
template <typename D1, typename D2>
typename D1::Scalar svcca(const Eigen::MatrixBase<D1>& z1, const Eigen::MatrixBase<D2>& z2,
                          double keep = 0.99, double ridge = 1e-10) {
  using Scalar = typename D1::Scalar;
  detail::require_same_rows(z1, z2);
  detail::require_finite(z1);
  detail::require_finite(z2);
  detail::require_centered(z1);
  detail::require_centered(z2);
  const Matrix<Scalar> r1 = detail::reduce_by_variance(Matrix<Scalar>(z1), keep);
  const Matrix<Scalar> r2 = detail::reduce_by_variance(Matrix<Scalar>(z2.template cast<Scalar>()), keep);
  const Index n = z1.rows();
  if (n <= std::max(r1.cols(), r2.cols())) throw PreconditionError("SVCCA needs more samples than kept components");

  const auto denom = static_cast<Scalar>(n - 1);
  // Ridge is relative to the mean variance so the score stays scale invariant.
  auto regularized = [&](const Matrix<Scalar>& r) {
    Matrix<Scalar> cov = r.transpose() * r / denom;
    const Scalar mean_var = cov.trace() / static_cast<Scalar>(cov.rows());
    cov.diagonal().array() += static_cast<Scalar>(ridge) * mean_var;
    return cov;
  };
  const Matrix<Scalar> cross = r1.transpose() * r2 / denom;
  const Matrix<Scalar> t = detail::inverse_sqrt_spd(regularized(r1)) * cross * detail::inverse_sqrt_spd(regularized(r2));
  const Eigen::JacobiSVD<Matrix<Scalar>> svd(t);
  const Vector<Scalar> rho = svd.singularValues().cwiseMin(Scalar(1)).cwiseMax(Scalar(0));
  return rho.mean();
}

/// Metric on raw features with the metric's own preprocessing: centering for
/// linear CKA and SVCCA, optional clip+normalize for mutual-KNN.
template <typename D1, typename D2>
double evaluate_metric(Metric metric, const Eigen::MatrixBase<D1>& z1, const Eigen::MatrixBase<D2>& z2,
                       const MetricParams& params = {}) {
  switch (metric) {
    case Metric::Cka:
      return static_cast<double>(cka_linear(center_columns(z1).values, center_columns(z2).values));
    case Metric::CkaUnbiased:
      return static_cast<double>(cka_unbiased(z1, z2));
    case Metric::CkaRbf:
      return static_cast<double>(cka_rbf(z1, z2));
    case Metric::Svcca:
      return static_cast<double>(
          svcca(center_columns(z1).values, center_columns(z2).values, params.svcca_keep, params.svcca_ridge));
    case Metric::MutualKnn:
      if (params.mknn_preprocess)
        return mutual_knn(preprocess_for_mknn(z1).values, preprocess_for_mknn(z2).values, params.knn_k);
      return mutual_knn(z1, z2, params.knn_k);
  }
  throw ConfigError("unknown metric");
}

/// Scores over every (layer of encoder 1) x (layer of encoder 2) pair.
struct AlignmentResult {
  Metric metric = Metric::Cka;
  MatrixXd scores;  // NaN marks a degenerate pair
  double best = std::numeric_limits<double>::quiet_NaN();
  Index best_i = -1;
  Index best_j = -1;

  [[nodiscard]] bool missing(Index i, Index j) const { return std::isnan(scores(i, j)); }
};

/// Evaluates `metric` on all layer pairs; degenerate pairs are recorded as
/// missing and excluded from the maximum (first maximum in row-major order).
template <typename Scalar>
AlignmentResult best_layer_pair(const std::vector<Matrix<Scalar>>& stack1, const std::vector<Matrix<Scalar>>& stack2,
                                Metric metric, const MetricParams& params = {}) {
  if (stack1.empty() || stack2.empty()) throw ShapeError("activation stacks must be nonempty");
  const Index rows = stack1.front().rows();
  for (const auto* stack : {&stack1, &stack2})
    for (const auto& layer : *stack)
      if (layer.rows() != rows) throw ShapeError("activation stacks must share sample rows");

  AlignmentResult result;
  result.metric = metric;
  result.scores.setConstant(static_cast<Index>(stack1.size()), static_cast<Index>(stack2.size()),
                            std::numeric_limits<double>::quiet_NaN());
  for (Index i = 0; i < result.scores.rows(); ++i) {
    for (Index j = 0; j < result.scores.cols(); ++j) {
      try {
        result.scores(i, j) = evaluate_metric(metric, stack1[static_cast<std::size_t>(i)],
                                              stack2[static_cast<std::size_t>(j)], params);
      } catch (const DegenerateMetricError&) {
      }
      if (!result.missing(i, j) && (result.best_i < 0 || result.scores(i, j) > result.best)) {
        result.best = result.scores(i, j);
        result.best_i = i;
        result.best_j = j;
      }
    }
  }
  if (result.best_i < 0) throw DegenerateMetricError("every layer pair is degenerate");
  return result;
}

/// CSV `layer_i,layer_j,score` (0-based layers, empty score when missing).
inline void write_alignment_csv(const AlignmentResult& result, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "layer_i,layer_j,score\n";
  for (Index i = 0; i < result.scores.rows(); ++i)
    for (Index j = 0; j < result.scores.cols(); ++j)
      out << i << ',' << j << ',' << (result.missing(i, j) ? std::string{} : format_double(result.scores(i, j)))
          << '\n';
}

}  // namespace alignlab
