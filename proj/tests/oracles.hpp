#pragma once
// Independent reference computations. Deliberately naive: none of these share
// code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

// k nearest rows of row i under exact integer squared distance; ties go to
// the lower index. Rows are small-integer vectors.
inline std::vector<int> knn_int(const std::vector<std::vector<int>>& rows, int i, int k) {
  std::vector<std::pair<long long, int>> d;
  for (int j = 0; j < static_cast<int>(rows.size()); ++j) {
    if (j == i) continue;
    long long s = 0;
    for (std::size_t c = 0; c < rows[i].size(); ++c) {
      const long long t = rows[i][c] - rows[j][c];
      s += t * t;
    }
    d.emplace_back(s, j);
  }
  std::sort(d.begin(), d.end());
  std::vector<int> out;
  for (int t = 0; t < k; ++t) out.push_back(d[t].second);
  return out;
}

inline double mutual_knn_int(const std::vector<std::vector<int>>& a, const std::vector<std::vector<int>>& b, int k) {
  long shared = 0;
  const int n = static_cast<int>(a.size());
  for (int i = 0; i < n; ++i) {
    const auto na = knn_int(a, i, k);
    const auto nb = knn_int(b, i, k);
    for (int x : na)
      for (int y : nb) shared += (x == y);
  }
  return static_cast<double>(shared) / (static_cast<double>(n) * k);
}

// Rank by counting: #smaller + (#equal + 1) / 2, with #equal counting itself.
inline std::vector<long double> count_ranks(const std::vector<double>& v) {
  std::vector<long double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    long less = 0;
    long equal = 0;
    for (double w : v) {
      less += (w < v[i]);
      equal += (w == v[i]);
    }
    r[i] = static_cast<long double>(less) + (static_cast<long double>(equal) + 1.0L) / 2.0L;
  }
  return r;
}

// Textbook covariance formula in extended precision. Throws on a constant series.
inline long double pearson(const std::vector<long double>& x, const std::vector<long double>& y) {
  const auto n = static_cast<long double>(x.size());
  long double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  const long double cov = n * sxy - sx * sy;
  const long double vx = n * sxx - sx * sx;
  const long double vy = n * syy - sy * sy;
  if (vx == 0 || vy == 0) throw std::domain_error("constant series");
  return cov / std::sqrt(vx * vy);
}

inline std::vector<long double> widen(const std::vector<double>& v) { return {v.begin(), v.end()}; }

inline long double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson(count_ranks(x), count_ranks(y));
}

// Least squares through the normal equations [n Σx; Σx Σx²][b; m] = [Σy; Σxy].
inline std::pair<long double, long double> normal_equations_fit(const std::vector<double>& x,
                                                                const std::vector<double>& y) {
  Eigen::Matrix<long double, 2, 2> a = Eigen::Matrix<long double, 2, 2>::Zero();
  Eigen::Matrix<long double, 2, 1> b = Eigen::Matrix<long double, 2, 1>::Zero();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const long double xi = x[i];
    a(0, 0) += 1;
    a(0, 1) += xi;
    a(1, 1) += xi * xi;
    b(0) += y[i];
    b(1) += xi * y[i];
  }
  a(1, 0) = a(0, 1);
  const Eigen::Matrix<long double, 2, 1> sol = a.fullPivLu().solve(b);
  return {sol(1), sol(0)};  // slope, intercept
}

// Central differences of f at p, one coordinate at a time.
inline Eigen::VectorXd finite_difference(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd p,
                                         double h = 1e-5) {
  Eigen::VectorXd g(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double keep = p(i);
    p(i) = keep + h;
    const double up = f(p);
    p(i) = keep - h;
    const double down = f(p);
    p(i) = keep;
    g(i) = (up - down) / (2 * h);
  }
  return g;
}

// Exact P(y = 1) for majority-with-tiebreak over s fair bits: enumerate all
// 2^s patterns; a tie is decided by the first selected bit.
inline double majority_marginal(int s) {
  long ones = 0;
  for (long pattern = 0; pattern < (1L << s); ++pattern) {
    const int pop = __builtin_popcountl(static_cast<unsigned long>(pattern));
    if (2 * pop > s)
      ++ones;
    else if (2 * pop == s && (pattern & 1))
      ++ones;
  }
  return static_cast<double>(ones) / static_cast<double>(1L << s);
}

// Biased HSIC straight from the definition with the centering matrix H.
inline double hsic_with_centering_matrix(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  const auto n = x.rows();
  const Eigen::MatrixXd h =
      Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
  const Eigen::MatrixXd k = x * x.transpose();
  const Eigen::MatrixXd l = y * y.transpose();
  return (k * h * l * h).trace() / std::pow(static_cast<double>(n - 1), 2);
}

}  // namespace oracle
