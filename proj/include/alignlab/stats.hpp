#pragma once

#include <optional>
#include <span>
#include <vector>

namespace alignlab {

/// Average ranks (1-based); tied values share the mean of their rank span.
std::vector<double> average_ranks(std::span<const double> values);

/// Sample correlation. Throws UndefinedCorrelationError for a constant side
/// and ShapeError for unequal or too-short inputs.
double pearson_r(std::span<const double> xs, std::span<const double> ys);

/// Pearson correlation of average ranks.
double spearman_rho(std::span<const double> xs, std::span<const double> ys);

/// Correlation or nullopt when undefined.
std::optional<double> try_spearman(std::span<const double> xs, std::span<const double> ys);
std::optional<double> try_pearson(std::span<const double> xs, std::span<const double> ys);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
};

/// Ordinary least squares y = slope * x + intercept. Throws
/// UndefinedCorrelationError when all xs are equal.
LinearFit linear_fit(std::span<const double> xs, std::span<const double> ys);

/// Linear-interpolation quantile, q in [0, 1].
double quantile(std::span<const double> values, double q);

struct BoxStats {
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double whisker_low = 0.0;   // smallest point >= q1 - 1.5 IQR
  double whisker_high = 0.0;  // largest point <= q3 + 1.5 IQR
  std::vector<double> outliers;
  std::size_t count = 0;
};

/// Throws ShapeError on an empty group.
BoxStats box_stats(std::span<const double> values);

double median(std::span<const double> values);

}  // namespace alignlab
