#include "alignlab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "alignlab/errors.hpp"

namespace alignlab {

namespace {

void require_pair(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ShapeError("paired series must have equal length");
  if (xs.size() < 2) throw ShapeError("paired series need at least two points");
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) throw NonFiniteError("series contains non-finite values");
}

double mean(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t start = 0; start < n;) {
    std::size_t stop = start + 1;
    while (stop < n && values[order[stop]] == values[order[start]]) ++stop;
    // Positions start..stop-1 hold ranks start+1..stop.
    const double shared = 0.5 * static_cast<double>(start + 1 + stop);
    for (std::size_t t = start; t < stop; ++t) ranks[order[t]] = shared;
    start = stop;
  }
  return ranks;
}

double pearson_r(std::span<const double> xs, std::span<const double> ys) {
  require_pair(xs, ys);
  const double mx = mean(xs);
  const double my = mean(ys);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelationError("correlation of a constant series");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman_rho(std::span<const double> xs, std::span<const double> ys) {
  require_pair(xs, ys);
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  return pearson_r(rx, ry);
}

std::optional<double> try_spearman(std::span<const double> xs, std::span<const double> ys) {
  try {
    return spearman_rho(xs, ys);
  } catch (const UndefinedCorrelationError&) {
    return std::nullopt;
  }
}

std::optional<double> try_pearson(std::span<const double> xs, std::span<const double> ys) {
  try {
    return pearson_r(xs, ys);
  } catch (const UndefinedCorrelationError&) {
    return std::nullopt;
  }
}

LinearFit linear_fit(std::span<const double> xs, std::span<const double> ys) {
  require_pair(xs, ys);
  const double mx = mean(xs);
  const double my = mean(ys);
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  if (sxx == 0.0) throw UndefinedCorrelationError("linear fit needs at least two distinct x values");
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

double quantile(std::span<const double> values, double q) {
  if (values.empty()) throw ShapeError("quantile of an empty sample");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double median(std::span<const double> values) { return quantile(values, 0.5); }

BoxStats box_stats(std::span<const double> values) {
  if (values.empty()) throw ShapeError("box stats of an empty group");
  BoxStats box;
  box.count = values.size();
  box.median = quantile(values, 0.5);
  box.q1 = quantile(values, 0.25);
  box.q3 = quantile(values, 0.75);
  const double iqr = box.q3 - box.q1;
  const double lo_fence = box.q1 - 1.5 * iqr;
  const double hi_fence = box.q3 + 1.5 * iqr;
  box.whisker_low = std::numeric_limits<double>::infinity();
  box.whisker_high = -std::numeric_limits<double>::infinity();
  for (double v : values) {
    if (v < lo_fence || v > hi_fence) {
      box.outliers.push_back(v);
      continue;
    }
    box.whisker_low = std::min(box.whisker_low, v);
    box.whisker_high = std::max(box.whisker_high, v);
  }
  std::sort(box.outliers.begin(), box.outliers.end());
  return box;
}

}  // namespace alignlab
