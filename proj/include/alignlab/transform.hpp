#pragma once

#include <filesystem>
#include <vector>

#include "alignlab/common.hpp"
#include "alignlab/random.hpp"

namespace alignlab {

/// One bijective layer: z = leaky(W x + b) with leaky(t) = t for t >= 0 and
/// slope * t otherwise.
struct TransformLayer {
  MatrixXd weight;  // dim x dim
  VectorXd bias;
  double negative_slope = 0.2;
};

/// Frozen heterogeneity map for modality 2. Immutable after construction.
class TransformNet {
 public:
  static constexpr double kDefaultMaxCondition = 1e8;

  explicit TransformNet(std::vector<TransformLayer> layers,
                        double max_condition = kDefaultMaxCondition);

  [[nodiscard]] std::size_t depth() const { return layers_.size(); }
  [[nodiscard]] Index dim() const { return layers_.front().weight.rows(); }
  [[nodiscard]] const std::vector<TransformLayer>& layers() const { return layers_; }
  [[nodiscard]] double max_condition() const { return max_condition_; }

  /// Little-endian: "PHI1", u8 version, u32 depth, u32 dim, then per layer
  /// the row-major f64 weight, f64 bias and f64 slope.
  void save(const std::filesystem::path& path) const;
  static TransformNet load(const std::filesystem::path& path);

  friend bool operator==(const TransformNet& a, const TransformNet& b);

 private:
  std::vector<TransformLayer> layers_;
  double max_condition_;
};

/// Orthogonalized Gaussian weights, Gaussian biases, slope 0.2.
TransformNet sample_transform(Index dim, std::size_t depth, Rng& rng);

MatrixXd apply_transform(const TransformNet& net, const MatrixXd& x);

/// Layer-wise inverse in reverse order. Throws InvertibilityError when a
/// weight's condition number exceeds the net's bound.
MatrixXd invert_transform(const TransformNet& net, const MatrixXd& z);

}  // namespace alignlab
