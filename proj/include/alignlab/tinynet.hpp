#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "alignlab/common.hpp"

namespace alignlab {

/// Per-layer post-activation hidden outputs, each n x width.
using ActivationStack = std::vector<MatrixXd>;

/// Rectifier MLP with a single-logit head.
///
/// All parameters live in one flat vector so the optimizer and gradient
/// checks can treat the model as a point in R^p. Layer blocks are exposed as
/// Eigen maps into that vector, laid out as W_0, b_0, ..., W_{L-1}, b_{L-1},
/// head weight, head bias with every W stored column-major as (out x in).
class Mlp {
 public:
  static constexpr std::size_t kMaxDepth = 10;

  Mlp(Index in_dim, std::size_t depth, Index width = 12);

  [[nodiscard]] Index in_dim() const { return in_dim_; }
  [[nodiscard]] Index width() const { return width_; }
  [[nodiscard]] std::size_t depth() const { return depth_; }
  [[nodiscard]] Index parameter_count() const { return params_.size(); }

  VectorXd& parameters() { return params_; }
  [[nodiscard]] const VectorXd& parameters() const { return params_; }

  Eigen::Map<MatrixXd> weight(std::size_t layer);
  [[nodiscard]] Eigen::Map<const MatrixXd> weight(std::size_t layer) const;
  Eigen::Map<VectorXd> bias(std::size_t layer);
  [[nodiscard]] Eigen::Map<const VectorXd> bias(std::size_t layer) const;
  Eigen::Map<MatrixXd> head_weight();
  [[nodiscard]] Eigen::Map<const MatrixXd> head_weight() const;
  double& head_bias() { return params_(params_.size() - 1); }
  [[nodiscard]] double head_bias() const { return params_(params_.size() - 1); }

  /// Offsets of each block in the flat parameter vector, for gradients.
  [[nodiscard]] Index weight_offset(std::size_t layer) const;
  [[nodiscard]] Index bias_offset(std::size_t layer) const;
  [[nodiscard]] Index head_offset() const;

  /// Little-endian: "MLP1", u8 version, u32 in_dim, u32 depth, u32 width,
  /// then per layer the row-major f64 weight and f64 bias, then the head.
  void save(const std::filesystem::path& path) const;
  static Mlp load(const std::filesystem::path& path);

  friend bool operator==(const Mlp& a, const Mlp& b) {
    return a.in_dim_ == b.in_dim_ && a.width_ == b.width_ && a.depth_ == b.depth_ &&
           a.params_ == b.params_;
  }

 private:
  [[nodiscard]] Index layer_in(std::size_t layer) const { return layer == 0 ? in_dim_ : width_; }

  Index in_dim_;
  Index width_;
  std::size_t depth_;
  VectorXd params_;
};

struct TrainConfig {
  double learning_rate = 1e-2;
  double weight_decay = 0.0;
  std::size_t epochs = 300;
  std::size_t batch_size = 256;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  Mlp model;
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;
  double best_val_acc = 0.0;
};

struct ForwardResult {
  VectorXd logits;
  ActivationStack activations;
};

/// Hidden weights He-uniform, head LeCun-uniform, biases zero.
Mlp init_mlp(Index in_dim, std::size_t depth, std::uint64_t seed, Index width = 12);

ForwardResult forward_activations(const Mlp& m, const MatrixXd& x);

/// Mean binary cross-entropy on logits.
double loss(const Mlp& m, const MatrixXd& x, const VectorXd& y);

/// Exact gradient of `loss` in the flat parameter layout of `m`.
VectorXd grad_loss(const Mlp& m, const MatrixXd& x, const VectorXd& y);

double evaluate_accuracy(const Mlp& m, const MatrixXd& x, const VectorXd& y);

/// Minibatch AdamW with decoupled weight decay and per-epoch reshuffling.
/// Returns the parameters of the epoch with the best validation accuracy
/// (earliest on ties). Throws DivergedTrainingError on a non-finite loss.
TrainResult train_model(const Mlp& init, const MatrixXd& x_train, const VectorXd& y_train,
                        const MatrixXd& x_val, const VectorXd& y_val, const TrainConfig& cfg);

/// Appends `epoch,train_loss,train_acc,val_acc` rows, writing the header for
/// a new file.
void append_history_csv(const std::vector<EpochMetrics>& history, const std::filesystem::path& path);

}  // namespace alignlab
