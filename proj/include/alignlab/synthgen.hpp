#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "alignlab/common.hpp"
#include "alignlab/random.hpp"

namespace alignlab {

enum class LabelFn { MajorityTiebreak, Or, Parity };

std::string_view to_string(LabelFn fn);
LabelFn parse_label_fn(std::string_view name);

/// Generation parameters for one two-modality dataset.
///
/// `redundant` (R) task bits come from the shared block x_r and `unique` (U)
/// from the per-modality blocks, ceil(U/2) in x_u1 and floor(U/2) in x_u2.
struct GenConfig {
  std::size_t n_train = 16384;
  std::size_t n_val = 2048;
  std::size_t n_test = 2048;
  std::size_t redundant_dim = 8;
  std::size_t unique_dim = 4;
  std::size_t redundant = 8;
  std::size_t unique = 0;
  std::size_t task_features = 8;
  LabelFn label_fn = LabelFn::MajorityTiebreak;
  std::uint64_t seed = 0;

  [[nodiscard]] std::size_t input_dim() const { return redundant_dim + unique_dim; }

  /// Throws ConfigError on a broken budget or mask overflow.
  void validate() const;
};

using BitMatrix = Matrix<std::uint8_t>;
using BitVector = Vector<std::uint8_t>;

struct BitComponents {
  BitMatrix x_r;
  BitMatrix x_u1;
  BitMatrix x_u2;

  [[nodiscard]] Index rows() const { return x_r.rows(); }
};

struct TaskMasks {
  BitVector m_r;
  BitVector m_u1;
  BitVector m_u2;

  [[nodiscard]] std::size_t selected() const;
};

/// One split: both modalities and the binary label as reals in {0, 1}.
struct Split {
  MatrixXd x1;
  MatrixXd x2;
  VectorXd y;

  [[nodiscard]] Index rows() const { return y.size(); }
};

struct SyntheticDataset {
  Split train;
  Split val;
  Split test;
  GenConfig config;
  std::size_t d_phi = 0;  // 0 while modality 2 is untransformed
};

BitComponents sample_components(const GenConfig& cfg, std::size_t n, Rng& rng);

TaskMasks build_masks(std::size_t redundant, std::size_t unique, std::size_t redundant_dim,
                      std::size_t unique_dim);

/// Applies the label function to the masked bits of every row. Selected bits
/// are ordered x_r, then x_u1, then x_u2; the majority tie-break uses the
/// first selected bit in that order.
BitVector compute_labels(const BitComponents& comp, const TaskMasks& masks, LabelFn label_fn);

/// Draws the three splits independently from cfg.seed. Modality 2 is left
/// untransformed.
SyntheticDataset generate_dataset(const GenConfig& cfg);

/// CSV `split,x1_0..,x2_0..,y` plus a key=value sidecar at `<path>.meta`.
void export_dataset_csv(const SyntheticDataset& ds, const std::filesystem::path& path);

}  // namespace alignlab
