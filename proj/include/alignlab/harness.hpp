#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "alignlab/metrics.hpp"
#include "alignlab/stats.hpp"
#include "alignlab/synthgen.hpp"
#include "alignlab/tinynet.hpp"
#include "alignlab/transform.hpp"

namespace alignlab {

struct HyperGrid {
  std::vector<double> learning_rates{1e-1, 1e-2, 1e-3, 1e-4};
  std::vector<double> weight_decays{0.0, 1e-1, 1e-2, 1e-3, 1e-4};
};

/// Every knob of the synthetic study. Settable by name through
/// `apply_setting`, which is what the config file and CLI flags use.
struct SweepConfig {
  std::vector<std::size_t> u_levels{0, 1, 2, 3, 4, 5, 6, 7, 8};
  std::vector<std::size_t> dphi_levels{1, 3, 5, 7, 9};
  std::vector<std::size_t> denc_levels{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::size_t e1_depth = 1;
  std::size_t seeds = 5;
  std::vector<Metric> metrics{Metric::CkaUnbiased};
  Index align_batch = 512;
  HyperGrid grid;
  bool random_init = false;
  std::uint64_t master_seed = 0;

  std::size_t n_train = 16384;
  std::size_t n_val = 2048;
  std::size_t n_test = 2048;
  std::size_t redundant_dim = 8;
  std::size_t unique_dim = 4;
  std::size_t task_features = 8;
  LabelFn label_fn = LabelFn::MajorityTiebreak;

  std::size_t e1_epochs = 50;
  std::size_t e2_epochs = 300;
  std::size_t batch_size = 256;
  /// Encoder depth on which the per-(U, D_phi) hyperparameters are tuned.
  std::size_t probe_depth = 5;

  Index knn_k = 100;
  double svcca_keep = 0.99;

  std::size_t threads = 1;

  /// Throws ConfigError.
  void validate() const;

  /// Reduced grid used by the acceptance suite: U in {0,4,8}, D_phi in
  /// {1,9}, D_Enc in 1..10, 3 seeds, 4096/1024/1024 samples.
  static SweepConfig ci_profile();
};

/// Sets one field from its textual value. Throws ConfigError on an unknown
/// key or malformed value.
void apply_setting(SweepConfig& cfg, const std::string& key, const std::string& value);

/// Names accepted by `apply_setting`, in documentation order.
const std::vector<std::string>& sweep_setting_keys();

/// Reads a flat `key = value` file over `base`.
SweepConfig load_sweep_config(const std::filesystem::path& path, SweepConfig base = {});

/// Renders every setting as `key = value` lines (loadable by load_sweep_config).
std::string to_config_text(const SweepConfig& cfg);

struct TrialCoords {
  std::size_t u = 0;
  std::size_t d_phi = 1;
  std::size_t d_enc = 1;
  std::size_t seed_index = 0;

  friend bool operator==(const TrialCoords&, const TrialCoords&) = default;
};

struct Hyperparams {
  double learning_rate = 0.0;
  double weight_decay = 0.0;

  friend bool operator==(const Hyperparams&, const Hyperparams&) = default;
};

struct CellHyperparams {
  Hyperparams e1;
  Hyperparams e2;
};

struct MetricOutcome {
  Metric metric = Metric::CkaUnbiased;
  std::optional<double> score;  // nullopt when every layer pair was degenerate
  Index layer_i = -1;
  Index layer_j = -1;
};

struct RunRecord {
  TrialCoords coords;
  std::size_t e1_depth = 1;
  bool random_init = false;
  bool failed = false;
  std::string note;  // failure reason
  std::optional<Hyperparams> e1_hyper;
  std::optional<Hyperparams> e2_hyper;
  std::optional<double> e1_test_acc;
  std::optional<double> e2_test_acc;
  std::vector<MetricOutcome> alignment;
  double wall_seconds = 0.0;  // not part of the records CSV

  [[nodiscard]] const MetricOutcome* find(Metric m) const;
};

/// Equality of every persisted field (wall time excluded).
bool same_record(const RunRecord& a, const RunRecord& b);

// Seeds are derived from (master seed, coordinates) only, so adding sweep
// cells never perturbs existing ones.
std::uint64_t dataset_seed(const SweepConfig& cfg, std::size_t u, std::size_t d_phi, std::size_t seed_index);
std::uint64_t e2_seed(const SweepConfig& cfg, const TrialCoords& coords);

/// The frozen modality-2 bijection used by build_dataset (depth 0 = identity,
/// returned as an empty net).
TransformNet dataset_transform(const SweepConfig& cfg, std::size_t u, std::size_t d_phi, std::size_t seed_index);

/// Dataset for (U, D_phi, seed) with modality 2 passed through a frozen
/// depth-D_phi bijection.
SyntheticDataset build_dataset(const SweepConfig& cfg, std::size_t u, std::size_t d_phi, std::size_t seed_index);

struct GridSearchResult {
  TrainConfig best;
  double best_val_acc = 0.0;
  std::size_t diverged = 0;
};

/// Exhaustive search over `grid`, ranked by best validation accuracy with
/// ties going to the lower learning rate, then the lower weight decay.
/// Throws DivergedTrainingError if every configuration diverged.
GridSearchResult grid_search(const MatrixXd& x_train, const VectorXd& y_train, const MatrixXd& x_val,
                             const VectorXd& y_val, std::size_t depth, const HyperGrid& grid,
                             const TrainConfig& base, std::uint64_t init_seed);

/// Tunes E1 and the probe-depth E2 on the seed-0 dataset of a cell.
CellHyperparams tune_cell(const SweepConfig& cfg, std::size_t u, std::size_t d_phi);

/// One trial. Tunes the cell itself when `tuned` is null; the result is
/// identical to the corresponding row of `run_sweep`. Training divergence is
/// recorded as a failed row.
RunRecord run_trial(const TrialCoords& coords, const SweepConfig& cfg, const CellHyperparams* tuned = nullptr);

/// All trials ordered by (U, D_phi, D_Enc, seed). Output does not depend on
/// `cfg.threads`.
std::vector<RunRecord> run_sweep(const SweepConfig& cfg);

// Summaries ---------------------------------------------------------------

struct GroupCorrelations {
  std::size_t u = 0;
  std::size_t d_phi = 0;
  std::size_t seed_index = 0;
  std::size_t points = 0;
  std::optional<double> align_perf;
  std::optional<double> align_depth;
  std::optional<double> perf_depth;
};

struct BoxRow {
  std::size_t u = 0;
  std::string quantity;  // align_perf, align_depth or perf_depth
  std::optional<BoxStats> box;  // nullopt when every group correlation was undefined
};

struct MaxAlignmentTrend {
  std::size_t d_phi = 0;
  std::vector<std::pair<std::size_t, double>> max_by_u;
  std::optional<double> rho;
};

struct RelativeCapacityTrend {
  std::size_t u = 0;
  std::size_t points = 0;
  std::optional<double> rho;
};

struct CellFit {
  std::size_t u = 0;
  std::size_t d_phi = 0;
  std::size_t points = 0;
  std::optional<double> pearson;
  std::optional<LinearFit> fit;
};

struct CorrelationSummary {
  Metric metric = Metric::CkaUnbiased;
  std::vector<GroupCorrelations> groups;
  std::vector<BoxRow> boxes;
  std::vector<MaxAlignmentTrend> max_alignment;
  std::vector<RelativeCapacityTrend> relative_capacity;
  std::vector<CellFit> fits;

  /// Median of one group quantity over all groups at level `u` (or over all
  /// groups when `u` is nullopt), ignoring undefined correlations.
  [[nodiscard]] std::optional<double> median_of(const std::string& quantity,
                                                std::optional<std::size_t> u = std::nullopt) const;
};

/// Performance is the E2 test accuracy; alignment is the best layer-pair
/// score for `metric`. Failed rows and missing scores are skipped.
CorrelationSummary summarize(const std::vector<RunRecord>& records, Metric metric);

// Persistence -------------------------------------------------------------

void export_records_csv(const std::vector<RunRecord>& records, const std::filesystem::path& path);

/// Throws ParseError with the offending line number.
std::vector<RunRecord> load_records_csv(const std::filesystem::path& path);

/// Summary tables plus the long-format plotting table, one file each in `dir`.
void export_summaries(const std::vector<RunRecord>& records, const std::vector<CorrelationSummary>& summaries,
                      const std::filesystem::path& dir);

/// records.csv, timings.csv and the summary tables.
void export_results(const std::vector<RunRecord>& records, const std::vector<CorrelationSummary>& summaries,
                    const std::filesystem::path& dir);

/// Output directory from ALIGNLAB_OUTPUT_DIR, else `fallback`.
std::filesystem::path output_directory(const std::filesystem::path& fallback = "results");

}  // namespace alignlab
