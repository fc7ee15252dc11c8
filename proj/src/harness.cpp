#include "alignlab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>

#include "alignlab/errors.hpp"
#include "alignlab/random.hpp"
#include "alignlab/text_format.hpp"

namespace alignlab {

namespace {

// Seed-derivation tags.
constexpr std::uint64_t kTagData = 0xD47A;
constexpr std::uint64_t kTagPhi = 0xF1;
constexpr std::uint64_t kTagE1 = 0xE1;
constexpr std::uint64_t kTagE2 = 0xE2;
constexpr std::uint64_t kTagTune = 0x7E;
constexpr std::uint64_t kTagAlign = 0xA1;
constexpr std::uint64_t kTagShuffle = 0x5F;

// Settings -----------------------------------------------------------------

std::vector<std::size_t> parse_count_list(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  for (auto token : split_view(value, ',')) {
    token = trim(token);
    if (token.empty()) continue;
    if (const auto dots = token.find(".."); dots != std::string_view::npos) {
      const auto lo = parse_int(token.substr(0, dots));
      const auto hi = parse_int(token.substr(dots + 2));
      if (!lo || !hi || *lo < 0 || *hi < *lo) throw ConfigError(key + ": bad range '" + std::string(token) + "'");
      for (auto v = *lo; v <= *hi; ++v) out.push_back(static_cast<std::size_t>(v));
    } else {
      const auto v = parse_int(token);
      if (!v || *v < 0) throw ConfigError(key + ": bad count '" + std::string(token) + "'");
      out.push_back(static_cast<std::size_t>(*v));
    }
  }
  return out;
}

std::vector<double> parse_real_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  for (auto token : split_view(value, ',')) {
    token = trim(token);
    if (token.empty()) continue;
    const auto v = parse_double(token);
    if (!v || !std::isfinite(*v)) throw ConfigError(key + ": bad number '" + std::string(token) + "'");
    out.push_back(*v);
  }
  return out;
}

std::size_t parse_count(const std::string& key, const std::string& value) {
  const auto v = parse_int(value);
  if (!v || *v < 0) throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
  return static_cast<std::size_t>(*v);
}

double parse_real(const std::string& key, const std::string& value) {
  const auto v = parse_double(value);
  if (!v || !std::isfinite(*v)) throw ConfigError(key + ": expected a number, got '" + value + "'");
  return *v;
}

bool parse_flag(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "yes" || value == "on") return true;
  if (value == "0" || value == "false" || value == "no" || value == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + value + "'");
}

template <typename T, typename F>
std::string join(const std::vector<T>& values, F&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += fmt(values[i]);
  }
  return out;
}

struct Setting {
  std::string key;
  std::function<void(SweepConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const SweepConfig&)> get;
};

std::string count_text(std::size_t v) { return std::to_string(v); }

const std::vector<Setting>& settings() {
  static const std::vector<Setting> table = [] {
    std::vector<Setting> t;
    auto counts = [&t](std::string key, std::vector<std::size_t> SweepConfig::*field) {
      t.push_back({std::move(key),
                   [field](SweepConfig& c, const std::string& k, const std::string& v) {
                     c.*field = parse_count_list(k, v);
                   },
                   [field](const SweepConfig& c) { return join(c.*field, count_text); }});
    };
    auto count = [&t](std::string key, std::size_t SweepConfig::*field) {
      t.push_back({std::move(key),
                   [field](SweepConfig& c, const std::string& k, const std::string& v) { c.*field = parse_count(k, v); },
                   [field](const SweepConfig& c) { return std::to_string(c.*field); }});
    };
    counts("u_levels", &SweepConfig::u_levels);
    counts("dphi_levels", &SweepConfig::dphi_levels);
    counts("denc_levels", &SweepConfig::denc_levels);
    count("e1_depth", &SweepConfig::e1_depth);
    count("seeds", &SweepConfig::seeds);
    t.push_back({"metrics",
                 [](SweepConfig& c, const std::string&, const std::string& v) {
                   c.metrics.clear();
                   for (auto token : split_view(v, ','))
                     if (!trim(token).empty()) c.metrics.push_back(parse_metric(trim(token)));
                 },
                 [](const SweepConfig& c) {
                   return join(c.metrics, [](Metric m) { return std::string(metric_name(m)); });
                 }});
    t.push_back({"align_batch",
                 [](SweepConfig& c, const std::string& k, const std::string& v) {
                   c.align_batch = static_cast<Index>(parse_count(k, v));
                 },
                 [](const SweepConfig& c) { return std::to_string(c.align_batch); }});
    t.push_back({"lr_grid",
                 [](SweepConfig& c, const std::string& k, const std::string& v) {
                   c.grid.learning_rates = parse_real_list(k, v);
                 },
                 [](const SweepConfig& c) { return join(c.grid.learning_rates, format_double); }});
    t.push_back({"wd_grid",
                 [](SweepConfig& c, const std::string& k, const std::string& v) {
                   c.grid.weight_decays = parse_real_list(k, v);
                 },
                 [](const SweepConfig& c) { return join(c.grid.weight_decays, format_double); }});
    t.push_back({"random_init",
                 [](SweepConfig& c, const std::string& k, const std::string& v) { c.random_init = parse_flag(k, v); },
                 [](const SweepConfig& c) { return std::string(c.random_init ? "true" : "false"); }});
    t.push_back({"master_seed",
                 [](SweepConfig& c, const std::string& k, const std::string& v) {
                   c.master_seed = static_cast<std::uint64_t>(parse_count(k, v));
                 },
                 [](const SweepConfig& c) { return std::to_string(c.master_seed); }});
    count("n_train", &SweepConfig::n_train);
    count("n_val", &SweepConfig::n_val);
    count("n_test", &SweepConfig::n_test);
    count("redundant_dim", &SweepConfig::redundant_dim);
    count("unique_dim", &SweepConfig::unique_dim);
    count("task_features", &SweepConfig::task_features);
    t.push_back({"label_fn",
                 [](SweepConfig& c, const std::string&, const std::string& v) { c.label_fn = parse_label_fn(v); },
                 [](const SweepConfig& c) { return std::string(to_string(c.label_fn)); }});
    count("e1_epochs", &SweepConfig::e1_epochs);
    count("e2_epochs", &SweepConfig::e2_epochs);
    count("batch_size", &SweepConfig::batch_size);
    count("probe_depth", &SweepConfig::probe_depth);
    t.push_back({"knn_k",
                 [](SweepConfig& c, const std::string& k, const std::string& v) {
                   c.knn_k = static_cast<Index>(parse_count(k, v));
                 },
                 [](const SweepConfig& c) { return std::to_string(c.knn_k); }});
    t.push_back({"svcca_keep",
                 [](SweepConfig& c, const std::string& k, const std::string& v) { c.svcca_keep = parse_real(k, v); },
                 [](const SweepConfig& c) { return format_double(c.svcca_keep); }});
    count("threads", &SweepConfig::threads);
    return t;
  }();
  return table;
}

// Execution helpers ----------------------------------------------------------

// Runs fn(0..count-1) on `threads` workers. The first exception is rethrown.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> workers;
    workers.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            fn(i);
          } catch (...) {
            const std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

TrainConfig base_train_config(const SweepConfig& cfg, std::size_t epochs) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = cfg.batch_size;
  return tc;
}

MetricParams metric_params(const SweepConfig& cfg) {
  MetricParams p;
  p.knn_k = cfg.knn_k;
  p.svcca_keep = cfg.svcca_keep;
  return p;
}

struct TrainedEncoder {
  Mlp model;
  double test_acc = 0.0;
};

TrainedEncoder fit_encoder(const SweepConfig& cfg, const MatrixXd& x_train, const VectorXd& y_train,
                           const MatrixXd& x_val, const VectorXd& y_val, const MatrixXd& x_test,
                           const VectorXd& y_test, std::size_t depth, std::size_t epochs,
                           const std::optional<Hyperparams>& hyper, std::uint64_t seed) {
  Mlp init = init_mlp(x_train.cols(), depth, seed);
  if (!hyper) return {init, evaluate_accuracy(init, x_test, y_test)};
  TrainConfig tc = base_train_config(cfg, epochs);
  tc.learning_rate = hyper->learning_rate;
  tc.weight_decay = hyper->weight_decay;
  tc.seed = mix_seed({seed, kTagShuffle});
  TrainResult trained = train_model(init, x_train, y_train, x_val, y_val, tc);
  const double acc = evaluate_accuracy(trained.model, x_test, y_test);
  return {std::move(trained.model), acc};
}

std::uint64_t e1_seed(const SweepConfig& cfg, std::size_t u, std::size_t d_phi, std::size_t seed_index) {
  return mix_seed({cfg.master_seed, kTagE1, u, d_phi, seed_index});
}

TrainedEncoder fit_e1(const SweepConfig& cfg, const SyntheticDataset& ds, std::size_t u, std::size_t d_phi,
                      std::size_t seed_index, const std::optional<Hyperparams>& hyper) {
  return fit_encoder(cfg, ds.train.x1, ds.train.y, ds.val.x1, ds.val.y, ds.test.x1, ds.test.y, cfg.e1_depth,
                     cfg.e1_epochs, hyper, e1_seed(cfg, u, d_phi, seed_index));
}

RunRecord blank_record(const TrialCoords& coords, const SweepConfig& cfg) {
  RunRecord r;
  r.coords = coords;
  r.e1_depth = cfg.e1_depth;
  r.random_init = cfg.random_init;
  for (auto m : cfg.metrics) r.alignment.push_back({m, std::nullopt, -1, -1});
  return r;
}

RunRecord failed_record(const TrialCoords& coords, const SweepConfig& cfg, const std::string& why) {
  RunRecord r = blank_record(coords, cfg);
  r.failed = true;
  r.note = why;
  return r;
}

// Trains E2 and aligns it against an already fitted E1.
RunRecord finish_trial(const TrialCoords& coords, const SweepConfig& cfg, const SyntheticDataset& ds,
                       const TrainedEncoder& e1, const std::optional<CellHyperparams>& hyper) {
  RunRecord r = blank_record(coords, cfg);
  if (hyper) {
    r.e1_hyper = hyper->e1;
    r.e2_hyper = hyper->e2;
  }
  r.e1_test_acc = e1.test_acc;
  const std::optional<Hyperparams> e2_hyper = hyper ? std::optional(hyper->e2) : std::nullopt;
  const TrainedEncoder e2 = fit_encoder(cfg, ds.train.x2, ds.train.y, ds.val.x2, ds.val.y, ds.test.x2,
                                        ds.test.y, coords.d_enc, cfg.e2_epochs, e2_hyper, e2_seed(cfg, coords));
  r.e2_test_acc = e2.test_acc;

  Rng pick(mix_seed({ds.config.seed, kTagAlign}));
  std::vector<Index> rows = pick.permutation(ds.test.rows());
  rows.resize(static_cast<std::size_t>(cfg.align_batch));
  const MatrixXd batch1 = ds.test.x1(rows, Eigen::all);
  const MatrixXd batch2 = ds.test.x2(rows, Eigen::all);
  const ActivationStack s1 = forward_activations(e1.model, batch1).activations;
  const ActivationStack s2 = forward_activations(e2.model, batch2).activations;
  const MetricParams params = metric_params(cfg);
  for (auto& outcome : r.alignment) {
    try {
      const AlignmentResult ar = best_layer_pair(s1, s2, outcome.metric, params);
      outcome.score = ar.best;
      outcome.layer_i = ar.best_i;
      outcome.layer_j = ar.best_j;
    } catch (const DegenerateMetricError&) {
      outcome.score.reset();
    }
  }
  return r;
}

std::string diverged_note(const DivergedTrainingError& e) {
  return "diverged at epoch " + std::to_string(e.epoch());
}

// One dataset with its E1 and every D_Enc trial, in denc_levels order.
std::vector<RunRecord> run_unit(const SweepConfig& cfg, std::size_t u, std::size_t d_phi, std::size_t seed_index,
                                const std::optional<CellHyperparams>& hyper) {
  std::vector<RunRecord> out;
  out.reserve(cfg.denc_levels.size());
  const SyntheticDataset ds = build_dataset(cfg, u, d_phi, seed_index);
  std::optional<TrainedEncoder> e1;
  std::string e1_failure;
  const auto start = std::chrono::steady_clock::now();
  try {
    e1 = fit_e1(cfg, ds, u, d_phi, seed_index, hyper ? std::optional(hyper->e1) : std::nullopt);
  } catch (const DivergedTrainingError& e) {
    e1_failure = "E1 " + diverged_note(e);
  }
  double shared_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (auto d_enc : cfg.denc_levels) {
    const TrialCoords coords{u, d_phi, d_enc, seed_index};
    const auto t0 = std::chrono::steady_clock::now();
    RunRecord r;
    if (!e1) {
      r = failed_record(coords, cfg, e1_failure);
    } else {
      try {
        r = finish_trial(coords, cfg, ds, *e1, hyper);
      } catch (const DivergedTrainingError& e) {
        r = failed_record(coords, cfg, "E2 " + diverged_note(e));
      }
    }
    r.wall_seconds = shared_seconds + std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    shared_seconds = 0.0;
    out.push_back(std::move(r));
  }
  return out;
}

// CSV helpers ---------------------------------------------------------------

const std::vector<std::string> kFixedColumns = {"u",     "d_phi", "d_enc", "seed",  "e1_depth",    "random_init",
                                                "status", "lr_e1", "wd_e1", "lr_e2", "wd_e2",       "e1_test_acc",
                                                "e2_test_acc"};

std::string sanitize(std::string text) {
  for (auto& c : text)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return text;
}

std::string opt_index(Index v) { return v < 0 ? std::string{} : std::to_string(v); }

bool same_optional(const std::optional<double>& a, const std::optional<double>& b) {
  if (a.has_value() != b.has_value()) return false;
  if (!a) return true;
  return (std::isnan(*a) && std::isnan(*b)) || *a == *b;
}

void write_optional(std::ostream& out, const std::optional<double>& v) { out << format_optional(v); }

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::vector<double> group_values(const CorrelationSummary& s, const std::string& quantity,
                                  std::optional<std::size_t> u) {
  std::vector<double> values;
  for (const auto& g : s.groups) {
    if (u && g.u != *u) continue;
    const std::optional<double>* field = nullptr;
    if (quantity == "align_perf")
      field = &g.align_perf;
    else if (quantity == "align_depth")
      field = &g.align_depth;
    else if (quantity == "perf_depth")
      field = &g.perf_depth;
    else
      throw ConfigError("unknown summary quantity '" + quantity + "'");
    if (*field) values.push_back(**field);
  }
  return values;
}

}  // namespace

// SweepConfig -----------------------------------------------------------------

void SweepConfig::validate() const {
  if (u_levels.empty() || dphi_levels.empty() || denc_levels.empty())
    throw ConfigError("U, D_phi and D_Enc level sets must be nonempty");
  if (seeds < 1) throw ConfigError("seeds must be at least 1");
  if (metrics.empty()) throw ConfigError("at least one metric is required");
  if (grid.learning_rates.empty() || grid.weight_decays.empty())
    throw ConfigError("hyperparameter grids must be nonempty");
  for (auto u : u_levels) {
    if (u > task_features) throw ConfigError("U level exceeds the task-feature budget");
    GenConfig g;
    g.redundant_dim = redundant_dim;
    g.unique_dim = unique_dim;
    g.task_features = task_features;
    g.unique = u;
    g.redundant = task_features - u;
    g.n_train = n_train;
    g.n_val = n_val;
    g.n_test = n_test;
    g.validate();
  }
  for (auto d : denc_levels)
    if (d < 1 || d > Mlp::kMaxDepth) throw ConfigError("D_Enc levels must lie in [1, 10]");
  if (e1_depth < 1 || e1_depth > Mlp::kMaxDepth) throw ConfigError("e1_depth must lie in [1, 10]");
  if (probe_depth < 1 || probe_depth > Mlp::kMaxDepth) throw ConfigError("probe_depth must lie in [1, 10]");
  if (align_batch < 4 || static_cast<std::size_t>(align_batch) > n_test)
    throw ConfigError("align_batch must lie in [4, n_test]");
  if (std::find(metrics.begin(), metrics.end(), Metric::MutualKnn) != metrics.end() &&
      (knn_k < 1 || knn_k >= align_batch))
    throw ConfigError("knn_k must lie in [1, align_batch)");
  if (!(svcca_keep > 0.0 && svcca_keep <= 1.0)) throw ConfigError("svcca_keep must lie in (0, 1]");
  if (e1_epochs == 0 || e2_epochs == 0 || batch_size == 0) throw ConfigError("epochs and batch size must be positive");
  if (threads < 1) throw ConfigError("threads must be at least 1");
}

SweepConfig SweepConfig::ci_profile() {
  SweepConfig c;
  c.u_levels = {0, 4, 8};
  c.dphi_levels = {1, 9};
  c.seeds = 3;
  c.n_train = 4096;
  c.n_val = 1024;
  c.n_test = 1024;
  return c;
}

void apply_setting(SweepConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& s : settings()) {
    if (s.key == key) {
      s.set(cfg, key, value);
      return;
    }
  }
  throw ConfigError("unknown setting '" + key + "'");
}

const std::vector<std::string>& sweep_setting_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& s : settings()) k.push_back(s.key);
    return k;
  }();
  return keys;
}

SweepConfig load_sweep_config(const std::filesystem::path& path, SweepConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  std::map<std::string, std::string> values;
  try {
    values = parse_key_values(text.str());
  } catch (const ParseError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  for (const auto& [key, value] : values) apply_setting(base, key, value);
  return base;
}

std::string to_config_text(const SweepConfig& cfg) {
  std::string out;
  for (const auto& s : settings()) out += s.key + " = " + s.get(cfg) + "\n";
  return out;
}

// Records ---------------------------------------------------------------------

const MetricOutcome* RunRecord::find(Metric m) const {
  for (const auto& a : alignment)
    if (a.metric == m) return &a;
  return nullptr;
}

bool same_record(const RunRecord& a, const RunRecord& b) {
  if (!(a.coords == b.coords) || a.e1_depth != b.e1_depth || a.random_init != b.random_init ||
      a.failed != b.failed || a.note != b.note || a.e1_hyper != b.e1_hyper || a.e2_hyper != b.e2_hyper ||
      !same_optional(a.e1_test_acc, b.e1_test_acc) || !same_optional(a.e2_test_acc, b.e2_test_acc) ||
      a.alignment.size() != b.alignment.size())
    return false;
  for (std::size_t i = 0; i < a.alignment.size(); ++i) {
    const auto& x = a.alignment[i];
    const auto& y = b.alignment[i];
    if (x.metric != y.metric || !same_optional(x.score, y.score) || x.layer_i != y.layer_i ||
        x.layer_j != y.layer_j)
      return false;
  }
  return true;
}

// Trials ------------------------------------------------------------------------

std::uint64_t dataset_seed(const SweepConfig& cfg, std::size_t u, std::size_t d_phi, std::size_t seed_index) {
  return mix_seed({cfg.master_seed, kTagData, u, d_phi, seed_index});
}

std::uint64_t e2_seed(const SweepConfig& cfg, const TrialCoords& c) {
  return mix_seed({cfg.master_seed, kTagE2, c.u, c.d_phi, c.d_enc, c.seed_index});
}

TransformNet dataset_transform(const SweepConfig& cfg, std::size_t u, std::size_t d_phi, std::size_t seed_index) {
  Rng rng(mix_seed({dataset_seed(cfg, u, d_phi, seed_index), kTagPhi}));
  return sample_transform(static_cast<Index>(cfg.redundant_dim + cfg.unique_dim), d_phi, rng);
}

SyntheticDataset build_dataset(const SweepConfig& cfg, std::size_t u, std::size_t d_phi, std::size_t seed_index) {
  if (u > cfg.task_features) throw ConfigError("U exceeds the task-feature budget");
  GenConfig g;
  g.n_train = cfg.n_train;
  g.n_val = cfg.n_val;
  g.n_test = cfg.n_test;
  g.redundant_dim = cfg.redundant_dim;
  g.unique_dim = cfg.unique_dim;
  g.task_features = cfg.task_features;
  g.unique = u;
  g.redundant = cfg.task_features - u;
  g.label_fn = cfg.label_fn;
  g.seed = dataset_seed(cfg, u, d_phi, seed_index);
  SyntheticDataset ds = generate_dataset(g);
  if (d_phi > 0) {
    const TransformNet phi = dataset_transform(cfg, u, d_phi, seed_index);
    ds.train.x2 = apply_transform(phi, ds.train.x2);
    ds.val.x2 = apply_transform(phi, ds.val.x2);
    ds.test.x2 = apply_transform(phi, ds.test.x2);
    ds.d_phi = d_phi;
  }
  return ds;
}

GridSearchResult grid_search(const MatrixXd& x_train, const VectorXd& y_train, const MatrixXd& x_val,
                             const VectorXd& y_val, std::size_t depth, const HyperGrid& grid,
                             const TrainConfig& base, std::uint64_t init_seed) {
  if (grid.learning_rates.empty() || grid.weight_decays.empty())
    throw ConfigError("hyperparameter grids must be nonempty");
  const Mlp init = init_mlp(x_train.cols(), depth, init_seed);
  GridSearchResult result;
  bool found = false;
  std::size_t last_epoch = 0;
  for (double lr : grid.learning_rates) {
    for (double wd : grid.weight_decays) {
      TrainConfig tc = base;
      tc.learning_rate = lr;
      tc.weight_decay = wd;
      tc.seed = mix_seed({init_seed, kTagShuffle});
      try {
        const TrainResult trained = train_model(init, x_train, y_train, x_val, y_val, tc);
        const double acc = trained.best_val_acc;
        const bool better =
            !found || acc > result.best_val_acc ||
            (acc == result.best_val_acc &&
             (lr < result.best.learning_rate || (lr == result.best.learning_rate && wd < result.best.weight_decay)));
        if (better) {
          result.best = tc;
          result.best_val_acc = acc;
          found = true;
        }
      } catch (const DivergedTrainingError& e) {
        ++result.diverged;
        last_epoch = e.epoch();
      }
    }
  }
  if (!found) throw DivergedTrainingError(last_epoch, "every hyperparameter configuration diverged");
  return result;
}

CellHyperparams tune_cell(const SweepConfig& cfg, std::size_t u, std::size_t d_phi) {
  const SyntheticDataset ds = build_dataset(cfg, u, d_phi, 0);
  const auto e1 = grid_search(ds.train.x1, ds.train.y, ds.val.x1, ds.val.y, cfg.e1_depth, cfg.grid,
                              base_train_config(cfg, cfg.e1_epochs), mix_seed({cfg.master_seed, kTagTune, u, d_phi, 1}));
  const auto e2 = grid_search(ds.train.x2, ds.train.y, ds.val.x2, ds.val.y, cfg.probe_depth, cfg.grid,
                              base_train_config(cfg, cfg.e2_epochs), mix_seed({cfg.master_seed, kTagTune, u, d_phi, 2}));
  return {{e1.best.learning_rate, e1.best.weight_decay}, {e2.best.learning_rate, e2.best.weight_decay}};
}

RunRecord run_trial(const TrialCoords& coords, const SweepConfig& cfg, const CellHyperparams* tuned) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  std::optional<CellHyperparams> hyper;
  if (!cfg.random_init) {
    if (tuned) {
      hyper = *tuned;
    } else {
      try {
        hyper = tune_cell(cfg, coords.u, coords.d_phi);
      } catch (const DivergedTrainingError& e) {
        return failed_record(coords, cfg, "tuning " + diverged_note(e));
      }
    }
  }
  SweepConfig single = cfg;
  single.denc_levels = {coords.d_enc};
  RunRecord r = run_unit(single, coords.u, coords.d_phi, coords.seed_index, hyper).front();
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

std::vector<RunRecord> run_sweep(const SweepConfig& cfg) {
  cfg.validate();
  const std::size_t nu = cfg.u_levels.size();
  const std::size_t nphi = cfg.dphi_levels.size();
  const std::size_t nenc = cfg.denc_levels.size();
  const std::size_t ns = cfg.seeds;

  // Phase 1: hyperparameters per (U, D_phi) cell.
  std::vector<std::optional<CellHyperparams>> hyper(nu * nphi);
  std::vector<std::string> tune_failure(nu * nphi);
  if (!cfg.random_init) {
    parallel_for(nu * nphi, cfg.threads, [&](std::size_t cell) {
      try {
        hyper[cell] = tune_cell(cfg, cfg.u_levels[cell / nphi], cfg.dphi_levels[cell % nphi]);
      } catch (const DivergedTrainingError& e) {
        tune_failure[cell] = "tuning " + diverged_note(e);
      }
    });
  }

  // Phase 2: one work unit per dataset; each writes only its own slots.
  std::vector<RunRecord> records(nu * nphi * nenc * ns);
  parallel_for(nu * nphi * ns, cfg.threads, [&](std::size_t unit) {
    const std::size_t cell = unit / ns;
    const std::size_t s = unit % ns;
    const std::size_t iu = cell / nphi;
    const std::size_t iphi = cell % nphi;
    const std::size_t u = cfg.u_levels[iu];
    const std::size_t d_phi = cfg.dphi_levels[iphi];
    auto slot = [&](std::size_t ienc) { return ((iu * nphi + iphi) * nenc + ienc) * ns + s; };
    if (!tune_failure[cell].empty()) {
      for (std::size_t ienc = 0; ienc < nenc; ++ienc)
        records[slot(ienc)] = failed_record({u, d_phi, cfg.denc_levels[ienc], s}, cfg, tune_failure[cell]);
      return;
    }
    auto unit_records = run_unit(cfg, u, d_phi, s, hyper[cell]);
    for (std::size_t ienc = 0; ienc < nenc; ++ienc) records[slot(ienc)] = std::move(unit_records[ienc]);
  });
  return records;
}

// Summaries ---------------------------------------------------------------------

std::optional<double> CorrelationSummary::median_of(const std::string& quantity, std::optional<std::size_t> u) const {
  const auto values = group_values(*this, quantity, u);
  if (values.empty()) return std::nullopt;
  return median(values);
}

CorrelationSummary summarize(const std::vector<RunRecord>& records, Metric metric) {
  struct Point {
    const RunRecord* record;
    double alignment;
    double performance;
  };
  std::vector<Point> points;
  for (const auto& r : records) {
    if (r.failed || !r.e2_test_acc) continue;
    const auto* outcome = r.find(metric);
    if (!outcome || !outcome->score) continue;
    points.push_back({&r, *outcome->score, *r.e2_test_acc});
  }
  std::sort(points.begin(), points.end(), [](const Point& a, const Point& b) {
    const auto& x = a.record->coords;
    const auto& y = b.record->coords;
    return std::tie(x.u, x.d_phi, x.seed_index, x.d_enc) < std::tie(y.u, y.d_phi, y.seed_index, y.d_enc);
  });

  CorrelationSummary s;
  s.metric = metric;

  // Per (U, D_phi, seed): correlations over the D_Enc sweep.
  for (std::size_t start = 0; start < points.size();) {
    const auto& c0 = points[start].record->coords;
    std::size_t stop = start;
    std::vector<double> align;
    std::vector<double> perf;
    std::vector<double> depth;
    while (stop < points.size()) {
      const auto& c = points[stop].record->coords;
      if (c.u != c0.u || c.d_phi != c0.d_phi || c.seed_index != c0.seed_index) break;
      align.push_back(points[stop].alignment);
      perf.push_back(points[stop].performance);
      depth.push_back(static_cast<double>(c.d_enc));
      ++stop;
    }
    GroupCorrelations g{c0.u, c0.d_phi, c0.seed_index, align.size(), {}, {}, {}};
    if (align.size() >= 2) {
      g.align_perf = try_spearman(align, perf);
      g.align_depth = try_spearman(align, depth);
      g.perf_depth = try_spearman(perf, depth);
    }
    s.groups.push_back(g);
    start = stop;
  }

  std::vector<std::size_t> us;
  std::vector<std::size_t> phis;
  for (const auto& p : points) {
    us.push_back(p.record->coords.u);
    phis.push_back(p.record->coords.d_phi);
  }
  std::sort(us.begin(), us.end());
  us.erase(std::unique(us.begin(), us.end()), us.end());
  std::sort(phis.begin(), phis.end());
  phis.erase(std::unique(phis.begin(), phis.end()), phis.end());

  for (auto u : us) {
    for (const std::string q : {"align_perf", "align_depth", "perf_depth"}) {
      const auto values = group_values(s, q, u);
      s.boxes.push_back({u, q, values.empty() ? std::nullopt : std::optional(box_stats(values))});
    }
  }

  for (auto phi : phis) {
    MaxAlignmentTrend t;
    t.d_phi = phi;
    for (auto u : us) {
      std::optional<double> best;
      for (const auto& p : points)
        if (p.record->coords.d_phi == phi && p.record->coords.u == u) best = std::max(best.value_or(p.alignment), p.alignment);
      if (best) t.max_by_u.emplace_back(u, *best);
    }
    if (t.max_by_u.size() >= 2) {
      std::vector<double> xs;
      std::vector<double> ys;
      for (const auto& [u, a] : t.max_by_u) {
        xs.push_back(static_cast<double>(u));
        ys.push_back(a);
      }
      t.rho = try_spearman(ys, xs);
    }
    s.max_alignment.push_back(std::move(t));
  }

  for (auto u : us) {
    std::vector<double> rel;
    std::vector<double> align;
    for (const auto& p : points) {
      if (p.record->coords.u != u) continue;
      rel.push_back(static_cast<double>(p.record->coords.d_enc) - static_cast<double>(p.record->coords.d_phi));
      align.push_back(p.alignment);
    }
    RelativeCapacityTrend t{u, rel.size(), std::nullopt};
    if (rel.size() >= 2) t.rho = try_spearman(align, rel);
    s.relative_capacity.push_back(t);
  }

  for (auto u : us) {
    for (auto phi : phis) {
      std::vector<double> align;
      std::vector<double> perf;
      for (const auto& p : points) {
        if (p.record->coords.u != u || p.record->coords.d_phi != phi) continue;
        align.push_back(p.alignment);
        perf.push_back(p.performance);
      }
      if (align.empty()) continue;
      CellFit f{u, phi, align.size(), std::nullopt, std::nullopt};
      if (align.size() >= 2) {
        f.pearson = try_pearson(align, perf);
        try {
          f.fit = linear_fit(perf, align);
        } catch (const UndefinedCorrelationError&) {
        }
      }
      s.fits.push_back(f);
    }
  }
  return s;
}

// Persistence --------------------------------------------------------------------

void export_records_csv(const std::vector<RunRecord>& records, const std::filesystem::path& path) {
  std::vector<Metric> metrics;
  if (!records.empty())
    for (const auto& a : records.front().alignment) metrics.push_back(a.metric);
  auto out = open_out(path);
  for (std::size_t i = 0; i < kFixedColumns.size(); ++i) out << (i ? "," : "") << kFixedColumns[i];
  for (auto m : metrics) {
    const std::string name(metric_name(m));
    out << ",align_" << name << ",layer_i_" << name << ",layer_j_" << name;
  }
  out << ",note\n";
  for (const auto& r : records) {
    if (r.alignment.size() != metrics.size()) throw ShapeError("records disagree on the metric list");
    const auto& c = r.coords;
    out << c.u << ',' << c.d_phi << ',' << c.d_enc << ',' << c.seed_index << ',' << r.e1_depth << ','
        << (r.random_init ? 1 : 0) << ',' << (r.failed ? "failed" : "ok") << ',';
    auto hyper = [&out](const std::optional<Hyperparams>& h) {
      if (h)
        out << format_double(h->learning_rate) << ',' << format_double(h->weight_decay);
      else
        out << ',';
    };
    hyper(r.e1_hyper);
    out << ',';
    hyper(r.e2_hyper);
    out << ',';
    write_optional(out, r.e1_test_acc);
    out << ',';
    write_optional(out, r.e2_test_acc);
    for (std::size_t i = 0; i < metrics.size(); ++i) {
      const auto& a = r.alignment[i];
      if (a.metric != metrics[i]) throw ShapeError("records disagree on the metric order");
      out << ',';
      write_optional(out, a.score);
      out << ',' << opt_index(a.layer_i) << ',' << opt_index(a.layer_j);
    }
    out << ',' << sanitize(r.note) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<RunRecord> load_records_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError(1, "missing header");
  const auto header = split_view(trim(line), ',');
  if (header.size() < kFixedColumns.size() + 1) throw ParseError(1, "header too short");
  for (std::size_t i = 0; i < kFixedColumns.size(); ++i)
    if (header[i] != kFixedColumns[i]) throw ParseError(1, "unexpected column '" + std::string(header[i]) + "'");
  if (header.back() != "note") throw ParseError(1, "last column must be 'note'");
  const std::size_t metric_cols = header.size() - kFixedColumns.size() - 1;
  if (metric_cols % 3 != 0) throw ParseError(1, "metric columns must come in triples");
  std::vector<Metric> metrics;
  for (std::size_t i = kFixedColumns.size(); i + 1 < header.size(); i += 3) {
    const auto col = header[i];
    if (col.substr(0, 6) != "align_") throw ParseError(1, "expected an align_<metric> column");
    try {
      metrics.push_back(parse_metric(col.substr(6)));
    } catch (const ConfigError& e) {
      throw ParseError(1, e.what());
    }
  }

  std::vector<RunRecord> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_view(line, ',');
    if (fields.size() != header.size())
      throw ParseError(line_no, "expected " + std::to_string(header.size()) + " fields, found " +
                                    std::to_string(fields.size()));
    auto count = [&](std::size_t i) {
      const auto v = parse_int(fields[i]);
      if (!v || *v < 0) throw ParseError(line_no, "bad integer in column " + kFixedColumns[i]);
      return static_cast<std::size_t>(*v);
    };
    auto real = [&](std::size_t i) -> std::optional<double> {
      if (fields[i].empty()) return std::nullopt;
      const auto v = parse_double(fields[i]);
      if (!v) throw ParseError(line_no, "bad number in column " + std::string(header[i]));
      return v;
    };
    auto index = [&](std::size_t i) -> Index {
      if (fields[i].empty()) return -1;
      const auto v = parse_int(fields[i]);
      if (!v || *v < 0) throw ParseError(line_no, "bad index in column " + std::string(header[i]));
      return static_cast<Index>(*v);
    };
    auto hyper = [&](std::size_t i) -> std::optional<Hyperparams> {
      const auto lr = real(i);
      const auto wd = real(i + 1);
      if (lr.has_value() != wd.has_value()) throw ParseError(line_no, "incomplete hyperparameters");
      if (!lr) return std::nullopt;
      return Hyperparams{*lr, *wd};
    };
    RunRecord r;
    r.coords = {count(0), count(1), count(2), count(3)};
    r.e1_depth = count(4);
    r.random_init = count(5) != 0;
    if (fields[6] != "ok" && fields[6] != "failed") throw ParseError(line_no, "status must be ok or failed");
    r.failed = fields[6] == "failed";
    r.e1_hyper = hyper(7);
    r.e2_hyper = hyper(9);
    r.e1_test_acc = real(11);
    r.e2_test_acc = real(12);
    for (std::size_t m = 0; m < metrics.size(); ++m) {
      const std::size_t base = kFixedColumns.size() + 3 * m;
      r.alignment.push_back({metrics[m], real(base), index(base + 1), index(base + 2)});
    }
    r.note = std::string(fields.back());
    records.push_back(std::move(r));
  }
  return records;
}

void export_summaries(const std::vector<RunRecord>& records, const std::vector<CorrelationSummary>& summaries,
                      const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto groups = open_out(dir / "summary_groups.csv");
  groups << "metric,u,d_phi,seed,points,rho_align_perf,rho_align_depth,rho_perf_depth\n";
  auto boxes = open_out(dir / "summary_box.csv");
  boxes << "metric,u,quantity,count,median,q1,q3,whisker_low,whisker_high,outliers\n";
  auto maxima = open_out(dir / "summary_max_alignment.csv");
  maxima << "metric,d_phi,u,max_alignment\n";
  auto trend = open_out(dir / "summary_alignment_vs_u.csv");
  trend << "metric,d_phi,rho_max_alignment_u\n";
  auto capacity = open_out(dir / "summary_relative_capacity.csv");
  capacity << "metric,u,points,rho_alignment_denc_minus_dphi\n";
  auto fits = open_out(dir / "summary_fits.csv");
  fits << "metric,u,d_phi,points,pearson_align_perf,slope,intercept\n";
  auto plot = open_out(dir / "plot_long.csv");
  plot << "metric,u,d_phi,d_enc,seed,denc_minus_dphi,alignment,performance,e1_performance\n";

  for (const auto& s : summaries) {
    const std::string m(metric_name(s.metric));
    for (const auto& g : s.groups)
      groups << m << ',' << g.u << ',' << g.d_phi << ',' << g.seed_index << ',' << g.points << ','
             << format_optional(g.align_perf) << ',' << format_optional(g.align_depth) << ','
             << format_optional(g.perf_depth) << '\n';
    for (const auto& b : s.boxes) {
      boxes << m << ',' << b.u << ',' << b.quantity << ',';
      if (!b.box) {
        boxes << "0,,,,,,\n";
        continue;
      }
      boxes << b.box->count << ',' << format_double(b.box->median) << ',' << format_double(b.box->q1) << ','
            << format_double(b.box->q3) << ',' << format_double(b.box->whisker_low) << ','
            << format_double(b.box->whisker_high) << ',';
      for (std::size_t i = 0; i < b.box->outliers.size(); ++i)
        boxes << (i ? " " : "") << format_double(b.box->outliers[i]);
      boxes << '\n';
    }
    for (const auto& t : s.max_alignment) {
      for (const auto& [u, a] : t.max_by_u) maxima << m << ',' << t.d_phi << ',' << u << ',' << format_double(a) << '\n';
      trend << m << ',' << t.d_phi << ',' << format_optional(t.rho) << '\n';
    }
    for (const auto& t : s.relative_capacity)
      capacity << m << ',' << t.u << ',' << t.points << ',' << format_optional(t.rho) << '\n';
    for (const auto& f : s.fits) {
      fits << m << ',' << f.u << ',' << f.d_phi << ',' << f.points << ',' << format_optional(f.pearson) << ',';
      if (f.fit)
        fits << format_double(f.fit->slope) << ',' << format_double(f.fit->intercept) << '\n';
      else
        fits << ",\n";
    }
    for (const auto& r : records) {
      if (r.failed) continue;
      const auto* a = r.find(s.metric);
      if (!a || !a->score || !r.e2_test_acc) continue;
      const auto& c = r.coords;
      plot << m << ',' << c.u << ',' << c.d_phi << ',' << c.d_enc << ',' << c.seed_index << ','
           << static_cast<long long>(c.d_enc) - static_cast<long long>(c.d_phi) << ',' << format_double(*a->score)
           << ',' << format_double(*r.e2_test_acc) << ',' << format_optional(r.e1_test_acc) << '\n';
    }
  }
}

void export_results(const std::vector<RunRecord>& records, const std::vector<CorrelationSummary>& summaries,
                    const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  export_records_csv(records, dir / "records.csv");
  auto timings = open_out(dir / "timings.csv");
  timings << "u,d_phi,d_enc,seed,wall_seconds\n";
  for (const auto& r : records)
    timings << r.coords.u << ',' << r.coords.d_phi << ',' << r.coords.d_enc << ',' << r.coords.seed_index << ','
            << format_double(r.wall_seconds) << '\n';
  export_summaries(records, summaries, dir);
}

std::filesystem::path output_directory(const std::filesystem::path& fallback) {
  if (const char* env = std::getenv("ALIGNLAB_OUTPUT_DIR"); env && *env) return env;
  return fallback;
}

}  // namespace alignlab
