#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "alignlab/errors.hpp"
#include "alignlab/harness.hpp"

using namespace alignlab;
namespace fs = std::filesystem;

namespace {

SweepConfig tiny() {
  SweepConfig c;
  c.u_levels = {0, 8};
  c.dphi_levels = {1, 3};
  c.denc_levels = {1, 2, 3};
  c.seeds = 2;
  c.n_train = 512;
  c.n_val = 256;
  c.n_test = 256;
  c.align_batch = 128;
  c.e1_epochs = 5;
  c.e2_epochs = 8;
  c.probe_depth = 2;
  c.grid.learning_rates = {1e-2, 1e-3};
  c.grid.weight_decays = {0.0, 1e-2};
  c.metrics = {Metric::CkaUnbiased, Metric::Cka, Metric::MutualKnn};
  c.knn_k = 10;
  return c;
}

RunRecord hand_record(std::size_t u, std::size_t d_phi, std::size_t d_enc, std::size_t seed, double align,
                      double perf) {
  RunRecord r;
  r.coords = {u, d_phi, d_enc, seed};
  r.e2_test_acc = perf;
  r.e1_test_acc = 1.0;
  r.alignment.push_back({Metric::CkaUnbiased, align, 0, 0});
  return r;
}

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("settings parse lists, ranges and scalars") {
  SweepConfig c;
  apply_setting(c, "u_levels", "0, 2..4,8");
  CHECK(c.u_levels == std::vector<std::size_t>{0, 2, 3, 4, 8});
  apply_setting(c, "metrics", "cka,mutual_knn");
  CHECK(c.metrics == std::vector<Metric>{Metric::Cka, Metric::MutualKnn});
  apply_setting(c, "lr_grid", "0.5,1e-3");
  CHECK(c.grid.learning_rates == std::vector<double>{0.5, 1e-3});
  apply_setting(c, "random_init", "true");
  CHECK(c.random_init);
  apply_setting(c, "label_fn", "parity");
  CHECK(c.label_fn == LabelFn::Parity);
  CHECK_THROWS_AS(apply_setting(c, "nonsense", "1"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "seeds", "-1"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "u_levels", "4..2"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "metrics", "cosine"), ConfigError);
}

TEST_CASE("config text round trip covers every key") {
  SweepConfig c = tiny();
  c.master_seed = 1234;
  c.svcca_keep = 0.95;
  const auto dir = temp_dir("alignlab_cfg");
  const auto path = dir / "sweep.cfg";
  std::ofstream(path) << "# comment\n" << to_config_text(c);
  const SweepConfig back = load_sweep_config(path);
  CHECK(to_config_text(back) == to_config_text(c));
  const auto text = to_config_text(c);
  for (const auto& key : sweep_setting_keys()) CHECK(text.find(key + " = ") != std::string::npos);

  std::ofstream(path) << "seeds = 2\nbroken line\n";
  CHECK_THROWS_AS(load_sweep_config(path), ConfigError);
}

TEST_CASE("validation") {
  CHECK_NOTHROW(SweepConfig{}.validate());
  CHECK_NOTHROW(SweepConfig::ci_profile().validate());
  SweepConfig c = tiny();
  c.denc_levels = {11};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.u_levels = {9};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.align_batch = 1000;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.knn_k = 128;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.grid.learning_rates.clear();
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("dataset construction applies the stored transform to modality 2 only") {
  const SweepConfig c = tiny();
  const auto ds = build_dataset(c, 0, 3, 1);
  CHECK(ds.d_phi == 3);
  GenConfig g;
  g.n_train = c.n_train;
  g.n_val = c.n_val;
  g.n_test = c.n_test;
  g.seed = dataset_seed(c, 0, 3, 1);
  const auto raw = generate_dataset(g);
  CHECK(ds.train.x1 == raw.train.x1);
  CHECK(ds.train.x2 == apply_transform(dataset_transform(c, 0, 3, 1), raw.train.x2));
  CHECK(dataset_seed(c, 0, 3, 1) != dataset_seed(c, 0, 3, 0));
  CHECK(e2_seed(c, {0, 3, 1, 1}) != e2_seed(c, {0, 3, 2, 1}));
}

TEST_CASE("grid search skips diverged configurations") {
  SweepConfig c = tiny();
  const auto ds = build_dataset(c, 0, 1, 0);
  HyperGrid grid;
  grid.learning_rates = {1e300, 1e-2};
  grid.weight_decays = {0.0};
  TrainConfig base;
  base.epochs = 20;
  const auto r = grid_search(ds.train.x1, ds.train.y, ds.val.x1, ds.val.y, 1, grid, base, 5);
  CHECK(r.diverged == 1);
  CHECK(r.best.learning_rate == 1e-2);
  grid.learning_rates = {1e300};
  CHECK_THROWS_AS(grid_search(ds.train.x1, ds.train.y, ds.val.x1, ds.val.y, 1, grid, base, 5),
                  DivergedTrainingError);
}

TEST_CASE("sweep is deterministic, thread-count independent and matches single trials") {
  SweepConfig c = tiny();
  const auto a = run_sweep(c);
  REQUIRE(a.size() == 2 * 2 * 3 * 2);
  c.threads = 3;
  const auto b = run_sweep(c);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(same_record(a[i], b[i]));

  // ordering (U, D_phi, D_Enc, seed)
  CHECK(a[0].coords == TrialCoords{0, 1, 1, 0});
  CHECK(a[1].coords == TrialCoords{0, 1, 1, 1});
  CHECK(a[2].coords == TrialCoords{0, 1, 2, 0});
  CHECK(a.back().coords == TrialCoords{8, 3, 3, 1});

  for (const auto& r : a) {
    CHECK_FALSE(r.failed);
    REQUIRE(r.alignment.size() == 3);
    CHECK(r.e1_hyper.has_value());
    CHECK(r.e2_hyper.has_value());
    for (const auto& m : r.alignment) {
      CHECK(m.score.has_value());
      CHECK(m.layer_i == 0);  // E1 has a single hidden layer
      CHECK(m.layer_j >= 0);
      CHECK(m.layer_j < static_cast<Index>(r.coords.d_enc));
    }
  }

  c.threads = 1;
  const auto single = run_trial({8, 3, 2, 1}, c);
  const auto it = std::find_if(a.begin(), a.end(), [](const RunRecord& r) { return r.coords == TrialCoords{8, 3, 2, 1}; });
  REQUIRE(it != a.end());
  CHECK(same_record(single, *it));
}

TEST_CASE("random-init trials skip training but still align") {
  SweepConfig c = tiny();
  c.random_init = true;
  const auto r = run_trial({0, 1, 3, 0}, c);
  CHECK_FALSE(r.failed);
  CHECK(r.random_init);
  CHECK_FALSE(r.e1_hyper.has_value());
  CHECK_FALSE(r.e2_hyper.has_value());
  REQUIRE(r.e2_test_acc.has_value());
  CHECK(r.alignment.front().score.has_value());
}

TEST_CASE("records csv round trip") {
  SweepConfig c = tiny();
  c.u_levels = {4};
  c.dphi_levels = {1};
  c.denc_levels = {1, 2};
  c.seeds = 1;
  auto records = run_sweep(c);
  records.push_back(records.front());
  records.back().failed = true;
  records.back().note = "E2 diverged at epoch 3, retried";
  records.back().alignment[1].score.reset();
  records.back().alignment[1].layer_i = -1;
  records.back().e2_test_acc.reset();
  const auto dir = temp_dir("alignlab_records");
  export_records_csv(records, dir / "records.csv");
  const auto back = load_records_csv(dir / "records.csv");
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i + 1 < back.size(); ++i) CHECK(same_record(back[i], records[i]));
  CHECK(back.back().note == "E2 diverged at epoch 3; retried");
  CHECK_FALSE(back.back().alignment[1].score.has_value());

  export_records_csv(back, dir / "again.csv");
  CHECK(slurp(dir / "again.csv") == slurp(dir / "records.csv"));

  std::ofstream(dir / "bad.csv") << slurp(dir / "records.csv") << "1,2,3\n";
  try {
    load_records_csv(dir / "bad.csv");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == back.size() + 2);
  }
}

TEST_CASE("summary of a hand-built group matches direct stats calls") {
  std::vector<RunRecord> records{hand_record(0, 1, 1, 0, 0.2, 0.7), hand_record(0, 1, 2, 0, 0.5, 0.8),
                                 hand_record(0, 1, 3, 0, 0.4, 0.9), hand_record(0, 1, 4, 0, 0.9, 0.95)};
  const auto s = summarize(records, Metric::CkaUnbiased);
  REQUIRE(s.groups.size() == 1);
  const std::vector<double> align{0.2, 0.5, 0.4, 0.9};
  const std::vector<double> perf{0.7, 0.8, 0.9, 0.95};
  const std::vector<double> depth{1, 2, 3, 4};
  CHECK(*s.groups[0].align_perf == spearman_rho(align, perf));
  CHECK(*s.groups[0].align_depth == spearman_rho(align, depth));
  CHECK(*s.groups[0].perf_depth == spearman_rho(perf, depth));
  CHECK(s.groups[0].points == 4);

  REQUIRE(s.fits.size() == 1);
  CHECK(*s.fits[0].pearson == pearson_r(align, perf));
  CHECK(s.fits[0].fit->slope == linear_fit(perf, align).slope);

  REQUIRE(s.relative_capacity.size() == 1);
  const std::vector<double> rel{0, 1, 2, 3};
  CHECK(*s.relative_capacity[0].rho == spearman_rho(align, rel));

  REQUIRE(s.max_alignment.size() == 1);
  CHECK(s.max_alignment[0].max_by_u.front().second == 0.9);
  CHECK_FALSE(s.max_alignment[0].rho.has_value());  // one U level only
  CHECK(*s.median_of("align_perf") == spearman_rho(align, perf));
}

TEST_CASE("summary skips failed rows and reports undefined correlations as missing") {
  std::vector<RunRecord> records{hand_record(0, 1, 1, 0, 0.5, 0.8), hand_record(0, 1, 2, 0, 0.5, 0.9),
                                 hand_record(8, 1, 1, 0, 0.1, 0.5), hand_record(8, 1, 2, 0, 0.3, 0.6)};
  records.push_back(hand_record(8, 1, 3, 0, 0.9, 0.9));
  records.back().failed = true;
  const auto s = summarize(records, Metric::CkaUnbiased);
  REQUIRE(s.groups.size() == 2);
  CHECK_FALSE(s.groups[0].align_perf.has_value());  // constant alignment
  CHECK(s.groups[0].perf_depth.has_value());
  CHECK(s.groups[1].points == 2);
  REQUIRE(s.max_alignment.size() == 1);
  CHECK(*s.max_alignment[0].rho == -1.0);
  CHECK_FALSE(s.median_of("align_perf", 0).has_value());
  CHECK_THROWS_AS((void)s.median_of("bogus"), ConfigError);
}

TEST_CASE("exported tables") {
  std::vector<RunRecord> records{hand_record(0, 1, 1, 0, 0.2, 0.7), hand_record(0, 1, 2, 0, 0.5, 0.8),
                                 hand_record(4, 1, 1, 0, 0.1, 0.6), hand_record(4, 1, 2, 0, 0.3, 0.5)};
  const auto dir = temp_dir("alignlab_tables");
  export_results(records, {summarize(records, Metric::CkaUnbiased)}, dir);
  for (const char* f : {"records.csv", "timings.csv", "summary_groups.csv", "summary_box.csv",
                        "summary_max_alignment.csv", "summary_alignment_vs_u.csv", "summary_relative_capacity.csv",
                        "summary_fits.csv", "plot_long.csv"})
    CHECK(fs::exists(dir / f));
  const auto plot = slurp(dir / "plot_long.csv");
  CHECK(plot.find("cka_unbiased,4,1,2,0,1,0.29999999999999999,0.5,1") != std::string::npos);
}

TEST_CASE("output directory from the environment") {
  ::unsetenv("ALIGNLAB_OUTPUT_DIR");
  CHECK(output_directory("x") == fs::path("x"));
  ::setenv("ALIGNLAB_OUTPUT_DIR", "/tmp/elsewhere", 1);
  CHECK(output_directory("x") == fs::path("/tmp/elsewhere"));
  ::unsetenv("ALIGNLAB_OUTPUT_DIR");
}

TEST_CASE("regression anchor: full redundancy, shallow encoders") {
  // Observed with the CI profile: E1 0.999, E2 0.995, linear CKA 0.697,
  // unbiased CKA 0.696 at (U=0, D_phi=1, D_Enc=1, seed 0).
  SweepConfig c = SweepConfig::ci_profile();
  c.metrics = {Metric::Cka, Metric::CkaUnbiased};
  const auto r = run_trial({0, 1, 1, 0}, c);
  REQUIRE_FALSE(r.failed);
  CHECK(*r.e1_test_acc >= 0.95);
  CHECK(*r.e2_test_acc >= 0.9);
  CHECK(r.alignment[0].score.value() == doctest::Approx(0.6974).epsilon(0.02));
  CHECK(r.alignment[1].score.value() == doctest::Approx(0.6962).epsilon(0.02));
}
