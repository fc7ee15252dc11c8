// alignlab: synthetic alignment study and embedding-file scoring.
//
//   alignlab gen        dataset CSV (+ .meta, + .phi.bin)
//   alignlab train      one trial
//   alignlab sweep      the full study
//   alignlab summarize  records.csv -> summary tables
//   alignlab align      two embedding files -> metric scores
//
// Exit codes: 0 success, 1 runtime error, 2 config error, 3 sweep with failed trials.

#include <CLI11.hpp>

#include <algorithm>
#include <iostream>
#include <map>
#include <string>

#include "alignlab/embedio.hpp"
#include "alignlab/errors.hpp"
#include "alignlab/harness.hpp"
#include "alignlab/text_format.hpp"

namespace al = alignlab;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitPartial = 3;

std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

// Shared by every subcommand that runs the study: a config file plus one
// override flag per SweepConfig field.
struct StudyOptions {
  std::string config_path;
  std::string output_dir;
  std::map<std::string, std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_path, "key = value config file")->check(CLI::ExistingFile);
    app->add_option("-o,--output-dir", output_dir, "output directory (default $ALIGNLAB_OUTPUT_DIR or ./results)");
    for (const auto& key : al::sweep_setting_keys())
      app->add_option(flag_name(key), overrides[key], "override '" + key + "'");
  }

  [[nodiscard]] al::SweepConfig resolve(al::SweepConfig base = {}, bool validate = true) const {
    al::SweepConfig cfg = config_path.empty() ? base : al::load_sweep_config(config_path, base);
    for (const auto& [key, value] : overrides)
      if (!value.empty()) al::apply_setting(cfg, key, value);
    if (validate) cfg.validate();
    return cfg;
  }

  [[nodiscard]] std::filesystem::path out_dir() const {
    return output_dir.empty() ? al::output_directory() : std::filesystem::path(output_dir);
  }
};

std::vector<al::CorrelationSummary> summarize_all(const std::vector<al::RunRecord>& records) {
  std::vector<al::CorrelationSummary> out;
  if (records.empty()) return out;
  for (const auto& a : records.front().alignment) out.push_back(al::summarize(records, a.metric));
  return out;
}

void print_trend(const std::vector<al::CorrelationSummary>& summaries) {
  for (const auto& s : summaries) {
    std::cout << al::metric_name(s.metric) << ": median rho(align, perf) = "
              << al::format_optional(s.median_of("align_perf")) << ", median rho(align, depth) = "
              << al::format_optional(s.median_of("align_depth")) << "\n";
  }
}

std::size_t count_failed(const std::vector<al::RunRecord>& records) {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) { return r.failed; }));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Alignment vs. modality uniqueness: synthetic study and embedding scoring"};
  app.require_subcommand(1);

  bool ci_profile = false;
  app.add_flag("--ci", ci_profile, "start from the reduced CI profile instead of the full grid");

  // gen
  auto* gen = app.add_subcommand("gen", "write one synthetic dataset as CSV");
  StudyOptions gen_opts;
  gen_opts.attach(gen);
  std::size_t gen_u = 0;
  std::size_t gen_dphi = 1;
  std::size_t gen_seed = 0;
  std::string gen_out;
  gen->add_option("--u", gen_u, "uniqueness level U");
  gen->add_option("--d-phi", gen_dphi, "transform depth D_phi (0 = none)");
  gen->add_option("--seed-index", gen_seed, "seed index");
  gen->add_option("--out", gen_out, "CSV path (default <output-dir>/dataset.csv)");

  // train
  auto* train = app.add_subcommand("train", "run a single trial");
  StudyOptions train_opts;
  train_opts.attach(train);
  al::TrialCoords coords;
  train->add_option("--u", coords.u, "uniqueness level U");
  train->add_option("--d-phi", coords.d_phi, "transform depth D_phi");
  train->add_option("--d-enc", coords.d_enc, "E2 depth D_Enc");
  train->add_option("--seed-index", coords.seed_index, "seed index");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "run the full (U, D_phi, D_Enc, seed) study");
  StudyOptions sweep_opts;
  sweep_opts.attach(sweep);
  bool dump_config = false;
  sweep->add_flag("--print-config", dump_config, "print the resolved config and exit");

  // summarize
  auto* summ = app.add_subcommand("summarize", "records.csv -> summary and plotting tables");
  std::string records_path;
  std::string summ_out;
  summ->add_option("records", records_path, "records CSV")->required()->check(CLI::ExistingFile);
  summ->add_option("-o,--output-dir", summ_out, "output directory (default: next to the records)");

  // align
  auto* align = app.add_subcommand("align", "score two embedding files");
  std::string emb1;
  std::string emb2;
  std::vector<std::string> metric_names{"mutual_knn"};
  al::Index knn_k = 10;
  al::Index batch = 0;
  align->add_option("file1", emb1, "first embedding file")->required()->check(CLI::ExistingFile);
  align->add_option("file2", emb2, "second embedding file")->required()->check(CLI::ExistingFile);
  align->add_option("--metric", metric_names, "cka, cka_unbiased, cka_rbf, svcca, mutual_knn")->delimiter(',');
  align->add_option("--k", knn_k, "mutual-KNN neighbour count");
  align->add_option("--batch", batch, "use only the first N rows (default all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  const al::SweepConfig base = ci_profile ? al::SweepConfig::ci_profile() : al::SweepConfig{};

  try {
    if (*gen) {
      const auto cfg = gen_opts.resolve(base, false);  // the generator checks its own knobs
      const auto ds = al::build_dataset(cfg, gen_u, gen_dphi, gen_seed);
      const std::filesystem::path out = gen_out.empty() ? gen_opts.out_dir() / "dataset.csv" : std::filesystem::path(gen_out);
      if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
      al::export_dataset_csv(ds, out);
      if (gen_dphi > 0) al::dataset_transform(cfg, gen_u, gen_dphi, gen_seed).save(out.string() + ".phi.bin");
      std::cout << "wrote " << out.string() << "\n";
      return 0;
    }

    if (*train) {
      const auto cfg = train_opts.resolve(base);
      const auto record = al::run_trial(coords, cfg);
      const auto dir = train_opts.out_dir();
      std::filesystem::create_directories(dir);
      al::export_records_csv({record}, dir / "trial.csv");
      std::cout << "E1 test acc " << al::format_optional(record.e1_test_acc) << ", E2 test acc "
                << al::format_optional(record.e2_test_acc) << "\n";
      for (const auto& a : record.alignment)
        std::cout << al::metric_name(a.metric) << " " << al::format_optional(a.score) << " (layers " << a.layer_i
                  << ", " << a.layer_j << ")\n";
      if (record.failed) {
        std::cerr << "trial failed: " << record.note << "\n";
        return kExitPartial;
      }
      return 0;
    }

    if (*sweep) {
      const auto cfg = sweep_opts.resolve(base);
      if (dump_config) {
        std::cout << al::to_config_text(cfg);
        return 0;
      }
      const auto records = al::run_sweep(cfg);
      const auto summaries = summarize_all(records);
      const auto dir = sweep_opts.out_dir();
      al::export_results(records, summaries, dir);
      {
        std::ofstream(dir / "config.txt") << al::to_config_text(cfg);
      }
      print_trend(summaries);
      const auto failed = count_failed(records);
      std::cout << records.size() << " trials written to " << dir.string() << "\n";
      if (failed) {
        std::cerr << failed << " trial(s) failed\n";
        return kExitPartial;
      }
      return 0;
    }

    if (*summ) {
      const auto records = al::load_records_csv(records_path);
      const auto summaries = summarize_all(records);
      const std::filesystem::path dir =
          summ_out.empty() ? std::filesystem::path(records_path).parent_path() : std::filesystem::path(summ_out);
      al::export_summaries(records, summaries, dir.empty() ? "." : dir);
      print_trend(summaries);
      return 0;
    }

    if (*align) {
      al::AlignFilesOptions opts;
      opts.params.knn_k = knn_k;
      if (batch > 0) opts.batch = batch;
      for (const auto& name : metric_names) {
        const auto metric = al::parse_metric(name);
        std::cout << name << " " << al::format_double(al::align_files(emb1, emb2, metric, opts)) << "\n";
      }
      return 0;
    }
  } catch (const al::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
