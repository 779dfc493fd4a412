// Command-line front end: generate task libraries, train models, export
// embeddings, run benchmark/ablation suites, and verify result orderings.
//
// Exit codes: 0 success, 2 verification failure, 1 error.

#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "rte/bench.hpp"

namespace {

rte::ExperimentConfig load_config(const std::string& path, const std::string& out_dir_override,
                                  long seed_override, int jobs_override) {
  rte::ExperimentConfig cfg = rte::ExperimentConfig::from_json_file(path);
  if (!out_dir_override.empty()) cfg.out_dir = out_dir_override;
  if (seed_override >= 0) cfg.seeds = {static_cast<uint64_t>(seed_override)};
  if (jobs_override > 0) cfg.jobs = jobs_override;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relational task extrapolation experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir, bundle_dir, target_path, out_path;
  long seed = -1;
  int jobs = 0;
  bool candidate_scores = false;

  auto add_common = [&](CLI::App* cmd, bool need_config = true) {
    if (need_config) cmd->add_option("--config", config_path, "experiment config JSON")->required();
    cmd->add_option("--out-dir", out_dir, "override config out_dir");
    cmd->add_option("--seed", seed, "override config seeds with a single seed");
    cmd->add_option("--jobs", jobs, "worker threads for trials");
  };

  CLI::App* generate = app.add_subcommand("generate", "sample a task library to JSONL");
  add_common(generate);
  std::string lib_out = "library.jsonl";
  generate->add_option("--out", lib_out, "output JSONL path");

  CLI::App* train = app.add_subcommand("train", "train the regime models into a bundle dir");
  add_common(train);
  train->add_option("--bundle", bundle_dir, "bundle output directory")->required();

  CLI::App* embed = app.add_subcommand("embed", "export task embeddings and 2-D coordinates");
  add_common(embed);

  CLI::App* infer = app.add_subcommand("infer", "decompose and predict a target from a bundle");
  infer->add_option("--bundle", bundle_dir, "trained bundle directory")->required();
  infer->add_option("--target", target_path, "target JSON (context / query_x)")->required();
  infer->add_option("--out", out_path, "output JSON path")->required();
  infer->add_flag("--candidate-scores", candidate_scores, "include all candidate scores");

  CLI::App* bench = app.add_subcommand("bench", "run the configured experiment");
  add_common(bench);

  CLI::App* ablate = app.add_subcommand("ablate", "run the regime's ablation suite");
  add_common(ablate);

  CLI::App* viz = app.add_subcommand("viz-export", "run the manifold export pipeline");
  add_common(viz);

  CLI::App* verify = app.add_subcommand("verify", "check result orderings; exit 2 on violation");
  add_common(verify);

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) {
      const auto cfg = load_config(config_path, out_dir, seed, jobs);
      const rte::TaskLibrary lib = rte::build_library(cfg, cfg.seeds.front());
      rte::save_library_jsonl(lib, lib_out);
      std::printf("wrote %zu tasks (%d primitives) to %s\n", lib.tasks.size(),
                  lib.primitives.size(), lib_out.c_str());
      return 0;
    }
    if (train->parsed()) {
      const auto cfg = load_config(config_path, out_dir, seed, jobs);
      rte::train_bundle(cfg, cfg.seeds.front(), bundle_dir);
      std::printf("bundle written to %s\n", bundle_dir.c_str());
      return 0;
    }
    if (infer->parsed()) {
      rte::infer_from_bundle(bundle_dir, target_path, out_path, candidate_scores);
      std::printf("prediction written to %s\n", out_path.c_str());
      return 0;
    }
    if (embed->parsed() || viz->parsed()) {
      auto cfg = load_config(config_path, out_dir, seed, jobs);
      cfg.experiment = "manifold";
      cfg.methods.clear();
      const auto out = rte::run_experiment(cfg);
      std::printf("manifold exports written to %s (%.1fs)\n", cfg.out_dir.c_str(),
                  out.total_runtime_sec);
      return 0;
    }
    if (bench->parsed() || ablate->parsed()) {
      const auto cfg = load_config(config_path, out_dir, seed, jobs);
      const auto out = bench->parsed() ? rte::run_experiment(cfg) : rte::run_ablation_suite(cfg);
      for (const auto& r : out.results)
        std::printf("%-28s %-26s %-22s mean=%-12.6g ci95=%-10.4g n=%d\n", r.method.c_str(),
                    r.family.c_str(), r.metric.c_str(), r.mean, r.ci95, r.n_trials);
      std::printf("results written to %s (%.1fs)\n", cfg.out_dir.c_str(), out.total_runtime_sec);
      if (!cfg.checks.empty()) {
        std::string report;
        const bool ok = rte::verify_results(cfg, &report);
        std::fputs(report.c_str(), stdout);
        if (!ok) return 2;
      }
      return 0;
    }
    if (verify->parsed()) {
      const auto cfg = load_config(config_path, out_dir, seed, jobs);
      std::string report;
      const bool ok = rte::verify_results(cfg, &report);
      std::fputs(report.c_str(), stdout);
      return ok ? 0 : 2;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
