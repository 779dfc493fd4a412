#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rte/inference.hpp"
#include "rte/io.hpp"

namespace rte {

enum class MethodKind {
  InductiveBaseline,
  T2VInductive,
  InductiveOracle,
  RTE,
  TransductiveOracle,
  Oracle,
  FarAnchors,
  RandomAnchors,
  ZeroShift,
  Rank3Anchor,
  RandomConstituents,
  NoVerification,
  MultiStep,
  EM,
};

struct Method {
  MethodKind kind = MethodKind::RTE;
  int steps = 0;                          // MultiStep(N)
  std::string em_variant = "PartialLabels";
  double em_fraction = 0.25;

  std::string name() const;
  static Method parse(const std::string& text);
  bool operator==(const Method& o) const { return name() == o.name(); }
};

struct TrainBlock {
  int epochs = 100;
  int batch_size = 1024;
  double lr = 1e-3;
  double weight_decay = 0.0;
};

struct MultiStepBlock {
  int steps = 3;
  std::string region = "F4";
  int targets = 60;
};

/// One ordering/threshold check evaluated against aggregated results.
struct ResultCheck {
  std::string type;  // lt | le | ratio_le | value_ge | value_eq | gap_ge
  std::string a, b;  // method names
  std::string family, metric;
  double value = 0.0;    // ratio / threshold / minimum gap
  double min_gap = 0.0;  // absolute gap for lt/le, scaled by gap_ref when set
  std::string gap_ref;   // method whose mean scales min_gap
};

struct ExperimentConfig {
  std::string experiment;  // parameter|length|composition|parity|multistep_composition|em_composition|manifold
  std::string name = "experiment";
  std::vector<uint64_t> seeds = {1};
  std::vector<Method> methods;
  std::string out_dir = "out";
  int jobs = 0;  // 0 = hardware concurrency
  int grid_len = 32;
  int latent_dim = 16;
  int export_curves = 0;

  // probe / embedding stage
  int probe_adapt_steps = 50;
  double probe_lr = 0.02;
  int probe_pretrain_tasks = 500;
  TrainBlock probe_pretrain{40, 512, 1e-3, 0.0};

  // parameter regime
  std::string family = "quadratic";
  int library_size = 256;
  int eval_targets = 100;
  std::string eval_region = "F2";
  int pairs_per_target = 2;
  double cross_region_prob = 0.5;
  std::vector<MultiStepBlock> multistep;
  TrainBlock operator_train{200, 4096, 1e-3, 1e-4};
  TrainBlock baseline_train{60, 1024, 1e-3, 0.0};

  // length regime
  int per_degree = 80;
  int max_train_degree = 8;
  int target_degree = 9;
  int retrieval_k = 10;
  TrainBlock decomposer_train{100, 256, 1e-3, 0.0};

  // composition regime
  int primitives_per_kind = 40;
  int per_recipe = 80;

  // parity regime
  int parity_context = 16;
  int parity_queries = 32;
  int parity_train_examples = 20000;

  // multi-step composition
  int ms_per_recipe = 30;
  int ms_depth = 3;
  int ms_k = 5;

  // EM
  int em_rounds = 2;

  // manifold
  int manifold_tasks_per_group = 40;
  int isomap_neighbors = 15;

  std::vector<ResultCheck> checks;

  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig from_json_file(const std::string& path);
  std::string to_json() const;
  std::string hash() const { return content_hash(to_json()); }

  /// Rejects unknown/inapplicable methods and bad sizes before any compute.
  void validate() const;
};

struct ExperimentResult {
  std::string method;
  std::string family;  // family label, optionally suffixed "/region"
  std::string metric;  // mse | accuracy | ...
  double mean = 0.0;
  double ci95 = 0.0;  // 1.96 * std / sqrt(n_trials)
  double stddev = 0.0;
  int n_trials = 0;
  double runtime_sec = 0.0;  // written to run_meta.json, not results.csv
};

struct TrialRow {
  std::string method, family, metric;
  uint64_t seed = 0;
  double value = 0.0;
};

struct ExperimentOutput {
  std::vector<ExperimentResult> results;
  std::vector<TrialRow> trials;
  double total_runtime_sec = 0.0;
};

/// Runs every trial (seed) of the experiment, aggregates, and writes
/// results.csv / trials.csv / run_meta.json plus regime-specific artifacts
/// under config.out_dir. Fully deterministic per config+seed.
ExperimentOutput run_experiment(const ExperimentConfig& config);

/// Convenience wrapper: replaces the method list with the regime's ablation
/// set (standard + ablations + oracle) and runs the experiment.
ExperimentOutput run_ablation_suite(ExperimentConfig config);

struct CheckOutcome {
  ResultCheck check;
  bool passed = false;
  std::string detail;
};

/// Evaluates the config's checks against aggregated results.
std::vector<CheckOutcome> evaluate_checks(const std::vector<ResultCheck>& checks,
                                          const std::vector<ExperimentResult>& results);

/// Loads results.csv from out_dir and evaluates the config's checks;
/// returns false if any check fails.
bool verify_results(const ExperimentConfig& config, std::string* report);

std::vector<ExperimentResult> load_results_csv(const std::string& path);

/// Builds the task library for the config's regime (the `generate` command).
TaskLibrary build_library(const ExperimentConfig& config, uint64_t seed);

// --- Trained bundle (train/infer subcommands) ---

/// Trains the regime's models for one seed and saves a self-contained bundle
/// directory: library, embeddings, scaler, probe, PCA, Ψ, decomposer.
void train_bundle(const ExperimentConfig& config, uint64_t seed, const std::string& dir);

/// Loads a bundle and predicts a target given as JSON
/// {"context": [[x,y],...], "query_x": [...]}; writes decomposition, optional
/// candidate scores, and per-query predictions as JSON.
void infer_from_bundle(const std::string& bundle_dir, const std::string& target_json_path,
                       const std::string& out_path, bool emit_candidate_scores);

}  // namespace rte
