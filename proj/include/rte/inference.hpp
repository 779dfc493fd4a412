#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "rte/decomposer.hpp"
#include "rte/proxy_geometry.hpp"
#include "rte/relational_operator.hpp"
#include "rte/scaler.hpp"

namespace rte {

/// Scores every candidate and returns the index of the minimum; ties are
/// broken by enumeration order. Fills context_score and rank on each entry.
int verify_rank(std::vector<DecompositionCandidate>& candidates,
                const std::function<double(const DecompositionCandidate&)>& score);

// --- Continuous regime (Strategy A + multi-step ghost context) ---

/// Everything strategy-A inference needs about a trained parameter-regime run.
struct ParamInferContext {
  const MlpModel* psi = nullptr;
  const OperatorSpec* spec = nullptr;
  const std::vector<VectorXd>* anchor_curves = nullptr;      // raw-unit library curves
  const std::vector<VectorXd>* anchor_embeddings = nullptr;  // projected
  const std::vector<int>* anchor_ids = nullptr;
  ProbeConfig probe;
  const PcaModel* pca = nullptr;
  Scaler scaler;
};

struct MultiStepPlan {
  int n_steps = 1;
  std::vector<VectorXd> step_shifts;      // scaled (d1, d2) per step
  std::vector<VectorXd> ghost_contexts;   // scaled context y per step
  std::vector<VectorXd> intermediate;     // scaled predicted curves per step
};

struct ParamPrediction {
  VectorXd curve;  // raw-unit prediction on the full grid
  int anchor1 = -1, anchor2 = -1;
  double d1 = 0.0, d2 = 0.0;  // scaled distances fed to Ψ (full shift)
  VectorXd target_embedding;
  MultiStepPlan plan;
};

/// Embeds the target context through the probe + PCA pipeline.
VectorXd embed_target(const ParamInferContext& ctx, const TaskDataset& target);

/// Strategy A: embed, pick nearest two anchors, apply Ψ on every grid point.
/// Identical to multistep_extrapolate with n_steps = 1 (same code path).
ParamPrediction strategy_a_infer(const ParamInferContext& ctx, const TaskDataset& target);

/// Ghost-context iteration: the latent shift is applied in n equal pieces;
/// the context at step t interpolates anchor and target observations at t/N
/// and each prediction becomes the next step's anchor.
ParamPrediction multistep_extrapolate(const ParamInferContext& ctx, const TaskDataset& target,
                                      int n_steps);

/// Ablation entry point: fixed anchor rows (indices into the context arrays)
/// instead of nearest-neighbour retrieval; optionally zeroes the distances.
ParamPrediction infer_with_anchors(const ParamInferContext& ctx, const TaskDataset& target,
                                   const VectorXd& target_embedding, int row1, int row2,
                                   bool zero_shift, int n_steps = 1);

// --- Discrete search ---

struct ComposeSearchResult {
  std::vector<int> recipe;  // chosen primitive ids, innermost-first
  double context_score = 0.0;
  VectorXd query_pred;  // predictions at the query x's
  bool clamped = false; // some interpolation input was clamped to the grid range
};

/// Multi-step compositional search: per-slot top-k retrieval from the
/// decomposer's latents, then exhaustive re-ranking of candidate sequences by
/// context MSE, with composites evaluated by iterated linear interpolation of
/// the stored primitive curves (no analytic forms).
ComposeSearchResult multistep_compose_search(
    const Decomposer& dec, const std::vector<VectorXd>& primitive_embeddings,
    const std::vector<int>& primitive_ids, const std::vector<double>& grid,
    const std::vector<VectorXd>& primitive_curves,
    const std::vector<std::pair<double, double>>& context, const std::vector<double>& query_x,
    int k);

/// Composite value by iterated linear interpolation of discrete curves;
/// inputs outside the grid range are clamped to the ends.
double interp_compose(const std::vector<int>& recipe_rows, const std::vector<double>& grid,
                      const std::vector<VectorXd>& curves, double x, bool* clamped = nullptr);

struct ParitySearchResult {
  std::vector<int> mask;  // chosen anchor mask
  int bit_index = -1;
  double context_score = 0.0;
  std::vector<int> query_predictions;
};

/// Brute-force (anchor mask, bit index) search scored by mean BCE of the
/// operator's logits on the labelled context; deterministic tie-break by
/// enumeration order (mask order as given, bit index ascending).
ParitySearchResult parity_search(
    const std::function<double(const std::vector<int>& bits, int anchor_out, int bit_value)>&
        logit_fn,
    const std::vector<std::vector<int>>& anchor_masks,
    const std::vector<std::pair<std::vector<int>, int>>& context,
    const std::vector<std::vector<int>>& query_bits);

// --- EM self-labeling (composition regime) ---

struct EmConfig {
  enum class Warmup { Primitives, PartialLabels };
  Warmup warmup = Warmup::PartialLabels;
  double label_fraction = 0.25;
  int rounds = 2;
  TrainConfig psi_train;
  uint64_t seed = 0;
};

struct EmResult {
  MlpModel psi;
  std::vector<std::array<int, 2>> pseudo_labels;  // per task (inner, outer)
  std::vector<bool> supervised;
  std::vector<double> round_accuracy;  // pseudo-label accuracy on unsupervised tasks
};

/// Alternates candidate scoring with the current Ψ (E) and retraining Ψ on
/// the pseudo-labels (M). Candidates are all ordered primitive pairs with the
/// identity excluded; supervised tasks stay pinned to their true labels.
EmResult em_self_label(const OperatorSpec& spec, TaskLibrary& lib,
                       const std::vector<int>& primitive_pool, int identity_id,
                       const EmConfig& cfg, const Scaler& scaler);

}  // namespace rte
