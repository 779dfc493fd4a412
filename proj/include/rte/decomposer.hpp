#pragma once

#include <Eigen/Dense>
#include <vector>

#include "rte/neural.hpp"
#include "rte/relational_operator.hpp"

namespace rte {

/// Amortized inference network g_ψ mapping a sorted sparse context to latent
/// embeddings of the task's decomposition, one head per component
/// (innermost-first), plus a scalar coefficient head in the length regime.
struct DecomposerSpec {
  Regime regime = Regime::Composition;
  int depth = 2;          // number of latent heads
  int grid_len = 32;      // L; trunk input dim is 2L
  int latent_dim = 16;    // z
  bool scalar_head = false;

  std::vector<int> net_sizes() const;
  int input_dim() const { return 2 * grid_len; }
  int context_len() const { return grid_len / 2; }

  static DecomposerSpec length(int grid_len, int latent_dim);
  static DecomposerSpec composition(int grid_len, int latent_dim);
  static DecomposerSpec multistep(int grid_len, int latent_dim, int depth);
};

struct Decomposer {
  DecomposerSpec spec;
  MlpModel net;
};

struct DecomposeResult {
  std::vector<VectorXd> latents;  // one per head, innermost-first
  double scalar = 0.0;            // c_new head (length regime)
};

/// Builds the trunk input: the context is normalized to L/2 points (repeat
/// the last point when shorter, subsample evenly when longer), sorted by x,
/// and each coordinate vector is right-padded with its last value to length
/// L, giving a 2L feature vector. Order-invariant by construction.
VectorXd decomposer_input(const DecomposerSpec& spec,
                          const std::vector<std::pair<double, double>>& context);

DecomposeResult decompose(const Decomposer& dec,
                          const std::vector<std::pair<double, double>>& context);

/// Trains g_ψ: `contexts` holds raw context point sets, `targets` the
/// concatenated per-head latent targets (plus trailing scalar when present).
Decomposer train_decomposer(const DecomposerSpec& spec,
                            const std::vector<std::vector<std::pair<double, double>>>& contexts,
                            const std::vector<VectorXd>& targets, const TrainConfig& cfg,
                            Rng& rng);

struct DecompositionCandidate {
  std::vector<int> anchor_ids;  // one library id per head, innermost-first
  VectorXd phi;                 // regime-specific transformation parameter
  double context_score = std::numeric_limits<double>::infinity();
  int rank = -1;
};

/// Per head: k nearest library items to the predicted latent; candidates are
/// the Cartesian product across heads in rank-lexicographic order.
/// k <= 0 is an error; k larger than the pool is clamped.
std::vector<DecompositionCandidate> propose_candidates(const DecomposerSpec& spec,
                                                       const std::vector<VectorXd>& latents,
                                                       const std::vector<VectorXd>& library,
                                                       const std::vector<int>& ids, int k);

}  // namespace rte
