#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "rte/neural.hpp"
#include "rte/scaler.hpp"
#include "rte/task_families.hpp"

namespace rte {

enum class Regime { Parameter, Length, Composition, Parity };

std::string regime_name(Regime r);

/// Where the feature content of one input segment comes from.
enum class SegmentSource { QueryX, Anchor, ContextHead, Phi };

struct SegmentSpec {
  std::string name;
  SegmentSource source;
  int index;  // which anchor / phi block
  int length;
};

/// Input layout and architecture of the relational operator Ψ for one regime.
///
/// Parameter:   [x | y_anc1 | y_anc2 | context | d1 d2] -> scalar prediction,
///              blocks [D,64,64,16][16,64,64,16][16,128,1].
/// Length:      [x_grid | y_prev | context | c_norm] -> full target curve,
///              blocks [D,256,256,128][128,128,64][64,64,L].
/// Composition: [x_grid | y_inner | y_outer | context] -> composite curve,
///              same deep blocks. Component order is innermost-first.
/// Parity:      [bits | anchor_out | bit_value] -> one logit, [10,32,32,1].
struct OperatorSpec {
  Regime regime = Regime::Parameter;
  int grid_len = 32;
  std::vector<SegmentSpec> segments;
  std::vector<int> layer_sizes;

  static OperatorSpec parameter(int grid_len);
  static OperatorSpec length(int grid_len);
  static OperatorSpec composition(int grid_len);
  static OperatorSpec parity();

  int input_dim() const;
  int output_dim() const { return layer_sizes.back(); }
  int context_len() const { return grid_len / 2; }
};

struct OperatorInputs {
  VectorXd x;                    // query x / grid / bit vector
  std::vector<VectorXd> anchors; // anchor value vectors (innermost-first for composition)
  VectorXd context_head;
  std::vector<VectorXd> phi;     // regime-specific transformation blocks
};

/// Concatenates the segments in the declared order; any length mismatch
/// raises std::invalid_argument naming the offending segment.
VectorXd build_operator_input(const OperatorSpec& spec, const OperatorInputs& in);

/// Exact inverse of build_operator_input (round-trip tested).
OperatorInputs decode_operator_input(const OperatorSpec& spec,
                                     const Eigen::Ref<const VectorXd>& features);

enum class PairSource { GroundTruthMetadata, ProxyDifference, PseudoLabel };

struct PairDataset {
  MatrixXd inputs;   // input_dim x N
  MatrixXd targets;  // output_dim x N
};

struct ParameterPairOptions {
  int pairs_per_target = 2;
  double cross_region_prob = 0.5;
  double distance_scale = 1.0;
  uint64_t seed = 0;
};

/// Phase-1 pair sampling for the continuous regime: anchors drawn 50/50
/// within-region / cross-region so training shifts cover the F1_2 -> F2 gap.
/// Inputs use the two sampled anchors ordered nearest-first with their
/// distances (proxy-space for ProxyDifference, true shift-parameter distance
/// for GroundTruthMetadata).
PairDataset build_parameter_pairs(const OperatorSpec& spec, const TaskLibrary& lib,
                                  PairSource source, const ParameterPairOptions& opt,
                                  const Scaler& scaler);

/// One curve-level example per polynomial of degree >= 1: the task's true
/// predecessor (coefficients minus the top term) plus the normalized new
/// coefficient c_d * 5^d.
PairDataset build_length_pairs(const OperatorSpec& spec, const TaskLibrary& lib,
                               const Scaler& scaler);

/// One curve-level example per composite task; constituent curves come from
/// the descriptor recipe (GroundTruthMetadata) or from entry.constituent_ids
/// (PseudoLabel).
PairDataset build_composition_pairs(const OperatorSpec& spec, const TaskLibrary& lib,
                                    PairSource source, const Scaler& scaler);

/// Extension examples (bits, anchor parity, bit value) -> extended parity,
/// sampled from the given anchor masks.
PairDataset build_parity_pairs(const OperatorSpec& spec,
                               const std::vector<std::vector<int>>& anchor_masks, int n_examples,
                               uint64_t seed);

/// Trains Ψ on a prepared pair dataset (MSE; BCE-with-logits for parity).
MlpModel train_operator(const OperatorSpec& spec, const PairDataset& pairs,
                        const TrainConfig& cfg, Rng& rng);

/// Single forward pass; parity output is thresholded at 0.5.
VectorXd apply_operator(const MlpModel& psi, const OperatorSpec& spec, const OperatorInputs& in);

/// Raw parity logit, used by verification scoring.
double parity_logit(const MlpModel& psi, const OperatorSpec& spec, const std::vector<int>& bits,
                    int anchor_out, int bit_value);

/// Oracle variant: identical Ψ, decomposition bypassed with caller-provided
/// ground-truth anchors and transformation.
struct OracleRunner {
  const MlpModel* psi;
  const OperatorSpec* spec;
  VectorXd predict(const OperatorInputs& ground_truth_inputs) const {
    return apply_operator(*psi, *spec, ground_truth_inputs);
  }
};

OracleRunner make_oracle_variant(const MlpModel& psi, const OperatorSpec& spec);

/// Full grid curve of a library task, reassembled from the context/query split.
VectorXd full_curve(const TaskEntry& entry);

/// Primitive evaluated over a grid.
VectorXd primitive_curve(const Primitive& p, const std::vector<double>& grid);

}  // namespace rte
