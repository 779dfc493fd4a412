#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "rte/rng.hpp"

namespace rte {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Loss { Mse, BceWithLogits };

/// Dense MLP with ReLU hidden activations and a linear output layer.
/// Weights are stored per layer as (fan_out x fan_in) matrices; data flows
/// through as columns, so a batch is a (dim x batch) matrix.
struct MlpModel {
  std::vector<int> layer_sizes;
  std::vector<MatrixXd> weights;
  std::vector<VectorXd> biases;

  static MlpModel xavier(const std::vector<int>& sizes, Rng& rng);

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  long param_count() const;

  MatrixXd forward(const Eigen::Ref<const MatrixXd>& x) const;
  VectorXd forward1(const Eigen::Ref<const VectorXd>& x) const;

  /// Flattened view of all parameters (layer order, weights row-major then bias).
  VectorXd flatten() const;
  void unflatten(const Eigen::Ref<const VectorXd>& v);
};

struct Gradients {
  std::vector<MatrixXd> weights;
  std::vector<VectorXd> biases;

  static Gradients zeros_like(const MlpModel& m);
  VectorXd flatten() const;
};

/// Loss over a batch: mean over batch columns and output rows.
double loss_value(Loss loss, const Eigen::Ref<const MatrixXd>& output,
                  const Eigen::Ref<const MatrixXd>& targets);

/// Exact gradients of the batch loss w.r.t. every parameter.
/// `loss_out`, when non-null, receives the loss at the current parameters.
Gradients backward(const MlpModel& model, const Eigen::Ref<const MatrixXd>& inputs,
                   const Eigen::Ref<const MatrixXd>& targets, Loss loss,
                   double* loss_out = nullptr);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW-style) when > 0
};

struct OptimState {
  std::vector<MatrixXd> m_w, v_w;
  std::vector<VectorXd> m_b, v_b;
  long step = 0;
  AdamConfig cfg;

  static OptimState init(const MlpModel& model, const AdamConfig& cfg);
};

/// One Adam update with bias correction; throws std::runtime_error naming the
/// parameter block if a gradient is non-finite.
void adam_step(MlpModel& model, const Gradients& grads, OptimState& state);

struct TrainConfig {
  int batch_size = 256;
  double lr = 1e-3;
  int epochs = 100;
  double weight_decay = 0.0;
  uint64_t seed = 0;
  Loss loss = Loss::Mse;
};

struct TrainResult {
  std::vector<double> epoch_loss;
};

/// Mini-batch Adam training over a fixed example matrix (columns = examples).
/// Shuffles with the config seed each epoch, keeps the last partial batch,
/// and aborts with std::runtime_error if the loss turns non-finite.
TrainResult train(MlpModel& model, const Eigen::Ref<const MatrixXd>& inputs,
                  const Eigen::Ref<const MatrixXd>& targets, const TrainConfig& cfg);

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace rte
