#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "rte/neural.hpp"
#include "rte/task_families.hpp"

namespace rte {

/// Universal-probe configuration: a small [1,64,64,1] MLP briefly adapted to
/// a task's context; its parameter displacement is the raw task embedding.
struct ProbeConfig {
  std::vector<int> layer_sizes = {1, 64, 64, 1};
  int adapt_steps = 50;
  double lr = 0.02;
  uint64_t seed = 0;
  const MlpModel* pretrained = nullptr;  // family-pretrained probe, optional
  bool gradient_variant = false;         // final-step gradients instead of weight deltas
};

/// Adapts the probe to the dataset context with full-batch Adam and returns
/// the raw embedding (adapted weights minus init, or final-step gradients).
VectorXd probe_embed(const TaskDataset& dataset, const ProbeConfig& config);

/// Pretrains one shared probe on a pooled set of (x, y) samples drawn from
/// random tasks of the active family.
MlpModel pretrain_probe(const std::vector<int>& layer_sizes, const MatrixXd& xs,
                        const MatrixXd& ys, const TrainConfig& cfg, Rng& rng);

struct PcaModel {
  VectorXd mean;
  MatrixXd components;        // z rows, each a unit-norm principal direction
  VectorXd explained_variance;  // non-increasing

  static PcaModel fit(const std::vector<VectorXd>& embeddings, int z);
  VectorXd project(const Eigen::Ref<const VectorXd>& raw) const;
  VectorXd reconstruct(const Eigen::Ref<const VectorXd>& projected) const;
  int dim() const { return static_cast<int>(components.rows()); }
};

/// Ranked nearest neighbours by Euclidean distance in the projected space,
/// ascending; ties broken by smaller task id. `ids[i]` labels `library[i]`.
std::vector<std::pair<int, double>> nearest_anchor(const Eigen::Ref<const VectorXd>& target,
                                                   const std::vector<VectorXd>& library,
                                                   const std::vector<int>& ids, int k);

/// Isomap: symmetric k-NN graph, all-pairs geodesics, classical MDS.
/// Throws std::runtime_error if the k-NN graph is disconnected.
MatrixXd isomap_embed(const std::vector<VectorXd>& embeddings, int n_neighbors, int out_dim = 2);

}  // namespace rte
