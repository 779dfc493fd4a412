#pragma once

#include <Eigen/Dense>

#include "rte/task_families.hpp"

namespace rte {

/// Affine feature/target standardization shared by every model in a run.
/// Libraries and files stay in raw units; scaling happens at the model
/// boundary and predictions are mapped back before scoring.
struct Scaler {
  double x_off = 0.0, x_scale = 1.0;
  double y_off = 0.0, y_scale = 1.0;
  double d_scale = 1.0;  // proxy-distance divisor for operator inputs

  double sx(double x) const { return (x - x_off) / x_scale; }
  double sy(double y) const { return (y - y_off) / y_scale; }
  double unsy(double y) const { return y * y_scale + y_off; }

  Eigen::VectorXd sy_vec(const Eigen::Ref<const Eigen::VectorXd>& v) const {
    return ((v.array() - y_off) / y_scale).matrix();
  }
  Eigen::VectorXd unsy_vec(const Eigen::Ref<const Eigen::VectorXd>& v) const {
    return (v.array() * y_scale + y_off).matrix();
  }

  /// Scaled copy of a dataset (both coordinates), e.g. for probe adaptation.
  TaskDataset scale_dataset(const TaskDataset& ds) const {
    TaskDataset out = ds;
    for (auto& x : out.grid_x) x = sx(x);
    for (auto& p : out.context) p = {sx(p.first), sy(p.second)};
    for (auto& p : out.query) p = {sx(p.first), sy(p.second)};
    return out;
  }

  /// Fits x to map the domain onto [-1, 1] and y to zero mean, unit variance
  /// over the supplied sample of raw values.
  static Scaler fit(Interval x_domain, const std::vector<double>& y_values) {
    Scaler s;
    s.x_off = 0.5 * (x_domain.lo + x_domain.hi);
    s.x_scale = 0.5 * (x_domain.hi - x_domain.lo);
    if (!y_values.empty()) {
      double mean = 0.0;
      for (double y : y_values) mean += y;
      mean /= static_cast<double>(y_values.size());
      double var = 0.0;
      for (double y : y_values) var += (y - mean) * (y - mean);
      var /= static_cast<double>(y_values.size());
      s.y_off = mean;
      s.y_scale = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
    return s;
  }
};

}  // namespace rte
