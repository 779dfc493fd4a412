#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rte/rng.hpp"

namespace rte {

enum class Family { Quadratic, Cubic, Exponential, SinTrend, TriTrend };
enum class Region { F1_1, F1_2, F2, F3, F4, F5 };

std::string family_name(Family f);
Family family_from_name(const std::string& s);
std::string region_name(Region r);
Region region_from_name(const std::string& s);

struct Interval {
  double lo = 0.0, hi = 0.0;
  double width() const { return hi - lo; }
  bool contains(double x) const { return x >= lo && x < hi; }
};

/// Parameter-region layout of one synthetic function family: ordered,
/// contiguous shift-parameter intervals plus ranges for the fixed parameters.
struct FamilySpec {
  Family family;
  std::map<Region, Interval> shift_ranges;  // F1_1 < F1_2 < F2 < F3 < F4 < F5
  std::vector<Interval> fixed_ranges;
  Interval x_domain;

  const Interval& region_interval(Region r) const;
  std::string defined_regions() const;
};

/// Canonical spec for a family: appendix shift ranges for F1_1/F1_2/F2,
/// F3..F5 extended by successive interval widths, x domain [0, 20].
FamilySpec default_family_spec(Family f);

/// Composition primitives. A recipe applies primitives innermost-first.
struct Primitive {
  enum class Kind { Poly, Sin, Tanh, Identity };
  Kind kind = Kind::Identity;
  std::vector<double> params;  // Poly: c0,c1,c2; Sin: omega,phase; Tanh: alpha

  double eval(double x) const;
  static Primitive sample(Kind kind, Rng& rng);
  static std::string kind_name(Kind k);
  static Kind kind_from_name(const std::string& s);
};

struct PrimitiveLibrary {
  std::vector<Primitive> items;
  int add(Primitive p) {
    items.push_back(std::move(p));
    return static_cast<int>(items.size()) - 1;
  }
  const Primitive& at(int id) const;
  int size() const { return static_cast<int>(items.size()); }
};

/// Ground-truth identity of a task.
struct TaskDescriptor {
  enum class Kind { Parametric, Polynomial, Composition, Parity };
  Kind kind = Kind::Parametric;

  Family family = Family::Quadratic;   // Parametric
  std::vector<double> params;          // Parametric: shift first, then fixed
  std::vector<double> coeffs;          // Polynomial: c0..c_degree
  std::vector<int> recipe;             // Composition: primitive ids, innermost first
  std::vector<int> parity_mask;        // Parity: sorted bit indices in [0, 8)
  bool has_region = false;
  Region region = Region::F1_1;

  int degree() const { return static_cast<int>(coeffs.size()) - 1; }
};

constexpr int kParityBits = 8;

/// A task's observed data: shared evaluation grid plus a disjoint
/// context/query split of the grid points.
struct TaskDataset {
  std::vector<double> grid_x;
  std::vector<int> context_idx;  // positions into grid_x, ascending
  std::vector<int> query_idx;
  std::vector<std::pair<double, double>> context;
  std::vector<std::pair<double, double>> query;
  uint64_t noise_seed = 0;

  int grid_len() const { return static_cast<int>(grid_x.size()); }
  Eigen::VectorXd context_y() const;
  Eigen::VectorXd query_y() const;
};

// --- Evaluation ---

double eval_family(const FamilySpec& spec, const TaskDescriptor& d, double x);
double eval_polynomial(const TaskDescriptor& d, double x);
double compose_eval(const std::vector<int>& recipe, const PrimitiveLibrary& prims, double x);
int parity_eval(const std::vector<int>& mask, const std::vector<int>& bits);

/// Evaluates any non-parity descriptor; `spec`/`prims` may be null when unused.
double eval_task(const TaskDescriptor& d, const FamilySpec* spec, const PrimitiveLibrary* prims,
                 double x);

// --- Sampling ---

TaskDescriptor sample_task(const FamilySpec& spec, Region region, Rng& rng);

/// Polynomial of the given degree with c_d ~ U(-2,2) * 5^-d, domain [-5, 5].
TaskDescriptor sample_polynomial(int degree, Rng& rng);

/// Evaluates the task on an L-point grid over x_domain and assigns L/2 grid
/// points to the context, the rest to the query; deterministic under seed.
TaskDataset split_context_query(const TaskDescriptor& d, const FamilySpec* spec,
                                const PrimitiveLibrary* prims, Interval x_domain, int grid_len,
                                uint64_t seed);

std::vector<double> make_grid(Interval x_domain, int grid_len);

constexpr Interval kPolyDomain{-5.0, 5.0};
constexpr double kWavePeriod = 20.0 / 7.0;

// --- Library ---

struct TaskEntry {
  int id = 0;
  TaskDescriptor desc;
  std::string label;  // region / degree / recipe tag for exports
  TaskDataset data;
  Eigen::VectorXd raw_embedding;  // filled by the embedding stage
  Eigen::VectorXd embedding;      // PCA-projected
  int predecessor_id = -1;        // length-regime metadata
  std::vector<int> constituent_ids;
};

struct TaskLibrary {
  std::vector<TaskEntry> tasks;
  PrimitiveLibrary primitives;

  int add(TaskEntry e) {
    e.id = static_cast<int>(tasks.size());
    tasks.push_back(std::move(e));
    return tasks.back().id;
  }
};

}  // namespace rte
