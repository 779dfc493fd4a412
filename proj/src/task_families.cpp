#include "rte/task_families.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace rte {

std::string family_name(Family f) {
  switch (f) {
    case Family::Quadratic: return "quadratic";
    case Family::Cubic: return "cubic";
    case Family::Exponential: return "exponential";
    case Family::SinTrend: return "sin_trend";
    case Family::TriTrend: return "tri_trend";
  }
  throw std::logic_error("family_name: bad enum");
}

Family family_from_name(const std::string& s) {
  if (s == "quadratic") return Family::Quadratic;
  if (s == "cubic") return Family::Cubic;
  if (s == "exponential") return Family::Exponential;
  if (s == "sin_trend") return Family::SinTrend;
  if (s == "tri_trend") return Family::TriTrend;
  throw std::invalid_argument("unknown family: " + s);
}

std::string region_name(Region r) {
  switch (r) {
    case Region::F1_1: return "F1_1";
    case Region::F1_2: return "F1_2";
    case Region::F2: return "F2";
    case Region::F3: return "F3";
    case Region::F4: return "F4";
    case Region::F5: return "F5";
  }
  throw std::logic_error("region_name: bad enum");
}

Region region_from_name(const std::string& s) {
  if (s == "F1_1") return Region::F1_1;
  if (s == "F1_2") return Region::F1_2;
  if (s == "F2") return Region::F2;
  if (s == "F3") return Region::F3;
  if (s == "F4") return Region::F4;
  if (s == "F5") return Region::F5;
  throw std::invalid_argument("unknown region: " + s);
}

const Interval& FamilySpec::region_interval(Region r) const {
  auto it = shift_ranges.find(r);
  if (it == shift_ranges.end()) {
    throw std::invalid_argument("region " + region_name(r) + " undefined for family " +
                                family_name(family) + "; defined: " + defined_regions());
  }
  return it->second;
}

std::string FamilySpec::defined_regions() const {
  std::string out;
  for (const auto& [r, iv] : shift_ranges) {
    if (!out.empty()) out += ", ";
    out += region_name(r);
  }
  return out;
}

FamilySpec default_family_spec(Family f) {
  FamilySpec s;
  s.family = f;
  s.x_domain = {0.0, 20.0};
  double lo = 0.0, w = 0.0;
  switch (f) {
    case Family::Quadratic:
    case Family::Cubic:
      lo = 0.5;
      w = 1.0;
      break;
    case Family::Exponential:
      lo = 0.05;
      w = 0.05;
      break;
    case Family::SinTrend:
    case Family::TriTrend:
      lo = 0.1;
      w = 0.1;
      break;
  }
  const Region order[] = {Region::F1_1, Region::F1_2, Region::F2,
                          Region::F3,   Region::F4,   Region::F5};
  for (int i = 0; i < 6; ++i) s.shift_ranges[order[i]] = {lo + i * w, lo + (i + 1) * w};

  switch (f) {
    case Family::Quadratic:
      s.fixed_ranges = {{-2.0, 2.0}, {-2.0, 2.0}};  // b, c
      break;
    case Family::Cubic:
      s.fixed_ranges = {{2.0, 4.0}, {-2.0, 2.0}};  // b3, c3
      break;
    case Family::Exponential:
      s.fixed_ranges = {{1.0, 2.0}, {-1.0, 1.0}};  // alpha, c0
      break;
    case Family::SinTrend:
    case Family::TriTrend:
      s.fixed_ranges = {{0.5, 1.0}};  // amplitude A
      break;
  }
  return s;
}

double Primitive::eval(double x) const {
  switch (kind) {
    case Kind::Poly:
      return params[0] + params[1] * x + params[2] * x * x;
    case Kind::Sin:
      return std::sin(params[0] * x + params[1]);
    case Kind::Tanh:
      return std::tanh(params[0] * x);
    case Kind::Identity:
      return x;
  }
  throw std::logic_error("Primitive::eval: bad kind");
}

Primitive Primitive::sample(Kind kind, Rng& rng) {
  Primitive p;
  p.kind = kind;
  switch (kind) {
    case Kind::Poly:
      p.params = {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0) / 5.0,
                  rng.uniform(-2.0, 2.0) / 25.0};
      break;
    case Kind::Sin:
      p.params = {rng.uniform(0.5, 2.0), rng.uniform(0.0, 2.0 * M_PI)};
      break;
    case Kind::Tanh:
      p.params = {rng.uniform(0.5, 2.0)};
      break;
    case Kind::Identity:
      break;
  }
  return p;
}

std::string Primitive::kind_name(Kind k) {
  switch (k) {
    case Kind::Poly: return "poly";
    case Kind::Sin: return "sin";
    case Kind::Tanh: return "tanh";
    case Kind::Identity: return "identity";
  }
  throw std::logic_error("Primitive::kind_name: bad enum");
}

Primitive::Kind Primitive::kind_from_name(const std::string& s) {
  if (s == "poly") return Kind::Poly;
  if (s == "sin") return Kind::Sin;
  if (s == "tanh") return Kind::Tanh;
  if (s == "identity") return Kind::Identity;
  throw std::invalid_argument("unknown primitive kind: " + s);
}

const Primitive& PrimitiveLibrary::at(int id) const {
  if (id < 0 || id >= size()) throw std::invalid_argument("primitive id out of range");
  return items[static_cast<size_t>(id)];
}

Eigen::VectorXd TaskDataset::context_y() const {
  Eigen::VectorXd v(static_cast<long>(context.size()));
  for (size_t i = 0; i < context.size(); ++i) v[static_cast<long>(i)] = context[i].second;
  return v;
}

Eigen::VectorXd TaskDataset::query_y() const {
  Eigen::VectorXd v(static_cast<long>(query.size()));
  for (size_t i = 0; i < query.size(); ++i) v[static_cast<long>(i)] = query[i].second;
  return v;
}

double eval_family(const FamilySpec& spec, const TaskDescriptor& d, double x) {
  if (d.kind != TaskDescriptor::Kind::Parametric || d.family != spec.family) {
    throw std::invalid_argument("eval_family: descriptor does not match spec family " +
                                family_name(spec.family));
  }
  const auto& p = d.params;
  switch (spec.family) {
    case Family::Quadratic:
      return p[0] * x * x + p[1] * x + p[2];
    case Family::Cubic: {
      const double u = x - 10.0;
      return p[0] / 400.0 * u * u * u + p[1] / 10.0 * u + p[2];
    }
    case Family::Exponential:
      return p[1] * (std::exp(p[0] * (x - 10.0)) - 1.0) + p[2];
    case Family::SinTrend:
      return p[0] * x + p[1] * (0.5 * std::sin(2.0 * M_PI * x / kWavePeriod));
    case Family::TriTrend: {
      const double frac = x / kWavePeriod - std::floor(x / kWavePeriod);
      return p[0] * x + p[1] * (2.0 * std::abs(2.0 * frac - 1.0) - 0.5);
    }
  }
  throw std::logic_error("eval_family: bad enum");
}

double eval_polynomial(const TaskDescriptor& d, double x) {
  if (d.kind != TaskDescriptor::Kind::Polynomial)
    throw std::invalid_argument("eval_polynomial: descriptor is not a polynomial");
  double acc = 0.0;
  // Horner, highest degree first.
  for (auto it = d.coeffs.rbegin(); it != d.coeffs.rend(); ++it) acc = acc * x + *it;
  return acc;
}

double compose_eval(const std::vector<int>& recipe, const PrimitiveLibrary& prims, double x) {
  if (recipe.empty()) throw std::invalid_argument("compose_eval: empty recipe");
  double v = x;
  for (int id : recipe) v = prims.at(id).eval(v);
  return v;
}

int parity_eval(const std::vector<int>& mask, const std::vector<int>& bits) {
  int acc = 0;
  for (int i : mask) acc ^= bits[static_cast<size_t>(i)] & 1;
  return acc;
}

double eval_task(const TaskDescriptor& d, const FamilySpec* spec, const PrimitiveLibrary* prims,
                 double x) {
  switch (d.kind) {
    case TaskDescriptor::Kind::Parametric:
      if (!spec) throw std::invalid_argument("eval_task: parametric task needs a FamilySpec");
      return eval_family(*spec, d, x);
    case TaskDescriptor::Kind::Polynomial:
      return eval_polynomial(d, x);
    case TaskDescriptor::Kind::Composition:
      if (!prims) throw std::invalid_argument("eval_task: composition task needs primitives");
      return compose_eval(d.recipe, *prims, x);
    case TaskDescriptor::Kind::Parity:
      throw std::invalid_argument("eval_task: parity tasks are not real-valued");
  }
  throw std::logic_error("eval_task: bad kind");
}

TaskDescriptor sample_task(const FamilySpec& spec, Region region, Rng& rng) {
  const Interval& iv = spec.region_interval(region);
  TaskDescriptor d;
  d.kind = TaskDescriptor::Kind::Parametric;
  d.family = spec.family;
  d.params.push_back(rng.uniform(iv.lo, iv.hi));
  for (const Interval& f : spec.fixed_ranges) d.params.push_back(rng.uniform(f.lo, f.hi));
  d.has_region = true;
  d.region = region;
  return d;
}

TaskDescriptor sample_polynomial(int degree, Rng& rng) {
  if (degree < 0 || degree > 9)
    throw std::invalid_argument("sample_polynomial: degree must be in [0, 9]");
  TaskDescriptor d;
  d.kind = TaskDescriptor::Kind::Polynomial;
  double scale = 1.0;
  for (int k = 0; k <= degree; ++k) {
    d.coeffs.push_back(rng.uniform(-2.0, 2.0) * scale);
    scale /= 5.0;
  }
  return d;
}

std::vector<double> make_grid(Interval x_domain, int grid_len) {
  if (grid_len < 2) throw std::invalid_argument("make_grid: need at least 2 points");
  std::vector<double> g(static_cast<size_t>(grid_len));
  for (int i = 0; i < grid_len; ++i)
    g[static_cast<size_t>(i)] =
        x_domain.lo + (x_domain.hi - x_domain.lo) * static_cast<double>(i) / (grid_len - 1);
  return g;
}

TaskDataset split_context_query(const TaskDescriptor& d, const FamilySpec* spec,
                                const PrimitiveLibrary* prims, Interval x_domain, int grid_len,
                                uint64_t seed) {
  if (grid_len % 2 != 0) throw std::invalid_argument("split_context_query: grid length must be even");
  if (grid_len < 4) throw std::invalid_argument("split_context_query: grid length must be >= 4");

  TaskDataset ds;
  ds.noise_seed = seed;
  ds.grid_x = make_grid(x_domain, grid_len);

  std::vector<int> idx(static_cast<size_t>(grid_len));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  ds.context_idx.assign(idx.begin(), idx.begin() + grid_len / 2);
  ds.query_idx.assign(idx.begin() + grid_len / 2, idx.end());
  std::sort(ds.context_idx.begin(), ds.context_idx.end());
  std::sort(ds.query_idx.begin(), ds.query_idx.end());

  for (int i : ds.context_idx) {
    const double x = ds.grid_x[static_cast<size_t>(i)];
    ds.context.emplace_back(x, eval_task(d, spec, prims, x));
  }
  for (int i : ds.query_idx) {
    const double x = ds.grid_x[static_cast<size_t>(i)];
    ds.query.emplace_back(x, eval_task(d, spec, prims, x));
  }
  return ds;
}

}  // namespace rte
