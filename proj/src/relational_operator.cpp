#include "rte/relational_operator.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace rte {

std::string regime_name(Regime r) {
  switch (r) {
    case Regime::Parameter: return "parameter";
    case Regime::Length: return "length";
    case Regime::Composition: return "composition";
    case Regime::Parity: return "parity";
  }
  throw std::logic_error("regime_name: bad enum");
}

OperatorSpec OperatorSpec::parameter(int grid_len) {
  OperatorSpec s;
  s.regime = Regime::Parameter;
  s.grid_len = grid_len;
  s.segments = {{"query_x", SegmentSource::QueryX, 0, 1},
                {"anchor_y1", SegmentSource::Anchor, 0, grid_len},
                {"anchor_y2", SegmentSource::Anchor, 1, grid_len},
                {"context_head", SegmentSource::ContextHead, 0, grid_len / 2},
                {"distances", SegmentSource::Phi, 0, 2}};
  const int d_in = 1 + 2 * grid_len + grid_len / 2 + 2;
  s.layer_sizes = {d_in, 64, 64, 16, 64, 64, 16, 128, 1};
  return s;
}

OperatorSpec OperatorSpec::length(int grid_len) {
  OperatorSpec s;
  s.regime = Regime::Length;
  s.grid_len = grid_len;
  s.segments = {{"grid_x", SegmentSource::QueryX, 0, grid_len},
                {"anchor_y_prev", SegmentSource::Anchor, 0, grid_len},
                {"context_head", SegmentSource::ContextHead, 0, grid_len / 2},
                {"coefficient", SegmentSource::Phi, 0, 1}};
  const int d_in = 2 * grid_len + grid_len / 2 + 1;
  s.layer_sizes = {d_in, 256, 256, 128, 128, 64, 64, grid_len};
  return s;
}

OperatorSpec OperatorSpec::composition(int grid_len) {
  OperatorSpec s;
  s.regime = Regime::Composition;
  s.grid_len = grid_len;
  // Outer component first in the feature vector; the inner component is the
  // anchor, the outer one acts as the transformation argument.
  s.segments = {{"grid_x", SegmentSource::QueryX, 0, grid_len},
                {"component_y_outer", SegmentSource::Phi, 0, grid_len},
                {"component_y_inner", SegmentSource::Anchor, 0, grid_len},
                {"context_head", SegmentSource::ContextHead, 0, grid_len / 2}};
  const int d_in = 3 * grid_len + grid_len / 2;
  s.layer_sizes = {d_in, 256, 256, 128, 128, 64, 64, grid_len};
  return s;
}

OperatorSpec OperatorSpec::parity() {
  OperatorSpec s;
  s.regime = Regime::Parity;
  s.grid_len = kParityBits;
  s.segments = {{"bits", SegmentSource::QueryX, 0, kParityBits},
                {"anchor_out", SegmentSource::Anchor, 0, 1},
                {"bit_value", SegmentSource::Phi, 0, 1}};
  s.layer_sizes = {kParityBits + 2, 32, 32, 1};
  return s;
}

int OperatorSpec::input_dim() const {
  int n = 0;
  for (const auto& seg : segments) n += seg.length;
  return n;
}

namespace {

const VectorXd& segment_vector(const OperatorSpec& spec, const SegmentSpec& seg,
                               const OperatorInputs& in) {
  auto fetch = [&](const std::vector<VectorXd>& blocks, const char* what) -> const VectorXd& {
    if (seg.index >= static_cast<int>(blocks.size())) {
      std::ostringstream os;
      os << "build_operator_input: missing " << what << " block for segment '" << seg.name << "'";
      throw std::invalid_argument(os.str());
    }
    return blocks[static_cast<size_t>(seg.index)];
  };
  switch (seg.source) {
    case SegmentSource::QueryX: return in.x;
    case SegmentSource::Anchor: return fetch(in.anchors, "anchor");
    case SegmentSource::ContextHead: return in.context_head;
    case SegmentSource::Phi: return fetch(in.phi, "phi");
  }
  throw std::logic_error("segment_vector: bad source");
}

}  // namespace

VectorXd build_operator_input(const OperatorSpec& spec, const OperatorInputs& in) {
  VectorXd out(spec.input_dim());
  long pos = 0;
  for (const auto& seg : spec.segments) {
    const VectorXd& v = segment_vector(spec, seg, in);
    if (v.size() != seg.length) {
      std::ostringstream os;
      os << "build_operator_input: segment '" << seg.name << "' expects length " << seg.length
         << ", got " << v.size();
      throw std::invalid_argument(os.str());
    }
    out.segment(pos, seg.length) = v;
    pos += seg.length;
  }
  return out;
}

OperatorInputs decode_operator_input(const OperatorSpec& spec,
                                     const Eigen::Ref<const VectorXd>& features) {
  if (features.size() != spec.input_dim())
    throw std::invalid_argument("decode_operator_input: feature length mismatch");
  OperatorInputs in;
  long pos = 0;
  for (const auto& seg : spec.segments) {
    VectorXd v = features.segment(pos, seg.length);
    pos += seg.length;
    switch (seg.source) {
      case SegmentSource::QueryX: in.x = std::move(v); break;
      case SegmentSource::Anchor:
        in.anchors.resize(std::max<size_t>(in.anchors.size(), seg.index + 1));
        in.anchors[static_cast<size_t>(seg.index)] = std::move(v);
        break;
      case SegmentSource::ContextHead: in.context_head = std::move(v); break;
      case SegmentSource::Phi:
        in.phi.resize(std::max<size_t>(in.phi.size(), seg.index + 1));
        in.phi[static_cast<size_t>(seg.index)] = std::move(v);
        break;
    }
  }
  return in;
}

VectorXd full_curve(const TaskEntry& entry) {
  const TaskDataset& d = entry.data;
  VectorXd curve(d.grid_len());
  for (size_t i = 0; i < d.context_idx.size(); ++i)
    curve[d.context_idx[i]] = d.context[i].second;
  for (size_t i = 0; i < d.query_idx.size(); ++i) curve[d.query_idx[i]] = d.query[i].second;
  return curve;
}

VectorXd primitive_curve(const Primitive& p, const std::vector<double>& grid) {
  VectorXd curve(static_cast<long>(grid.size()));
  for (size_t i = 0; i < grid.size(); ++i) curve[static_cast<long>(i)] = p.eval(grid[i]);
  return curve;
}

namespace {

VectorXd scaled_grid(const TaskDataset& d, const Scaler& s) {
  VectorXd g(d.grid_len());
  for (int i = 0; i < d.grid_len(); ++i) g[i] = s.sx(d.grid_x[static_cast<size_t>(i)]);
  return g;
}

}  // namespace

PairDataset build_parameter_pairs(const OperatorSpec& spec, const TaskLibrary& lib,
                                  PairSource source, const ParameterPairOptions& opt,
                                  const Scaler& scaler) {
  if (spec.regime != Regime::Parameter)
    throw std::invalid_argument("build_parameter_pairs: wrong regime");
  if (source == PairSource::PseudoLabel)
    throw std::invalid_argument("build_parameter_pairs: pseudo-labels not defined here");
  const long n_tasks = static_cast<long>(lib.tasks.size());
  if (n_tasks < 3) throw std::invalid_argument("build_parameter_pairs: library too small");

  for (const auto& t : lib.tasks) {
    if (t.desc.kind != TaskDescriptor::Kind::Parametric || !t.desc.has_region)
      throw std::invalid_argument("build_parameter_pairs: library must hold tagged parametric tasks");
    if (source == PairSource::ProxyDifference && t.embedding.size() == 0)
      throw std::invalid_argument(
          "build_parameter_pairs: library missing fitted embeddings for ProxyDifference");
  }

  std::vector<int> by_region[2];
  for (long i = 0; i < n_tasks; ++i) {
    const Region r = lib.tasks[static_cast<size_t>(i)].desc.region;
    by_region[r == Region::F1_1 ? 0 : 1].push_back(static_cast<int>(i));
  }

  std::vector<VectorXd> curves(static_cast<size_t>(n_tasks));
  for (long i = 0; i < n_tasks; ++i)
    curves[static_cast<size_t>(i)] = scaler.sy_vec(full_curve(lib.tasks[static_cast<size_t>(i)]));

  auto distance = [&](int a, int b) {
    const TaskEntry& ta = lib.tasks[static_cast<size_t>(a)];
    const TaskEntry& tb = lib.tasks[static_cast<size_t>(b)];
    if (source == PairSource::ProxyDifference)
      return (ta.embedding - tb.embedding).norm() / opt.distance_scale;
    return std::abs(ta.desc.params[0] - tb.desc.params[0]);
  };

  Rng rng(opt.seed);
  const int L = spec.grid_len;
  const long total = n_tasks * opt.pairs_per_target * L;
  PairDataset out;
  out.inputs.resize(spec.input_dim(), total);
  out.targets.resize(1, total);

  long col = 0;
  for (long t = 0; t < n_tasks; ++t) {
    const TaskEntry& target = lib.tasks[static_cast<size_t>(t)];
    const int target_pool = target.desc.region == Region::F1_1 ? 0 : 1;
    const VectorXd ctx = scaler.sy_vec(target.data.context_y());
    const VectorXd gx = scaled_grid(target.data, scaler);

    for (int p = 0; p < opt.pairs_per_target; ++p) {
      const bool cross = rng.bernoulli(opt.cross_region_prob);
      const std::vector<int>* pool = &by_region[cross ? 1 - target_pool : target_pool];
      std::vector<int> fallback;
      if (pool->size() < 3) {
        for (long i = 0; i < n_tasks; ++i) fallback.push_back(static_cast<int>(i));
        pool = &fallback;
      }
      int a1 = (*pool)[static_cast<size_t>(rng.uniform_int(static_cast<int>(pool->size())))];
      while (a1 == t) a1 = (*pool)[static_cast<size_t>(rng.uniform_int(static_cast<int>(pool->size())))];
      int a2 = a1;
      while (a2 == a1 || a2 == t)
        a2 = (*pool)[static_cast<size_t>(rng.uniform_int(static_cast<int>(pool->size())))];

      double d1 = distance(static_cast<int>(t), a1), d2 = distance(static_cast<int>(t), a2);
      if (d2 < d1) {  // nearest anchor first
        std::swap(a1, a2);
        std::swap(d1, d2);
      }

      OperatorInputs in;
      in.anchors = {curves[static_cast<size_t>(a1)], curves[static_cast<size_t>(a2)]};
      in.context_head = ctx;
      in.phi = {(VectorXd(2) << d1, d2).finished()};
      for (int q = 0; q < L; ++q) {
        in.x = VectorXd::Constant(1, gx[q]);
        out.inputs.col(col) = build_operator_input(spec, in);
        out.targets(0, col) = curves[static_cast<size_t>(t)][q];
        ++col;
      }
    }
  }
  return out;
}

PairDataset build_length_pairs(const OperatorSpec& spec, const TaskLibrary& lib,
                               const Scaler& scaler) {
  if (spec.regime != Regime::Length) throw std::invalid_argument("build_length_pairs: wrong regime");
  std::vector<long> usable;
  for (long i = 0; i < static_cast<long>(lib.tasks.size()); ++i) {
    const TaskEntry& t = lib.tasks[static_cast<size_t>(i)];
    if (t.desc.kind != TaskDescriptor::Kind::Polynomial)
      throw std::invalid_argument("build_length_pairs: library must hold polynomial tasks");
    if (t.desc.degree() >= 1) usable.push_back(i);
  }
  if (usable.empty()) throw std::invalid_argument("build_length_pairs: no tasks of degree >= 1");

  PairDataset out;
  out.inputs.resize(spec.input_dim(), static_cast<long>(usable.size()));
  out.targets.resize(spec.grid_len, static_cast<long>(usable.size()));

  long col = 0;
  for (long i : usable) {
    const TaskEntry& t = lib.tasks[static_cast<size_t>(i)];
    const int d = t.desc.degree();

    TaskDescriptor pred;
    pred.kind = TaskDescriptor::Kind::Polynomial;
    pred.coeffs.assign(t.desc.coeffs.begin(), t.desc.coeffs.end() - 1);
    VectorXd pred_curve(spec.grid_len);
    for (int q = 0; q < spec.grid_len; ++q)
      pred_curve[q] = eval_polynomial(pred, t.data.grid_x[static_cast<size_t>(q)]);

    const double c_norm = t.desc.coeffs.back() * std::pow(5.0, d);

    OperatorInputs in;
    in.x = scaled_grid(t.data, scaler);
    in.anchors = {scaler.sy_vec(pred_curve)};
    in.context_head = scaler.sy_vec(t.data.context_y());
    in.phi = {VectorXd::Constant(1, c_norm)};
    out.inputs.col(col) = build_operator_input(spec, in);
    out.targets.col(col) = scaler.sy_vec(full_curve(t));
    ++col;
  }
  return out;
}

PairDataset build_composition_pairs(const OperatorSpec& spec, const TaskLibrary& lib,
                                    PairSource source, const Scaler& scaler) {
  if (spec.regime != Regime::Composition)
    throw std::invalid_argument("build_composition_pairs: wrong regime");
  if (lib.tasks.empty()) throw std::invalid_argument("build_composition_pairs: empty library");

  PairDataset out;
  out.inputs.resize(spec.input_dim(), static_cast<long>(lib.tasks.size()));
  out.targets.resize(spec.grid_len, static_cast<long>(lib.tasks.size()));

  long col = 0;
  for (const TaskEntry& t : lib.tasks) {
    if (t.desc.kind != TaskDescriptor::Kind::Composition)
      throw std::invalid_argument("build_composition_pairs: library must hold composition tasks");
    const std::vector<int>* ids = nullptr;
    if (source == PairSource::GroundTruthMetadata) {
      ids = &t.desc.recipe;
    } else if (source == PairSource::PseudoLabel) {
      ids = &t.constituent_ids;
    } else {
      throw std::invalid_argument("build_composition_pairs: unsupported pair source");
    }
    if (ids->size() != 2)
      throw std::invalid_argument(
          "build_composition_pairs: missing (inner, outer) constituent metadata");

    const VectorXd inner = scaler.sy_vec(primitive_curve(lib.primitives.at((*ids)[0]), t.data.grid_x));
    const VectorXd outer = scaler.sy_vec(primitive_curve(lib.primitives.at((*ids)[1]), t.data.grid_x));

    OperatorInputs in;
    in.x = scaled_grid(t.data, scaler);
    in.anchors = {inner};
    in.phi = {outer};
    in.context_head = scaler.sy_vec(t.data.context_y());
    out.inputs.col(col) = build_operator_input(spec, in);
    out.targets.col(col) = scaler.sy_vec(full_curve(t));
    ++col;
  }
  return out;
}

PairDataset build_parity_pairs(const OperatorSpec& spec,
                               const std::vector<std::vector<int>>& anchor_masks, int n_examples,
                               uint64_t seed) {
  if (spec.regime != Regime::Parity) throw std::invalid_argument("build_parity_pairs: wrong regime");
  if (anchor_masks.empty()) throw std::invalid_argument("build_parity_pairs: no anchor masks");

  Rng rng(seed);
  PairDataset out;
  out.inputs.resize(spec.input_dim(), n_examples);
  out.targets.resize(1, n_examples);

  for (int e = 0; e < n_examples; ++e) {
    const auto& mask = anchor_masks[static_cast<size_t>(rng.uniform_int(static_cast<int>(anchor_masks.size())))];
    int k = rng.uniform_int(kParityBits);
    while (std::find(mask.begin(), mask.end(), k) != mask.end()) k = rng.uniform_int(kParityBits);

    std::vector<int> bits(kParityBits);
    for (int b = 0; b < kParityBits; ++b) bits[static_cast<size_t>(b)] = rng.uniform_int(2);
    const int src = parity_eval(mask, bits);

    OperatorInputs in;
    in.x.resize(kParityBits);
    for (int b = 0; b < kParityBits; ++b) in.x[b] = static_cast<double>(bits[static_cast<size_t>(b)]);
    in.anchors = {VectorXd::Constant(1, static_cast<double>(src))};
    in.phi = {VectorXd::Constant(1, static_cast<double>(bits[static_cast<size_t>(k)]))};
    out.inputs.col(e) = build_operator_input(spec, in);
    out.targets(0, e) = static_cast<double>(src ^ bits[static_cast<size_t>(k)]);
  }
  return out;
}

MlpModel train_operator(const OperatorSpec& spec, const PairDataset& pairs, const TrainConfig& cfg,
                        Rng& rng) {
  if (pairs.inputs.rows() != spec.input_dim())
    throw std::invalid_argument("train_operator: pair dataset does not match spec layout");
  MlpModel psi = MlpModel::xavier(spec.layer_sizes, rng);
  TrainConfig c = cfg;
  c.loss = spec.regime == Regime::Parity ? Loss::BceWithLogits : Loss::Mse;
  train(psi, pairs.inputs, pairs.targets, c);
  return psi;
}

VectorXd apply_operator(const MlpModel& psi, const OperatorSpec& spec, const OperatorInputs& in) {
  VectorXd out = psi.forward1(build_operator_input(spec, in));
  if (spec.regime == Regime::Parity)
    for (long i = 0; i < out.size(); ++i) out[i] = out[i] >= 0.0 ? 1.0 : 0.0;
  return out;
}

double parity_logit(const MlpModel& psi, const OperatorSpec& spec, const std::vector<int>& bits,
                    int anchor_out, int bit_value) {
  OperatorInputs in;
  in.x.resize(kParityBits);
  for (int b = 0; b < kParityBits; ++b) in.x[b] = static_cast<double>(bits[static_cast<size_t>(b)]);
  in.anchors = {VectorXd::Constant(1, static_cast<double>(anchor_out))};
  in.phi = {VectorXd::Constant(1, static_cast<double>(bit_value))};
  return psi.forward1(build_operator_input(spec, in))[0];
}

OracleRunner make_oracle_variant(const MlpModel& psi, const OperatorSpec& spec) {
  return OracleRunner{&psi, &spec};
}

}  // namespace rte
