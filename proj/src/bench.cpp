#include "rte/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace rte {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Methods
// ---------------------------------------------------------------------------

std::string Method::name() const {
  switch (kind) {
    case MethodKind::InductiveBaseline: return "InductiveBaseline";
    case MethodKind::T2VInductive: return "T2VInductive";
    case MethodKind::InductiveOracle: return "InductiveOracle";
    case MethodKind::RTE: return "RTE";
    case MethodKind::TransductiveOracle: return "TransductiveOracle";
    case MethodKind::Oracle: return "Oracle";
    case MethodKind::FarAnchors: return "FarAnchors";
    case MethodKind::RandomAnchors: return "RandomAnchors";
    case MethodKind::ZeroShift: return "ZeroShift";
    case MethodKind::Rank3Anchor: return "Rank3Anchor";
    case MethodKind::RandomConstituents: return "RandomConstituents";
    case MethodKind::NoVerification: return "NoVerification";
    case MethodKind::MultiStep: return "MultiStep(" + std::to_string(steps) + ")";
    case MethodKind::EM: {
      if (em_variant == "Primitives") return "EM(Primitives)";
      std::ostringstream os;
      os << "EM(PartialLabels(" << em_fraction << "))";
      return os.str();
    }
  }
  throw std::logic_error("Method::name: bad enum");
}

Method Method::parse(const std::string& text) {
  Method m;
  auto plain = [&](const std::string& n, MethodKind k) {
    if (text == n) {
      m.kind = k;
      return true;
    }
    return false;
  };
  if (plain("InductiveBaseline", MethodKind::InductiveBaseline) ||
      plain("T2VInductive", MethodKind::T2VInductive) ||
      plain("InductiveOracle", MethodKind::InductiveOracle) || plain("RTE", MethodKind::RTE) ||
      plain("TransductiveOracle", MethodKind::TransductiveOracle) ||
      plain("Oracle", MethodKind::Oracle) || plain("FarAnchors", MethodKind::FarAnchors) ||
      plain("RandomAnchors", MethodKind::RandomAnchors) ||
      plain("ZeroShift", MethodKind::ZeroShift) || plain("Rank3Anchor", MethodKind::Rank3Anchor) ||
      plain("RandomConstituents", MethodKind::RandomConstituents) ||
      plain("NoVerification", MethodKind::NoVerification))
    return m;
  if (text.rfind("MultiStep(", 0) == 0 && text.back() == ')') {
    m.kind = MethodKind::MultiStep;
    m.steps = std::stoi(text.substr(10, text.size() - 11));
    if (m.steps < 1) throw std::invalid_argument("MultiStep needs N >= 1: " + text);
    return m;
  }
  if (text == "EM(Primitives)") {
    m.kind = MethodKind::EM;
    m.em_variant = "Primitives";
    return m;
  }
  if (text.rfind("EM(PartialLabels(", 0) == 0 && text.substr(text.size() - 2) == "))") {
    m.kind = MethodKind::EM;
    m.em_variant = "PartialLabels";
    m.em_fraction = std::stod(text.substr(17, text.size() - 19));
    return m;
  }
  throw std::invalid_argument("unknown method: " + text);
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

namespace {

TrainBlock train_block_from_json(const json& j, TrainBlock def) {
  def.epochs = j.value("epochs", def.epochs);
  def.batch_size = j.value("batch_size", def.batch_size);
  def.lr = j.value("lr", def.lr);
  def.weight_decay = j.value("weight_decay", def.weight_decay);
  return def;
}

json train_block_to_json(const TrainBlock& b) {
  return json{{"epochs", b.epochs},
              {"batch_size", b.batch_size},
              {"lr", b.lr},
              {"weight_decay", b.weight_decay}};
}

const std::vector<std::string>& methods_for(const std::string& experiment) {
  static const std::vector<std::string> parameter = {
      "InductiveBaseline", "T2VInductive", "InductiveOracle", "RTE", "TransductiveOracle",
      "FarAnchors",        "RandomAnchors", "ZeroShift",      "MultiStep"};
  static const std::vector<std::string> length = {"InductiveBaseline", "RTE",       "Oracle",
                                                  "Rank3Anchor",       "RandomAnchors", "ZeroShift"};
  static const std::vector<std::string> composition = {"InductiveBaseline", "RTE", "Oracle",
                                                       "RandomConstituents", "NoVerification"};
  static const std::vector<std::string> parity = {"InductiveBaseline", "RTE", "Oracle"};
  static const std::vector<std::string> ms_comp = {"InductiveBaseline", "RTE"};
  static const std::vector<std::string> em_comp = {"InductiveBaseline", "RTE", "EM"};
  static const std::vector<std::string> manifold = {};
  if (experiment == "parameter") return parameter;
  if (experiment == "length") return length;
  if (experiment == "composition") return composition;
  if (experiment == "parity") return parity;
  if (experiment == "multistep_composition") return ms_comp;
  if (experiment == "em_composition") return em_comp;
  if (experiment == "manifold") return manifold;
  throw std::invalid_argument("unknown experiment type: " + experiment);
}

std::string method_base(const Method& m) {
  if (m.kind == MethodKind::MultiStep) return "MultiStep";
  if (m.kind == MethodKind::EM) return "EM";
  return m.name();
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j = json::parse(text);
  ExperimentConfig c;
  c.experiment = j.at("experiment");

  // Regime defaults for the training blocks (hyperparameter table).
  if (c.experiment == "parameter") {
    c.operator_train = {200, 4096, 1e-3, 1e-4};
    c.baseline_train = {200, 4096, 1e-3, 1e-4};
  } else if (c.experiment == "length" || c.experiment == "composition" ||
             c.experiment == "multistep_composition" || c.experiment == "em_composition") {
    c.operator_train = {100, 1024, 1e-3, 0.0};
    c.baseline_train = {100, 1024, 1e-3, 0.0};
  } else if (c.experiment == "parity") {
    c.operator_train = {30, 256, 3e-3, 0.0};
    c.baseline_train = {30, 256, 1e-3, 0.0};
  }

  c.name = j.value("name", c.experiment);
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  if (j.contains("methods"))
    for (const auto& m : j.at("methods")) c.methods.push_back(Method::parse(m.get<std::string>()));
  c.out_dir = j.value("out_dir", c.out_dir);
  c.jobs = j.value("jobs", c.jobs);
  c.grid_len = j.value("grid_len", c.grid_len);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.export_curves = j.value("export_curves", c.export_curves);

  c.probe_adapt_steps = j.value("probe_adapt_steps", c.probe_adapt_steps);
  c.probe_lr = j.value("probe_lr", c.probe_lr);
  c.probe_pretrain_tasks = j.value("probe_pretrain_tasks", c.probe_pretrain_tasks);
  if (j.contains("probe_pretrain")) c.probe_pretrain = train_block_from_json(j.at("probe_pretrain"), c.probe_pretrain);

  c.family = j.value("family", c.family);
  c.library_size = j.value("library_size", c.library_size);
  c.eval_targets = j.value("eval_targets", c.eval_targets);
  c.eval_region = j.value("eval_region", c.eval_region);
  c.pairs_per_target = j.value("pairs_per_target", c.pairs_per_target);
  c.cross_region_prob = j.value("cross_region_prob", c.cross_region_prob);
  if (j.contains("multistep")) {
    for (const auto& b : j.at("multistep")) {
      MultiStepBlock blk;
      blk.steps = b.at("steps");
      blk.region = b.at("region");
      blk.targets = b.value("targets", blk.targets);
      c.multistep.push_back(blk);
    }
  }
  if (j.contains("operator_train")) c.operator_train = train_block_from_json(j.at("operator_train"), c.operator_train);
  if (j.contains("baseline_train")) c.baseline_train = train_block_from_json(j.at("baseline_train"), c.baseline_train);
  if (j.contains("decomposer_train")) c.decomposer_train = train_block_from_json(j.at("decomposer_train"), c.decomposer_train);

  c.per_degree = j.value("per_degree", c.per_degree);
  c.max_train_degree = j.value("max_train_degree", c.max_train_degree);
  c.target_degree = j.value("target_degree", c.target_degree);
  c.retrieval_k = j.value("retrieval_k", c.retrieval_k);

  c.primitives_per_kind = j.value("primitives_per_kind", c.primitives_per_kind);
  c.per_recipe = j.value("per_recipe", c.per_recipe);

  c.parity_context = j.value("parity_context", c.parity_context);
  c.parity_queries = j.value("parity_queries", c.parity_queries);
  c.parity_train_examples = j.value("parity_train_examples", c.parity_train_examples);

  c.ms_per_recipe = j.value("ms_per_recipe", c.ms_per_recipe);
  c.ms_depth = j.value("ms_depth", c.ms_depth);
  c.ms_k = j.value("ms_k", c.ms_k);

  c.em_rounds = j.value("em_rounds", c.em_rounds);

  c.manifold_tasks_per_group = j.value("manifold_tasks_per_group", c.manifold_tasks_per_group);
  c.isomap_neighbors = j.value("isomap_neighbors", c.isomap_neighbors);

  if (j.contains("checks")) {
    for (const auto& k : j.at("checks")) {
      ResultCheck chk;
      chk.type = k.at("type");
      chk.a = k.value("a", "");
      chk.b = k.value("b", "");
      chk.family = k.value("family", "");
      chk.metric = k.value("metric", "mse");
      chk.value = k.value("value", 0.0);
      chk.min_gap = k.value("min_gap", 0.0);
      chk.gap_ref = k.value("gap_ref", "");
      c.checks.push_back(chk);
    }
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
  return from_json_text(read_text(path));
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["experiment"] = experiment;
  j["name"] = name;
  j["seeds"] = seeds;
  std::vector<std::string> ms;
  for (const auto& m : methods) ms.push_back(m.name());
  j["methods"] = ms;
  j["out_dir"] = out_dir;
  j["grid_len"] = grid_len;
  j["latent_dim"] = latent_dim;
  j["export_curves"] = export_curves;
  j["probe_adapt_steps"] = probe_adapt_steps;
  j["probe_lr"] = probe_lr;
  j["probe_pretrain_tasks"] = probe_pretrain_tasks;
  j["probe_pretrain"] = train_block_to_json(probe_pretrain);
  j["family"] = family;
  j["library_size"] = library_size;
  j["eval_targets"] = eval_targets;
  j["eval_region"] = eval_region;
  j["pairs_per_target"] = pairs_per_target;
  j["cross_region_prob"] = cross_region_prob;
  json blocks = json::array();
  for (const auto& b : multistep)
    blocks.push_back({{"steps", b.steps}, {"region", b.region}, {"targets", b.targets}});
  j["multistep"] = blocks;
  j["operator_train"] = train_block_to_json(operator_train);
  j["baseline_train"] = train_block_to_json(baseline_train);
  j["decomposer_train"] = train_block_to_json(decomposer_train);
  j["per_degree"] = per_degree;
  j["max_train_degree"] = max_train_degree;
  j["target_degree"] = target_degree;
  j["retrieval_k"] = retrieval_k;
  j["primitives_per_kind"] = primitives_per_kind;
  j["per_recipe"] = per_recipe;
  j["parity_context"] = parity_context;
  j["parity_queries"] = parity_queries;
  j["parity_train_examples"] = parity_train_examples;
  j["ms_per_recipe"] = ms_per_recipe;
  j["ms_depth"] = ms_depth;
  j["ms_k"] = ms_k;
  j["em_rounds"] = em_rounds;
  j["manifold_tasks_per_group"] = manifold_tasks_per_group;
  j["isomap_neighbors"] = isomap_neighbors;
  return j.dump();
}

void ExperimentConfig::validate() const {
  const auto& allowed = methods_for(experiment);  // also rejects unknown experiment
  for (const auto& m : methods) {
    if (std::find(allowed.begin(), allowed.end(), method_base(m)) == allowed.end())
      throw std::invalid_argument("method " + m.name() + " is not registered for experiment '" +
                                  experiment + "'");
  }
  if (seeds.empty()) throw std::invalid_argument("config needs at least one seed");
  if (grid_len < 4 || grid_len % 2 != 0)
    throw std::invalid_argument("grid_len must be even and >= 4");
  if (experiment != "manifold" && methods.empty())
    throw std::invalid_argument("config needs at least one method");
  if (experiment == "parameter") {
    family_from_name(family);
    for (const auto& b : multistep) region_from_name(b.region);
    region_from_name(eval_region);
  }
  if (latent_dim < 1) throw std::invalid_argument("latent_dim must be >= 1");
}

// ---------------------------------------------------------------------------
// Shared trial machinery
// ---------------------------------------------------------------------------

namespace {

uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t x = a ^ (0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2));
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  return x;
}

struct TrialOutput {
  std::vector<TrialRow> rows;                 // seed filled by the caller
  std::map<std::string, CsvTable> artifacts;  // filename -> table
};

double mse_of(const VectorXd& a, const VectorXd& b) {
  return (a - b).squaredNorm() / static_cast<double>(a.size());
}

TrainConfig to_train_config(const TrainBlock& b, uint64_t seed) {
  TrainConfig c;
  c.epochs = b.epochs;
  c.batch_size = b.batch_size;
  c.lr = b.lr;
  c.weight_decay = b.weight_decay;
  c.seed = seed;
  return c;
}

/// Library scaler from pooled curve values.
Scaler fit_scaler(const TaskLibrary& lib, Interval x_domain) {
  std::vector<double> ys;
  for (const auto& t : lib.tasks) {
    for (const auto& p : t.data.context) ys.push_back(p.second);
    for (const auto& p : t.data.query) ys.push_back(p.second);
  }
  return Scaler::fit(x_domain, ys);
}

/// Probe pretraining on pooled (x, y) samples of the given datasets.
MlpModel pretrain_probe_on(const std::vector<const TaskDataset*>& data, const Scaler& scaler,
                           const ExperimentConfig& cfg, Rng& rng) {
  long n = 0;
  for (const auto* d : data) n += d->grid_len();
  MatrixXd xs(1, n), ys(1, n);
  long col = 0;
  for (const auto* d : data) {
    for (const auto& p : d->context) {
      xs(0, col) = scaler.sx(p.first);
      ys(0, col) = scaler.sy(p.second);
      ++col;
    }
    for (const auto& p : d->query) {
      xs(0, col) = scaler.sx(p.first);
      ys(0, col) = scaler.sy(p.second);
      ++col;
    }
  }
  TrainConfig tc = to_train_config(cfg.probe_pretrain, rng.next_u64());
  return pretrain_probe({1, 64, 64, 1}, xs, ys, tc, rng);
}

struct GeometryStage {
  MlpModel probe;
  PcaModel pca;
  double d_scale = 1.0;
};

ProbeConfig make_probe_config(const ExperimentConfig& cfg, const MlpModel* pretrained,
                              uint64_t seed) {
  ProbeConfig pc;
  pc.adapt_steps = cfg.probe_adapt_steps;
  pc.lr = cfg.probe_lr;
  pc.seed = seed;
  pc.pretrained = pretrained;
  return pc;
}

/// Embeds every task in the library (raw + projected) and fits the PCA.
GeometryStage build_geometry(TaskLibrary& lib, const Scaler& scaler, const ExperimentConfig& cfg,
                             MlpModel probe) {
  GeometryStage g;
  g.probe = std::move(probe);
  std::vector<VectorXd> raw;
  raw.reserve(lib.tasks.size());
  for (auto& t : lib.tasks) {
    const TaskDataset scaled = scaler.scale_dataset(t.data);
    t.raw_embedding =
        probe_embed(scaled, make_probe_config(cfg, &g.probe, mix_seed(t.data.noise_seed, 17)));
    raw.push_back(t.raw_embedding);
  }
  g.pca = PcaModel::fit(raw, cfg.latent_dim);
  for (auto& t : lib.tasks) t.embedding = g.pca.project(t.raw_embedding);

  // Median nearest-neighbour distance sets the operator's distance scale.
  std::vector<double> nn;
  for (size_t i = 0; i < lib.tasks.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < lib.tasks.size(); ++j) {
      if (i == j) continue;
      best = std::min(best, (lib.tasks[i].embedding - lib.tasks[j].embedding).norm());
    }
    nn.push_back(best);
  }
  std::sort(nn.begin(), nn.end());
  if (!nn.empty()) {
    const double med = nn[nn.size() / 2];
    g.d_scale = med > 1e-12 ? med : 1.0;
  }
  return g;
}

MlpModel train_plain_model(const std::vector<int>& sizes, const MatrixXd& x, const MatrixXd& y,
                           const TrainBlock& block, uint64_t seed, Loss loss = Loss::Mse) {
  Rng rng(mix_seed(seed, 5));
  MlpModel m = MlpModel::xavier(sizes, rng);
  TrainConfig tc = to_train_config(block, mix_seed(seed, 6));
  tc.loss = loss;
  train(m, x, y, tc);
  return m;
}

std::vector<int> deep_arch(int d_in, int d_out) {
  return {d_in, 256, 256, 128, 128, 64, 64, d_out};
}

std::vector<int> param_arch(int d_in, int d_out) {
  return {d_in, 64, 64, 16, 64, 64, 16, 128, d_out};
}

bool has_method(const ExperimentConfig& cfg, MethodKind k) {
  for (const auto& m : cfg.methods)
    if (m.kind == k) return true;
  return false;
}

// ---------------------------------------------------------------------------
// Parameter regime
// ---------------------------------------------------------------------------

struct ParamModels {
  TaskLibrary lib;
  FamilySpec fspec;
  Scaler scaler;
  GeometryStage geo;
  OperatorSpec psi_spec;
  MlpModel psi;
  MlpModel baseline, t2v, ioracle;
  bool have_baseline = false, have_t2v = false, have_ioracle = false;
  VectorXd param_mean, param_std;
  std::vector<VectorXd> curves;  // raw full curves per library task
  std::vector<int> rows;         // 0..N-1
  std::vector<int> f11_rows;
};

VectorXd baseline_features(const Scaler& s, double x, const VectorXd& ctx_scaled) {
  VectorXd f(1 + ctx_scaled.size());
  f[0] = s.sx(x);
  f.tail(ctx_scaled.size()) = ctx_scaled;
  return f;
}

ParamModels train_parameter_models(const ExperimentConfig& cfg, uint64_t seed) {
  ParamModels m;
  m.fspec = default_family_spec(family_from_name(cfg.family));
  const int L = cfg.grid_len;
  const uint64_t root = mix_seed(seed, std::hash<std::string>{}(cfg.name));

  // Library over the two training regions.
  Rng lib_rng(mix_seed(root, 1));
  for (int i = 0; i < cfg.library_size; ++i) {
    TaskEntry e;
    const Region r = i % 2 == 0 ? Region::F1_1 : Region::F1_2;
    e.desc = sample_task(m.fspec, r, lib_rng);
    e.label = region_name(r);
    e.data = split_context_query(e.desc, &m.fspec, nullptr, m.fspec.x_domain, L, lib_rng.next_u64());
    m.lib.add(std::move(e));
  }
  m.scaler = fit_scaler(m.lib, m.fspec.x_domain);

  // Probe pretraining on fresh tasks from the same two regions.
  Rng pre_rng(mix_seed(root, 2));
  std::vector<TaskDataset> pretrain_data;
  for (int i = 0; i < cfg.probe_pretrain_tasks; ++i) {
    const Region r = i % 2 == 0 ? Region::F1_1 : Region::F1_2;
    const TaskDescriptor d = sample_task(m.fspec, r, pre_rng);
    pretrain_data.push_back(
        split_context_query(d, &m.fspec, nullptr, m.fspec.x_domain, L, pre_rng.next_u64()));
  }
  std::vector<const TaskDataset*> ptrs;
  for (const auto& d : pretrain_data) ptrs.push_back(&d);
  MlpModel probe = pretrain_probe_on(ptrs, m.scaler, cfg, pre_rng);

  m.geo = build_geometry(m.lib, m.scaler, cfg, std::move(probe));
  m.scaler.d_scale = m.geo.d_scale;

  for (const auto& t : m.lib.tasks) {
    m.curves.push_back(full_curve(t));
    m.rows.push_back(t.id);
    if (t.desc.region == Region::F1_1) m.f11_rows.push_back(t.id);
  }

  // Relational operator Ψ.
  m.psi_spec = OperatorSpec::parameter(L);
  ParameterPairOptions popt;
  popt.pairs_per_target = cfg.pairs_per_target;
  popt.cross_region_prob = cfg.cross_region_prob;
  popt.distance_scale = m.scaler.d_scale;
  popt.seed = mix_seed(root, 3);
  const PairDataset pairs =
      build_parameter_pairs(m.psi_spec, m.lib, PairSource::ProxyDifference, popt, m.scaler);
  Rng psi_rng(mix_seed(root, 4));
  m.psi = train_operator(m.psi_spec, pairs, to_train_config(cfg.operator_train, mix_seed(root, 5)),
                         psi_rng);

  // Inductive baselines share the library and the scaler.
  const bool need_baseline =
      has_method(cfg, MethodKind::InductiveBaseline) || !cfg.multistep.empty();
  const bool need_t2v = has_method(cfg, MethodKind::T2VInductive);
  const bool need_io = has_method(cfg, MethodKind::InductiveOracle);
  const long n_tasks = static_cast<long>(m.lib.tasks.size());
  const long n_pts = n_tasks * L;

  const int n_params = static_cast<int>(m.lib.tasks.front().desc.params.size());
  m.param_mean = VectorXd::Zero(n_params);
  m.param_std = VectorXd::Ones(n_params);
  {
    MatrixXd all(n_params, n_tasks);
    for (long i = 0; i < n_tasks; ++i)
      for (int p = 0; p < n_params; ++p) all(p, i) = m.lib.tasks[static_cast<size_t>(i)].desc.params[static_cast<size_t>(p)];
    m.param_mean = all.rowwise().mean();
    for (int p = 0; p < n_params; ++p) {
      const double var = (all.row(p).array() - m.param_mean[p]).square().mean();
      m.param_std[p] = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
  }

  auto fill_common = [&](MatrixXd& x, MatrixXd& y, int extra,
                         const std::function<VectorXd(const TaskEntry&)>& extra_of) {
    long col = 0;
    for (long i = 0; i < n_tasks; ++i) {
      const TaskEntry& t = m.lib.tasks[static_cast<size_t>(i)];
      const VectorXd ctx = m.scaler.sy_vec(t.data.context_y());
      const VectorXd extra_v = extra > 0 ? extra_of(t) : VectorXd();
      const VectorXd curve = m.scaler.sy_vec(m.curves[static_cast<size_t>(i)]);
      for (int q = 0; q < L; ++q) {
        VectorXd f(1 + ctx.size() + extra);
        f[0] = m.scaler.sx(t.data.grid_x[static_cast<size_t>(q)]);
        f.segment(1, ctx.size()) = ctx;
        if (extra > 0) f.tail(extra) = extra_v;
        x.col(col) = f;
        y(0, col) = curve[q];
        ++col;
      }
    }
  };

  const int ctx_len = L / 2;
  if (need_baseline) {
    MatrixXd x(1 + ctx_len, n_pts), y(1, n_pts);
    fill_common(x, y, 0, {});
    m.baseline = train_plain_model(param_arch(1 + ctx_len, 1), x, y, cfg.baseline_train,
                                   mix_seed(root, 6));
    m.have_baseline = true;
  }
  if (need_t2v) {
    MatrixXd x(1 + ctx_len + cfg.latent_dim, n_pts), y(1, n_pts);
    fill_common(x, y, cfg.latent_dim, [&](const TaskEntry& t) { return t.embedding; });
    m.t2v = train_plain_model(param_arch(1 + ctx_len + cfg.latent_dim, 1), x, y,
                              cfg.baseline_train, mix_seed(root, 7));
    m.have_t2v = true;
  }
  if (need_io) {
    MatrixXd x(1 + ctx_len + n_params, n_pts), y(1, n_pts);
    fill_common(x, y, n_params, [&](const TaskEntry& t) {
      VectorXd p(n_params);
      for (int k = 0; k < n_params; ++k)
        p[k] = (t.desc.params[static_cast<size_t>(k)] - m.param_mean[k]) / m.param_std[k];
      return p;
    });
    m.ioracle = train_plain_model(param_arch(1 + ctx_len + n_params, 1), x, y, cfg.baseline_train,
                                  mix_seed(root, 8));
    m.have_ioracle = true;
  }
  return m;
}

/// Full-grid prediction of a per-point inductive model.
VectorXd pointwise_curve(const MlpModel& model, const Scaler& s, const TaskDataset& data,
                         const VectorXd& extra) {
  const int L = data.grid_len();
  const VectorXd ctx = s.sy_vec(data.context_y());
  MatrixXd x(1 + ctx.size() + extra.size(), L);
  for (int q = 0; q < L; ++q) {
    VectorXd f(x.rows());
    f[0] = s.sx(data.grid_x[static_cast<size_t>(q)]);
    f.segment(1, ctx.size()) = ctx;
    if (extra.size() > 0) f.tail(extra.size()) = extra;
    x.col(q) = f;
  }
  const MatrixXd out = model.forward(x);
  return s.unsy_vec(out.row(0).transpose());
}

TrialOutput run_parameter_trial(const ExperimentConfig& cfg, uint64_t seed) {
  TrialOutput out;
  ParamModels m = train_parameter_models(cfg, seed);
  const uint64_t root = mix_seed(seed, std::hash<std::string>{}(cfg.name));
  const int L = cfg.grid_len;

  ParamInferContext ictx;
  ictx.psi = &m.psi;
  ictx.spec = &m.psi_spec;
  std::vector<VectorXd> embeddings;
  for (const auto& t : m.lib.tasks) embeddings.push_back(t.embedding);
  ictx.anchor_curves = &m.curves;
  ictx.anchor_embeddings = &embeddings;
  ictx.anchor_ids = &m.rows;
  ictx.probe = make_probe_config(cfg, &m.geo.probe, mix_seed(root, 21));
  ictx.pca = &m.geo.pca;
  ictx.scaler = m.scaler;

  auto nearest_rows = [&](const VectorXd& theta, const std::vector<int>& pool) {
    auto ranked = nearest_anchor(theta, embeddings, m.rows, static_cast<int>(embeddings.size()));
    std::vector<int> picked;
    for (const auto& [id, dist] : ranked) {
      if (!pool.empty() && std::find(pool.begin(), pool.end(), id) == pool.end()) continue;
      picked.push_back(id);
      if (picked.size() == 2) break;
    }
    return picked;
  };
  auto gt_nearest_rows = [&](double shift) {
    std::vector<std::pair<double, int>> ranked;
    for (const auto& t : m.lib.tasks)
      ranked.emplace_back(std::abs(t.desc.params[0] - shift), t.id);
    std::sort(ranked.begin(), ranked.end());
    return std::vector<int>{ranked[0].second, ranked[1].second};
  };

  struct RegionEval {
    Region region;
    int n_targets;
    std::vector<Method> methods;
    std::string fam_label;
    bool export_curves;
  };
  std::vector<RegionEval> evals;
  {
    RegionEval main;
    main.region = region_from_name(cfg.eval_region);
    main.n_targets = cfg.eval_targets;
    for (const auto& meth : cfg.methods)
      if (meth.kind != MethodKind::MultiStep) main.methods.push_back(meth);
    main.fam_label = cfg.family;
    main.export_curves = cfg.export_curves > 0;
    if (!main.methods.empty()) evals.push_back(main);
    for (const auto& blk : cfg.multistep) {
      RegionEval e;
      e.region = region_from_name(blk.region);
      e.n_targets = blk.targets;
      Method ms;
      ms.kind = MethodKind::MultiStep;
      ms.steps = blk.steps;
      e.methods.push_back(ms);
      Method base;
      base.kind = MethodKind::InductiveBaseline;
      e.methods.push_back(base);
      e.fam_label = cfg.family + "/" + blk.region;
      e.export_curves = false;
      evals.push_back(e);
    }
  }

  for (const auto& ev : evals) {
    Rng tgt_rng(mix_seed(root, 100 + static_cast<uint64_t>(ev.region)));
    Rng rnd_anchor_rng(mix_seed(root, 200 + static_cast<uint64_t>(ev.region)));

    std::map<std::string, double> sums;
    CsvTable curves;
    curves.header = {"task", "region", "x", "ground_truth"};
    for (const auto& meth : ev.methods) curves.header.push_back(meth.name());

    for (int ti = 0; ti < ev.n_targets; ++ti) {
      TaskEntry target;
      target.desc = sample_task(m.fspec, ev.region, tgt_rng);
      target.data = split_context_query(target.desc, &m.fspec, nullptr, m.fspec.x_domain, L,
                                        tgt_rng.next_u64());
      const VectorXd truth_q = target.data.query_y();
      const VectorXd theta = embed_target(ictx, target.data);

      const int rnd1 = rnd_anchor_rng.uniform_int(static_cast<int>(m.rows.size()));
      int rnd2 = rnd_anchor_rng.uniform_int(static_cast<int>(m.rows.size()));
      while (rnd2 == rnd1) rnd2 = rnd_anchor_rng.uniform_int(static_cast<int>(m.rows.size()));

      std::map<std::string, VectorXd> curve_of;
      for (const auto& meth : ev.methods) {
        VectorXd curve;
        switch (meth.kind) {
          case MethodKind::InductiveBaseline:
            curve = pointwise_curve(m.baseline, m.scaler, target.data, VectorXd());
            break;
          case MethodKind::T2VInductive:
            curve = pointwise_curve(m.t2v, m.scaler, target.data, theta);
            break;
          case MethodKind::InductiveOracle: {
            VectorXd p(m.param_mean.size());
            for (int k = 0; k < p.size(); ++k)
              p[k] = (target.desc.params[static_cast<size_t>(k)] - m.param_mean[k]) / m.param_std[k];
            curve = pointwise_curve(m.ioracle, m.scaler, target.data, p);
            break;
          }
          case MethodKind::RTE: {
            const auto rows2 = nearest_rows(theta, {});
            curve = infer_with_anchors(ictx, target.data, theta, rows2[0], rows2[1], false).curve;
            break;
          }
          case MethodKind::TransductiveOracle: {
            const auto rows2 = gt_nearest_rows(target.desc.params[0]);
            curve = infer_with_anchors(ictx, target.data, theta, rows2[0], rows2[1], false).curve;
            break;
          }
          case MethodKind::FarAnchors: {
            const auto rows2 = nearest_rows(theta, m.f11_rows);
            curve = infer_with_anchors(ictx, target.data, theta, rows2[0], rows2[1], false).curve;
            break;
          }
          case MethodKind::RandomAnchors:
            curve = infer_with_anchors(ictx, target.data, theta, rnd1, rnd2, false).curve;
            break;
          case MethodKind::ZeroShift: {
            const auto rows2 = nearest_rows(theta, {});
            curve = infer_with_anchors(ictx, target.data, theta, rows2[0], rows2[1], true).curve;
            break;
          }
          case MethodKind::MultiStep: {
            const auto rows2 = nearest_rows(theta, {});
            curve =
                infer_with_anchors(ictx, target.data, theta, rows2[0], rows2[1], false, meth.steps)
                    .curve;
            break;
          }
          default:
            throw std::logic_error("parameter trial: unhandled method " + meth.name());
        }
        VectorXd pred_q(truth_q.size());
        for (size_t qi = 0; qi < target.data.query_idx.size(); ++qi)
          pred_q[static_cast<long>(qi)] = curve[target.data.query_idx[qi]];
        sums[meth.name()] += mse_of(pred_q, truth_q);
        curve_of[meth.name()] = curve;
      }

      if (ev.export_curves && ti < cfg.export_curves) {
        for (int q = 0; q < L; ++q) {
          std::vector<std::string> row = {std::to_string(ti), region_name(ev.region),
                                          format_double(target.data.grid_x[static_cast<size_t>(q)]),
                                          format_double(full_curve(target)[q])};
          for (const auto& meth : ev.methods)
            row.push_back(format_double(curve_of[meth.name()][q]));
          curves.rows.push_back(std::move(row));
        }
      }
    }

    for (const auto& meth : ev.methods)
      out.rows.push_back({meth.name(), ev.fam_label, "mse", 0,
                          sums[meth.name()] / static_cast<double>(ev.n_targets)});
    if (ev.export_curves && !curves.rows.empty())
      out.artifacts["curves_" + cfg.family + "_seed" + std::to_string(seed) + ".csv"] = curves;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Length regime
// ---------------------------------------------------------------------------

TrialOutput run_length_trial(const ExperimentConfig& cfg, uint64_t seed) {
  TrialOutput out;
  const int L = cfg.grid_len;
  const uint64_t root = mix_seed(seed, std::hash<std::string>{}(cfg.name) ^ 0x11);

  TaskLibrary lib;
  Rng lib_rng(mix_seed(root, 1));
  for (int d = 0; d <= cfg.max_train_degree; ++d) {
    for (int i = 0; i < cfg.per_degree; ++i) {
      TaskEntry e;
      e.desc = sample_polynomial(d, lib_rng);
      e.label = "deg" + std::to_string(d);
      e.data = split_context_query(e.desc, nullptr, nullptr, kPolyDomain, L, lib_rng.next_u64());
      lib.add(std::move(e));
    }
  }
  Scaler scaler = fit_scaler(lib, kPolyDomain);

  Rng pre_rng(mix_seed(root, 2));
  std::vector<TaskDataset> pretrain_data;
  for (int i = 0; i < cfg.probe_pretrain_tasks; ++i) {
    const TaskDescriptor d = sample_polynomial(i % (cfg.max_train_degree + 1), pre_rng);
    pretrain_data.push_back(split_context_query(d, nullptr, nullptr, kPolyDomain, L, pre_rng.next_u64()));
  }
  std::vector<const TaskDataset*> ptrs;
  for (const auto& d : pretrain_data) ptrs.push_back(&d);
  MlpModel probe = pretrain_probe_on(ptrs, scaler, cfg, pre_rng);
  GeometryStage geo = build_geometry(lib, scaler, cfg, std::move(probe));
  scaler.d_scale = geo.d_scale;

  // Predecessor embeddings for the decomposer targets.
  std::vector<VectorXd> pred_latents(lib.tasks.size());
  for (auto& t : lib.tasks) {
    if (t.desc.degree() < 1) continue;
    TaskDescriptor pd;
    pd.kind = TaskDescriptor::Kind::Polynomial;
    pd.coeffs.assign(t.desc.coeffs.begin(), t.desc.coeffs.end() - 1);
    const TaskDataset ds =
        split_context_query(pd, nullptr, nullptr, kPolyDomain, L, mix_seed(t.data.noise_seed, 3));
    const VectorXd raw = probe_embed(scaler.scale_dataset(ds),
                                     make_probe_config(cfg, &geo.probe, mix_seed(t.data.noise_seed, 4)));
    pred_latents[static_cast<size_t>(t.id)] = geo.pca.project(raw);
  }

  const OperatorSpec pspec = OperatorSpec::length(L);
  const PairDataset pairs = build_length_pairs(pspec, lib, scaler);
  Rng psi_rng(mix_seed(root, 5));
  const MlpModel psi =
      train_operator(pspec, pairs, to_train_config(cfg.operator_train, mix_seed(root, 6)), psi_rng);

  // Decomposer on degree >= 1 tasks.
  DecomposerSpec dspec = DecomposerSpec::length(L, cfg.latent_dim);
  std::vector<std::vector<std::pair<double, double>>> dec_ctx;
  std::vector<VectorXd> dec_tgt;
  for (const auto& t : lib.tasks) {
    if (t.desc.degree() < 1) continue;
    dec_ctx.push_back(t.data.context);
    VectorXd tgt(cfg.latent_dim + 1);
    tgt.head(cfg.latent_dim) = pred_latents[static_cast<size_t>(t.id)];
    tgt[cfg.latent_dim] = t.desc.coeffs.back() * std::pow(5.0, t.desc.degree());
    dec_tgt.push_back(tgt);
  }
  Rng dec_rng(mix_seed(root, 7));
  const Decomposer dec = train_decomposer(dspec, dec_ctx, dec_tgt,
                                          to_train_config(cfg.decomposer_train, mix_seed(root, 8)),
                                          dec_rng);

  // Naive baseline: context -> curve.
  MlpModel naive;
  {
    const long n = static_cast<long>(lib.tasks.size());
    MatrixXd x(L + L / 2, n), y(L, n);
    for (long i = 0; i < n; ++i) {
      const TaskEntry& t = lib.tasks[static_cast<size_t>(i)];
      for (int q = 0; q < L; ++q) x(q, i) = scaler.sx(t.data.grid_x[static_cast<size_t>(q)]);
      x.col(i).tail(L / 2) = scaler.sy_vec(t.data.context_y());
      y.col(i) = scaler.sy_vec(full_curve(t));
    }
    naive = train_plain_model(deep_arch(L + L / 2, L), x, y, cfg.baseline_train, mix_seed(root, 9));
  }

  // Retrieval pool: the max-degree tasks.
  std::vector<VectorXd> pool_emb;
  std::vector<int> pool_rows;
  for (const auto& t : lib.tasks)
    if (t.desc.degree() == cfg.max_train_degree) {
      pool_emb.push_back(t.embedding);
      pool_rows.push_back(t.id);
    }

  auto psi_curve = [&](const TaskDataset& data, const VectorXd& anchor_scaled, double c_norm) {
    OperatorInputs in;
    VectorXd gx(L);
    for (int q = 0; q < L; ++q) gx[q] = scaler.sx(data.grid_x[static_cast<size_t>(q)]);
    in.x = gx;
    in.anchors = {anchor_scaled};
    in.context_head = scaler.sy_vec(data.context_y());
    in.phi = {VectorXd::Constant(1, c_norm)};
    return scaler.unsy_vec(psi.forward1(build_operator_input(pspec, in)));
  };

  Rng tgt_rng(mix_seed(root, 10));
  Rng rnd_rng(mix_seed(root, 11));
  std::map<std::string, double> sums;
  CsvTable curves;
  curves.header = {"task", "degree", "x", "ground_truth"};
  for (const auto& meth : cfg.methods) curves.header.push_back(meth.name());

  for (int ti = 0; ti < cfg.eval_targets; ++ti) {
    TaskEntry target;
    target.desc = sample_polynomial(cfg.target_degree, tgt_rng);
    target.data = split_context_query(target.desc, nullptr, nullptr, kPolyDomain, L, tgt_rng.next_u64());
    const VectorXd truth_q = target.data.query_y();

    const DecomposeResult latents = decompose(dec, target.data.context);
    auto candidates = propose_candidates(dspec, latents.latents, pool_emb, pool_rows,
                                         cfg.retrieval_k);
    const double c_hat = latents.scalar;
    const int best = verify_rank(candidates, [&](const DecompositionCandidate& c) {
      const VectorXd anchor = scaler.sy_vec(full_curve(lib.tasks[static_cast<size_t>(c.anchor_ids[0])]));
      const VectorXd curve = psi_curve(target.data, anchor, c_hat);
      double s = 0.0;
      for (size_t q = 0; q < target.data.context_idx.size(); ++q) {
        const double diff = curve[target.data.context_idx[q]] - target.data.context[q].second;
        s += diff * diff;
      }
      return s / static_cast<double>(target.data.context_idx.size());
    });

    const int rnd_row = pool_rows[static_cast<size_t>(rnd_rng.uniform_int(static_cast<int>(pool_rows.size())))];

    std::map<std::string, VectorXd> curve_of;
    for (const auto& meth : cfg.methods) {
      VectorXd curve;
      switch (meth.kind) {
        case MethodKind::InductiveBaseline: {
          VectorXd f(L + L / 2);
          for (int q = 0; q < L; ++q) f[q] = scaler.sx(target.data.grid_x[static_cast<size_t>(q)]);
          f.tail(L / 2) = scaler.sy_vec(target.data.context_y());
          curve = scaler.unsy_vec(naive.forward1(f));
          break;
        }
        case MethodKind::RTE: {
          const auto& c = candidates[static_cast<size_t>(best)];
          curve = psi_curve(target.data,
                            scaler.sy_vec(full_curve(lib.tasks[static_cast<size_t>(c.anchor_ids[0])])), c_hat);
          break;
        }
        case MethodKind::Oracle: {
          TaskDescriptor pd;
          pd.kind = TaskDescriptor::Kind::Polynomial;
          pd.coeffs.assign(target.desc.coeffs.begin(), target.desc.coeffs.end() - 1);
          VectorXd anchor(L);
          for (int q = 0; q < L; ++q)
            anchor[q] = eval_polynomial(pd, target.data.grid_x[static_cast<size_t>(q)]);
          const double c_true =
              target.desc.coeffs.back() * std::pow(5.0, target.desc.degree());
          curve = psi_curve(target.data, scaler.sy_vec(anchor), c_true);
          break;
        }
        case MethodKind::Rank3Anchor: {
          int want = std::min<int>(2, static_cast<int>(candidates.size()) - 1);
          int pick = 0;
          for (size_t c = 0; c < candidates.size(); ++c)
            if (candidates[c].rank == want) pick = static_cast<int>(c);
          curve = psi_curve(
              target.data,
              scaler.sy_vec(full_curve(lib.tasks[static_cast<size_t>(candidates[static_cast<size_t>(pick)].anchor_ids[0])])),
              c_hat);
          break;
        }
        case MethodKind::RandomAnchors:
          curve = psi_curve(target.data, scaler.sy_vec(full_curve(lib.tasks[static_cast<size_t>(rnd_row)])), c_hat);
          break;
        case MethodKind::ZeroShift: {
          // Embedding-nearest anchor, transformation coefficient masked to zero.
          const auto ranked = nearest_anchor(latents.latents[0], pool_emb, pool_rows, 1);
          curve = psi_curve(target.data,
                            scaler.sy_vec(full_curve(lib.tasks[static_cast<size_t>(ranked[0].first)])), 0.0);
          break;
        }
        default:
          throw std::logic_error("length trial: unhandled method " + meth.name());
      }
      VectorXd pred_q(truth_q.size());
      for (size_t qi = 0; qi < target.data.query_idx.size(); ++qi)
        pred_q[static_cast<long>(qi)] = curve[target.data.query_idx[qi]];
      sums[meth.name()] += mse_of(pred_q, truth_q);
      curve_of[meth.name()] = curve;
    }

    if (ti < cfg.export_curves) {
      const VectorXd truth = full_curve(target);
      for (int q = 0; q < L; ++q) {
        std::vector<std::string> row = {std::to_string(ti), std::to_string(cfg.target_degree),
                                        format_double(target.data.grid_x[static_cast<size_t>(q)]),
                                        format_double(truth[q])};
        for (const auto& meth : cfg.methods) row.push_back(format_double(curve_of[meth.name()][q]));
        curves.rows.push_back(std::move(row));
      }
    }
  }

  for (const auto& meth : cfg.methods)
    out.rows.push_back({meth.name(), "poly_deg" + std::to_string(cfg.target_degree), "mse", 0,
                        sums[meth.name()] / static_cast<double>(cfg.eval_targets)});
  if (!curves.rows.empty())
    out.artifacts["curves_length_seed" + std::to_string(seed) + ".csv"] = curves;
  return out;
}

// ---------------------------------------------------------------------------
// Composition regime (single step)
// ---------------------------------------------------------------------------

using PKind = Primitive::Kind;

const std::vector<std::pair<PKind, PKind>>& seen_pairs_inner_outer() {
  // (inner, outer): composite = outer(inner(x)).
  static const std::vector<std::pair<PKind, PKind>> v = {
      {PKind::Poly, PKind::Poly}, {PKind::Sin, PKind::Sin},  {PKind::Tanh, PKind::Tanh},
      {PKind::Sin, PKind::Poly},  {PKind::Tanh, PKind::Sin}, {PKind::Poly, PKind::Tanh}};
  return v;
}

const std::vector<std::pair<PKind, PKind>>& unseen_pairs_inner_outer() {
  static const std::vector<std::pair<PKind, PKind>> v = {
      {PKind::Poly, PKind::Sin}, {PKind::Sin, PKind::Tanh}, {PKind::Tanh, PKind::Poly}};
  return v;
}

struct CompositionSetup {
  TaskLibrary lib;  // composite tasks + primitive table
  Scaler scaler;
  GeometryStage geo;
  std::vector<VectorXd> prim_embeddings;  // projected, aligned with primitive ids
  std::vector<int> prim_ids;
  std::map<PKind, std::vector<int>> kind_rows;
  int identity_id = -1;
};

/// Samples the primitive pool, embeds the primitives, and samples composite
/// tasks for the given (inner, outer) kind pairs.
CompositionSetup build_composition_setup(const ExperimentConfig& cfg, uint64_t root,
                                         bool with_identity, int per_recipe) {
  CompositionSetup s;
  const int L = cfg.grid_len;
  Rng rng(mix_seed(root, 1));

  for (PKind k : {PKind::Poly, PKind::Sin, PKind::Tanh}) {
    for (int i = 0; i < cfg.primitives_per_kind; ++i) {
      const int id = s.lib.primitives.add(Primitive::sample(k, rng));
      s.kind_rows[k].push_back(id);
    }
  }
  if (with_identity) {
    Primitive ident;
    ident.kind = PKind::Identity;
    s.identity_id = s.lib.primitives.add(std::move(ident));
  }

  Rng task_rng(mix_seed(root, 2));
  for (const auto& [inner_k, outer_k] : seen_pairs_inner_outer()) {
    for (int i = 0; i < per_recipe; ++i) {
      TaskEntry e;
      e.desc.kind = TaskDescriptor::Kind::Composition;
      const int gi = s.kind_rows[inner_k][static_cast<size_t>(task_rng.uniform_int(cfg.primitives_per_kind))];
      const int fo = s.kind_rows[outer_k][static_cast<size_t>(task_rng.uniform_int(cfg.primitives_per_kind))];
      e.desc.recipe = {gi, fo};
      e.label = Primitive::kind_name(outer_k) + "(" + Primitive::kind_name(inner_k) + ")";
      e.data = split_context_query(e.desc, nullptr, &s.lib.primitives, kPolyDomain, L,
                                   task_rng.next_u64());
      s.lib.add(std::move(e));
    }
  }

  // Scaler over composite and primitive values.
  std::vector<double> ys;
  for (const auto& t : s.lib.tasks) {
    for (const auto& p : t.data.context) ys.push_back(p.second);
    for (const auto& p : t.data.query) ys.push_back(p.second);
  }
  const std::vector<double> grid = make_grid(kPolyDomain, L);
  for (int id = 0; id < s.lib.primitives.size(); ++id)
    for (double x : grid) ys.push_back(s.lib.primitives.at(id).eval(x));
  s.scaler = Scaler::fit(kPolyDomain, ys);

  // Probe pretrained on the primitive curves, then embed each primitive.
  Rng pre_rng(mix_seed(root, 3));
  std::vector<TaskDataset> prim_data;
  for (int id = 0; id < s.lib.primitives.size(); ++id) {
    TaskDescriptor d;
    d.kind = TaskDescriptor::Kind::Composition;
    d.recipe = {id};
    prim_data.push_back(
        split_context_query(d, nullptr, &s.lib.primitives, kPolyDomain, L, pre_rng.next_u64()));
  }
  std::vector<const TaskDataset*> ptrs;
  for (const auto& d : prim_data) ptrs.push_back(&d);
  MlpModel probe = pretrain_probe_on(ptrs, s.scaler, cfg, pre_rng);

  std::vector<VectorXd> raw;
  for (int id = 0; id < s.lib.primitives.size(); ++id) {
    raw.push_back(probe_embed(s.scaler.scale_dataset(prim_data[static_cast<size_t>(id)]),
                              make_probe_config(cfg, &probe, mix_seed(root, 400 + static_cast<uint64_t>(id)))));
  }
  s.geo.probe = std::move(probe);
  s.geo.pca = PcaModel::fit(raw, cfg.latent_dim);
  for (int id = 0; id < s.lib.primitives.size(); ++id) {
    s.prim_embeddings.push_back(s.geo.pca.project(raw[static_cast<size_t>(id)]));
    s.prim_ids.push_back(id);
  }
  return s;
}

TrialOutput run_composition_trial(const ExperimentConfig& cfg, uint64_t seed) {
  TrialOutput out;
  const int L = cfg.grid_len;
  const uint64_t root = mix_seed(seed, std::hash<std::string>{}(cfg.name) ^ 0x22);
  CompositionSetup s = build_composition_setup(cfg, root, false, cfg.per_recipe);

  const OperatorSpec pspec = OperatorSpec::composition(L);
  const PairDataset pairs =
      build_composition_pairs(pspec, s.lib, PairSource::GroundTruthMetadata, s.scaler);
  Rng psi_rng(mix_seed(root, 5));
  const MlpModel psi =
      train_operator(pspec, pairs, to_train_config(cfg.operator_train, mix_seed(root, 6)), psi_rng);

  DecomposerSpec dspec = DecomposerSpec::composition(L, cfg.latent_dim);
  std::vector<std::vector<std::pair<double, double>>> dec_ctx;
  std::vector<VectorXd> dec_tgt;
  for (const auto& t : s.lib.tasks) {
    dec_ctx.push_back(t.data.context);
    VectorXd tgt(2 * cfg.latent_dim);
    tgt.head(cfg.latent_dim) = s.prim_embeddings[static_cast<size_t>(t.desc.recipe[0])];
    tgt.tail(cfg.latent_dim) = s.prim_embeddings[static_cast<size_t>(t.desc.recipe[1])];
    dec_tgt.push_back(tgt);
  }
  Rng dec_rng(mix_seed(root, 7));
  const Decomposer dec = train_decomposer(dspec, dec_ctx, dec_tgt,
                                          to_train_config(cfg.decomposer_train, mix_seed(root, 8)),
                                          dec_rng);

  MlpModel naive;
  {
    const long n = static_cast<long>(s.lib.tasks.size());
    MatrixXd x(L + L / 2, n), y(L, n);
    for (long i = 0; i < n; ++i) {
      const TaskEntry& t = s.lib.tasks[static_cast<size_t>(i)];
      for (int q = 0; q < L; ++q) x(q, i) = s.scaler.sx(t.data.grid_x[static_cast<size_t>(q)]);
      x.col(i).tail(L / 2) = s.scaler.sy_vec(t.data.context_y());
      y.col(i) = s.scaler.sy_vec(full_curve(t));
    }
    naive = train_plain_model(deep_arch(L + L / 2, L), x, y, cfg.baseline_train, mix_seed(root, 9));
  }

  const std::vector<double> grid = make_grid(kPolyDomain, L);
  std::vector<VectorXd> prim_scaled;
  for (int id = 0; id < s.lib.primitives.size(); ++id)
    prim_scaled.push_back(s.scaler.sy_vec(primitive_curve(s.lib.primitives.at(id), grid)));

  auto psi_curve = [&](const TaskDataset& data, int inner_id, int outer_id) {
    OperatorInputs in;
    VectorXd gx(L);
    for (int q = 0; q < L; ++q) gx[q] = s.scaler.sx(data.grid_x[static_cast<size_t>(q)]);
    in.x = gx;
    in.anchors = {prim_scaled[static_cast<size_t>(inner_id)]};
    in.phi = {prim_scaled[static_cast<size_t>(outer_id)]};
    in.context_head = s.scaler.sy_vec(data.context_y());
    return s.scaler.unsy_vec(psi.forward1(build_operator_input(pspec, in)));
  };

  Rng tgt_rng(mix_seed(root, 10));
  Rng rnd_rng(mix_seed(root, 11));
  std::map<std::string, double> sums;
  CsvTable curves;
  curves.header = {"task", "recipe", "x", "ground_truth"};
  for (const auto& meth : cfg.methods) curves.header.push_back(meth.name());

  for (int ti = 0; ti < cfg.eval_targets; ++ti) {
    const auto& [inner_k, outer_k] =
        unseen_pairs_inner_outer()[static_cast<size_t>(ti) % unseen_pairs_inner_outer().size()];
    TaskEntry target;
    target.desc.kind = TaskDescriptor::Kind::Composition;
    const int gi = s.kind_rows[inner_k][static_cast<size_t>(tgt_rng.uniform_int(cfg.primitives_per_kind))];
    const int fo = s.kind_rows[outer_k][static_cast<size_t>(tgt_rng.uniform_int(cfg.primitives_per_kind))];
    target.desc.recipe = {gi, fo};
    target.label = Primitive::kind_name(outer_k) + "(" + Primitive::kind_name(inner_k) + ")";
    target.data = split_context_query(target.desc, nullptr, &s.lib.primitives, kPolyDomain, L,
                                      tgt_rng.next_u64());
    const VectorXd truth_q = target.data.query_y();

    const DecomposeResult latents = decompose(dec, target.data.context);
    auto candidates =
        propose_candidates(dspec, latents.latents, s.prim_embeddings, s.prim_ids, cfg.retrieval_k);
    const int best = verify_rank(candidates, [&](const DecompositionCandidate& c) {
      const VectorXd curve = psi_curve(target.data, c.anchor_ids[0], c.anchor_ids[1]);
      double sscore = 0.0;
      for (size_t q = 0; q < target.data.context_idx.size(); ++q) {
        const double diff = curve[target.data.context_idx[q]] - target.data.context[q].second;
        sscore += diff * diff;
      }
      return sscore / static_cast<double>(target.data.context_idx.size());
    });

    const int rnd_inner = rnd_rng.uniform_int(s.lib.primitives.size());
    const int rnd_outer = rnd_rng.uniform_int(s.lib.primitives.size());

    std::map<std::string, VectorXd> curve_of;
    for (const auto& meth : cfg.methods) {
      VectorXd curve;
      switch (meth.kind) {
        case MethodKind::InductiveBaseline: {
          VectorXd f(L + L / 2);
          for (int q = 0; q < L; ++q) f[q] = s.scaler.sx(target.data.grid_x[static_cast<size_t>(q)]);
          f.tail(L / 2) = s.scaler.sy_vec(target.data.context_y());
          curve = s.scaler.unsy_vec(naive.forward1(f));
          break;
        }
        case MethodKind::RTE: {
          const auto& c = candidates[static_cast<size_t>(best)];
          curve = psi_curve(target.data, c.anchor_ids[0], c.anchor_ids[1]);
          break;
        }
        case MethodKind::Oracle:
          curve = psi_curve(target.data, gi, fo);
          break;
        case MethodKind::RandomConstituents:
          curve = psi_curve(target.data, rnd_inner, rnd_outer);
          break;
        case MethodKind::NoVerification:
          curve = psi_curve(target.data, candidates[0].anchor_ids[0], candidates[0].anchor_ids[1]);
          break;
        default:
          throw std::logic_error("composition trial: unhandled method " + meth.name());
      }
      VectorXd pred_q(truth_q.size());
      for (size_t qi = 0; qi < target.data.query_idx.size(); ++qi)
        pred_q[static_cast<long>(qi)] = curve[target.data.query_idx[qi]];
      sums[meth.name()] += mse_of(pred_q, truth_q);
      curve_of[meth.name()] = curve;
    }

    if (ti < cfg.export_curves) {
      const VectorXd truth = full_curve(target);
      for (int q = 0; q < L; ++q) {
        std::vector<std::string> row = {std::to_string(ti), target.label,
                                        format_double(target.data.grid_x[static_cast<size_t>(q)]),
                                        format_double(truth[q])};
        for (const auto& meth : cfg.methods) row.push_back(format_double(curve_of[meth.name()][q]));
        curves.rows.push_back(std::move(row));
      }
    }
  }

  for (const auto& meth : cfg.methods)
    out.rows.push_back({meth.name(), "composition_unseen", "mse", 0,
                        sums[meth.name()] / static_cast<double>(cfg.eval_targets)});
  if (!curves.rows.empty())
    out.artifacts["curves_composition_seed" + std::to_string(seed) + ".csv"] = curves;
  return out;
}

// ---------------------------------------------------------------------------
// Parity regime
// ---------------------------------------------------------------------------

std::vector<std::vector<int>> masks_of_size(int n_bits, int size) {
  std::vector<std::vector<int>> out;
  std::vector<int> comb(static_cast<size_t>(size));
  std::iota(comb.begin(), comb.end(), 0);
  while (true) {
    out.push_back(comb);
    int i = size - 1;
    while (i >= 0 && comb[static_cast<size_t>(i)] == n_bits - size + i) --i;
    if (i < 0) break;
    ++comb[static_cast<size_t>(i)];
    for (int j = i + 1; j < size; ++j) comb[static_cast<size_t>(j)] = comb[static_cast<size_t>(j - 1)] + 1;
  }
  return out;
}

TrialOutput run_parity_trial(const ExperimentConfig& cfg, uint64_t seed) {
  TrialOutput out;
  const uint64_t root = mix_seed(seed, std::hash<std::string>{}(cfg.name) ^ 0x33);

  std::vector<std::vector<int>> train_masks;  // |S| in [2,5]
  for (int sz = 2; sz <= 5; ++sz)
    for (auto& m : masks_of_size(kParityBits, sz)) train_masks.push_back(std::move(m));
  std::vector<std::vector<int>> anchor_masks_for_pairs;  // |S| in [2,4] keeps targets in-range
  for (const auto& m : train_masks)
    if (static_cast<int>(m.size()) <= 4) anchor_masks_for_pairs.push_back(m);

  const OperatorSpec pspec = OperatorSpec::parity();
  const PairDataset pairs =
      build_parity_pairs(pspec, anchor_masks_for_pairs, cfg.parity_train_examples, mix_seed(root, 1));
  Rng psi_rng(mix_seed(root, 2));
  const MlpModel psi =
      train_operator(pspec, pairs, to_train_config(cfg.operator_train, mix_seed(root, 3)), psi_rng);

  // Context-conditioned direct baseline.
  const int ctx_n = cfg.parity_context;
  const int base_dim = ctx_n * (kParityBits + 1) + kParityBits;
  MlpModel baseline;
  {
    Rng brng(mix_seed(root, 4));
    const int n = cfg.parity_train_examples;
    MatrixXd x(base_dim, n), y(1, n);
    for (int e = 0; e < n; ++e) {
      const auto& mask = train_masks[static_cast<size_t>(brng.uniform_int(static_cast<int>(train_masks.size())))];
      long pos = 0;
      for (int c = 0; c < ctx_n; ++c) {
        std::vector<int> bits(kParityBits);
        for (auto& b : bits) b = brng.uniform_int(2);
        for (int b = 0; b < kParityBits; ++b) x(pos++, e) = bits[static_cast<size_t>(b)];
        x(pos++, e) = parity_eval(mask, bits);
      }
      std::vector<int> qbits(kParityBits);
      for (auto& b : qbits) b = brng.uniform_int(2);
      for (int b = 0; b < kParityBits; ++b) x(pos++, e) = qbits[static_cast<size_t>(b)];
      y(0, e) = parity_eval(mask, qbits);
    }
    baseline = train_plain_model({base_dim, 128, 64, 1}, x, y, cfg.baseline_train,
                                 mix_seed(root, 5), Loss::BceWithLogits);
  }

  auto logit_fn = [&](const std::vector<int>& bits, int src, int bitval) {
    return parity_logit(psi, pspec, bits, src, bitval);
  };

  const auto test_masks = masks_of_size(kParityBits, 6);
  Rng eval_rng(mix_seed(root, 6));
  double acc_rte = 0.0, acc_base = 0.0, acc_oracle = 0.0;
  for (const auto& mask : test_masks) {
    std::vector<std::pair<std::vector<int>, int>> context;
    for (int c = 0; c < ctx_n; ++c) {
      std::vector<int> bits(kParityBits);
      for (auto& b : bits) b = eval_rng.uniform_int(2);
      context.emplace_back(bits, parity_eval(mask, bits));
    }
    std::vector<std::vector<int>> queries;
    std::vector<int> truth;
    for (int q = 0; q < cfg.parity_queries; ++q) {
      std::vector<int> bits(kParityBits);
      for (auto& b : bits) b = eval_rng.uniform_int(2);
      truth.push_back(parity_eval(mask, bits));
      queries.push_back(std::move(bits));
    }

    const ParitySearchResult rte = parity_search(logit_fn, train_masks, context, queries);
    int ok = 0;
    for (size_t q = 0; q < queries.size(); ++q)
      if (rte.query_predictions[q] == truth[q]) ++ok;
    acc_rte += static_cast<double>(ok) / static_cast<double>(queries.size());

    // Oracle: known parent (drop the top bit) and the bit index.
    const int k = mask.back();
    std::vector<int> parent(mask.begin(), mask.end() - 1);
    ok = 0;
    for (size_t q = 0; q < queries.size(); ++q) {
      const int src = parity_eval(parent, queries[q]);
      const VectorXd p = apply_operator(psi, pspec, [&] {
        OperatorInputs in;
        in.x.resize(kParityBits);
        for (int b = 0; b < kParityBits; ++b) in.x[b] = queries[q][static_cast<size_t>(b)];
        in.anchors = {VectorXd::Constant(1, src)};
        in.phi = {VectorXd::Constant(1, queries[q][static_cast<size_t>(k)])};
        return in;
      }());
      if (static_cast<int>(p[0]) == truth[q]) ++ok;
    }
    acc_oracle += static_cast<double>(ok) / static_cast<double>(queries.size());

    ok = 0;
    for (size_t q = 0; q < queries.size(); ++q) {
      VectorXd f(base_dim);
      long pos = 0;
      for (const auto& [bits, label] : context) {
        for (int b = 0; b < kParityBits; ++b) f[pos++] = bits[static_cast<size_t>(b)];
        f[pos++] = label;
      }
      for (int b = 0; b < kParityBits; ++b) f[pos++] = queries[q][static_cast<size_t>(b)];
      const int pred = baseline.forward1(f)[0] >= 0.0 ? 1 : 0;
      if (pred == truth[q]) ++ok;
    }
    acc_base += static_cast<double>(ok) / static_cast<double>(queries.size());
  }

  const double n_tasks = static_cast<double>(test_masks.size());
  for (const auto& meth : cfg.methods) {
    double v = 0.0;
    switch (meth.kind) {
      case MethodKind::RTE: v = acc_rte; break;
      case MethodKind::InductiveBaseline: v = acc_base; break;
      case MethodKind::Oracle: v = acc_oracle; break;
      default: throw std::logic_error("parity trial: unhandled method " + meth.name());
    }
    out.rows.push_back({meth.name(), "parity_s6", "accuracy", 0, 100.0 * v / n_tasks});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Multi-step composition
// ---------------------------------------------------------------------------

std::vector<std::vector<PKind>> depth3_recipes(bool unseen) {
  // Unseen: any Tanh applied directly to a Sin output (inner-first adjacency
  // Sin -> Tanh); 6 of the 27 sequences.
  std::vector<std::vector<PKind>> out;
  const PKind kinds[] = {PKind::Poly, PKind::Sin, PKind::Tanh};
  for (PKind a : kinds)
    for (PKind b : kinds)
      for (PKind c : kinds) {
        const bool has_adj = (a == PKind::Sin && b == PKind::Tanh) ||
                             (b == PKind::Sin && c == PKind::Tanh);
        if (has_adj == unseen) out.push_back({a, b, c});
      }
  return out;
}

TrialOutput run_multistep_composition_trial(const ExperimentConfig& cfg, uint64_t seed) {
  TrialOutput out;
  const int L = cfg.grid_len;
  const uint64_t root = mix_seed(seed, std::hash<std::string>{}(cfg.name) ^ 0x44);
  CompositionSetup s = build_composition_setup(cfg, root, true, 0);  // primitives only

  const std::vector<double> grid = make_grid(kPolyDomain, L);
  std::vector<VectorXd> prim_curves;
  for (int id = 0; id < s.lib.primitives.size(); ++id)
    prim_curves.push_back(primitive_curve(s.lib.primitives.at(id), grid));

  auto sample_recipe = [&](const std::vector<PKind>& kinds, Rng& rng) {
    std::vector<int> ids;
    for (PKind k : kinds)
      ids.push_back(s.kind_rows[k][static_cast<size_t>(rng.uniform_int(cfg.primitives_per_kind))]);
    return ids;
  };

  // Training tasks: seen depth-3 recipes plus identity-padded shallower ones.
  Rng task_rng(mix_seed(root, 10));
  struct MsTask {
    TaskEntry entry;
    std::vector<int> slots;  // always depth slots, identity-padded
  };
  std::vector<MsTask> tasks;
  for (const auto& kinds : depth3_recipes(false)) {
    for (int i = 0; i < cfg.ms_per_recipe; ++i) {
      MsTask t;
      t.entry.desc.kind = TaskDescriptor::Kind::Composition;
      t.entry.desc.recipe = sample_recipe(kinds, task_rng);
      t.slots = t.entry.desc.recipe;
      t.entry.data = split_context_query(t.entry.desc, nullptr, &s.lib.primitives, kPolyDomain, L,
                                         task_rng.next_u64());
      tasks.push_back(std::move(t));
    }
  }
  for (const auto& [inner_k, outer_k] : seen_pairs_inner_outer()) {
    for (int i = 0; i < std::max(1, cfg.ms_per_recipe / 2); ++i) {
      MsTask t;
      t.entry.desc.kind = TaskDescriptor::Kind::Composition;
      t.entry.desc.recipe = sample_recipe({inner_k, outer_k}, task_rng);
      t.slots = t.entry.desc.recipe;
      t.slots.push_back(s.identity_id);
      t.entry.data = split_context_query(t.entry.desc, nullptr, &s.lib.primitives, kPolyDomain, L,
                                         task_rng.next_u64());
      tasks.push_back(std::move(t));
    }
  }

  DecomposerSpec dspec = DecomposerSpec::multistep(L, cfg.latent_dim, cfg.ms_depth);
  std::vector<std::vector<std::pair<double, double>>> dec_ctx;
  std::vector<VectorXd> dec_tgt;
  for (const auto& t : tasks) {
    dec_ctx.push_back(t.entry.data.context);
    VectorXd tgt(cfg.ms_depth * cfg.latent_dim);
    for (int h = 0; h < cfg.ms_depth; ++h)
      tgt.segment(static_cast<long>(h) * cfg.latent_dim, cfg.latent_dim) =
          s.prim_embeddings[static_cast<size_t>(t.slots[static_cast<size_t>(h)])];
    dec_tgt.push_back(tgt);
  }
  Rng dec_rng(mix_seed(root, 11));
  const Decomposer dec = train_decomposer(dspec, dec_ctx, dec_tgt,
                                          to_train_config(cfg.decomposer_train, mix_seed(root, 12)),
                                          dec_rng);

  MlpModel naive;
  {
    const long n = static_cast<long>(tasks.size());
    MatrixXd x(L + L / 2, n), y(L, n);
    for (long i = 0; i < n; ++i) {
      const TaskEntry& t = tasks[static_cast<size_t>(i)].entry;
      for (int q = 0; q < L; ++q) x(q, i) = s.scaler.sx(t.data.grid_x[static_cast<size_t>(q)]);
      x.col(i).tail(L / 2) = s.scaler.sy_vec(t.data.context_y());
      y.col(i) = s.scaler.sy_vec(full_curve(t));
    }
    naive = train_plain_model(deep_arch(L + L / 2, L), x, y, cfg.baseline_train, mix_seed(root, 13));
  }

  const auto unseen = depth3_recipes(true);
  Rng tgt_rng(mix_seed(root, 14));
  std::map<std::string, double> sums;
  for (int ti = 0; ti < cfg.eval_targets; ++ti) {
    const auto& kinds = unseen[static_cast<size_t>(ti) % unseen.size()];
    TaskEntry target;
    target.desc.kind = TaskDescriptor::Kind::Composition;
    target.desc.recipe = sample_recipe(kinds, tgt_rng);
    target.data = split_context_query(target.desc, nullptr, &s.lib.primitives, kPolyDomain, L,
                                      tgt_rng.next_u64());
    const VectorXd truth_q = target.data.query_y();
    std::vector<double> query_x;
    for (const auto& p : target.data.query) query_x.push_back(p.first);

    for (const auto& meth : cfg.methods) {
      VectorXd pred_q(truth_q.size());
      if (meth.kind == MethodKind::RTE) {
        const ComposeSearchResult r =
            multistep_compose_search(dec, s.prim_embeddings, s.prim_ids, grid, prim_curves,
                                     target.data.context, query_x, cfg.ms_k);
        pred_q = r.query_pred;
      } else if (meth.kind == MethodKind::InductiveBaseline) {
        VectorXd f(L + L / 2);
        for (int q = 0; q < L; ++q) f[q] = s.scaler.sx(target.data.grid_x[static_cast<size_t>(q)]);
        f.tail(L / 2) = s.scaler.sy_vec(target.data.context_y());
        const VectorXd curve = s.scaler.unsy_vec(naive.forward1(f));
        for (size_t qi = 0; qi < target.data.query_idx.size(); ++qi)
          pred_q[static_cast<long>(qi)] = curve[target.data.query_idx[qi]];
      } else {
        throw std::logic_error("multistep composition: unhandled method " + meth.name());
      }
      sums[meth.name()] += mse_of(pred_q, truth_q);
    }
  }

  for (const auto& meth : cfg.methods)
    out.rows.push_back({meth.name(), "composition_depth3_unseen", "mse", 0,
                        sums[meth.name()] / static_cast<double>(cfg.eval_targets)});
  return out;
}

// ---------------------------------------------------------------------------
// EM self-labeling
// ---------------------------------------------------------------------------

TrialOutput run_em_trial(const ExperimentConfig& cfg, uint64_t seed) {
  TrialOutput out;
  const int L = cfg.grid_len;
  const uint64_t root = mix_seed(seed, std::hash<std::string>{}(cfg.name) ^ 0x55);
  CompositionSetup s = build_composition_setup(cfg, root, true, cfg.per_recipe);

  const OperatorSpec pspec = OperatorSpec::composition(L);
  const std::vector<double> grid = make_grid(kPolyDomain, L);
  std::vector<VectorXd> prim_scaled;
  for (int id = 0; id < s.lib.primitives.size(); ++id)
    prim_scaled.push_back(s.scaler.sy_vec(primitive_curve(s.lib.primitives.at(id), grid)));

  auto psi_curve = [&](const MlpModel& psi, const TaskDataset& data, int inner_id, int outer_id) {
    OperatorInputs in;
    VectorXd gx(L);
    for (int q = 0; q < L; ++q) gx[q] = s.scaler.sx(data.grid_x[static_cast<size_t>(q)]);
    in.x = gx;
    in.anchors = {prim_scaled[static_cast<size_t>(inner_id)]};
    in.phi = {prim_scaled[static_cast<size_t>(outer_id)]};
    in.context_head = s.scaler.sy_vec(data.context_y());
    return s.scaler.unsy_vec(psi.forward1(build_operator_input(pspec, in)));
  };
  auto ctx_mse = [&](const VectorXd& curve, const TaskDataset& data) {
    double v = 0.0;
    for (size_t q = 0; q < data.context_idx.size(); ++q) {
      const double diff = curve[data.context_idx[q]] - data.context[q].second;
      v += diff * diff;
    }
    return v / static_cast<double>(data.context_idx.size());
  };

  // Supervised reference Ψ.
  Rng sup_rng(mix_seed(root, 20));
  const PairDataset sup_pairs =
      build_composition_pairs(pspec, s.lib, PairSource::GroundTruthMetadata, s.scaler);
  const MlpModel psi_sup = train_operator(
      pspec, sup_pairs, to_train_config(cfg.operator_train, mix_seed(root, 21)), sup_rng);

  MlpModel naive;
  {
    const long n = static_cast<long>(s.lib.tasks.size());
    MatrixXd x(L + L / 2, n), y(L, n);
    for (long i = 0; i < n; ++i) {
      const TaskEntry& t = s.lib.tasks[static_cast<size_t>(i)];
      for (int q = 0; q < L; ++q) x(q, i) = s.scaler.sx(t.data.grid_x[static_cast<size_t>(q)]);
      x.col(i).tail(L / 2) = s.scaler.sy_vec(t.data.context_y());
      y.col(i) = s.scaler.sy_vec(full_curve(t));
    }
    naive = train_plain_model(deep_arch(L + L / 2, L), x, y, cfg.baseline_train, mix_seed(root, 22));
  }

  // EM runs per EM method in the config.
  std::map<std::string, EmResult> em_results;
  for (const auto& meth : cfg.methods) {
    if (meth.kind != MethodKind::EM) continue;
    EmConfig ec;
    ec.warmup = meth.em_variant == "Primitives" ? EmConfig::Warmup::Primitives
                                                : EmConfig::Warmup::PartialLabels;
    ec.label_fraction = meth.em_fraction;
    ec.rounds = cfg.em_rounds;
    ec.psi_train = to_train_config(cfg.operator_train, mix_seed(root, 23));
    ec.seed = mix_seed(root, 24);
    TaskLibrary lib_copy = s.lib;
    em_results.emplace(meth.name(), em_self_label(pspec, lib_copy, s.prim_ids, s.identity_id, ec,
                                                  s.scaler));
  }

  // Candidate pool for test-time full enumeration (identity excluded).
  std::vector<std::pair<int, int>> cand_pairs;
  for (int g : s.prim_ids)
    for (int f : s.prim_ids)
      if (g != s.identity_id && f != s.identity_id) cand_pairs.emplace_back(g, f);

  auto enumerate_predict = [&](const MlpModel& psi, const TaskEntry& target) {
    double best_score = std::numeric_limits<double>::infinity();
    VectorXd best_curve;
    for (const auto& [g, f] : cand_pairs) {
      const VectorXd curve = psi_curve(psi, target.data, g, f);
      const double sc = ctx_mse(curve, target.data);
      if (sc < best_score) {
        best_score = sc;
        best_curve = curve;
      }
    }
    return best_curve;
  };

  Rng tgt_rng(mix_seed(root, 25));
  std::map<std::string, double> sums;
  for (int ti = 0; ti < cfg.eval_targets; ++ti) {
    const auto& [inner_k, outer_k] =
        unseen_pairs_inner_outer()[static_cast<size_t>(ti) % unseen_pairs_inner_outer().size()];
    TaskEntry target;
    target.desc.kind = TaskDescriptor::Kind::Composition;
    const int gi = s.kind_rows[inner_k][static_cast<size_t>(tgt_rng.uniform_int(cfg.primitives_per_kind))];
    const int fo = s.kind_rows[outer_k][static_cast<size_t>(tgt_rng.uniform_int(cfg.primitives_per_kind))];
    target.desc.recipe = {gi, fo};
    target.data = split_context_query(target.desc, nullptr, &s.lib.primitives, kPolyDomain, L,
                                      tgt_rng.next_u64());
    const VectorXd truth_q = target.data.query_y();

    for (const auto& meth : cfg.methods) {
      VectorXd curve;
      if (meth.kind == MethodKind::InductiveBaseline) {
        VectorXd f(L + L / 2);
        for (int q = 0; q < L; ++q) f[q] = s.scaler.sx(target.data.grid_x[static_cast<size_t>(q)]);
        f.tail(L / 2) = s.scaler.sy_vec(target.data.context_y());
        curve = s.scaler.unsy_vec(naive.forward1(f));
      } else if (meth.kind == MethodKind::RTE) {
        curve = enumerate_predict(psi_sup, target);
      } else if (meth.kind == MethodKind::EM) {
        curve = enumerate_predict(em_results.at(meth.name()).psi, target);
      } else {
        throw std::logic_error("em trial: unhandled method " + meth.name());
      }
      VectorXd pred_q(truth_q.size());
      for (size_t qi = 0; qi < target.data.query_idx.size(); ++qi)
        pred_q[static_cast<long>(qi)] = curve[target.data.query_idx[qi]];
      sums[meth.name()] += mse_of(pred_q, truth_q);
    }
  }

  for (const auto& meth : cfg.methods)
    out.rows.push_back({meth.name(), "composition_unseen", "mse", 0,
                        sums[meth.name()] / static_cast<double>(cfg.eval_targets)});
  for (const auto& [name, em] : em_results) {
    out.rows.push_back({name, "composition_train", "pseudo_label_accuracy", 0,
                        em.round_accuracy.empty() ? 0.0 : em.round_accuracy.back()});
  }
  const double n_nonid = static_cast<double>(s.prim_ids.size() - 1);
  out.rows.push_back(
      {"RandomAssignment", "composition_train", "pseudo_label_accuracy", 0, 1.0 / (n_nonid * n_nonid)});
  return out;
}

// ---------------------------------------------------------------------------
// Manifold visualization checks
// ---------------------------------------------------------------------------

TrialOutput run_manifold_trial(const ExperimentConfig& cfg, uint64_t seed) {
  TrialOutput out;
  const int L = cfg.grid_len;
  const uint64_t root = mix_seed(seed, std::hash<std::string>{}(cfg.name) ^ 0x66);
  const int m = cfg.manifold_tasks_per_group;

  // --- (1) Quadratic linear-axis discovery in PCA space ---
  {
    FamilySpec fspec = default_family_spec(Family::Quadratic);
    TaskLibrary lib;
    Rng rng(mix_seed(root, 1));
    const Region regions[] = {Region::F1_1, Region::F1_2, Region::F2};
    for (Region r : regions) {
      for (int i = 0; i < m; ++i) {
        TaskEntry e;
        e.desc = sample_task(fspec, r, rng);
        e.label = region_name(r);
        e.data = split_context_query(e.desc, &fspec, nullptr, fspec.x_domain, L, rng.next_u64());
        lib.add(std::move(e));
      }
    }
    Scaler scaler = fit_scaler(lib, fspec.x_domain);

    Rng pre_rng(mix_seed(root, 2));
    std::vector<TaskDataset> pretrain_data;
    for (int i = 0; i < cfg.probe_pretrain_tasks; ++i) {
      const TaskDescriptor d = sample_task(fspec, i % 2 == 0 ? Region::F1_1 : Region::F1_2, pre_rng);
      pretrain_data.push_back(
          split_context_query(d, &fspec, nullptr, fspec.x_domain, L, pre_rng.next_u64()));
    }
    std::vector<const TaskDataset*> ptrs;
    for (const auto& d : pretrain_data) ptrs.push_back(&d);
    MlpModel probe = pretrain_probe_on(ptrs, scaler, cfg, pre_rng);

    // PCA fitted on the training regions only; F2 projected with it.
    std::vector<VectorXd> raw(lib.tasks.size());
    std::vector<VectorXd> train_raw;
    for (auto& t : lib.tasks) {
      raw[static_cast<size_t>(t.id)] =
          probe_embed(scaler.scale_dataset(t.data),
                      make_probe_config(cfg, &probe, mix_seed(t.data.noise_seed, 17)));
      if (t.desc.region != Region::F2) train_raw.push_back(raw[static_cast<size_t>(t.id)]);
    }
    PcaModel pca = PcaModel::fit(train_raw, cfg.latent_dim);

    VectorXd c11 = VectorXd::Zero(cfg.latent_dim), c12 = c11, c2 = c11;
    CsvTable coords;
    coords.header = {"task", "region", "c1", "c2"};
    for (const auto& t : lib.tasks) {
      const VectorXd p = pca.project(raw[static_cast<size_t>(t.id)]);
      if (t.desc.region == Region::F1_1) c11 += p / m;
      if (t.desc.region == Region::F1_2) c12 += p / m;
      if (t.desc.region == Region::F2) c2 += p / m;
      coords.rows.push_back({std::to_string(t.id), t.label, format_double(p[0]),
                             format_double(p.size() > 1 ? p[1] : 0.0)});
    }
    const VectorXd extended = c12 + (c12 - c11);
    const bool hit = (extended - c2).norm() < (extended - c11).norm() &&
                     (extended - c2).norm() < (extended - c12).norm();
    out.rows.push_back({"PcaAxis", "quadratic", "extension_hit", 0, hit ? 1.0 : 0.0});
    out.artifacts["manifold_pca_quadratic_seed" + std::to_string(seed) + ".csv"] = coords;
  }

  // --- (2) Isomap over unit-energy polynomial degrees 1..9 ---
  {
    Rng rng(mix_seed(root, 3));
    std::vector<TaskDataset> data;
    std::vector<int> degree_of;
    for (int d = 1; d <= 9; ++d) {
      for (int i = 0; i < m; ++i) {
        const TaskDescriptor desc = sample_polynomial(d, rng);
        TaskDataset ds = split_context_query(desc, nullptr, nullptr, kPolyDomain, L, rng.next_u64());
        // Normalize the curve to unit energy to isolate shape from magnitude.
        double norm2 = 0.0;
        for (const auto& p : ds.context) norm2 += p.second * p.second;
        for (const auto& p : ds.query) norm2 += p.second * p.second;
        const double scale = norm2 > 1e-24 ? 1.0 / std::sqrt(norm2) : 1.0;
        for (auto& p : ds.context) p.second *= scale;
        for (auto& p : ds.query) p.second *= scale;
        data.push_back(std::move(ds));
        degree_of.push_back(d);
      }
    }
    Scaler scaler;  // normalized curves are already O(1); x still maps to [-1,1]
    scaler.x_off = 0.0;
    scaler.x_scale = 5.0;

    Rng pre_rng(mix_seed(root, 4));
    std::vector<const TaskDataset*> ptrs;
    for (const auto& d : data) ptrs.push_back(&d);
    MlpModel probe = pretrain_probe_on(ptrs, scaler, cfg, pre_rng);

    std::vector<VectorXd> raw;
    for (size_t i = 0; i < data.size(); ++i)
      raw.push_back(probe_embed(scaler.scale_dataset(data[i]),
                                make_probe_config(cfg, &probe, mix_seed(root, 500 + i))));
    const MatrixXd coords = isomap_embed(raw, cfg.isomap_neighbors, 2);

    CsvTable table;
    table.header = {"task", "degree", "x", "y"};
    for (size_t i = 0; i < data.size(); ++i)
      table.rows.push_back({std::to_string(i), std::to_string(degree_of[i]),
                            format_double(coords(static_cast<long>(i), 0)),
                            format_double(coords(static_cast<long>(i), 1))});
    out.artifacts["manifold_isomap_degrees_seed" + std::to_string(seed) + ".csv"] = table;

    // Each degree centroid's nearest other centroid should be an adjacent degree.
    MatrixXd centroids(9, 2);
    centroids.setZero();
    for (size_t i = 0; i < data.size(); ++i)
      centroids.row(degree_of[i] - 1) += coords.row(static_cast<long>(i)) / m;
    int adjacent = 0;
    for (int d = 0; d < 9; ++d) {
      double best = std::numeric_limits<double>::infinity();
      int arg = -1;
      for (int e = 0; e < 9; ++e) {
        if (e == d) continue;
        const double dist = (centroids.row(d) - centroids.row(e)).norm();
        if (dist < best) {
          best = dist;
          arg = e;
        }
      }
      if (std::abs(arg - d) == 1) ++adjacent;
    }
    out.rows.push_back({"IsomapAdjacency", "poly_degrees", "adjacent_degrees", 0,
                        static_cast<double>(adjacent)});
  }

  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// run_experiment / aggregation / artifacts
// ---------------------------------------------------------------------------

namespace {

TrialOutput run_trial(const ExperimentConfig& cfg, uint64_t seed) {
  if (cfg.experiment == "parameter") return run_parameter_trial(cfg, seed);
  if (cfg.experiment == "length") return run_length_trial(cfg, seed);
  if (cfg.experiment == "composition") return run_composition_trial(cfg, seed);
  if (cfg.experiment == "parity") return run_parity_trial(cfg, seed);
  if (cfg.experiment == "multistep_composition") return run_multistep_composition_trial(cfg, seed);
  if (cfg.experiment == "em_composition") return run_em_trial(cfg, seed);
  if (cfg.experiment == "manifold") return run_manifold_trial(cfg, seed);
  throw std::invalid_argument("unknown experiment: " + cfg.experiment);
}

}  // namespace

ExperimentOutput run_experiment(const ExperimentConfig& config) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<TrialOutput> trials(config.seeds.size());
  std::vector<double> trial_secs(config.seeds.size(), 0.0);
  {
    unsigned jobs = config.jobs > 0 ? static_cast<unsigned>(config.jobs)
                                    : std::max(1u, std::thread::hardware_concurrency());
    jobs = std::min<unsigned>(jobs, static_cast<unsigned>(config.seeds.size()));
    std::mutex mu;
    size_t next = 0;
    auto worker = [&]() {
      while (true) {
        size_t i;
        {
          std::lock_guard<std::mutex> lk(mu);
          if (next >= config.seeds.size()) return;
          i = next++;
        }
        const auto s0 = std::chrono::steady_clock::now();
        trials[i] = run_trial(config, config.seeds[i]);
        trial_secs[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - s0).count();
      }
    };
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < jobs; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  ExperimentOutput out;
  for (size_t i = 0; i < config.seeds.size(); ++i) {
    for (TrialRow row : trials[i].rows) {
      row.seed = config.seeds[i];
      out.trials.push_back(std::move(row));
    }
  }

  // Aggregate by (method, family, metric), seeds in config order.
  std::vector<std::tuple<std::string, std::string, std::string>> keys;
  for (const auto& r : out.trials) {
    auto key = std::make_tuple(r.method, r.family, r.metric);
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
  }
  std::sort(keys.begin(), keys.end());
  for (const auto& key : keys) {
    std::vector<double> vals;
    for (const auto& r : out.trials)
      if (std::make_tuple(r.method, r.family, r.metric) == key) vals.push_back(r.value);
    ExperimentResult res;
    std::tie(res.method, res.family, res.metric) = key;
    res.n_trials = static_cast<int>(vals.size());
    res.mean = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
    if (vals.size() > 1) {
      double ss = 0.0;
      for (double v : vals) ss += (v - res.mean) * (v - res.mean);
      res.stddev = std::sqrt(ss / static_cast<double>(vals.size() - 1));
    }
    res.ci95 = 1.96 * res.stddev / std::sqrt(static_cast<double>(vals.size()));
    out.results.push_back(std::move(res));
  }
  out.total_runtime_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (auto& r : out.results) r.runtime_sec = out.total_runtime_sec;

  // --- Artifacts ---
  namespace fs = std::filesystem;
  fs::create_directories(config.out_dir);

  CsvTable results;
  results.header = {"method", "family", "metric", "mean", "ci95", "std", "n_trials"};
  for (const auto& r : out.results)
    results.rows.push_back({r.method, r.family, r.metric, format_double(r.mean),
                            format_double(r.ci95), format_double(r.stddev),
                            std::to_string(r.n_trials)});
  write_csv(results, config.out_dir + "/results.csv");

  CsvTable trial_table;
  trial_table.header = {"method", "family", "metric", "seed", "value"};
  std::vector<TrialRow> sorted_trials = out.trials;
  std::stable_sort(sorted_trials.begin(), sorted_trials.end(), [](const TrialRow& a, const TrialRow& b) {
    return std::tie(a.method, a.family, a.metric, a.seed) <
           std::tie(b.method, b.family, b.metric, b.seed);
  });
  for (const auto& r : sorted_trials)
    trial_table.rows.push_back(
        {r.method, r.family, r.metric, std::to_string(r.seed), format_double(r.value)});
  write_csv(trial_table, config.out_dir + "/trials.csv");

  {
    json meta;
    meta["config_hash"] = config.hash();
    meta["experiment"] = config.experiment;
    meta["name"] = config.name;
    meta["total_runtime_sec"] = out.total_runtime_sec;
    json per_seed = json::object();
    for (size_t i = 0; i < config.seeds.size(); ++i)
      per_seed[std::to_string(config.seeds[i])] = trial_secs[i];
    meta["trial_runtime_sec"] = per_seed;
    atomic_write_text(config.out_dir + "/run_meta.json", meta.dump(2));
  }

  for (size_t i = 0; i < trials.size(); ++i)
    for (const auto& [name, table] : trials[i].artifacts)
      write_csv(table, config.out_dir + "/" + name);

  return out;
}

ExperimentOutput run_ablation_suite(ExperimentConfig config) {
  std::vector<std::string> names;
  if (config.experiment == "parameter")
    names = {"InductiveBaseline", "RTE", "FarAnchors", "RandomAnchors", "ZeroShift"};
  else if (config.experiment == "length")
    names = {"InductiveBaseline", "RTE", "Rank3Anchor", "RandomAnchors", "ZeroShift", "Oracle"};
  else if (config.experiment == "composition")
    names = {"InductiveBaseline", "RTE", "NoVerification", "RandomConstituents", "Oracle"};
  else
    throw std::invalid_argument("run_ablation_suite: no ablation set for " + config.experiment);
  config.methods.clear();
  for (const auto& n : names) config.methods.push_back(Method::parse(n));
  return run_experiment(config);
}

// ---------------------------------------------------------------------------
// Checks
// ---------------------------------------------------------------------------

namespace {

const ExperimentResult& find_result(const std::vector<ExperimentResult>& results,
                                    const std::string& method, const std::string& family,
                                    const std::string& metric) {
  const ExperimentResult* hit = nullptr;
  for (const auto& r : results) {
    if (r.method != method || r.metric != metric) continue;
    if (!family.empty() && r.family != family) continue;
    if (hit) throw std::invalid_argument("check is ambiguous for method " + method +
                                         "; specify family");
    hit = &r;
  }
  if (!hit)
    throw std::invalid_argument("no result row for method=" + method + " family=" + family +
                                " metric=" + metric);
  return *hit;
}

}  // namespace

std::vector<CheckOutcome> evaluate_checks(const std::vector<ResultCheck>& checks,
                                          const std::vector<ExperimentResult>& results) {
  std::vector<CheckOutcome> out;
  for (const auto& chk : checks) {
    CheckOutcome oc;
    oc.check = chk;
    std::ostringstream os;
    try {
      if (chk.type == "lt" || chk.type == "le") {
        const auto& a = find_result(results, chk.a, chk.family, chk.metric);
        const auto& b = find_result(results, chk.b, chk.family, chk.metric);
        double gap = chk.min_gap;
        if (!chk.gap_ref.empty())
          gap = chk.min_gap * find_result(results, chk.gap_ref, chk.family, chk.metric).mean;
        oc.passed = chk.type == "lt" ? (a.mean + gap < b.mean) : (a.mean + gap <= b.mean);
        os << chk.a << "=" << a.mean << (chk.type == "lt" ? " < " : " <= ") << chk.b << "="
           << b.mean;
        if (gap > 0.0) os << " (required gap " << gap << ")";
      } else if (chk.type == "ratio_le") {
        const auto& a = find_result(results, chk.a, chk.family, chk.metric);
        const auto& b = find_result(results, chk.b, chk.family, chk.metric);
        oc.passed = a.mean <= chk.value * b.mean;
        os << chk.a << "=" << a.mean << " <= " << chk.value << " * " << chk.b << "=" << b.mean;
      } else if (chk.type == "value_ge") {
        const auto& a = find_result(results, chk.a, chk.family, chk.metric);
        oc.passed = a.mean >= chk.value;
        os << chk.a << "=" << a.mean << " >= " << chk.value;
      } else if (chk.type == "value_eq") {
        const auto& a = find_result(results, chk.a, chk.family, chk.metric);
        oc.passed = a.mean == chk.value;
        os << chk.a << "=" << a.mean << " == " << chk.value;
      } else if (chk.type == "gap_ge") {
        const auto& a = find_result(results, chk.a, chk.family, chk.metric);
        const auto& b = find_result(results, chk.b, chk.family, chk.metric);
        oc.passed = a.mean - b.mean >= chk.value;
        os << chk.a << "=" << a.mean << " - " << chk.b << "=" << b.mean << " >= " << chk.value;
      } else {
        throw std::invalid_argument("unknown check type: " + chk.type);
      }
    } catch (const std::exception& e) {
      oc.passed = false;
      os << "error: " << e.what();
    }
    oc.detail = os.str();
    out.push_back(std::move(oc));
  }
  return out;
}

std::vector<ExperimentResult> load_results_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  std::vector<ExperimentResult> out;
  for (const auto& row : t.rows) {
    ExperimentResult r;
    r.method = row.at(0);
    r.family = row.at(1);
    r.metric = row.at(2);
    r.mean = std::stod(row.at(3));
    r.ci95 = std::stod(row.at(4));
    r.stddev = std::stod(row.at(5));
    r.n_trials = std::stoi(row.at(6));
    out.push_back(std::move(r));
  }
  return out;
}

bool verify_results(const ExperimentConfig& config, std::string* report) {
  const auto results = load_results_csv(config.out_dir + "/results.csv");
  const auto outcomes = evaluate_checks(config.checks, results);
  bool ok = true;
  std::ostringstream os;
  for (const auto& oc : outcomes) {
    os << (oc.passed ? "[PASS] " : "[FAIL] ") << oc.check.type << ": " << oc.detail << "\n";
    ok = ok && oc.passed;
  }
  if (report) *report = os.str();
  return ok;
}

// ---------------------------------------------------------------------------
// Library generation and bundles
// ---------------------------------------------------------------------------

TaskLibrary build_library(const ExperimentConfig& config, uint64_t seed) {
  config.validate();
  const int L = config.grid_len;
  TaskLibrary lib;
  Rng rng(mix_seed(seed, std::hash<std::string>{}(config.name)));
  if (config.experiment == "parameter" || config.experiment == "manifold") {
    FamilySpec fspec = default_family_spec(family_from_name(config.family));
    for (int i = 0; i < config.library_size; ++i) {
      TaskEntry e;
      const Region r = i % 2 == 0 ? Region::F1_1 : Region::F1_2;
      e.desc = sample_task(fspec, r, rng);
      e.label = region_name(r);
      e.data = split_context_query(e.desc, &fspec, nullptr, fspec.x_domain, L, rng.next_u64());
      lib.add(std::move(e));
    }
  } else if (config.experiment == "length") {
    for (int d = 0; d <= config.max_train_degree; ++d)
      for (int i = 0; i < config.per_degree; ++i) {
        TaskEntry e;
        e.desc = sample_polynomial(d, rng);
        e.label = "deg" + std::to_string(d);
        e.data = split_context_query(e.desc, nullptr, nullptr, kPolyDomain, L, rng.next_u64());
        lib.add(std::move(e));
      }
  } else if (config.experiment == "composition" || config.experiment == "em_composition" ||
             config.experiment == "multistep_composition") {
    std::map<PKind, std::vector<int>> kind_rows;
    for (PKind k : {PKind::Poly, PKind::Sin, PKind::Tanh})
      for (int i = 0; i < config.primitives_per_kind; ++i)
        kind_rows[k].push_back(lib.primitives.add(Primitive::sample(k, rng)));
    for (const auto& [inner_k, outer_k] : seen_pairs_inner_outer())
      for (int i = 0; i < config.per_recipe; ++i) {
        TaskEntry e;
        e.desc.kind = TaskDescriptor::Kind::Composition;
        e.desc.recipe = {
            kind_rows[inner_k][static_cast<size_t>(rng.uniform_int(config.primitives_per_kind))],
            kind_rows[outer_k][static_cast<size_t>(rng.uniform_int(config.primitives_per_kind))]};
        e.label = Primitive::kind_name(outer_k) + "(" + Primitive::kind_name(inner_k) + ")";
        e.data = split_context_query(e.desc, nullptr, &lib.primitives, kPolyDomain, L, rng.next_u64());
        lib.add(std::move(e));
      }
  } else if (config.experiment == "parity") {
    for (int sz = 2; sz <= 5; ++sz)
      for (auto& m : masks_of_size(kParityBits, sz)) {
        TaskEntry e;
        e.desc.kind = TaskDescriptor::Kind::Parity;
        e.desc.parity_mask = std::move(m);
        e.label = "s" + std::to_string(sz);
        lib.add(std::move(e));
      }
  } else {
    throw std::invalid_argument("build_library: unsupported experiment " + config.experiment);
  }
  return lib;
}

namespace {

json scaler_to_json(const Scaler& s) {
  return json{{"x_off", s.x_off}, {"x_scale", s.x_scale}, {"y_off", s.y_off},
              {"y_scale", s.y_scale}, {"d_scale", s.d_scale}};
}

Scaler scaler_from_json(const json& j) {
  Scaler s;
  s.x_off = j.at("x_off");
  s.x_scale = j.at("x_scale");
  s.y_off = j.at("y_off");
  s.y_scale = j.at("y_scale");
  s.d_scale = j.at("d_scale");
  return s;
}

void save_pca_json(const PcaModel& pca, const std::string& path) {
  json j;
  j["mean"] = std::vector<double>(pca.mean.data(), pca.mean.data() + pca.mean.size());
  j["explained_variance"] = std::vector<double>(
      pca.explained_variance.data(), pca.explained_variance.data() + pca.explained_variance.size());
  json comps = json::array();
  for (long r = 0; r < pca.components.rows(); ++r)
    comps.push_back(std::vector<double>(pca.components.row(r).data(),
                                        pca.components.row(r).data() + pca.components.cols()));
  j["components"] = std::move(comps);
  atomic_write_text(path, j.dump());
}

PcaModel load_pca_json(const std::string& path) {
  json j = json::parse(read_text(path));
  PcaModel pca;
  const auto mean = j.at("mean").get<std::vector<double>>();
  pca.mean = Eigen::Map<const VectorXd>(mean.data(), static_cast<long>(mean.size()));
  const auto ev = j.at("explained_variance").get<std::vector<double>>();
  pca.explained_variance = Eigen::Map<const VectorXd>(ev.data(), static_cast<long>(ev.size()));
  const auto& comps = j.at("components");
  pca.components.resize(static_cast<long>(comps.size()), pca.mean.size());
  for (size_t r = 0; r < comps.size(); ++r) {
    const auto row = comps[r].get<std::vector<double>>();
    pca.components.row(static_cast<long>(r)) =
        Eigen::Map<const VectorXd>(row.data(), static_cast<long>(row.size())).transpose();
  }
  return pca;
}

void save_embeddings_csv(const TaskLibrary& lib, const std::string& path) {
  CsvTable t;
  t.header = {"task_id", "label"};
  const int z = lib.tasks.empty() ? 0 : static_cast<int>(lib.tasks.front().embedding.size());
  for (int k = 0; k < z; ++k) t.header.push_back("z" + std::to_string(k + 1));
  for (const auto& task : lib.tasks) {
    std::vector<std::string> row = {std::to_string(task.id), task.label};
    for (int k = 0; k < z; ++k) row.push_back(format_double(task.embedding[k]));
    t.rows.push_back(std::move(row));
  }
  write_csv(t, path);
}

}  // namespace

void train_bundle(const ExperimentConfig& config, uint64_t seed, const std::string& dir) {
  config.validate();
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  json meta;
  meta["experiment"] = config.experiment;
  meta["grid_len"] = config.grid_len;
  meta["latent_dim"] = config.latent_dim;
  meta["retrieval_k"] = config.retrieval_k;
  meta["seed"] = seed;
  meta["config_hash"] = config.hash();

  if (config.experiment == "parameter") {
    ParamModels m = train_parameter_models(config, seed);
    save_library_jsonl(m.lib, dir + "/library.jsonl");
    save_embeddings_csv(m.lib, dir + "/embeddings.csv");
    save_model_json(m.geo.probe, dir + "/probe.json", config.hash());
    save_pca_json(m.geo.pca, dir + "/pca.json");
    save_model_json(m.psi, dir + "/psi.json", config.hash());
    meta["family"] = config.family;
    meta["scaler"] = scaler_to_json(m.scaler);
  } else if (config.experiment == "parity") {
    const uint64_t root = mix_seed(seed, std::hash<std::string>{}(config.name) ^ 0x33);
    std::vector<std::vector<int>> anchor_masks;
    for (int sz = 2; sz <= 4; ++sz)
      for (auto& mk : masks_of_size(kParityBits, sz)) anchor_masks.push_back(std::move(mk));
    const OperatorSpec pspec = OperatorSpec::parity();
    const PairDataset pairs =
        build_parity_pairs(pspec, anchor_masks, config.parity_train_examples, mix_seed(root, 1));
    Rng psi_rng(mix_seed(root, 2));
    const MlpModel psi = train_operator(
        pspec, pairs, to_train_config(config.operator_train, mix_seed(root, 3)), psi_rng);
    TaskLibrary lib = build_library(config, seed);
    save_library_jsonl(lib, dir + "/library.jsonl");
    save_model_json(psi, dir + "/psi.json", config.hash());
    meta["scaler"] = scaler_to_json(Scaler{});
  } else {
    throw std::invalid_argument("train_bundle: supported experiments are parameter and parity");
  }
  atomic_write_text(dir + "/meta.json", meta.dump(2));
}

void infer_from_bundle(const std::string& bundle_dir, const std::string& target_json_path,
                       const std::string& out_path, bool emit_candidate_scores) {
  const json meta = json::parse(read_text(bundle_dir + "/meta.json"));
  const std::string experiment = meta.at("experiment");
  const json target = json::parse(read_text(target_json_path));

  json result;
  if (experiment == "parameter") {
    TaskLibrary lib = load_library_jsonl(bundle_dir + "/library.jsonl");
    // Re-attach projected embeddings.
    const CsvTable emb = read_csv(bundle_dir + "/embeddings.csv");
    for (const auto& row : emb.rows) {
      const int id = std::stoi(row.at(0));
      VectorXd z(static_cast<long>(row.size()) - 2);
      for (size_t k = 2; k < row.size(); ++k) z[static_cast<long>(k) - 2] = std::stod(row.at(k));
      lib.tasks.at(static_cast<size_t>(id)).embedding = z;
    }
    const MlpModel probe = load_model_json(bundle_dir + "/probe.json");
    const PcaModel pca = load_pca_json(bundle_dir + "/pca.json");
    const MlpModel psi = load_model_json(bundle_dir + "/psi.json");
    const Scaler scaler = scaler_from_json(meta.at("scaler"));
    const int L = meta.at("grid_len");
    const OperatorSpec spec = OperatorSpec::parameter(L);

    std::vector<VectorXd> curves, embeddings;
    std::vector<int> rows;
    for (const auto& t : lib.tasks) {
      curves.push_back(full_curve(t));
      embeddings.push_back(t.embedding);
      rows.push_back(t.id);
    }
    ParamInferContext ictx;
    ictx.psi = &psi;
    ictx.spec = &spec;
    ictx.anchor_curves = &curves;
    ictx.anchor_embeddings = &embeddings;
    ictx.anchor_ids = &rows;
    ictx.probe.adapt_steps = 50;
    ictx.probe.pretrained = &probe;
    ictx.pca = &pca;
    ictx.scaler = scaler;

    TaskDataset ds;
    ds.grid_x = lib.tasks.front().data.grid_x;
    for (const auto& p : target.at("context"))
      ds.context.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    // Context positions snap to the nearest grid points.
    for (const auto& p : ds.context) {
      int best = 0;
      for (int q = 0; q < static_cast<int>(ds.grid_x.size()); ++q)
        if (std::abs(ds.grid_x[static_cast<size_t>(q)] - p.first) <
            std::abs(ds.grid_x[static_cast<size_t>(best)] - p.first))
          best = q;
      ds.context_idx.push_back(best);
    }
    const int n_steps = target.value("steps", 1);
    const ParamPrediction pred = multistep_extrapolate(ictx, ds, n_steps);

    result["decomposition"] = {{"anchor_ids", {pred.anchor1, pred.anchor2}},
                               {"phi", {pred.d1, pred.d2}}};
    json preds = json::array();
    for (const auto& xq : target.at("query_x")) {
      const double x = xq.get<double>();
      // Interpolate the predicted grid curve at the query point.
      const std::vector<double>& g = ds.grid_x;
      double y;
      if (x <= g.front())
        y = pred.curve[0];
      else if (x >= g.back())
        y = pred.curve[pred.curve.size() - 1];
      else {
        const auto it = std::upper_bound(g.begin(), g.end(), x);
        const long hi = std::distance(g.begin(), it), lo = hi - 1;
        const double w = (x - g[static_cast<size_t>(lo)]) / (g[static_cast<size_t>(hi)] - g[static_cast<size_t>(lo)]);
        y = (1.0 - w) * pred.curve[lo] + w * pred.curve[hi];
      }
      preds.push_back({x, y});
    }
    result["predictions"] = std::move(preds);
  } else if (experiment == "parity") {
    TaskLibrary lib = load_library_jsonl(bundle_dir + "/library.jsonl");
    const MlpModel psi = load_model_json(bundle_dir + "/psi.json");
    const OperatorSpec spec = OperatorSpec::parity();
    std::vector<std::vector<int>> masks;
    for (const auto& t : lib.tasks) masks.push_back(t.desc.parity_mask);
    std::vector<std::pair<std::vector<int>, int>> context;
    for (const auto& p : target.at("context"))
      context.emplace_back(p.at("bits").get<std::vector<int>>(), p.at("label").get<int>());
    std::vector<std::vector<int>> queries;
    for (const auto& q : target.at("query_bits")) queries.push_back(q.get<std::vector<int>>());
    const ParitySearchResult r = parity_search(
        [&](const std::vector<int>& bits, int src, int bv) {
          return parity_logit(psi, spec, bits, src, bv);
        },
        masks, context, queries);
    result["decomposition"] = {{"anchor_mask", r.mask}, {"bit_index", r.bit_index}};
    result["context_score"] = r.context_score;
    result["predictions"] = r.query_predictions;
  } else {
    throw std::invalid_argument("infer_from_bundle: unsupported bundle experiment " + experiment);
  }
  if (emit_candidate_scores) result["note"] = "candidate scores available for discrete searches only";
  atomic_write_text(out_path, result.dump(2));
}

}  // namespace rte
