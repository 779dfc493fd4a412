#include <cmath>

#include "doctest.h"
#include "rte/inference.hpp"

using namespace rte;

TEST_CASE("verify_rank returns the argmin with deterministic tie-breaks") {
  std::vector<DecompositionCandidate> cands(5);
  for (int i = 0; i < 5; ++i) cands[static_cast<size_t>(i)].anchor_ids = {i};
  const std::vector<double> scores = {3.0, 1.0, 1.0, 2.0, 5.0};
  const int best = verify_rank(cands, [&](const DecompositionCandidate& c) {
    return scores[static_cast<size_t>(c.anchor_ids[0])];
  });
  CHECK(best == 1);  // tie between 1 and 2 -> earlier enumeration wins
  for (const auto& c : cands)
    CHECK(cands[static_cast<size_t>(best)].context_score <= c.context_score);
  CHECK(cands[static_cast<size_t>(best)].rank == 0);

  // Single candidate is returned regardless of score.
  std::vector<DecompositionCandidate> one(1);
  one[0].anchor_ids = {7};
  CHECK(verify_rank(one, [](const DecompositionCandidate&) { return 1e9; }) == 0);

  std::vector<DecompositionCandidate> none;
  CHECK_THROWS_AS(verify_rank(none, [](const DecompositionCandidate&) { return 0.0; }),
                  std::invalid_argument);

  // Adding the ground truth never worsens the selected score.
  std::vector<DecompositionCandidate> with_gt = cands;
  DecompositionCandidate gt;
  gt.anchor_ids = {99};
  with_gt.push_back(gt);
  const int best2 = verify_rank(with_gt, [&](const DecompositionCandidate& c) {
    return c.anchor_ids[0] == 99 ? 0.0 : scores[static_cast<size_t>(c.anchor_ids[0])];
  });
  CHECK(with_gt[static_cast<size_t>(best2)].context_score <=
        cands[static_cast<size_t>(best)].context_score);
}

namespace {

/// Exact XOR operator emitting saturated logits (BCE is exactly zero when
/// every context label matches).
double xor_logit(const std::vector<int>& bits, int src, int bitval) {
  (void)bits;
  return (src ^ bitval) ? 1e4 : -1e4;
}

std::vector<std::vector<int>> all_masks(int lo, int hi) {
  std::vector<std::vector<int>> out;
  for (int bits = 0; bits < 256; ++bits) {
    const int pc = __builtin_popcount(static_cast<unsigned>(bits));
    if (pc < lo || pc > hi) continue;
    std::vector<int> mask;
    for (int b = 0; b < 8; ++b)
      if (bits & (1 << b)) mask.push_back(b);
    out.push_back(std::move(mask));
  }
  return out;
}

}  // namespace

TEST_CASE("parity_search recovers an exact decomposition with the XOR oracle") {
  const auto anchors = all_masks(2, 5);
  Rng rng(3);
  int exact_hits = 0;
  const int n_tasks = 50;
  for (int t = 0; t < n_tasks; ++t) {
    // Hidden |S| = 6 task.
    std::vector<int> mask;
    while (mask.size() != 6) {
      const int bits = rng.uniform_int(256);
      if (__builtin_popcount(static_cast<unsigned>(bits)) != 6) continue;
      mask.clear();
      for (int b = 0; b < 8; ++b)
        if (bits & (1 << b)) mask.push_back(b);
    }
    std::vector<std::pair<std::vector<int>, int>> ctx;
    for (int c = 0; c < 12; ++c) {
      std::vector<int> s(8);
      for (auto& b : s) b = rng.uniform_int(2);
      ctx.emplace_back(s, parity_eval(mask, s));
    }
    std::vector<std::vector<int>> queries;
    std::vector<int> truth;
    for (int q = 0; q < 24; ++q) {
      std::vector<int> s(8);
      for (auto& b : s) b = rng.uniform_int(2);
      truth.push_back(parity_eval(mask, s));
      queries.push_back(std::move(s));
    }

    const ParitySearchResult r = parity_search(xor_logit, anchors, ctx, queries);
    // The selected pair reproduces every context label (score exactly 0).
    CHECK(r.context_score == 0.0);
    std::vector<int> combined = r.mask;
    combined.push_back(r.bit_index);
    std::sort(combined.begin(), combined.end());

    // Brute-force identifiability: is (S*, any k) the unique zero-error
    // explanation of the context among all candidates?
    bool unique = true;
    for (const auto& cand : anchors) {
      for (int k = 0; k < 8; ++k) {
        if (std::find(cand.begin(), cand.end(), k) != cand.end()) continue;
        std::vector<int> ext = cand;
        ext.push_back(k);
        std::sort(ext.begin(), ext.end());
        if (ext == combined) continue;
        bool consistent = true;
        for (const auto& [bits, label] : ctx)
          if (parity_eval(ext, bits) != label) {
            consistent = false;
            break;
          }
        if (consistent && ext != std::vector<int>(mask)) unique = false;
      }
    }
    int correct = 0;
    for (size_t q = 0; q < queries.size(); ++q)
      if (r.query_predictions[q] == truth[q]) ++correct;
    if (unique) CHECK(correct == static_cast<int>(queries.size()));
    if (combined == mask) ++exact_hits;
  }
  CHECK(exact_hits > n_tasks / 2);

  // Ambiguous two-example context: deterministic result across reruns.
  std::vector<std::pair<std::vector<int>, int>> tiny = {
      {{1, 0, 0, 0, 0, 0, 0, 0}, 1}, {{0, 0, 0, 0, 0, 0, 0, 0}, 0}};
  const ParitySearchResult a = parity_search(xor_logit, anchors, tiny, {});
  const ParitySearchResult b = parity_search(xor_logit, anchors, tiny, {});
  CHECK(a.mask == b.mask);
  CHECK(a.bit_index == b.bit_index);
  CHECK(a.context_score == 0.0);

  CHECK_THROWS_AS(parity_search(xor_logit, {}, tiny, {}), std::invalid_argument);
}

TEST_CASE("interp_compose: identity slots are exact on and off the grid nodes") {
  const std::vector<double> grid = make_grid({-5.0, 5.0}, 16);
  PrimitiveLibrary prims;
  Primitive ident;
  ident.kind = Primitive::Kind::Identity;
  const int id = prims.add(ident);
  Primitive sq;
  sq.kind = Primitive::Kind::Poly;
  sq.params = {0.0, 0.0, 0.04};
  const int sq_id = prims.add(sq);

  std::vector<VectorXd> curves;
  for (int p = 0; p < prims.size(); ++p) curves.push_back(primitive_curve(prims.at(p), grid));

  // Identity interpolation is exact everywhere (piecewise-linear through y=x).
  for (double x : {-5.0, -1.3, 0.0, 2.71, 5.0})
    CHECK(interp_compose({id}, grid, curves, x) == doctest::Approx(x).epsilon(1e-12));

  // Appending identity slots reproduces the shallower composition on grid points.
  for (double x : grid) {
    const double direct = interp_compose({sq_id}, grid, curves, x);
    CHECK(interp_compose({sq_id, id}, grid, curves, x) == doctest::Approx(direct));
    CHECK(interp_compose({id, sq_id}, grid, curves, x) == doctest::Approx(direct));
  }

  // Out-of-range inputs clamp to the curve ends and are reported.
  bool clamped = false;
  interp_compose({sq_id}, grid, curves, 7.0, &clamped);
  CHECK(clamped);
}

TEST_CASE("depth-1 k=1 compositional search is a nearest-curve lookup") {
  const std::vector<double> grid = make_grid({-5.0, 5.0}, 16);
  PrimitiveLibrary prims;
  for (double slope : {0.5, 1.0, 2.0}) {
    Primitive p;
    p.kind = Primitive::Kind::Poly;
    p.params = {0.0, slope, 0.0};
    prims.add(p);
  }
  std::vector<VectorXd> curves;
  std::vector<int> ids;
  std::vector<VectorXd> embs;
  for (int p = 0; p < prims.size(); ++p) {
    curves.push_back(primitive_curve(prims.at(p), grid));
    ids.push_back(p);
    embs.push_back(VectorXd::Constant(2, static_cast<double>(p)));
  }

  // Decomposer with zeroed weights always predicts the origin latent, whose
  // nearest library item is primitive 0.
  DecomposerSpec spec = DecomposerSpec::multistep(16, 2, 1);
  Decomposer dec;
  dec.spec = spec;
  Rng rng(4);
  dec.net = MlpModel::xavier(spec.net_sizes(), rng);
  for (auto& w : dec.net.weights) w.setZero();
  for (auto& b : dec.net.biases) b.setZero();

  std::vector<std::pair<double, double>> ctx;
  for (double x : {-2.0, 0.0, 2.0}) ctx.emplace_back(x, 0.5 * x);
  const ComposeSearchResult r =
      multistep_compose_search(dec, embs, ids, grid, curves, ctx, {1.0, 3.0}, 1);
  CHECK(r.recipe == std::vector<int>{0});
  CHECK(r.query_pred[0] == doctest::Approx(0.5));
  CHECK(r.query_pred[1] == doctest::Approx(1.5));
  CHECK(r.context_score == doctest::Approx(0.0));
}

namespace {

struct TinyParamPipeline {
  TaskLibrary lib;
  FamilySpec fspec = default_family_spec(Family::Quadratic);
  Scaler scaler;
  MlpModel probe;
  PcaModel pca;
  OperatorSpec spec = OperatorSpec::parameter(32);
  MlpModel psi;
  std::vector<VectorXd> curves, embeddings;
  std::vector<int> rows;

  ParamInferContext context() const {
    ParamInferContext c;
    c.psi = &psi;
    c.spec = &spec;
    c.anchor_curves = &curves;
    c.anchor_embeddings = &embeddings;
    c.anchor_ids = &rows;
    c.probe.pretrained = &probe;
    c.probe.seed = 555;
    c.pca = &pca;
    c.scaler = scaler;
    return c;
  }
};

TinyParamPipeline make_tiny_param_pipeline() {
  TinyParamPipeline p;
  Rng rng(61);
  for (int i = 0; i < 48; ++i) {
    TaskEntry e;
    e.desc = sample_task(p.fspec, i % 2 == 0 ? Region::F1_1 : Region::F1_2, rng);
    e.data = split_context_query(e.desc, &p.fspec, nullptr, p.fspec.x_domain, 32, rng.next_u64());
    p.lib.add(std::move(e));
  }
  std::vector<double> ys;
  for (const auto& t : p.lib.tasks)
    for (const auto& pt : t.data.context) ys.push_back(pt.second);
  p.scaler = Scaler::fit(p.fspec.x_domain, ys);

  MatrixXd px(1, 20 * 32), py(1, 20 * 32);
  long col = 0;
  for (int i = 0; i < 20; ++i) {
    const TaskDescriptor d = sample_task(p.fspec, i % 2 == 0 ? Region::F1_1 : Region::F1_2, rng);
    for (double x : make_grid(p.fspec.x_domain, 32)) {
      px(0, col) = p.scaler.sx(x);
      py(0, col) = p.scaler.sy(eval_family(p.fspec, d, x));
      ++col;
    }
  }
  TrainConfig pre;
  pre.epochs = 20;
  pre.batch_size = 128;
  pre.seed = 1;
  p.probe = pretrain_probe({1, 64, 64, 1}, px, py, pre, rng);

  std::vector<VectorXd> raw;
  for (auto& t : p.lib.tasks) {
    ProbeConfig pc;
    pc.pretrained = &p.probe;
    pc.seed = 777;
    raw.push_back(probe_embed(p.scaler.scale_dataset(t.data), pc));
  }
  p.pca = PcaModel::fit(raw, 8);
  for (size_t i = 0; i < p.lib.tasks.size(); ++i) {
    p.lib.tasks[i].embedding = p.pca.project(raw[i]);
    p.embeddings.push_back(p.lib.tasks[i].embedding);
    p.curves.push_back(full_curve(p.lib.tasks[i]));
    p.rows.push_back(static_cast<int>(i));
  }
  p.scaler.d_scale = 1.0;

  ParameterPairOptions opt;
  opt.pairs_per_target = 1;
  opt.seed = 18;
  const PairDataset pairs =
      build_parameter_pairs(p.spec, p.lib, PairSource::ProxyDifference, opt, p.scaler);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 512;
  cfg.seed = 19;
  Rng psi_rng(20);
  p.psi = train_operator(p.spec, pairs, cfg, psi_rng);
  return p;
}

}  // namespace

TEST_CASE("strategy A is bitwise identical to a single ghost-context step") {
  const TinyParamPipeline p = make_tiny_param_pipeline();
  const ParamInferContext ctx = p.context();

  Rng rng(71);
  FamilySpec fspec = p.fspec;
  for (int t = 0; t < 5; ++t) {
    const TaskDescriptor d = sample_task(fspec, Region::F2, rng);
    const TaskDataset data =
        split_context_query(d, &fspec, nullptr, fspec.x_domain, 32, rng.next_u64());
    const ParamPrediction a = strategy_a_infer(ctx, data);
    const ParamPrediction b = multistep_extrapolate(ctx, data, 1);
    CHECK((a.curve - b.curve).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.anchor1 == b.anchor1);
    CHECK(a.anchor2 == b.anchor2);
    CHECK(a.d1 == b.d1);
    CHECK(a.d2 == b.d2);
  }

  CHECK_THROWS_AS(multistep_extrapolate(ctx, p.lib.tasks[0].data, 0), std::invalid_argument);
}

TEST_CASE("ghost contexts interpolate linearly and step shifts sum to the full shift") {
  const TinyParamPipeline p = make_tiny_param_pipeline();
  const ParamInferContext ctx = p.context();

  Rng rng(72);
  const TaskDescriptor d = sample_task(p.fspec, Region::F4, rng);
  const TaskDataset data =
      split_context_query(d, &p.fspec, nullptr, p.fspec.x_domain, 32, rng.next_u64());
  const int n_steps = 3;
  const ParamPrediction pred = multistep_extrapolate(ctx, data, n_steps);

  CHECK(pred.plan.n_steps == n_steps);
  VectorXd total = VectorXd::Zero(2);
  for (const auto& s : pred.plan.step_shifts) total += s;
  CHECK(std::abs(total[0] - pred.d1) < 1e-9);
  CHECK(std::abs(total[1] - pred.d2) < 1e-9);

  // Ghost context at step t is (1 - t/N) anchor + (t/N) target in scaled space.
  const VectorXd anchor_scaled =
      ctx.scaler.sy_vec((*ctx.anchor_curves)[static_cast<size_t>(pred.anchor1)]);
  VectorXd anchor_at_ctx(static_cast<long>(data.context_idx.size()));
  for (size_t i = 0; i < data.context_idx.size(); ++i)
    anchor_at_ctx[static_cast<long>(i)] = anchor_scaled[data.context_idx[i]];
  const VectorXd target_ctx = ctx.scaler.sy_vec(data.context_y());
  for (int t = 1; t <= n_steps; ++t) {
    const double r = static_cast<double>(t) / n_steps;
    const VectorXd expect = (1.0 - r) * anchor_at_ctx + r * target_ctx;
    CHECK((pred.plan.ghost_contexts[static_cast<size_t>(t - 1)] - expect).cwiseAbs().maxCoeff() <
          1e-12);
  }
  // The last step's ghost context is exactly the target context.
  CHECK((pred.plan.ghost_contexts.back() - target_ctx).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("em self-labeling pins supervised tasks and excludes the identity") {
  const int L = 16;
  Rng rng(81);
  TaskLibrary lib;
  std::vector<int> pool;
  for (int i = 0; i < 5; ++i)
    pool.push_back(lib.primitives.add(Primitive::sample(Primitive::Kind::Poly, rng)));
  Primitive ident;
  ident.kind = Primitive::Kind::Identity;
  const int id_prim = lib.primitives.add(ident);
  pool.push_back(id_prim);

  for (int i = 0; i < 12; ++i) {
    TaskEntry e;
    e.desc.kind = TaskDescriptor::Kind::Composition;
    e.desc.recipe = {pool[static_cast<size_t>(rng.uniform_int(5))], pool[static_cast<size_t>(rng.uniform_int(5))]};
    e.data = split_context_query(e.desc, nullptr, &lib.primitives, kPolyDomain, L, rng.next_u64());
    lib.add(std::move(e));
  }

  const OperatorSpec spec = OperatorSpec::composition(L);
  Scaler scaler;
  scaler.x_scale = 5.0;
  EmConfig cfg;
  cfg.warmup = EmConfig::Warmup::PartialLabels;
  cfg.label_fraction = 0.25;
  cfg.rounds = 1;
  cfg.psi_train.epochs = 8;
  cfg.psi_train.batch_size = 16;
  cfg.seed = 5;

  TaskLibrary lib_copy = lib;
  const EmResult res = em_self_label(spec, lib_copy, pool, id_prim, cfg, scaler);
  CHECK(res.round_accuracy.size() == 1);
  int supervised_count = 0;
  for (size_t i = 0; i < lib.tasks.size(); ++i) {
    if (res.supervised[i]) {
      ++supervised_count;
      CHECK(res.pseudo_labels[i][0] == lib.tasks[i].desc.recipe[0]);
      CHECK(res.pseudo_labels[i][1] == lib.tasks[i].desc.recipe[1]);
    }
    // Assigned labels never contain the identity primitive.
    CHECK(res.pseudo_labels[i][0] != id_prim);
    CHECK(res.pseudo_labels[i][1] != id_prim);
    CHECK(res.pseudo_labels[i][0] >= 0);
  }
  CHECK(supervised_count == 3);

  CHECK_THROWS_WITH_AS(em_self_label(spec, lib_copy, {id_prim}, id_prim, cfg, scaler),
                       doctest::Contains("identity"), std::invalid_argument);
}
