#include "rte/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace rte {

int verify_rank(std::vector<DecompositionCandidate>& candidates,
                const std::function<double(const DecompositionCandidate&)>& score) {
  if (candidates.empty()) throw std::invalid_argument("verify_rank: empty candidate set");
  int best = 0;
  for (size_t i = 0; i < candidates.size(); ++i) {
    candidates[i].context_score = score(candidates[i]);
    if (candidates[i].context_score < candidates[static_cast<size_t>(best)].context_score)
      best = static_cast<int>(i);
  }
  std::vector<int> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return candidates[static_cast<size_t>(a)].context_score <
           candidates[static_cast<size_t>(b)].context_score;
  });
  for (size_t r = 0; r < order.size(); ++r) candidates[static_cast<size_t>(order[r])].rank = static_cast<int>(r);
  return best;
}

VectorXd embed_target(const ParamInferContext& ctx, const TaskDataset& target) {
  const TaskDataset scaled = ctx.scaler.scale_dataset(target);
  return ctx.pca->project(probe_embed(scaled, ctx.probe));
}

namespace {

MatrixXd psi_curve_inputs(const ParamInferContext& ctx, const VectorXd& grid_scaled,
                          const VectorXd& y1, const VectorXd& y2, const VectorXd& ghost,
                          double d1, double d2) {
  OperatorInputs in;
  in.anchors = {y1, y2};
  in.context_head = ghost;
  in.phi = {(VectorXd(2) << d1, d2).finished()};
  MatrixXd cols(ctx.spec->input_dim(), grid_scaled.size());
  for (long q = 0; q < grid_scaled.size(); ++q) {
    in.x = VectorXd::Constant(1, grid_scaled[q]);
    cols.col(q) = build_operator_input(*ctx.spec, in);
  }
  return cols;
}

}  // namespace

ParamPrediction infer_with_anchors(const ParamInferContext& ctx, const TaskDataset& target,
                                   const VectorXd& target_embedding, int row1, int row2,
                                   bool zero_shift, int n_steps) {
  if (n_steps < 1) throw std::invalid_argument("multistep: step count must be >= 1");
  const auto& curves = *ctx.anchor_curves;
  const auto& embs = *ctx.anchor_embeddings;

  ParamPrediction pred;
  pred.anchor1 = (*ctx.anchor_ids)[static_cast<size_t>(row1)];
  pred.anchor2 = (*ctx.anchor_ids)[static_cast<size_t>(row2)];
  pred.target_embedding = target_embedding;
  pred.d1 = zero_shift ? 0.0 : (embs[static_cast<size_t>(row1)] - target_embedding).norm() / ctx.scaler.d_scale;
  pred.d2 = zero_shift ? 0.0 : (embs[static_cast<size_t>(row2)] - target_embedding).norm() / ctx.scaler.d_scale;

  const int L = ctx.spec->grid_len;
  VectorXd grid_scaled(L);
  for (int q = 0; q < L; ++q) grid_scaled[q] = ctx.scaler.sx(target.grid_x[static_cast<size_t>(q)]);

  VectorXd y1 = ctx.scaler.sy_vec(curves[static_cast<size_t>(row1)]);
  VectorXd y2 = ctx.scaler.sy_vec(curves[static_cast<size_t>(row2)]);

  // Anchor observations at the target's context positions (shared grid).
  VectorXd anchor_at_ctx(static_cast<long>(target.context_idx.size()));
  for (size_t i = 0; i < target.context_idx.size(); ++i)
    anchor_at_ctx[static_cast<long>(i)] = y1[target.context_idx[i]];
  const VectorXd target_ctx = ctx.scaler.sy_vec(target.context_y());

  MultiStepPlan plan;
  plan.n_steps = n_steps;
  const double sd1 = pred.d1 / n_steps, sd2 = pred.d2 / n_steps;

  VectorXd curve_scaled;
  for (int t = 1; t <= n_steps; ++t) {
    const double r = static_cast<double>(t) / n_steps;
    const VectorXd ghost = (1.0 - r) * anchor_at_ctx + r * target_ctx;
    curve_scaled = ctx.psi->forward(psi_curve_inputs(ctx, grid_scaled, y1, y2, ghost, sd1, sd2))
                       .row(0)
                       .transpose();
    plan.step_shifts.push_back((VectorXd(2) << sd1, sd2).finished());
    plan.ghost_contexts.push_back(ghost);
    plan.intermediate.push_back(curve_scaled);
    y1 = curve_scaled;
    y2 = curve_scaled;
  }

  pred.curve = ctx.scaler.unsy_vec(curve_scaled);
  pred.plan = std::move(plan);
  return pred;
}

ParamPrediction multistep_extrapolate(const ParamInferContext& ctx, const TaskDataset& target,
                                      int n_steps) {
  if (n_steps < 1) throw std::invalid_argument("multistep_extrapolate: step count must be >= 1");
  const VectorXd theta = embed_target(ctx, target);
  std::vector<int> rows(ctx.anchor_embeddings->size());
  std::iota(rows.begin(), rows.end(), 0);
  auto ranked = nearest_anchor(theta, *ctx.anchor_embeddings, rows, 2);
  if (ranked.size() < 2)
    throw std::invalid_argument("multistep_extrapolate: need at least two library anchors");
  return infer_with_anchors(ctx, target, theta, ranked[0].first, ranked[1].first, false, n_steps);
}

ParamPrediction strategy_a_infer(const ParamInferContext& ctx, const TaskDataset& target) {
  return multistep_extrapolate(ctx, target, 1);
}

double interp_compose(const std::vector<int>& recipe_rows, const std::vector<double>& grid,
                      const std::vector<VectorXd>& curves, double x, bool* clamped) {
  double v = x;
  for (int row : recipe_rows) {
    const VectorXd& c = curves[static_cast<size_t>(row)];
    if (v <= grid.front()) {
      if (v < grid.front() && clamped) *clamped = true;
      v = c[0];
      continue;
    }
    if (v >= grid.back()) {
      if (v > grid.back() && clamped) *clamped = true;
      v = c[c.size() - 1];
      continue;
    }
    const auto it = std::upper_bound(grid.begin(), grid.end(), v);
    const long hi = std::distance(grid.begin(), it);
    const long lo = hi - 1;
    const double w = (v - grid[static_cast<size_t>(lo)]) /
                     (grid[static_cast<size_t>(hi)] - grid[static_cast<size_t>(lo)]);
    v = (1.0 - w) * c[lo] + w * c[hi];
  }
  return v;
}

ComposeSearchResult multistep_compose_search(
    const Decomposer& dec, const std::vector<VectorXd>& primitive_embeddings,
    const std::vector<int>& primitive_ids, const std::vector<double>& grid,
    const std::vector<VectorXd>& primitive_curves,
    const std::vector<std::pair<double, double>>& context, const std::vector<double>& query_x,
    int k) {
  if (primitive_curves.size() != primitive_ids.size() ||
      primitive_embeddings.size() != primitive_ids.size())
    throw std::invalid_argument("multistep_compose_search: misaligned primitive arrays");

  const DecomposeResult latents = decompose(dec, context);
  auto candidates =
      propose_candidates(dec.spec, latents.latents, primitive_embeddings, primitive_ids, k);

  // Map ids back to rows for curve lookup.
  std::vector<int> id_to_row;
  {
    int max_id = 0;
    for (int id : primitive_ids) max_id = std::max(max_id, id);
    id_to_row.assign(static_cast<size_t>(max_id) + 1, -1);
    for (size_t r = 0; r < primitive_ids.size(); ++r)
      id_to_row[static_cast<size_t>(primitive_ids[r])] = static_cast<int>(r);
  }
  auto rows_of = [&](const DecompositionCandidate& c) {
    std::vector<int> rows;
    for (int id : c.anchor_ids) rows.push_back(id_to_row[static_cast<size_t>(id)]);
    return rows;
  };

  const int best = verify_rank(candidates, [&](const DecompositionCandidate& c) {
    const std::vector<int> rows = rows_of(c);
    double mse = 0.0;
    for (const auto& [x, y] : context) {
      const double p = interp_compose(rows, grid, primitive_curves, x);
      mse += (p - y) * (p - y);
    }
    return mse / static_cast<double>(context.size());
  });

  ComposeSearchResult result;
  result.recipe = candidates[static_cast<size_t>(best)].anchor_ids;
  result.context_score = candidates[static_cast<size_t>(best)].context_score;
  const std::vector<int> rows = rows_of(candidates[static_cast<size_t>(best)]);
  result.query_pred.resize(static_cast<long>(query_x.size()));
  bool clamped = false;
  for (size_t i = 0; i < query_x.size(); ++i)
    result.query_pred[static_cast<long>(i)] =
        interp_compose(rows, grid, primitive_curves, query_x[i], &clamped);
  result.clamped = clamped;
  return result;
}

ParitySearchResult parity_search(
    const std::function<double(const std::vector<int>&, int, int)>& logit_fn,
    const std::vector<std::vector<int>>& anchor_masks,
    const std::vector<std::pair<std::vector<int>, int>>& context,
    const std::vector<std::vector<int>>& query_bits) {
  if (anchor_masks.empty()) throw std::invalid_argument("parity_search: empty mask library");

  auto bce = [](double z, double y) {
    return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  };

  double best_score = std::numeric_limits<double>::infinity();
  int best_mask = -1, best_k = -1;
  for (size_t m = 0; m < anchor_masks.size(); ++m) {
    const auto& mask = anchor_masks[m];
    for (int k = 0; k < kParityBits; ++k) {
      if (std::find(mask.begin(), mask.end(), k) != mask.end()) continue;
      double score = 0.0;
      for (const auto& [bits, label] : context) {
        const int src = parity_eval(mask, bits);
        score += bce(logit_fn(bits, src, bits[static_cast<size_t>(k)]), static_cast<double>(label));
      }
      if (!context.empty()) score /= static_cast<double>(context.size());
      if (score < best_score) {
        best_score = score;
        best_mask = static_cast<int>(m);
        best_k = k;
      }
    }
  }

  ParitySearchResult r;
  r.mask = anchor_masks[static_cast<size_t>(best_mask)];
  r.bit_index = best_k;
  r.context_score = best_score;
  for (const auto& bits : query_bits) {
    const int src = parity_eval(r.mask, bits);
    const double z = logit_fn(bits, src, bits[static_cast<size_t>(best_k)]);
    r.query_predictions.push_back(z >= 0.0 ? 1 : 0);
  }
  return r;
}

namespace {

/// Batched Ψ forward for (inner, outer) candidate pairs of one composition
/// target; returns the predicted scaled curves as columns.
MatrixXd composition_candidate_curves(const MlpModel& psi, const OperatorSpec& spec,
                                      const VectorXd& grid_scaled,
                                      const std::vector<VectorXd>& prim_curves_scaled,
                                      const std::vector<std::pair<int, int>>& pairs,
                                      const VectorXd& ctx_scaled) {
  MatrixXd cols(spec.input_dim(), static_cast<long>(pairs.size()));
  OperatorInputs in;
  in.x = grid_scaled;
  in.context_head = ctx_scaled;
  for (size_t i = 0; i < pairs.size(); ++i) {
    in.anchors = {prim_curves_scaled[static_cast<size_t>(pairs[i].first)]};
    in.phi = {prim_curves_scaled[static_cast<size_t>(pairs[i].second)]};
    cols.col(static_cast<long>(i)) = build_operator_input(spec, in);
  }
  return psi.forward(cols);
}

}  // namespace

EmResult em_self_label(const OperatorSpec& spec, TaskLibrary& lib,
                       const std::vector<int>& primitive_pool, int identity_id,
                       const EmConfig& cfg, const Scaler& scaler) {
  if (spec.regime != Regime::Composition)
    throw std::invalid_argument("em_self_label: composition regime only");
  if (lib.tasks.empty()) throw std::invalid_argument("em_self_label: empty library");

  std::vector<int> pool;
  for (int id : primitive_pool)
    if (id != identity_id) pool.push_back(id);
  if (pool.empty())
    throw std::invalid_argument("em_self_label: no candidates left after identity exclusion");

  std::vector<std::pair<int, int>> cand_pairs;  // (inner, outer)
  for (int g : pool)
    for (int f : pool) cand_pairs.emplace_back(g, f);

  Rng rng(cfg.seed);
  const long n = static_cast<long>(lib.tasks.size());

  EmResult result;
  result.supervised.assign(static_cast<size_t>(n), false);
  result.pseudo_labels.assign(static_cast<size_t>(n), {-1, -1});

  if (cfg.warmup == EmConfig::Warmup::PartialLabels) {
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    const long n_sup = std::max<long>(1, std::lround(cfg.label_fraction * static_cast<double>(n)));
    for (long i = 0; i < n_sup; ++i) result.supervised[static_cast<size_t>(order[static_cast<size_t>(i)])] = true;
  }
  for (long i = 0; i < n; ++i) {
    if (result.supervised[static_cast<size_t>(i)]) {
      const auto& r = lib.tasks[static_cast<size_t>(i)].desc.recipe;
      result.pseudo_labels[static_cast<size_t>(i)] = {r[0], r[1]};
    }
  }

  // Pre-scale primitive curves indexed by primitive id.
  const std::vector<double>& grid = lib.tasks.front().data.grid_x;
  std::vector<VectorXd> prim_scaled(static_cast<size_t>(lib.primitives.size()));
  for (int id = 0; id < lib.primitives.size(); ++id)
    prim_scaled[static_cast<size_t>(id)] = scaler.sy_vec(primitive_curve(lib.primitives.at(id), grid));
  VectorXd grid_scaled(static_cast<long>(grid.size()));
  for (size_t q = 0; q < grid.size(); ++q) grid_scaled[static_cast<long>(q)] = scaler.sx(grid[q]);

  // --- Warm start ---
  MlpModel psi = [&]() {
    Rng init_rng = rng.fork(1);
    if (cfg.warmup == EmConfig::Warmup::Primitives) {
      if (identity_id < 0)
        throw std::invalid_argument("em_self_label: primitive warm-up needs an identity primitive");
      // Atomic transformations: each primitive composed with identity on both
      // sides, context drawn from the primitive's own curve.
      PairDataset warm;
      const long cols = 2 * static_cast<long>(pool.size());
      warm.inputs.resize(spec.input_dim(), cols);
      warm.targets.resize(spec.grid_len, cols);
      long col = 0;
      Rng ctx_rng = rng.fork(2);
      for (int id : pool) {
        TaskDataset ds;
        ds.grid_x = grid;
        std::vector<int> idx(grid.size());
        std::iota(idx.begin(), idx.end(), 0);
        ctx_rng.shuffle(idx);
        idx.resize(static_cast<size_t>(spec.grid_len / 2));
        std::sort(idx.begin(), idx.end());
        const VectorXd curve = prim_scaled[static_cast<size_t>(id)];
        VectorXd ctx(static_cast<long>(idx.size()));
        for (size_t i = 0; i < idx.size(); ++i) ctx[static_cast<long>(i)] = curve[idx[i]];

        OperatorInputs in;
        in.x = grid_scaled;
        in.context_head = ctx;
        in.anchors = {curve};
        in.phi = {prim_scaled[static_cast<size_t>(identity_id)]};
        warm.inputs.col(col) = build_operator_input(spec, in);
        warm.targets.col(col++) = curve;
        in.anchors = {prim_scaled[static_cast<size_t>(identity_id)]};
        in.phi = {curve};
        warm.inputs.col(col) = build_operator_input(spec, in);
        warm.targets.col(col++) = curve;
      }
      return train_operator(spec, warm, cfg.psi_train, init_rng);
    }
    // Partial labels: initial M-step on the supervised subset.
    TaskLibrary sup;
    sup.primitives = lib.primitives;
    for (long i = 0; i < n; ++i)
      if (result.supervised[static_cast<size_t>(i)]) sup.add(lib.tasks[static_cast<size_t>(i)]);
    if (sup.tasks.empty()) throw std::invalid_argument("em_self_label: no supervised tasks");
    PairDataset pairs = build_composition_pairs(spec, sup, PairSource::GroundTruthMetadata, scaler);
    return train_operator(spec, pairs, cfg.psi_train, init_rng);
  }();

  // --- EM rounds ---
  for (int round = 0; round < cfg.rounds; ++round) {
    long correct = 0, total = 0;
    for (long i = 0; i < n; ++i) {
      if (result.supervised[static_cast<size_t>(i)]) continue;
      const TaskEntry& t = lib.tasks[static_cast<size_t>(i)];
      const VectorXd ctx = scaler.sy_vec(t.data.context_y());
      const MatrixXd curves =
          composition_candidate_curves(psi, spec, grid_scaled, prim_scaled, cand_pairs, ctx);
      int best = 0;
      double best_score = std::numeric_limits<double>::infinity();
      for (long c = 0; c < curves.cols(); ++c) {
        double mse = 0.0;
        for (size_t q = 0; q < t.data.context_idx.size(); ++q) {
          const double diff = curves(t.data.context_idx[q], c) - ctx[static_cast<long>(q)];
          mse += diff * diff;
        }
        if (mse < best_score) {
          best_score = mse;
          best = static_cast<int>(c);
        }
      }
      result.pseudo_labels[static_cast<size_t>(i)] = {cand_pairs[static_cast<size_t>(best)].first,
                                                      cand_pairs[static_cast<size_t>(best)].second};
      total += 1;
      if (result.pseudo_labels[static_cast<size_t>(i)][0] == t.desc.recipe[0] &&
          result.pseudo_labels[static_cast<size_t>(i)][1] == t.desc.recipe[1])
        correct += 1;
    }
    result.round_accuracy.push_back(total > 0 ? static_cast<double>(correct) / static_cast<double>(total)
                                              : 1.0);

    // M-step: retrain on pinned + pseudo labels.
    TaskLibrary labeled;
    labeled.primitives = lib.primitives;
    for (long i = 0; i < n; ++i) {
      TaskEntry e = lib.tasks[static_cast<size_t>(i)];
      e.constituent_ids = {result.pseudo_labels[static_cast<size_t>(i)][0],
                           result.pseudo_labels[static_cast<size_t>(i)][1]};
      labeled.add(std::move(e));
    }
    PairDataset pairs = build_composition_pairs(spec, labeled, PairSource::PseudoLabel, scaler);
    Rng round_rng = rng.fork(static_cast<uint64_t>(100 + round));
    TrainConfig tc = cfg.psi_train;
    tc.seed = cfg.psi_train.seed + static_cast<uint64_t>(round) + 1;
    psi = train_operator(spec, pairs, tc, round_rng);
  }

  result.psi = std::move(psi);
  return result;
}

}  // namespace rte
