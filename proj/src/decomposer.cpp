#include "rte/decomposer.hpp"

#include <algorithm>
#include <stdexcept>

#include "rte/proxy_geometry.hpp"

namespace rte {

std::vector<int> DecomposerSpec::net_sizes() const {
  const int head_dim = depth * latent_dim + (scalar_head ? 1 : 0);
  return {2 * grid_len, 256, 128, 64, head_dim};
}

DecomposerSpec DecomposerSpec::length(int grid_len, int latent_dim) {
  DecomposerSpec s;
  s.regime = Regime::Length;
  s.depth = 1;
  s.grid_len = grid_len;
  s.latent_dim = latent_dim;
  s.scalar_head = true;
  return s;
}

DecomposerSpec DecomposerSpec::composition(int grid_len, int latent_dim) {
  DecomposerSpec s;
  s.regime = Regime::Composition;
  s.depth = 2;
  s.grid_len = grid_len;
  s.latent_dim = latent_dim;
  return s;
}

DecomposerSpec DecomposerSpec::multistep(int grid_len, int latent_dim, int depth) {
  DecomposerSpec s;
  s.regime = Regime::Composition;
  s.depth = depth;
  s.grid_len = grid_len;
  s.latent_dim = latent_dim;
  return s;
}

VectorXd decomposer_input(const DecomposerSpec& spec,
                          const std::vector<std::pair<double, double>>& context) {
  if (context.empty()) throw std::invalid_argument("decomposer_input: empty context");

  // Normalize to exactly L/2 points.
  const int target_len = spec.context_len();
  std::vector<std::pair<double, double>> pts = context;
  std::sort(pts.begin(), pts.end());
  if (static_cast<int>(pts.size()) < target_len) {
    while (static_cast<int>(pts.size()) < target_len) pts.push_back(pts.back());
  } else if (static_cast<int>(pts.size()) > target_len) {
    std::vector<std::pair<double, double>> sub;
    const double step = static_cast<double>(pts.size() - 1) / (target_len - 1);
    for (int i = 0; i < target_len; ++i)
      sub.push_back(pts[static_cast<size_t>(std::lround(i * step))]);
    pts = std::move(sub);
  }

  // Sorted x then sorted y, each right-padded with its last value to L.
  VectorXd out(2 * spec.grid_len);
  for (int i = 0; i < spec.grid_len; ++i) {
    const auto& p = pts[static_cast<size_t>(std::min(i, target_len - 1))];
    out[i] = p.first;
    out[spec.grid_len + i] = p.second;
  }
  return out;
}

DecomposeResult decompose(const Decomposer& dec,
                          const std::vector<std::pair<double, double>>& context) {
  const VectorXd raw = dec.net.forward1(decomposer_input(dec.spec, context));
  DecomposeResult r;
  for (int h = 0; h < dec.spec.depth; ++h)
    r.latents.push_back(raw.segment(static_cast<long>(h) * dec.spec.latent_dim, dec.spec.latent_dim));
  if (dec.spec.scalar_head) r.scalar = raw[raw.size() - 1];
  return r;
}

Decomposer train_decomposer(const DecomposerSpec& spec,
                            const std::vector<std::vector<std::pair<double, double>>>& contexts,
                            const std::vector<VectorXd>& targets, const TrainConfig& cfg,
                            Rng& rng) {
  if (contexts.empty()) throw std::invalid_argument("train_decomposer: no training tasks");
  if (contexts.size() != targets.size())
    throw std::invalid_argument("train_decomposer: contexts/targets size mismatch");
  const int head_dim = spec.depth * spec.latent_dim + (spec.scalar_head ? 1 : 0);

  MatrixXd x(spec.input_dim(), static_cast<long>(contexts.size()));
  MatrixXd y(head_dim, static_cast<long>(contexts.size()));
  for (size_t i = 0; i < contexts.size(); ++i) {
    if (targets[i].size() != head_dim)
      throw std::invalid_argument("train_decomposer: missing or mis-sized latent target");
    x.col(static_cast<long>(i)) = decomposer_input(spec, contexts[i]);
    y.col(static_cast<long>(i)) = targets[i];
  }

  Decomposer dec;
  dec.spec = spec;
  dec.net = MlpModel::xavier(spec.net_sizes(), rng);
  train(dec.net, x, y, cfg);
  return dec;
}

std::vector<DecompositionCandidate> propose_candidates(const DecomposerSpec& spec,
                                                       const std::vector<VectorXd>& latents,
                                                       const std::vector<VectorXd>& library,
                                                       const std::vector<int>& ids, int k) {
  if (k <= 0) throw std::invalid_argument("propose_candidates: k must be positive");
  if (library.empty()) throw std::invalid_argument("propose_candidates: empty library");
  if (static_cast<int>(latents.size()) != spec.depth)
    throw std::invalid_argument("propose_candidates: latent count != head count");
  const int kk = std::min<int>(k, static_cast<int>(library.size()));

  std::vector<std::vector<int>> per_head;
  for (const VectorXd& z : latents) {
    auto ranked = nearest_anchor(z, library, ids, kk);
    std::vector<int> top;
    for (const auto& [id, dist] : ranked) top.push_back(id);
    per_head.push_back(std::move(top));
  }

  // Cartesian product in rank-lexicographic order (head 0 slowest).
  std::vector<DecompositionCandidate> out;
  std::vector<size_t> cursor(static_cast<size_t>(spec.depth), 0);
  while (true) {
    DecompositionCandidate c;
    for (int h = 0; h < spec.depth; ++h)
      c.anchor_ids.push_back(per_head[static_cast<size_t>(h)][cursor[static_cast<size_t>(h)]]);
    out.push_back(std::move(c));

    int h = spec.depth - 1;
    while (h >= 0) {
      if (++cursor[static_cast<size_t>(h)] < per_head[static_cast<size_t>(h)].size()) break;
      cursor[static_cast<size_t>(h)] = 0;
      --h;
    }
    if (h < 0) break;
  }
  return out;
}

}  // namespace rte
