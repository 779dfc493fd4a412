#include "rte/proxy_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <stdexcept>

namespace rte {

VectorXd probe_embed(const TaskDataset& dataset, const ProbeConfig& config) {
  if (dataset.context.empty()) throw std::invalid_argument("probe_embed: empty context");
  if (config.adapt_steps < 1) throw std::invalid_argument("probe_embed: adapt_steps must be >= 1");

  Rng rng(config.seed);
  MlpModel probe =
      config.pretrained ? *config.pretrained : MlpModel::xavier(config.layer_sizes, rng);
  const VectorXd init = probe.flatten();

  const long n = static_cast<long>(dataset.context.size());
  MatrixXd xs(1, n), ys(1, n);
  for (long i = 0; i < n; ++i) {
    xs(0, i) = dataset.context[static_cast<size_t>(i)].first;
    ys(0, i) = dataset.context[static_cast<size_t>(i)].second;
  }

  // Full-batch Adam for a short horizon.
  AdamConfig ac;
  ac.lr = config.lr;
  OptimState state = OptimState::init(probe, ac);
  Gradients last = Gradients::zeros_like(probe);
  for (int step = 0; step < config.adapt_steps; ++step) {
    double loss = 0.0;
    last = backward(probe, xs, ys, Loss::Mse, &loss);
    if (!std::isfinite(loss))
      throw std::runtime_error("probe_embed: non-finite loss during adaptation");
    adam_step(probe, last, state);
  }
  if (config.gradient_variant) return last.flatten();
  return probe.flatten() - init;
}

MlpModel pretrain_probe(const std::vector<int>& layer_sizes, const MatrixXd& xs,
                        const MatrixXd& ys, const TrainConfig& cfg, Rng& rng) {
  MlpModel probe = MlpModel::xavier(layer_sizes, rng);
  train(probe, xs, ys, cfg);
  return probe;
}

PcaModel PcaModel::fit(const std::vector<VectorXd>& embeddings, int z) {
  const long n = static_cast<long>(embeddings.size());
  if (z < 1) throw std::invalid_argument("PcaModel::fit: z must be >= 1");
  if (n < z) throw std::invalid_argument("PcaModel::fit: need at least z samples");
  const long d = embeddings.front().size();

  PcaModel model;
  model.mean = VectorXd::Zero(d);
  for (const auto& e : embeddings) {
    if (e.size() != d) throw std::invalid_argument("PcaModel::fit: inconsistent dimensions");
    model.mean += e;
  }
  model.mean /= static_cast<double>(n);

  MatrixXd centered(n, d);
  for (long i = 0; i < n; ++i) centered.row(i) = (embeddings[static_cast<size_t>(i)] - model.mean).transpose();

  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  model.components.resize(z, d);
  model.explained_variance.resize(z);

  if (d <= n) {
    // Covariance route.
    MatrixXd cov = centered.transpose() * centered / denom;
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw std::runtime_error("PcaModel::fit: eigensolver failed");
    for (int k = 0; k < z; ++k) {
      const long col = d - 1 - k;  // eigenvalues come out ascending
      VectorXd v = eig.eigenvectors().col(col);
      model.components.row(k) = (v / v.norm()).transpose();
      model.explained_variance[k] = std::max(eig.eigenvalues()[col], 0.0);
    }
  } else {
    // Gram (snapshot) route for high-dimensional embeddings.
    MatrixXd gram = centered * centered.transpose();
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(gram);
    if (eig.info() != Eigen::Success) throw std::runtime_error("PcaModel::fit: eigensolver failed");
    for (int k = 0; k < z; ++k) {
      const long col = n - 1 - k;
      const double lambda = std::max(eig.eigenvalues()[col], 0.0);
      VectorXd v = centered.transpose() * eig.eigenvectors().col(col);
      const double norm = v.norm();
      if (norm > 0.0) v /= norm;
      model.components.row(k) = v.transpose();
      model.explained_variance[k] = lambda / denom;
    }
  }
  return model;
}

VectorXd PcaModel::project(const Eigen::Ref<const VectorXd>& raw) const {
  if (raw.size() != mean.size()) throw std::invalid_argument("PcaModel::project: dim mismatch");
  return components * (raw - mean);
}

VectorXd PcaModel::reconstruct(const Eigen::Ref<const VectorXd>& projected) const {
  if (projected.size() != components.rows())
    throw std::invalid_argument("PcaModel::reconstruct: dim mismatch");
  return mean + components.transpose() * projected;
}

std::vector<std::pair<int, double>> nearest_anchor(const Eigen::Ref<const VectorXd>& target,
                                                   const std::vector<VectorXd>& library,
                                                   const std::vector<int>& ids, int k) {
  if (library.empty()) throw std::invalid_argument("nearest_anchor: empty library");
  if (library.size() != ids.size())
    throw std::invalid_argument("nearest_anchor: ids/library size mismatch");
  if (k < 1) throw std::invalid_argument("nearest_anchor: k must be >= 1");

  std::vector<std::pair<int, double>> ranked;
  ranked.reserve(library.size());
  for (size_t i = 0; i < library.size(); ++i)
    ranked.emplace_back(ids[i], (library[i] - target).norm());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second < b.second;
    return a.first < b.first;
  });
  if (static_cast<int>(ranked.size()) > k) ranked.resize(static_cast<size_t>(k));
  return ranked;
}

MatrixXd isomap_embed(const std::vector<VectorXd>& embeddings, int n_neighbors, int out_dim) {
  const long n = static_cast<long>(embeddings.size());
  if (n_neighbors < 1) throw std::invalid_argument("isomap_embed: n_neighbors must be >= 1");
  if (n < n_neighbors + 1)
    throw std::invalid_argument("isomap_embed: need at least n_neighbors + 1 points");

  // Pairwise distances.
  MatrixXd dist(n, n);
  for (long i = 0; i < n; ++i) {
    dist(i, i) = 0.0;
    for (long j = i + 1; j < n; ++j) {
      const double dij = (embeddings[static_cast<size_t>(i)] - embeddings[static_cast<size_t>(j)]).norm();
      dist(i, j) = dij;
      dist(j, i) = dij;
    }
  }

  // Symmetric k-NN graph: edge if either endpoint lists the other.
  const double inf = std::numeric_limits<double>::infinity();
  MatrixXd graph = MatrixXd::Constant(n, n, inf);
  std::vector<long> order(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](long a, long b) {
      if (dist(i, a) != dist(i, b)) return dist(i, a) < dist(i, b);
      return a < b;
    });
    int added = 0;
    for (long j : order) {
      if (j == i) continue;
      graph(i, j) = dist(i, j);
      graph(j, i) = dist(i, j);
      if (++added == n_neighbors) break;
    }
  }

  // All-pairs geodesics via Dijkstra from each node.
  MatrixXd geo(n, n);
  std::vector<double> d(static_cast<size_t>(n));
  for (long src = 0; src < n; ++src) {
    std::fill(d.begin(), d.end(), inf);
    d[static_cast<size_t>(src)] = 0.0;
    using Item = std::pair<double, long>;
    std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
    pq.emplace(0.0, src);
    while (!pq.empty()) {
      auto [du, u] = pq.top();
      pq.pop();
      if (du > d[static_cast<size_t>(u)]) continue;
      for (long v = 0; v < n; ++v) {
        const double w = graph(u, v);
        if (!std::isfinite(w)) continue;
        if (du + w < d[static_cast<size_t>(v)]) {
          d[static_cast<size_t>(v)] = du + w;
          pq.emplace(d[static_cast<size_t>(v)], v);
        }
      }
    }
    for (long v = 0; v < n; ++v) {
      if (!std::isfinite(d[static_cast<size_t>(v)]))
        throw std::runtime_error(
            "isomap_embed: k-NN graph is disconnected; increase n_neighbors");
      geo(src, v) = d[static_cast<size_t>(v)];
    }
  }

  // Classical MDS on the geodesic distances: B = -1/2 J D^2 J.
  MatrixXd d2 = geo.array().square();
  MatrixXd j = MatrixXd::Identity(n, n) - MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
  MatrixXd b = -0.5 * j * d2 * j;
  b = 0.5 * (b + b.transpose());  // enforce symmetry against rounding
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(b);
  if (eig.info() != Eigen::Success) throw std::runtime_error("isomap_embed: MDS eigensolver failed");

  MatrixXd coords(n, out_dim);
  for (int k = 0; k < out_dim; ++k) {
    const long col = n - 1 - k;
    const double lambda = std::max(eig.eigenvalues()[col], 0.0);
    coords.col(k) = eig.eigenvectors().col(col) * std::sqrt(lambda);
  }
  coords.rowwise() -= coords.colwise().mean();
  return coords;
}

}  // namespace rte
