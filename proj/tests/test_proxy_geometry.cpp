#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "rte/proxy_geometry.hpp"
#include "rte/scaler.hpp"

using namespace rte;

namespace {

TaskDataset quadratic_dataset(double a, double b, double c, uint64_t seed, double y_scale = 100.0) {
  FamilySpec spec = default_family_spec(Family::Quadratic);
  TaskDescriptor d;
  d.kind = TaskDescriptor::Kind::Parametric;
  d.family = Family::Quadratic;
  d.params = {a, b, c};
  TaskDataset ds = split_context_query(d, &spec, nullptr, spec.x_domain, 32, seed);
  Scaler s;
  s.x_off = 10.0;
  s.x_scale = 10.0;
  s.y_scale = y_scale;
  return s.scale_dataset(ds);
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<int> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int x, int y) { return v[static_cast<size_t>(x)] < v[static_cast<size_t>(y)]; });
    std::vector<double> r(v.size());
    for (size_t i = 0; i < idx.size(); ++i) r[static_cast<size_t>(idx[i])] = static_cast<double>(i);
    return r;
  };
  const std::vector<double> ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double num = 0, da = 0, db = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  return num / std::sqrt(da * db);
}

}  // namespace

TEST_CASE("probe embedding is deterministic and has the right dimension") {
  const TaskDataset ds = quadratic_dataset(1.2, 0.5, -0.3, 7);
  ProbeConfig cfg;
  cfg.seed = 11;
  const VectorXd e1 = probe_embed(ds, cfg);
  const VectorXd e2 = probe_embed(ds, cfg);
  CHECK(e1.size() == 4353);  // 64 + 64 + 64*64 + 64 + 64 + 1
  CHECK((e1 - e2).cwiseAbs().maxCoeff() == 0.0);

  ProbeConfig grad_cfg = cfg;
  grad_cfg.gradient_variant = true;
  const VectorXd g = probe_embed(ds, grad_cfg);
  CHECK(g.size() == 4353);
  CHECK((g - e1).cwiseAbs().maxCoeff() > 0.0);

  TaskDataset empty = ds;
  empty.context.clear();
  CHECK_THROWS_AS(probe_embed(empty, cfg), std::invalid_argument);
}

TEST_CASE("nearby tasks embed closer than distant ones (median over 20 seeds)") {
  int votes = 0;
  std::vector<double> near_d, far_d;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    ProbeConfig cfg;
    cfg.seed = 1000 + seed;
    const VectorXd e10 = probe_embed(quadratic_dataset(1.0, 0.0, 0.0, 3), cfg);
    const VectorXd e11 = probe_embed(quadratic_dataset(1.1, 0.0, 0.0, 3), cfg);
    const VectorXd e30 = probe_embed(quadratic_dataset(3.0, 0.0, 0.0, 3), cfg);
    near_d.push_back((e10 - e11).norm());
    far_d.push_back((e10 - e30).norm());
    if (near_d.back() < far_d.back()) ++votes;
  }
  std::sort(near_d.begin(), near_d.end());
  std::sort(far_d.begin(), far_d.end());
  CHECK(near_d[near_d.size() / 2] < far_d[far_d.size() / 2]);
  CHECK(votes >= 15);
}

TEST_CASE("pca recovers a 1-d subspace and reconstructs at full rank") {
  Rng rng(5);
  std::vector<VectorXd> line;
  VectorXd dir(20);
  for (long i = 0; i < 20; ++i) dir[i] = rng.uniform(-1.0, 1.0);
  dir.normalize();
  for (int i = 0; i < 40; ++i) line.push_back(rng.uniform(-3.0, 3.0) * dir);
  const PcaModel pca = PcaModel::fit(line, 3);
  const double total = pca.explained_variance.sum();
  CHECK(pca.explained_variance[0] / total > 0.999);

  // Orthonormal components, non-increasing variances.
  const MatrixXd gram = pca.components * pca.components.transpose();
  CHECK((gram - MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-8);
  for (int k = 0; k + 1 < 3; ++k)
    CHECK(pca.explained_variance[k] >= pca.explained_variance[k + 1]);

  // Full-rank project-then-reconstruct is the identity.
  std::vector<VectorXd> cloud;
  for (int i = 0; i < 30; ++i) {
    VectorXd v(6);
    for (long k = 0; k < 6; ++k) v[k] = rng.uniform(-1.0, 1.0);
    cloud.push_back(v);
  }
  const PcaModel full = PcaModel::fit(cloud, 6);
  for (const auto& v : cloud)
    CHECK((full.reconstruct(full.project(v)) - v).cwiseAbs().maxCoeff() < 1e-8);

  CHECK_THROWS_AS(PcaModel::fit(cloud, 31), std::invalid_argument);
  CHECK_THROWS_AS(PcaModel::fit(cloud, 0), std::invalid_argument);
}

TEST_CASE("nearest_anchor ranks by distance with id tie-breaks") {
  std::vector<VectorXd> lib;
  std::vector<int> ids = {5, 3, 9, 1};
  for (double v : {1.0, 2.0, 2.0, 4.0}) lib.push_back(VectorXd::Constant(2, v));

  const auto hits = nearest_anchor(VectorXd::Constant(2, 2.0), lib, ids, 4);
  CHECK(hits[0].second == doctest::Approx(0.0));
  CHECK(hits[0].first == 3);  // tie with id 9 at distance 0 -> smaller id first
  CHECK(hits[1].first == 9);
  CHECK(hits[2].first == 5);
  CHECK(hits[3].first == 1);

  // Exact hit ranks first with distance zero.
  const auto exact = nearest_anchor(lib[3], lib, ids, 1);
  CHECK(exact[0].first == 1);
  CHECK(exact[0].second == doctest::Approx(0.0));

  // Permuting the library leaves the returned ids unchanged.
  std::vector<VectorXd> perm = {lib[2], lib[0], lib[3], lib[1]};
  std::vector<int> perm_ids = {9, 5, 1, 3};
  const auto hits2 = nearest_anchor(VectorXd::Constant(2, 2.0), perm, perm_ids, 4);
  for (size_t i = 0; i < hits.size(); ++i) CHECK(hits2[i].first == hits[i].first);

  CHECK_THROWS_AS(nearest_anchor(lib[0], {}, {}, 1), std::invalid_argument);
}

TEST_CASE("isomap preserves the cyclic order of a circle") {
  // Circle in 2-D embedded into 10-D through a fixed rotation.
  const int n = 60;
  Rng rng(9);
  MatrixXd basis(10, 2);
  for (long r = 0; r < 10; ++r)
    for (long c = 0; c < 2; ++c) basis(r, c) = rng.uniform(-1.0, 1.0);
  Eigen::HouseholderQR<MatrixXd> qr(basis);
  const MatrixXd q = qr.householderQ() * MatrixXd::Identity(10, 2);

  std::vector<VectorXd> points;
  for (int i = 0; i < n; ++i) {
    const double th = 2.0 * M_PI * i / n;
    VectorXd p(2);
    p << std::cos(th), std::sin(th);
    points.push_back(q * p);
  }
  const MatrixXd coords = isomap_embed(points, 6, 2);

  std::vector<double> angle(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) angle[static_cast<size_t>(i)] = std::atan2(coords(i, 1), coords(i, 0));
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return angle[static_cast<size_t>(a)] < angle[static_cast<size_t>(b)]; });
  std::vector<double> rank(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) rank[static_cast<size_t>(order[static_cast<size_t>(i)])] = i;

  // Best cyclic alignment in either orientation against the true order.
  double best = -1.0;
  for (int dir : {1, -1}) {
    for (int rot = 0; rot < n; ++rot) {
      std::vector<double> t(static_cast<size_t>(n)), u(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) {
        t[static_cast<size_t>(i)] = i;
        u[static_cast<size_t>(i)] = std::fmod(dir * rank[static_cast<size_t>(i)] + rot + 2.0 * n, n);
      }
      best = std::max(best, spearman(t, u));
    }
  }
  CHECK(best > 0.95);
}

TEST_CASE("isomap rejects disconnected neighbourhood graphs") {
  std::vector<VectorXd> pts;
  for (double v : {0.0, 0.1, 100.0, 100.1}) pts.push_back(VectorXd::Constant(1, v));
  CHECK_THROWS_WITH_AS(isomap_embed(pts, 1, 2), doctest::Contains("n_neighbors"),
                       std::runtime_error);
  CHECK_THROWS_AS(isomap_embed(pts, 4, 2), std::invalid_argument);  // needs k+1 points
}

TEST_CASE("topological fidelity: curvature distance correlates with embedding distance") {
  // Shared probe pretrained on the family, then adapted per task.
  Rng rng(31);
  FamilySpec spec = default_family_spec(Family::Quadratic);
  Scaler s;
  s.x_off = 10.0;
  s.x_scale = 10.0;
  s.y_scale = 100.0;

  const int n_pre = 80;
  MatrixXd px(1, n_pre * 32), py(1, n_pre * 32);
  long col = 0;
  for (int i = 0; i < n_pre; ++i) {
    const TaskDescriptor d = sample_task(spec, i % 2 == 0 ? Region::F1_1 : Region::F1_2, rng);
    for (double x : make_grid(spec.x_domain, 32)) {
      px(0, col) = s.sx(x);
      py(0, col) = s.sy(eval_family(spec, d, x));
      ++col;
    }
  }
  TrainConfig pre_cfg;
  pre_cfg.epochs = 30;
  pre_cfg.batch_size = 256;
  pre_cfg.lr = 1e-3;
  pre_cfg.seed = 3;
  const MlpModel probe = pretrain_probe({1, 64, 64, 1}, px, py, pre_cfg, rng);

  const int n_tasks = 40;
  std::vector<double> shifts;
  std::vector<VectorXd> raw;
  for (int i = 0; i < n_tasks; ++i) {
    const TaskDescriptor d = sample_task(spec, i % 2 == 0 ? Region::F1_1 : Region::F1_2, rng);
    shifts.push_back(d.params[0]);
    TaskDataset ds = split_context_query(d, &spec, nullptr, spec.x_domain, 32, 500 + static_cast<uint64_t>(i));
    ProbeConfig pc;
    pc.pretrained = &probe;
    pc.seed = 900 + static_cast<uint64_t>(i);
    raw.push_back(probe_embed(s.scale_dataset(ds), pc));
  }
  const PcaModel pca = PcaModel::fit(raw, 16);

  std::vector<double> dtheta, demb;
  for (int i = 0; i < n_tasks; ++i)
    for (int j = i + 1; j < n_tasks; ++j) {
      dtheta.push_back(std::abs(shifts[static_cast<size_t>(i)] - shifts[static_cast<size_t>(j)]));
      demb.push_back((pca.project(raw[static_cast<size_t>(i)]) - pca.project(raw[static_cast<size_t>(j)])).norm());
    }
  CHECK(spearman(dtheta, demb) > 0.5);

  SUBCASE("robustness to sparsity: half contexts stay near their full-context embedding") {
    std::vector<VectorXd> proj;
    for (const auto& r : raw) proj.push_back(pca.project(r));
    std::vector<double> pair_d;
    for (size_t i = 0; i < proj.size(); ++i)
      for (size_t j = i + 1; j < proj.size(); ++j) pair_d.push_back((proj[i] - proj[j]).norm());
    std::sort(pair_d.begin(), pair_d.end());
    const double median_inter = pair_d[pair_d.size() / 2];

    int hits = 0;
    const int trials = 40;
    for (int i = 0; i < trials; ++i) {
      const TaskDescriptor d = sample_task(spec, i % 2 == 0 ? Region::F1_1 : Region::F1_2, rng);
      TaskDataset full = split_context_query(d, &spec, nullptr, spec.x_domain, 32, 7000 + static_cast<uint64_t>(i));
      TaskDataset half = full;
      half.context.clear();
      half.context_idx.clear();
      for (size_t k = 0; k < full.context.size(); k += 2) {
        half.context.push_back(full.context[k]);
        half.context_idx.push_back(full.context_idx[k]);
      }
      ProbeConfig pc;
      pc.pretrained = &probe;
      pc.seed = 1700 + static_cast<uint64_t>(i);
      const VectorXd e_full = pca.project(probe_embed(s.scale_dataset(full), pc));
      const VectorXd e_half = pca.project(probe_embed(s.scale_dataset(half), pc));
      if ((e_full - e_half).norm() < median_inter) ++hits;
    }
    CHECK(hits >= trials * 8 / 10);
  }
}
