#include <cmath>

#include "doctest.h"
#include "rte/relational_operator.hpp"

using namespace rte;

TEST_CASE("operator input layouts match the architecture table") {
  CHECK(OperatorSpec::composition(32).input_dim() == 112);  // 3L + L/2
  CHECK(OperatorSpec::length(32).input_dim() == 81);        // 2L + L/2 + 1
  CHECK(OperatorSpec::parameter(32).input_dim() == 83);     // 1 + 2L + L/2 + 2
  CHECK(OperatorSpec::parity().input_dim() == 10);          // 8 + 1 + 1

  CHECK(OperatorSpec::length(32).layer_sizes ==
        std::vector<int>{81, 256, 256, 128, 128, 64, 64, 32});
  CHECK(OperatorSpec::parameter(32).layer_sizes ==
        std::vector<int>{83, 64, 64, 16, 64, 64, 16, 128, 1});
  CHECK(OperatorSpec::parity().layer_sizes == std::vector<int>{10, 32, 32, 1});
}

TEST_CASE("build_operator_input round-trips and names bad segments") {
  const OperatorSpec spec = OperatorSpec::parameter(8);
  OperatorInputs in;
  in.x = VectorXd::Constant(1, 0.25);
  in.anchors = {VectorXd::LinSpaced(8, 0, 7), VectorXd::LinSpaced(8, 10, 17)};
  in.context_head = VectorXd::LinSpaced(4, -1, 1);
  in.phi = {(VectorXd(2) << 0.5, 1.5).finished()};

  const VectorXd f = build_operator_input(spec, in);
  CHECK(f.size() == spec.input_dim());
  const OperatorInputs back = decode_operator_input(spec, f);
  CHECK((back.x - in.x).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.anchors[0] - in.anchors[0]).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.anchors[1] - in.anchors[1]).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.context_head - in.context_head).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.phi[0] - in.phi[0]).cwiseAbs().maxCoeff() == 0.0);

  OperatorInputs bad = in;
  bad.anchors[1] = VectorXd::Zero(5);
  CHECK_THROWS_WITH_AS(build_operator_input(spec, bad), doctest::Contains("anchor_y2"),
                       std::invalid_argument);
  OperatorInputs missing = in;
  missing.phi.clear();
  CHECK_THROWS_WITH_AS(build_operator_input(spec, missing), doctest::Contains("distances"),
                       std::invalid_argument);

  // The zero-shift ablation input is just a zeroed distance block.
  OperatorInputs zs = in;
  zs.phi = {VectorXd::Zero(2)};
  const OperatorInputs zs_back = decode_operator_input(spec, build_operator_input(spec, zs));
  CHECK(zs_back.phi[0].cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("parity operator trains to the exact XOR truth table") {
  const OperatorSpec spec = OperatorSpec::parity();

  std::vector<std::vector<int>> anchors;
  for (int bits = 0; bits < 256; ++bits) {
    std::vector<int> mask;
    for (int b = 0; b < 8; ++b)
      if (bits & (1 << b)) mask.push_back(b);
    if (mask.size() >= 2 && mask.size() <= 4) anchors.push_back(mask);
  }
  const PairDataset pairs = build_parity_pairs(spec, anchors, 4096, 99);

  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.batch_size = 256;
  cfg.lr = 3e-3;
  cfg.seed = 5;
  Rng rng(6);
  const MlpModel psi = train_operator(spec, pairs, cfg, rng);

  // Exhaustive truth table over all 2^10 inputs: the 8 context bits are
  // irrelevant, the output must be anchor_out xor bit_value.
  for (int v = 0; v < 1024; ++v) {
    std::vector<int> bits(8);
    for (int b = 0; b < 8; ++b) bits[static_cast<size_t>(b)] = (v >> b) & 1;
    const int src = (v >> 8) & 1;
    const int bitval = (v >> 9) & 1;
    OperatorInputs in;
    in.x.resize(8);
    for (int b = 0; b < 8; ++b) in.x[b] = bits[static_cast<size_t>(b)];
    in.anchors = {VectorXd::Constant(1, src)};
    in.phi = {VectorXd::Constant(1, bitval)};
    const VectorXd out = apply_operator(psi, spec, in);
    REQUIRE(static_cast<int>(out[0]) == (src ^ bitval));
  }

  // Thresholded semantics: anchor 1, bit 1 -> prediction 0.
  CHECK(parity_logit(psi, spec, {1, 1, 1, 1, 1, 1, 1, 1}, 1, 1) < 0.0);
}

TEST_CASE("parameter pair construction orders anchors nearest-first") {
  FamilySpec fspec = default_family_spec(Family::Quadratic);
  TaskLibrary lib;
  Rng rng(3);
  for (int i = 0; i < 24; ++i) {
    TaskEntry e;
    e.desc = sample_task(fspec, i % 2 == 0 ? Region::F1_1 : Region::F1_2, rng);
    e.data = split_context_query(e.desc, &fspec, nullptr, fspec.x_domain, 16, rng.next_u64());
    lib.add(std::move(e));
  }
  const OperatorSpec spec = OperatorSpec::parameter(16);
  ParameterPairOptions opt;
  opt.pairs_per_target = 1;
  opt.seed = 17;
  Scaler scaler = Scaler::fit(fspec.x_domain, {0.0, 1.0, 2.0});

  CHECK_THROWS_WITH_AS(
      build_parameter_pairs(spec, lib, PairSource::ProxyDifference, opt, scaler),
      doctest::Contains("embeddings"), std::invalid_argument);

  const PairDataset pairs =
      build_parameter_pairs(spec, lib, PairSource::GroundTruthMetadata, opt, scaler);
  CHECK(pairs.inputs.cols() == 24 * 16);
  for (long c = 0; c < pairs.inputs.cols(); c += 16) {
    const OperatorInputs in = decode_operator_input(spec, pairs.inputs.col(c));
    CHECK(in.phi[0][0] <= in.phi[0][1]);  // d1 <= d2
  }
}

TEST_CASE("length operator prefers the true coefficient over a resampled one") {
  TaskLibrary lib;
  Rng rng(21);
  for (int d = 0; d <= 4; ++d)
    for (int i = 0; i < 30; ++i) {
      TaskEntry e;
      e.desc = sample_polynomial(d, rng);
      e.data = split_context_query(e.desc, nullptr, nullptr, kPolyDomain, 32, rng.next_u64());
      lib.add(std::move(e));
    }
  Scaler scaler;
  scaler.x_scale = 5.0;

  const OperatorSpec spec = OperatorSpec::length(32);
  const PairDataset pairs = build_length_pairs(spec, lib, scaler);
  CHECK(pairs.inputs.cols() == 4 * 30);  // degree >= 1 only

  TrainConfig cfg;
  cfg.epochs = 120;
  cfg.batch_size = 128;
  cfg.lr = 1e-3;
  cfg.seed = 9;
  Rng psi_rng(10);
  const MlpModel psi = train_operator(spec, pairs, cfg, psi_rng);

  double mse_true = 0.0, mse_rand = 0.0;
  Rng val_rng(31);
  const int n_val = 40;
  for (int i = 0; i < n_val; ++i) {
    const int d = 1 + val_rng.uniform_int(4);
    const TaskDescriptor target = sample_polynomial(d, val_rng);
    const TaskDataset data =
        split_context_query(target, nullptr, nullptr, kPolyDomain, 32, val_rng.next_u64());

    TaskDescriptor pred = target;
    pred.coeffs.pop_back();
    OperatorInputs in;
    in.x.resize(32);
    VectorXd anchor(32), truth(32);
    for (int q = 0; q < 32; ++q) {
      in.x[q] = scaler.sx(data.grid_x[static_cast<size_t>(q)]);
      anchor[q] = eval_polynomial(pred, data.grid_x[static_cast<size_t>(q)]);
      truth[q] = eval_polynomial(target, data.grid_x[static_cast<size_t>(q)]);
    }
    in.anchors = {anchor};
    in.context_head = data.context_y();
    const double c_true = target.coeffs.back() * std::pow(5.0, d);
    in.phi = {VectorXd::Constant(1, c_true)};
    mse_true += (apply_operator(psi, spec, in) - truth).squaredNorm() / 32.0;
    in.phi = {VectorXd::Constant(1, val_rng.uniform(-2.0, 2.0))};
    mse_rand += (apply_operator(psi, spec, in) - truth).squaredNorm() / 32.0;
  }
  CHECK(mse_true / n_val < mse_rand / n_val);
}

TEST_CASE("continuous operator reproduces the anchor at zero shift on self-pairs") {
  FamilySpec fspec = default_family_spec(Family::Quadratic);
  TaskLibrary lib;
  Rng rng(41);
  for (int i = 0; i < 64; ++i) {
    TaskEntry e;
    e.desc = sample_task(fspec, i % 2 == 0 ? Region::F1_1 : Region::F1_2, rng);
    e.data = split_context_query(e.desc, &fspec, nullptr, fspec.x_domain, 32, rng.next_u64());
    lib.add(std::move(e));
  }
  std::vector<double> ys;
  for (const auto& t : lib.tasks)
    for (const auto& p : t.data.context) ys.push_back(p.second);
  Scaler scaler = Scaler::fit(fspec.x_domain, ys);

  const OperatorSpec spec = OperatorSpec::parameter(32);
  ParameterPairOptions opt;
  opt.pairs_per_target = 2;
  opt.seed = 12;
  const PairDataset pairs =
      build_parameter_pairs(spec, lib, PairSource::GroundTruthMetadata, opt, scaler);

  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.batch_size = 1024;
  cfg.lr = 1e-3;
  cfg.weight_decay = 1e-4;
  cfg.seed = 13;
  Rng psi_rng(14);
  MlpModel psi = MlpModel::xavier(spec.layer_sizes, psi_rng);
  const TrainResult trace = train(psi, pairs.inputs, pairs.targets, cfg);
  const double train_loss = trace.epoch_loss.back();

  double self_mse = 0.0;
  for (int i = 0; i < 16; ++i) {
    const TaskEntry& t = lib.tasks[static_cast<size_t>(i)];
    const VectorXd curve = scaler.sy_vec(full_curve(t));
    OperatorInputs in;
    in.anchors = {curve, curve};
    in.context_head = scaler.sy_vec(t.data.context_y());
    in.phi = {VectorXd::Zero(2)};
    for (int q = 0; q < 32; ++q) {
      in.x = VectorXd::Constant(1, scaler.sx(t.data.grid_x[static_cast<size_t>(q)]));
      const double pred = apply_operator(psi, spec, in)[0];
      self_mse += (pred - curve[q]) * (pred - curve[q]);
    }
  }
  self_mse /= 16.0 * 32.0;
  CHECK(self_mse < 10.0 * train_loss);

  // Identical seeds give identical operators.
  Rng psi_rng2(14);
  MlpModel psi2 = MlpModel::xavier(spec.layer_sizes, psi_rng2);
  train(psi2, pairs.inputs, pairs.targets, cfg);
  CHECK((psi.flatten() - psi2.flatten()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("composition pair builder demands constituent metadata") {
  TaskLibrary lib;
  Rng rng(51);
  Primitive sq;
  sq.kind = Primitive::Kind::Poly;
  sq.params = {0.0, 0.0, 1.0};
  const int sq_id = lib.primitives.add(sq);
  Primitive sn;
  sn.kind = Primitive::Kind::Sin;
  sn.params = {1.0, 0.0};
  const int sn_id = lib.primitives.add(sn);

  TaskEntry e;
  e.desc.kind = TaskDescriptor::Kind::Composition;
  e.desc.recipe = {sq_id, sn_id};
  e.data = split_context_query(e.desc, nullptr, &lib.primitives, kPolyDomain, 16, 3);
  lib.add(e);

  const OperatorSpec spec = OperatorSpec::composition(16);
  Scaler scaler;
  scaler.x_scale = 5.0;
  const PairDataset ok =
      build_composition_pairs(spec, lib, PairSource::GroundTruthMetadata, scaler);
  CHECK(ok.inputs.cols() == 1);

  // Pseudo-label source requires constituent ids on the entries.
  CHECK_THROWS_WITH_AS(build_composition_pairs(spec, lib, PairSource::PseudoLabel, scaler),
                       doctest::Contains("constituent"), std::invalid_argument);

  const OracleRunner oracle = make_oracle_variant(MlpModel::xavier(spec.layer_sizes, rng), spec);
  CHECK(oracle.psi != nullptr);
}
