#include <cmath>
#include <set>

#include "doctest.h"
#include "rte/task_families.hpp"

using namespace rte;

TEST_CASE("eval_family matches the closed-form definitions") {
  FamilySpec quad = default_family_spec(Family::Quadratic);
  TaskDescriptor d;
  d.kind = TaskDescriptor::Kind::Parametric;
  d.family = Family::Quadratic;
  d.params = {2.0, 0.0, 0.0};
  CHECK(eval_family(quad, d, 3.0) == doctest::Approx(18.0));

  FamilySpec tri = default_family_spec(Family::TriTrend);
  TaskDescriptor t;
  t.kind = TaskDescriptor::Kind::Parametric;
  t.family = Family::TriTrend;
  t.params = {0.0, 1.0};
  CHECK(eval_family(tri, t, 0.0) == doctest::Approx(1.5));

  FamilySpec expf = default_family_spec(Family::Exponential);
  TaskDescriptor e;
  e.kind = TaskDescriptor::Kind::Parametric;
  e.family = Family::Exponential;
  e.params = {0.1, 1.5, 0.0};
  CHECK(eval_family(expf, e, 10.0) == doctest::Approx(0.0));

  // Cubic recentering: at x = 10 only the offset survives.
  FamilySpec cub = default_family_spec(Family::Cubic);
  TaskDescriptor c;
  c.kind = TaskDescriptor::Kind::Parametric;
  c.family = Family::Cubic;
  c.params = {1.7, 3.0, -0.25};
  CHECK(eval_family(cub, c, 10.0) == doctest::Approx(-0.25));

  CHECK_THROWS_AS(eval_family(quad, t, 1.0), std::invalid_argument);
}

TEST_CASE("sin and tri waves share the fixed period") {
  FamilySpec sin_spec = default_family_spec(Family::SinTrend);
  TaskDescriptor s;
  s.kind = TaskDescriptor::Kind::Parametric;
  s.family = Family::SinTrend;
  s.params = {0.0, 1.0};
  const double P = 20.0 / 7.0;
  for (double x : {0.3, 1.1, 2.2}) {
    CHECK(eval_family(sin_spec, s, x) == doctest::Approx(eval_family(sin_spec, s, x + P)).epsilon(1e-9));
  }
  FamilySpec tri_spec = default_family_spec(Family::TriTrend);
  TaskDescriptor t = s;
  t.family = Family::TriTrend;
  for (double x : {0.3, 1.1, 2.2}) {
    CHECK(eval_family(tri_spec, t, x) == doctest::Approx(eval_family(tri_spec, t, x + P)).epsilon(1e-9));
  }
}

TEST_CASE("sample_task draws the shift parameter from the requested region") {
  Rng rng(7);
  FamilySpec quad = default_family_spec(Family::Quadratic);
  for (int i = 0; i < 200; ++i) {
    const TaskDescriptor d = sample_task(quad, Region::F2, rng);
    CHECK(d.params[0] >= 2.5);
    CHECK(d.params[0] < 3.5);
    CHECK(d.params[1] >= -2.0);
    CHECK(d.params[1] < 2.0);
  }
  FamilySpec expf = default_family_spec(Family::Exponential);
  for (int i = 0; i < 200; ++i) {
    const TaskDescriptor d = sample_task(expf, Region::F1_1, rng);
    CHECK(d.params[0] >= 0.05);
    CHECK(d.params[0] < 0.1);
  }
}

TEST_CASE("undefined regions report the defined ones") {
  FamilySpec quad = default_family_spec(Family::Quadratic);
  quad.shift_ranges.erase(Region::F5);
  Rng rng(3);
  CHECK_THROWS_WITH_AS(sample_task(quad, Region::F5, rng),
                       doctest::Contains("defined: F1_1, F1_2, F2, F3, F4"),
                       std::invalid_argument);
}

TEST_CASE("region intervals are ordered, contiguous, and disjoint under sampling") {
  const Region order[] = {Region::F1_1, Region::F1_2, Region::F2, Region::F3, Region::F4,
                          Region::F5};
  for (Family f : {Family::Quadratic, Family::Cubic, Family::Exponential, Family::SinTrend,
                   Family::TriTrend}) {
    FamilySpec spec = default_family_spec(f);
    for (int i = 0; i + 1 < 6; ++i) {
      const Interval& a = spec.shift_ranges.at(order[i]);
      const Interval& b = spec.shift_ranges.at(order[i + 1]);
      CHECK(a.hi == doctest::Approx(b.lo));
      CHECK(a.lo < b.lo);
    }
    // Half-open sampling keeps draws from different regions disjoint.
    Rng rng(11);
    for (int i = 0; i + 1 < 6; ++i) {
      for (int k = 0; k < 50; ++k) {
        const double lo_draw = sample_task(spec, order[i], rng).params[0];
        const double hi_draw = sample_task(spec, order[i + 1], rng).params[0];
        CHECK(lo_draw < spec.shift_ranges.at(order[i]).hi);
        CHECK(hi_draw >= spec.shift_ranges.at(order[i + 1]).lo);
        CHECK(lo_draw < hi_draw);
      }
    }
  }
}

TEST_CASE("sample_polynomial respects the 5^-d coefficient scaling") {
  Rng rng(5);
  CHECK_THROWS_AS(sample_polynomial(-1, rng), std::invalid_argument);
  CHECK_THROWS_AS(sample_polynomial(10, rng), std::invalid_argument);

  for (int i = 0; i < 50; ++i) {
    const TaskDescriptor d0 = sample_polynomial(0, rng);
    CHECK(std::abs(d0.coeffs[0]) <= 2.0);
    const TaskDescriptor d2 = sample_polynomial(2, rng);
    CHECK(std::abs(d2.coeffs[2]) <= 0.08);
    const TaskDescriptor d9 = sample_polynomial(9, rng);
    for (int k = 0; k <= 9; ++k) {
      // Normalized coefficient lies in the operator's input range.
      const double c_norm = d9.coeffs[static_cast<size_t>(k)] * std::pow(5.0, k);
      CHECK(std::abs(c_norm) <= 2.0);
      // Term contribution bound over the domain (max at |x| = 5).
      CHECK(std::abs(d9.coeffs[static_cast<size_t>(k)] * std::pow(5.0, k)) <= 2.0);
    }
  }
}

TEST_CASE("polynomial term contribution stays bounded over the grid") {
  Rng rng(17);
  const std::vector<double> grid = make_grid(kPolyDomain, 64);
  for (int trial = 0; trial < 20; ++trial) {
    const TaskDescriptor d = sample_polynomial(9, rng);
    for (size_t k = 0; k < d.coeffs.size(); ++k) {
      double max_term = 0.0;
      for (double x : grid)
        max_term = std::max(max_term, std::abs(d.coeffs[k] * std::pow(x, static_cast<double>(k))));
      CHECK(max_term <= 2.0 + 1e-12);
    }
  }
}

TEST_CASE("compose_eval applies primitives innermost-first") {
  PrimitiveLibrary prims;
  Primitive square;
  square.kind = Primitive::Kind::Poly;
  square.params = {0.0, 0.0, 1.0};
  const int sq = prims.add(square);
  Primitive sinp;
  sinp.kind = Primitive::Kind::Sin;
  sinp.params = {1.0, 0.0};
  const int si = prims.add(sinp);
  Primitive tanhp;
  tanhp.kind = Primitive::Kind::Tanh;
  tanhp.params = {1.0};
  const int th = prims.add(tanhp);
  Primitive ident;
  ident.kind = Primitive::Kind::Identity;
  const int id = prims.add(ident);

  CHECK(compose_eval({sq, si}, prims, std::sqrt(M_PI / 2.0)) == doctest::Approx(1.0));
  CHECK(compose_eval({id, th}, prims, 0.0) == doctest::Approx(0.0));
  CHECK_THROWS_AS(compose_eval({}, prims, 1.0), std::invalid_argument);

  // Appending the identity never changes a composition.
  Rng rng(23);
  for (int i = 0; i < 20; ++i) {
    const double x = rng.uniform(-5.0, 5.0);
    const std::vector<int> recipe = {sq, th};
    std::vector<int> extended = recipe;
    extended.push_back(id);
    CHECK(compose_eval(recipe, prims, x) == doctest::Approx(compose_eval(extended, prims, x)));
  }
}

TEST_CASE("parity_eval satisfies the extension identity exhaustively") {
  CHECK(parity_eval({0, 1}, {1, 1, 0, 0, 0, 0, 0, 0}) == 0);
  CHECK(parity_eval({0, 1, 2}, {1, 1, 1, 0, 0, 0, 0, 0}) == 1);

  // f_{S u {k}}(x) = f_S(x) xor x_k for every mask, k not in S, and x.
  for (int mask_bits = 1; mask_bits < 256; ++mask_bits) {
    std::vector<int> mask;
    for (int b = 0; b < 8; ++b)
      if (mask_bits & (1 << b)) mask.push_back(b);
    for (int k = 0; k < 8; ++k) {
      if (mask_bits & (1 << k)) continue;
      std::vector<int> extended = mask;
      extended.push_back(k);
      for (int x = 0; x < 256; ++x) {
        std::vector<int> bits(8);
        for (int b = 0; b < 8; ++b) bits[static_cast<size_t>(b)] = (x >> b) & 1;
        CHECK(parity_eval(extended, bits) == (parity_eval(mask, bits) ^ bits[static_cast<size_t>(k)]));
      }
    }
  }
}

TEST_CASE("there are exactly 28 parity tasks of subset size 6 over 8 bits") {
  int count = 0;
  for (int mask_bits = 0; mask_bits < 256; ++mask_bits)
    if (__builtin_popcount(static_cast<unsigned>(mask_bits)) == 6) ++count;
  CHECK(count == 28);
}

TEST_CASE("split_context_query produces a disjoint deterministic split") {
  FamilySpec quad = default_family_spec(Family::Quadratic);
  TaskDescriptor d;
  d.kind = TaskDescriptor::Kind::Parametric;
  d.family = Family::Quadratic;
  d.params = {1.0, 0.0, 0.0};

  const TaskDataset ds = split_context_query(d, &quad, nullptr, quad.x_domain, 32, 99);
  CHECK(ds.context.size() == 16);
  CHECK(ds.query.size() == 16);
  std::set<int> ctx(ds.context_idx.begin(), ds.context_idx.end());
  for (int q : ds.query_idx) CHECK(ctx.count(q) == 0);

  const TaskDataset again = split_context_query(d, &quad, nullptr, quad.x_domain, 32, 99);
  CHECK(again.context_idx == ds.context_idx);
  for (size_t i = 0; i < ds.context.size(); ++i) {
    CHECK(again.context[i].first == ds.context[i].first);
    CHECK(again.context[i].second == ds.context[i].second);
  }

  // Context values re-derived from the formula itself.
  for (const auto& [x, y] : ds.context) CHECK(y == doctest::Approx(1.0 * x * x));

  CHECK_THROWS_AS(split_context_query(d, &quad, nullptr, quad.x_domain, 31, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(split_context_query(d, &quad, nullptr, quad.x_domain, 2, 1),
                  std::invalid_argument);
}
