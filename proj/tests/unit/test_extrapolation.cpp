#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"
#include "unforge/errors.hpp"
#include "unforge/extrapolation.hpp"
#include "unforge/objectives.hpp"
#include "unforge/trainer.hpp"

#include <cmath>

using namespace unforge;
using unforge::testing::tiny_config;

namespace {

ParamStore vec(std::initializer_list<Real> xs) {
  Vector v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (Real x : xs) v[i++] = x;
  return ParamStore({{"w", Tensor({v.size()}, v)}});
}

ParamStore random_store(std::uint64_t seed, Index n = 64) {
  Rng rng(seed);
  Vector v(n);
  for (auto& x : v) x = rng.normal();
  return ParamStore({{"a", Tensor({n / 2}, v.head(n / 2))}, {"b", Tensor({2, n / 4}, v.tail(n / 2))}});
}

// Small integers: every intermediate below is exact.
ParamStore integer_store(std::uint64_t seed, Index n = 64) {
  Rng rng(seed);
  Vector v(n);
  for (auto& x : v) x = static_cast<Real>(static_cast<int>(rng.below(41)) - 20);
  return ParamStore({{"a", Tensor({n / 2}, v.head(n / 2))}, {"b", Tensor({2, n / 4}, v.tail(n / 2))}});
}

}  // namespace

TEST_CASE("extrapolation arithmetic") {
  const ParamStore out = mox_extrapolate(vec({0, 1}), vec({1, 0}), 2.0);
  CHECK(out.flat()[0] == -2.0);
  CHECK(out.flat()[1] == 3.0);
  const ParamStore ref = random_store(1), mem = random_store(2);
  CHECK(mox_extrapolate(ref, mem, 0.0) == ref);
  for (Real a : {0.5, 1.0, 4.0, 8.0}) CHECK(mox_extrapolate(ref, ref, a) == ref);
  const ParamStore got = mox_extrapolate(ref, mem, 4.0);
  for (Index i = 0; i < ref.total_len(); ++i)
    CHECK(got.flat()[i] == doctest::Approx(5.0 * ref.flat()[i] - 4.0 * mem.flat()[i]).epsilon(1e-13));
  CHECK(task_vector_unlearn(ref, mem, 1.0) == mox_extrapolate(ref, mem, 1.0));
  CHECK(task_vector_unlearn(ref, ref, 1.0) == ref);
  CHECK_THROWS_AS(mox_extrapolate(ref, vec({1, 2}), 1.0), StructuralMismatch);
  CHECK_THROWS_AS(mox_extrapolate(ref, mem, -1.0), ArgumentError);
}

TEST_CASE("alpha linearity") {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const ParamStore ref = integer_store(2 * s), mem = integer_store(2 * s + 1);
    for (auto [a1, a2] : {std::pair{0.5, 1.0}, {1.0, 3.0}, {2.0, 2.0}, {0.25, 4.0}}) {
      const ParamStore whole = mox_extrapolate(ref, mem, a1 + a2);
      const ParamStore parts = axpy(1.0, axpy(1.0, mox_extrapolate(ref, mem, a1), 1.0, mox_extrapolate(ref, mem, a2)),
                                    -1.0, ref);
      CHECK(whole == parts);
    }
    const ParamStore r = random_store(3 * s), m = random_store(3 * s + 1);
    const ParamStore whole = mox_extrapolate(r, m, 3.0);
    const ParamStore parts = axpy(1.0, axpy(1.0, mox_extrapolate(r, m, 1.0), 1.0, mox_extrapolate(r, m, 2.0)), -1.0, r);
    CHECK(l2_distance(whole, parts) < 1e-12 * l2_norm(whole));
  }
}

TEST_CASE("antipodality of the extrapolated direction") {
  for (std::uint64_t s = 0; s < 200; ++s) {
    const ParamStore ref = random_store(10 + s), mem = random_store(1000 + s);
    const Real alpha = 0.1 + 0.05 * static_cast<Real>(s);
    const ParamStore d_for = direction_delta(mox_extrapolate(ref, mem, alpha), ref);
    const ParamStore d_mem = direction_delta(mem, ref);
    CHECK(direction_cosine(d_for, d_mem) == doctest::Approx(-1.0).epsilon(1e-10));
    for (Index i = 0; i < d_for.total_len(); ++i) CHECK(std::abs(d_for.flat()[i] + d_mem.flat()[i]) <= 1e-10);
  }
}

TEST_CASE("momentum") {
  CHECK(momentum_update(vec({1}), vec({0}), 0.675).flat()[0] == doctest::Approx(0.675).epsilon(1e-15));
  const ParamStore a = random_store(5), b = random_store(6);
  CHECK(momentum_update(a, b, 1.0) == a);
  CHECK(momentum_update(a, std::nullopt, 0.5) == a);
  CHECK(momentum_update(a, a, 0.675) == a);
  for (std::uint64_t s = 0; s < 100; ++s) {
    const ParamStore x = random_store(100 + s), y = random_store(300 + s);
    const Real eta = 0.01 + 0.0099 * static_cast<Real>(s);
    const ParamStore m = momentum_update(x, y, eta);
    for (Index i = 0; i < x.total_len(); ++i) {
      CHECK(m.flat()[i] >= std::min(x.flat()[i], y.flat()[i]));
      CHECK(m.flat()[i] <= std::max(x.flat()[i], y.flat()[i]));
    }
  }
  CHECK_THROWS_AS(momentum_update(a, b, 0.0), ArgumentError);
  CHECK_THROWS_AS(momentum_update(a, b, 1.5), ArgumentError);
  CHECK_THROWS_AS(momentum_update(a, vec({1}), 0.5), StructuralMismatch);
}

TEST_CASE("directions") {
  const ParamStore d = direction_delta(vec({3, 4}), vec({0, 0}));
  CHECK(d.flat()[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(d.flat()[1] == doctest::Approx(0.8).epsilon(1e-15));
  for (std::uint64_t s = 0; s < 20; ++s) {
    const ParamStore u = direction_delta(random_store(s), random_store(s + 50));
    CHECK(std::abs(l2_norm(u) - 1.0) <= 1e-12);
    CHECK(direction_cosine(u, u) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(direction_cosine(u, axpy(-1.0, u, 0.0, u)) == doctest::Approx(-1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(direction_delta(vec({1, 2}), vec({1, 2})), DegenerateDirection);
}

TEST_CASE("config validation") {
  ExtrapolationConfig c;
  CHECK(c.alpha == 4.0);
  CHECK(c.eta == 0.675);
  CHECK_NOTHROW(c.validate());
  c.alpha = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.alpha = 1.0;
  c.eta = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("forget nll grows with alpha after memorization") {
  const Transformer model(tiny_config(2));
  const DatasetSplit data = split_by_ratio(generate_corpus(4, 10, 2), 0.2, 3, 4);
  TrainConfig ft;
  ft.epochs = 40;
  ft.batch_size = 8;
  ft.lr_peak = 1e-2;
  ft.eval_every = -1;
  const ParamStore ref = finetune_reference(model, data, ft).theta;
  TrainConfig mem = ft;
  mem.epochs = 10;
  mem.lr_peak = 3e-3;
  mem.objective.variant = Variant::MoxMemCE;
  const ParamStore theta_mem = train(model, ref, &ref, data, mem).theta;
  std::vector<const QAPair*> forget;
  for (const auto& qa : data.forget) forget.push_back(&qa);
  auto nll = [&](const ParamStore& p) {
    Graph g;
    g.bind(p);
    return loss_ce(LossContext{g, model, nullptr}, forget).item();
  };
  std::vector<Real> curve;
  for (Real a : {0.0, 0.5, 1.0, 2.0, 4.0}) curve.push_back(nll(mox_extrapolate(ref, theta_mem, a)));
  int inversions = 0;
  for (std::size_t i = 1; i < curve.size(); ++i)
    if (curve[i] < curve[i - 1]) {
      ++inversions;
      CHECK(curve[i - 1] - curve[i] <= 0.01 * curve.back());
    }
  CHECK(inversions <= 1);
  CHECK(curve.back() > curve.front());
}
