#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"
#include "unforge/errors.hpp"
#include "unforge/trainer.hpp"

#include <cmath>
#include <limits>
#include <sstream>

using namespace unforge;
using unforge::testing::perturbed;
using unforge::testing::tiny_config;

namespace {

ParamStore scalar_store(Real x) { return ParamStore({{"x", Tensor({1}, (Vector(1) << x).finished())}}); }

DatasetSplit small_split() {
  return split_by_ratio(generate_corpus(2, 10, 2), 0.2, 1, 4);
}

TrainConfig quick(Variant v) {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 4;
  c.lr_peak = 1e-2;
  c.warmup_epochs = 0.5;
  c.objective.variant = v;
  return c;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  const Real peak = 2.0;
  CHECK(lr_at(0, 110, 10, peak) == doctest::Approx(0.2));
  CHECK(lr_at(9, 110, 10, peak) == doctest::Approx(peak));
  CHECK(lr_at(10, 110, 10, peak) == doctest::Approx(peak));
  CHECK(lr_at(109, 110, 10, peak) == doctest::Approx(peak / 100.0));
  for (std::int64_t s = 1; s < 10; ++s) CHECK(lr_at(s, 110, 10, peak) > lr_at(s - 1, 110, 10, peak));
  for (std::int64_t s = 11; s < 110; ++s) CHECK(lr_at(s, 110, 10, peak) < lr_at(s - 1, 110, 10, peak));
  CHECK(lr_at(0, 5, 0, peak) == peak);
  CHECK_THROWS_AS(lr_at(110, 110, 10, peak), ArgumentError);
}

TEST_CASE("adamw against a hand-rolled oracle") {
  ParamStore theta = scalar_store(0.0);
  OptimState st = OptimState::zeros_like(theta);
  adamw_step(theta, scalar_store(1.0), st, 0.1, 0.0);
  CHECK(theta.flat()[0] == doctest::Approx(-0.1).epsilon(1e-6));

  // several steps with varying gradients and decay
  const std::vector<double> grads{0.5, -1.5, 2.0, 0.25, -0.75};
  const double lr = 0.05, wd = 0.1;
  ParamStore t2 = scalar_store(1.0);
  OptimState s2 = OptimState::zeros_like(t2);
  double x = 1.0, m = 0.0, v = 0.0;
  for (std::size_t k = 0; k < grads.size(); ++k) {
    adamw_step(t2, scalar_store(grads[k]), s2, lr, wd);
    const double g = grads[k];
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, k + 1.0));
    const double vh = v / (1.0 - std::pow(0.999, k + 1.0));
    x = x - lr * wd * x - lr * mh / (std::sqrt(vh) + 1e-8);
    CHECK(t2.flat()[0] == doctest::Approx(x).epsilon(1e-13));
  }
  CHECK(s2.t == 5);
}

TEST_CASE("decoupled decay and zero gradients") {
  ParamStore theta = scalar_store(3.0);
  OptimState st = OptimState::zeros_like(theta);
  adamw_step(theta, scalar_store(0.0), st, 0.1, 0.0);
  CHECK(theta.flat()[0] == 3.0);
  adamw_step(theta, scalar_store(0.0), st, 0.1, 0.2);
  CHECK(theta.flat()[0] == doctest::Approx(3.0 * (1.0 - 0.02)).epsilon(1e-15));

  ParamStore s = scalar_store(2.0);
  sgd_step(s, scalar_store(0.5), 0, 0.1, 0.1);
  CHECK(s.flat()[0] == doctest::Approx(2.0 * 0.99 - 0.05).epsilon(1e-15));
}

TEST_CASE("non-finite gradients raise a divergence error with the step") {
  ParamStore theta = scalar_store(1.0);
  OptimState st = OptimState::zeros_like(theta);
  adamw_step(theta, scalar_store(1.0), st, 0.1, 0.0);
  try {
    adamw_step(theta, scalar_store(std::numeric_limits<double>::quiet_NaN()), st, 0.1, 0.0);
    FAIL("expected a divergence error");
  } catch (const DivergenceError& e) {
    CHECK(e.step() == 2);
  }
  CHECK_THROWS_AS(sgd_step(theta, scalar_store(INFINITY), 7, 0.1, 0.0), DivergenceError);
}

TEST_CASE("zero epochs return the start point") {
  const Transformer m(tiny_config());
  const ParamStore theta0 = perturbed(m.init_params(), 1, 0.1);
  TrainConfig c = quick(Variant::CE);
  c.epochs = 0;
  const TrainResult r = train(m, theta0, nullptr, small_split(), c);
  CHECK(r.theta == theta0);
  CHECK(r.trace.rows.empty());
  CHECK(r.steps == 0);
}

TEST_CASE("training is deterministic and writes a trace") {
  const Transformer m(tiny_config(3));
  const DatasetSplit data = small_split();
  TrainConfig c = quick(Variant::CE);
  c.seed = 4;
  const TrainResult a = finetune_reference(m, data, c);
  const TrainResult b = finetune_reference(m, data, c);
  CHECK(a.theta == b.theta);
  std::ostringstream ca, cb;
  a.trace.write_csv(ca);
  b.trace.write_csv(cb);
  CHECK(ca.str() == cb.str());
  CHECK(ca.str().rfind("step,epoch,lr,loss,grad_norm,dist_to_ref,cos_to_ref,collapse_retain,collapse_forget\n", 0) ==
        0);
  CHECK(a.steps == 2 * steps_per_epoch(data, c));
  CHECK(static_cast<std::int64_t>(a.trace.rows.size()) == a.steps);
  c.seed = 5;
  CHECK_FALSE(finetune_reference(m, data, c).theta == a.theta);
}

TEST_CASE("steps per epoch") {
  const DatasetSplit data = small_split();  // 2 forget entities x 2 attrs, 16 retain
  TrainConfig c = quick(Variant::CE);
  CHECK(steps_per_epoch(data, c) == 5);
  c.objective.variant = Variant::GA;
  CHECK(steps_per_epoch(data, c) == 1);
  c.batch_size = 0;
  CHECK(steps_per_epoch(data, c) == 1);
  c.objective.variant = Variant::CE;
  CHECK(steps_per_epoch(data, c) == 1);
}

TEST_CASE("the oracle never sees forget pairs") {
  const Transformer m(tiny_config(5));
  const DatasetSplit data = small_split();
  DatasetSplit scrambled = data;
  for (auto& qa : scrambled.forget) qa.answer = {kUnkToken, kEosToken};
  TrainConfig c = quick(Variant::CE);
  CHECK(retrain_oracle(m, data, c).theta == retrain_oracle(m, scrambled, c).theta);
  CHECK_FALSE(finetune_reference(m, data, c).theta == finetune_reference(m, scrambled, c).theta);
}

TEST_CASE("full-batch descent at a small constant lr is monotone") {
  const Transformer m(tiny_config(6));
  const DatasetSplit data = small_split();
  TrainConfig c = quick(Variant::CE);
  c.batch_size = 0;
  c.epochs = 30;
  c.optimizer = OptimizerKind::SGD;
  c.schedule = Schedule::Constant;
  c.weight_decay = 0.0;
  c.lr_peak = 0.05;
  const TrainResult r = finetune_reference(m, data, c);
  REQUIRE(r.trace.rows.size() == 30);
  for (std::size_t i = 1; i < r.trace.rows.size(); ++i)
    CHECK(r.trace.rows[i].loss <= r.trace.rows[i - 1].loss + 1e-6);
  CHECK(r.trace.rows.back().loss < r.trace.rows.front().loss);
}

TEST_CASE("an exploding run is recorded as divergence") {
  const Transformer m(tiny_config(7));
  const DatasetSplit data = small_split();
  TrainConfig c = quick(Variant::GA);
  c.epochs = 50;
  c.optimizer = OptimizerKind::SGD;
  c.schedule = Schedule::Constant;
  c.lr_peak = 1e150;
  const ParamStore ref = m.init_params();
  const TrainResult r = train(m, ref, &ref, data, c);
  REQUIRE(r.divergence.has_value());
  CHECK(r.steps < 50);
  CHECK(r.theta.all_finite());
  CHECK_FALSE(r.divergence->reason.empty());
}

TEST_CASE("forget-driven objectives draw retain pairs and respect the reference") {
  const Transformer m(tiny_config(8));
  const DatasetSplit data = small_split();
  TrainConfig c = quick(Variant::MoxMemCE);
  const ParamStore ref = finetune_reference(m, data, quick(Variant::CE)).theta;
  CHECK_THROWS_AS(train(m, ref, nullptr, data, c), ArgumentError);
  const TrainResult r = train(m, ref, &ref, data, c);
  CHECK_FALSE(r.divergence.has_value());
  CHECK(r.trace.rows.front().dist_to_ref > 0.0);
  DatasetSplit no_retain = data;
  no_retain.retain.clear();
  CHECK_THROWS_AS(train(m, ref, &ref, no_retain, c), ArgumentError);
}

TEST_CASE("config validation") {
  TrainConfig c;
  c.lr_peak = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.warmup_epochs = 20;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.retain_per_forget = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.epochs = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
