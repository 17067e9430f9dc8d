#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"
#include "unforge/autodiff.hpp"
#include "unforge/errors.hpp"
#include "unforge/finite_diff.hpp"
#include "unforge/param_store.hpp"
#include "unforge/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

using namespace unforge;

namespace {

ParamStore small_store(std::uint64_t seed) {
  Rng rng(seed);
  auto t = [&](Shape s) {
    Vector v(shape_size(s));
    for (auto& x : v) x = 0.5 * rng.normal();
    return Tensor(std::move(s), std::move(v));
  };
  return ParamStore({{"emb", t({5, 4})},
                     {"w", t({4, 6})},
                     {"b", t({6})},
                     {"gain", t({6})},
                     {"bias", t({6})},
                     {"u", t({6, 3})}});
}

// Touches every differentiable op.
Var composite(Graph& g) {
  const std::vector<Index> ids{2, 0, 4, 2};
  Var x = embedding(g.param("emb"), ids);
  Var h = add_row(matmul(x, g.param("w")), g.param("b"));
  h = layer_norm(gelu(h), g.param("gain"), g.param("bias"));
  Var left = slice_cols(h, 0, 3);
  Var right = slice_cols(h, 3, 3);
  Var att = causal_softmax(0.7 * matmul_nt(left, right));
  Var mixed = matmul(att, right);
  const std::vector<Var> parts{mixed, left};
  Var cat = concat_cols(parts);
  Var z = matmul(cat, g.param("u"));
  Var lp = log_softmax(z);
  const std::vector<Index> rows{0, 1, 3}, cols{2, 0, 1};
  Var picked = pick(lp, rows, cols);
  const std::vector<Index> keep{1, 3};
  RowMatrix w(2, 3);
  w << 0.2, -0.4, 0.1, 0.3, 0.5, -0.6;
  Var ws = weighted_sum(select_rows(z, keep), w);
  const std::vector<Var> terms{-mean(picked), ws, sum(log_sigmoid(z)) - 0.1 * sum(z)};
  return add_n(terms);
}

}  // namespace

TEST_CASE("dot is the serial left-to-right sum") {
  const ParamStore a = small_store(1), b = small_store(2);
  Real acc = 0.0;
  for (Index i = 0; i < a.total_len(); ++i) acc += a.flat()[i] * b.flat()[i];
  CHECK(dot(a, b) == acc);
  CHECK(l2_norm(a) == doctest::Approx(std::sqrt(dot(a, a))).epsilon(1e-15));
}

TEST_CASE("axpy is elementwise") {
  const ParamStore a = small_store(3), b = small_store(4);
  const ParamStore c = axpy(2.5, a, -0.5, b);
  for (Index i = 0; i < a.total_len(); ++i) CHECK(c.flat()[i] == 2.5 * a.flat()[i] + -0.5 * b.flat()[i]);
  CHECK(a == small_store(3));
}

TEST_CASE("cosine of parallel and antiparallel stores") {
  const ParamStore a = small_store(5);
  CHECK(cosine(a, axpy(3.0, a, 0.0, a)) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(cosine(a, axpy(-1.0, a, 0.0, a)) == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(l2_distance(a, a) == 0.0);
}

TEST_CASE("mismatched stores are rejected") {
  const ParamStore a = small_store(1);
  const ParamStore other({{"emb", Tensor::zeros({5, 4})}});
  CHECK_THROWS_AS(dot(a, other), StructuralMismatch);
  CHECK_THROWS_AS(axpy(1.0, a, 1.0, other), StructuralMismatch);
  CHECK_FALSE(a.congruent(other));
  CHECK(a.congruent(ParamStore::zeros_like(a)));
}

TEST_CASE("layout offsets follow manifest order") {
  const ParamStore a = small_store(1);
  Index expect = 0;
  for (const auto& e : a.entries()) {
    CHECK(e.offset == expect);
    expect += e.size;
  }
  CHECK(expect == a.total_len());
  CHECK_THROWS_AS(a.tensor("missing"), ArgumentError);
}

TEST_CASE("backward matches central differences on a composite graph") {
  const ParamStore theta = small_store(7);
  Graph g;
  g.bind(theta);
  const GradStore analytic = g.backward(composite(g));
  const GradStore numeric = finite_diff_grad(
      [](const ParamStore& p) {
        Graph h;
        h.bind(p);
        return composite(h).item();
      },
      theta, 1e-6);
  CHECK(max_relative_error(analytic, numeric, 1e-6) < 1e-6);
}

TEST_CASE("unreached parameters get zero gradient") {
  const ParamStore theta = small_store(8);
  Graph g;
  g.bind(theta);
  const GradStore grad = g.backward(sum(g.param("u")));
  CHECK(grad.matrix(theta.layout().index_of("w")).isZero());
  CHECK(grad.matrix(theta.layout().index_of("u")).isOnes());
}

TEST_CASE("backward through an opaque node is a capability error") {
  const ParamStore theta = small_store(9);
  Graph g;
  g.bind(theta);
  Var y = opaque(g.param("u"), [](const RowMatrix& m) { return RowMatrix(m.array().abs()); }, "abs");
  CHECK_THROWS_AS(g.backward(sum(y)), CapabilityError);
}

TEST_CASE("causal softmax masks the future exactly") {
  const ParamStore theta = small_store(10);
  Graph g;
  g.bind(theta);
  Var a = causal_softmax(matmul_nt(g.param("emb"), g.param("emb")));
  const RowMatrix& p = a.value();
  for (Index i = 0; i < p.rows(); ++i) {
    CHECK(p.row(i).sum() == doctest::Approx(1.0).epsilon(1e-14));
    for (Index j = i + 1; j < p.cols(); ++j) CHECK(p(i, j) == 0.0);
  }
}

TEST_CASE("log_sigmoid stays finite for large inputs") {
  ParamStore theta({{"x", Tensor({1, 4}, (Vector(4) << -800.0, -5.0, 5.0, 800.0).finished())}});
  Graph g;
  g.bind(theta);
  const RowMatrix& v = log_sigmoid(g.param("x")).value();
  CHECK(v(0, 0) == doctest::Approx(-800.0));
  CHECK(v(0, 1) == doctest::Approx(-5.006715348489118));
  CHECK(v(0, 2) == doctest::Approx(-0.006715348489118));
  CHECK(v(0, 3) == 0.0);
}

TEST_CASE("finite differences of a quadratic") {
  ParamStore theta({{"x", Tensor({3}, (Vector(3) << 1.0, -2.0, 0.5).finished())}});
  const GradStore g = finite_diff_grad(
      [](const ParamStore& p) {
        const Vector& x = p.flat();
        return 3.0 * x[0] * x[0] + x[1] * x[1] * x[1] + x[0] * x[2];
      },
      theta, 1e-5);
  CHECK(g.flat()[0] == doctest::Approx(6.0 + 0.5).epsilon(1e-9));
  CHECK(g.flat()[1] == doctest::Approx(12.0).epsilon(1e-9));
  CHECK(g.flat()[2] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("rng streams are reproducible and well formed") {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs = differs || x != c.next_u64();
  }
  CHECK(differs);

  Rng r(1);
  double m1 = 0.0, m2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    m1 += z;
    m2 += z * z;
    const double u = r.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    CHECK(r.below(7) < 7u);
  }
  m1 /= n;
  m2 = m2 / n - m1 * m1;
  CHECK(std::abs(m1) < 0.03);
  CHECK(std::abs(m2 - 1.0) < 0.05);
}

TEST_CASE("shuffle permutes") {
  Rng r(3);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  r.shuffle(std::span<int>(v));
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
  CHECK_FALSE(std::is_sorted(v.begin(), v.end()));
}

TEST_CASE("derived seeds separate streams") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t tag = 0; tag < 64; ++tag) seen.insert(derive_seed(7, tag));
  CHECK(seen.size() == 64);
  CHECK(derive_seed(7, 1) == derive_seed(7, 1));
}
