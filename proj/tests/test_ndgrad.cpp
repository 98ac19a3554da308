#include <doctest.h>

#include <cmath>
#include <random>

#include "monoattn/ndgrad.hpp"

using namespace monoattn;
using namespace monoattn::nd;

namespace {

Array random_array(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Array a = Array::zeros({rows, cols});
  for (double& v : a.data()) v = u(rng);
  return a;
}

// Keeps every entry at least `gap` away from zero.
Array off_kink(Array a, double gap = 1e-3) {
  for (double& v : a.data()) {
    if (std::abs(v) < gap) v = v < 0 ? -gap : gap;
  }
  return a;
}

std::size_t random_extent(std::mt19937_64& rng) { return std::uniform_int_distribution<std::size_t>(1, 8)(rng); }

// Weighted sum so every output entry receives a distinct upstream gradient.
Var weighted(Graph& g, Var v, const Array& weights) {
  const Array w(v.value().shape(), std::vector<double>(weights.data().begin(), weights.data().end()));
  return sum(multiply(v, g.constant(w)));
}

template <class Build>
double worst_over_trials(std::mt19937_64& rng, int trials, Build build) {
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) worst = std::max(worst, build(rng));
  return worst;
}

}  // namespace

TEST_CASE("forward examples") {
  Graph g;
  CHECK(add(g.constant(Array::vector({1, 2})), g.constant(Array::vector({3, 4}))).value() == Array::vector({4, 6}));
  const Array s = row_softmax(g.constant(Array::vector({0, 0, 0}))).value();
  for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const Array a = Array::matrix(3, 2, {1, 2, 3, 4, 5, 6});
  CHECK(matmul(g.constant(Array::identity(3)), g.constant(a)).value() == a);
}

TEST_CASE("shape errors name the op and shapes") {
  Graph g;
  const Var a = g.constant(Array::zeros({2, 3}));
  const Var b = g.constant(Array::zeros({2, 2}));
  try {
    (void)add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    CHECK(what.find("add") != std::string::npos);
    CHECK(what.find("[2,3]") != std::string::npos);
    CHECK(what.find("[2,2]") != std::string::npos);
  }
  CHECK_THROWS_AS((void)matmul(a, a), ShapeError);
}

TEST_CASE("backward examples") {
  SUBCASE("sum of squares") {
    Graph g;
    const Var x = g.leaf(Array::vector({1, 2, 3}));
    const auto grads = g.backward(sum(multiply(x, x)));
    CHECK(grads[x] == Array::vector({2, 4, 6}));
  }
  SUBCASE("softmax cross-entropy matches softmax minus one-hot") {
    std::mt19937_64 rng(3);
    const Array logits = random_array(rng, 4, 5);
    const std::vector<int> targets = {0, 4, 2, 2};
    Graph g;
    const Var x = g.leaf(logits);
    const auto grads = g.backward(cross_entropy(x, targets));
    for (std::size_t r = 0; r < 4; ++r) {
      double mx = -1e300, z = 0.0;
      for (std::size_t c = 0; c < 5; ++c) mx = std::max(mx, logits(r, c));
      for (std::size_t c = 0; c < 5; ++c) z += std::exp(logits(r, c) - mx);
      for (std::size_t c = 0; c < 5; ++c) {
        const double expected = std::exp(logits(r, c) - mx) / z - (static_cast<int>(c) == targets[r] ? 1.0 : 0.0);
        CHECK(grads[x](r, c) == doctest::Approx(expected).epsilon(1e-12));
      }
    }
  }
  SUBCASE("constants and unreachable nodes get zero gradients") {
    Graph g;
    const Var c = g.constant(Array::vector({5, 6}));
    const Var x = g.leaf(Array::vector({1, 2}));
    const Var unused = g.leaf(Array::vector({7}));
    const auto grads = g.backward(sum(multiply(x, c)));
    CHECK(grads[c] == Array::zeros({2}));
    CHECK(grads[unused] == Array::zeros({1}));
    CHECK(grads[x] == Array::vector({5, 6}));
  }
  SUBCASE("loss gradient seed is one") {
    Graph g;
    const Var x = g.leaf(Array::vector({1, 2}));
    const Var loss = sum(x);
    CHECK(g.backward(loss)[loss].item() == 1.0);
  }
  SUBCASE("non-scalar loss is rejected") {
    Graph g;
    const Var x = g.leaf(Array::vector({1, 2}));
    CHECK_THROWS_AS((void)g.backward(x), ShapeError);
  }
}

TEST_CASE("max_with_zero uses subgradient 0 at the kink") {
  Graph g;
  const Var x = g.leaf(Array::vector({-1, 0, 2}));
  const auto grads = g.backward(sum(max_with_zero(x)));
  CHECK(grads[x] == Array::vector({0, 0, 1}));
}

TEST_CASE("grad_check on a sum of squares") {
  std::mt19937_64 rng(1);
  const double err = grad_check([](Graph&, Var x) { return sum(multiply(x, x)); }, random_array(rng, 3, 4));
  CHECK(err < 1e-6);
}

TEST_CASE("grad_check rejects non-finite values") {
  const Array x = Array::vector({1.0, std::nan("")});
  CHECK_THROWS_AS(grad_check([](Graph&, Var v) { return sum(v); }, x), NumericalError);
}

TEST_CASE("every op passes grad_check over random inputs") {
  std::mt19937_64 rng(2024);
  constexpr int kTrials = 100;
  constexpr double kTol = 1e-4;

  auto unary = [&](const char* name, auto op, double lo, double hi, bool avoid_zero) {
    const double worst = worst_over_trials(rng, kTrials, [&](std::mt19937_64& r) {
      const std::size_t rows = random_extent(r), cols = random_extent(r);
      Array x = random_array(r, rows, cols, lo, hi);
      if (avoid_zero) x = off_kink(x);
      Graph probe(false);
      const Array w = random_array(r, op(probe, probe.constant(x)).value().rows(),
                                   op(probe, probe.constant(x)).value().cols());
      return grad_check([&](Graph& g, Var v) { return weighted(g, op(g, v), w); }, x);
    });
    INFO(name);
    CHECK(worst < kTol);
  };

  unary("scale", [](Graph&, Var v) { return scale(v, -1.7); }, -2, 2, false);
  unary("add_scalar", [](Graph&, Var v) { return add_scalar(v, 0.3); }, -2, 2, false);
  unary("transpose", [](Graph&, Var v) { return transpose(v); }, -2, 2, false);
  unary("row_softmax", [](Graph&, Var v) { return row_softmax(v); }, -2, 2, false);
  unary("relu", [](Graph&, Var v) { return relu(v); }, -2, 2, true);
  unary("max_with_zero", [](Graph&, Var v) { return max_with_zero(v); }, -2, 2, true);
  unary("sum", [](Graph&, Var v) { return sum(v); }, -2, 2, false);
  unary("mean", [](Graph&, Var v) { return mean(v); }, -2, 2, false);
  unary("row_normalize", [](Graph&, Var v) { return row_normalize(v); }, 0.1, 2, false);
  unary("slice", [](Graph&, Var v) {
    const std::size_t r = v.value().rows(), c = v.value().cols();
    return slice(v, r / 2, r, 0, (c + 1) / 2);
  }, -2, 2, false);

  auto binary = [&](const char* name, auto op, auto shape_of_b) {
    const double worst = worst_over_trials(rng, kTrials, [&](std::mt19937_64& r) {
      const std::size_t rows = random_extent(r), cols = random_extent(r);
      const Array a = random_array(r, rows, cols);
      const auto [br, bc] = shape_of_b(rows, cols, r);
      const Array b = random_array(r, br, bc);
      Graph probe(false);
      const Array out = op(probe.constant(a), probe.constant(b)).value();
      const Array w = random_array(r, out.rows(), out.cols());
      const double left = grad_check([&](Graph& g, Var v) { return weighted(g, op(v, g.constant(b)), w); }, a);
      const double right = grad_check([&](Graph& g, Var v) { return weighted(g, op(g.constant(a), v), w); }, b);
      return std::max(left, right);
    });
    INFO(name);
    CHECK(worst < kTol);
  };
  auto same = [](std::size_t r, std::size_t c, std::mt19937_64&) { return std::pair{r, c}; };
  binary("add", [](Var a, Var b) { return add(a, b); }, same);
  binary("subtract", [](Var a, Var b) { return subtract(a, b); }, same);
  binary("multiply", [](Var a, Var b) { return multiply(a, b); }, same);
  binary("matmul", [](Var a, Var b) { return matmul(a, b); },
         [](std::size_t, std::size_t c, std::mt19937_64& r) { return std::pair{c, random_extent(r)}; });
  binary("add_row", [](Var a, Var b) { return add_row(a, b); },
         [](std::size_t, std::size_t c, std::mt19937_64&) { return std::pair{std::size_t{1}, c}; });
  binary("concat_rows", [](Var a, Var b) { const Var parts[] = {a, b}; return concat_rows(parts); },
         [](std::size_t, std::size_t c, std::mt19937_64& r) { return std::pair{random_extent(r), c}; });
  binary("concat_cols", [](Var a, Var b) { const Var parts[] = {a, b}; return concat_cols(parts); },
         [](std::size_t rr, std::size_t, std::mt19937_64& r) { return std::pair{rr, random_extent(r)}; });

  SUBCASE("gather") {
    const double worst = worst_over_trials(rng, kTrials, [&](std::mt19937_64& r) {
      const std::size_t rows = random_extent(r), cols = random_extent(r);
      std::vector<int> ids(random_extent(r));
      for (int& id : ids) id = std::uniform_int_distribution<int>(0, static_cast<int>(rows) - 1)(r);
      const Array w = random_array(r, ids.size(), cols);
      return grad_check([&](Graph& g, Var v) { return weighted(g, gather(v, ids), w); }, random_array(r, rows, cols));
    });
    CHECK(worst < kTol);
  }
  SUBCASE("cross_entropy") {
    const double worst = worst_over_trials(rng, kTrials, [&](std::mt19937_64& r) {
      const std::size_t rows = random_extent(r), cols = random_extent(r);
      std::vector<int> targets(rows);
      for (int& t : targets) t = std::uniform_int_distribution<int>(0, static_cast<int>(cols) - 1)(r);
      return grad_check([&](Graph&, Var v) { return cross_entropy(v, targets); }, random_array(r, rows, cols));
    });
    CHECK(worst < kTol);
  }
  SUBCASE("layer_norm") {
    const double worst = worst_over_trials(rng, kTrials, [&](std::mt19937_64& r) {
      const std::size_t rows = random_extent(r), cols = 3 + r() % 6;
      const Array x = random_array(r, rows, cols), gain = random_array(r, 1, cols), bias = random_array(r, 1, cols);
      const Array w = random_array(r, rows, cols);
      const double dx = grad_check(
          [&](Graph& g, Var v) { return weighted(g, layer_norm(v, g.constant(gain), g.constant(bias)), w); }, x);
      const double dg = grad_check(
          [&](Graph& g, Var v) { return weighted(g, layer_norm(g.constant(x), v, g.constant(bias)), w); }, gain);
      const double db = grad_check(
          [&](Graph& g, Var v) { return weighted(g, layer_norm(g.constant(x), g.constant(gain), v), w); }, bias);
      return std::max({dx, dg, db});
    });
    CHECK(worst < kTol);
  }
}

TEST_CASE("backward is deterministic") {
  std::mt19937_64 rng(9);
  const Array x = random_array(rng, 5, 6), w = random_array(rng, 6, 3);
  auto run = [&] {
    Graph g;
    const Var v = g.leaf(x);
    const Var loss = sum(row_softmax(matmul(v, g.constant(w))));
    const Var loss2 = add(loss, sum(multiply(v, v)));
    return g.backward(loss2)[v];
  };
  const Array a = run();
  const Array b = run();
  CHECK(a == b);
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 50; ++t) {
    const Array e = random_array(rng, random_extent(rng), random_extent(rng));
    const double c = std::uniform_real_distribution<double>(-50, 50)(rng);
    Graph g;
    const Array s = row_softmax(g.constant(e)).value();
    const Array shifted = row_softmax(add_scalar(g.constant(e), c)).value();
    for (std::size_t r = 0; r < s.rows(); ++r) {
      double total = 0.0;
      for (double v : s.row(r)) total += v;
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs(s[i] - shifted[i]) < 1e-12);
  }
}

TEST_CASE("inference graphs record no backward rules") {
  Graph g(false);
  const Var x = g.leaf(Array::vector({1, 2}));
  const Var loss = sum(multiply(x, x));
  const auto grads = g.backward(loss);
  CHECK(grads[x] == Array::zeros({2}));
}
