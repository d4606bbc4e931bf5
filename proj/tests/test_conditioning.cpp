#include <catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <random>

#include "ren/conditioning.hpp"
#include "support.hpp"

using namespace ren;

namespace {

Tensor random_probabilities(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  Tensor p(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (double& v : p.row_span(i)) s += (v = u(rng));
    for (double& v : p.row_span(i)) v /= s;
  }
  return p;
}

Tensor outer(const Tensor& f, const Tensor& p) {
  Graph g;
  return g.value(multilinear_map(g, g.constant(f), g.constant(p)));
}

}  // namespace

TEST_CASE("multilinear map worked examples") {
  CHECK(outer(Tensor::row({1, 2, 3}), Tensor::row({1, 0})) == Tensor::row({1, 0, 2, 0, 3, 0}));
  CHECK(outer(Tensor::row({1, 1}), Tensor::row({0.5, 0.5})) == Tensor::row({0.5, 0.5, 0.5, 0.5}));
  CHECK(outer(Tensor::row({2, -1}), Tensor::row({1})) == Tensor::row({2, -1}));
  CHECK_THROWS_AS(outer(Tensor(2, 3), Tensor(3, 2)), DimensionError);
}

TEST_CASE("multilinear map rows factor in norm") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor f = testing::random_tensor(3, 5, rng, -3.0, 3.0);
    const Tensor p = testing::random_tensor(3, 4, rng, -1.0, 1.0);
    const Tensor h = outer(f, p);
    REQUIRE(h.cols() == 20);
    for (std::size_t i = 0; i < 3; ++i) {
      auto norm = [](std::span<const double> r) {
        return std::sqrt(std::inner_product(r.begin(), r.end(), r.begin(), 0.0));
      };
      CHECK(std::abs(norm(h.row_span(i)) - norm(f.row_span(i)) * norm(p.row_span(i))) <= 1e-12);
    }
  }
}

TEST_CASE("with a one-hot condition the feature gradient is the selected column block") {
  std::mt19937_64 rng(8);
  const std::size_t d = 4, c = 3;
  for (std::size_t cls = 0; cls < c; ++cls) {
    const Tensor f0 = testing::random_tensor(1, d, rng);
    Tensor p(1, c);
    p[cls] = 1.0;
    const Tensor upstream = testing::random_tensor(1, d * c, rng);

    Graph g;
    Var f = g.parameter(f0);
    g.backward(sum(g, mul(g, multilinear_map(g, f, g.constant(p)), g.constant(upstream))));
    const Tensor analytic = g.grad(f);

    Tensor block(1, d);
    for (std::size_t j = 0; j < d; ++j) block[j] = upstream[j * c + cls];
    CHECK(testing::max_abs_diff(analytic, block) <= 1e-15);

    auto value = [&](const Tensor& x) {
      const Tensor h = outer(x, p);
      double s = 0.0;
      for (std::size_t k = 0; k < h.size(); ++k) s += h[k] * upstream[k];
      return s;
    };
    CHECK(testing::max_abs_diff(testing::numeric_gradient(value, f0, 1e-6), block) <= 1e-6);
  }
}

TEST_CASE("pred_ema worked examples") {
  PredEmaState s(0.5);
  const std::vector<std::uint64_t> id{7};
  CHECK(pred_ema(s, Branch::student, id, Tensor::row({1, 0})) == Tensor::row({1, 0}));
  CHECK(pred_ema(s, Branch::student, id, Tensor::row({0, 1})) == Tensor::row({0.5, 0.5}));
  CHECK(s.size(Branch::teacher) == 0);
  CHECK(pred_ema(s, Branch::teacher, id, Tensor::row({0.2, 0.8})) == Tensor::row({0.2, 0.8}));
  CHECK(*s.find(Branch::student, 7) == std::vector<double>{0.5, 0.5});
  CHECK(s.find(Branch::student, 8) == nullptr);

  PredEmaState fixed(0.6);
  const Tensor p = Tensor::row({0.25, 0.75});
  for (int n = 0; n < 20; ++n) CHECK(pred_ema(fixed, Branch::teacher, id, p) == p);
}

TEST_CASE("pred_ema rejects bad inputs") {
  CHECK_THROWS_AS(PredEmaState(1.2), ConfigError);
  CHECK_THROWS_AS(PredEmaState(-0.1), ConfigError);
  PredEmaState s;
  const std::vector<std::uint64_t> ids{1, 2};
  CHECK_THROWS_AS(s.update(Branch::student, ids, Tensor::row({1, 0})), DimensionError);
  CHECK_THROWS_AS(s.update(Branch::student, std::vector<std::uint64_t>{1}, Tensor::row({0.7, 0.7})),
                  ContractError);
}

TEST_CASE("alpha_p = 1 returns the current prediction") {
  std::mt19937_64 rng(5);
  PredEmaState s(1.0);
  const std::vector<std::uint64_t> ids{0, 1, 2};
  for (int n = 0; n < 50; ++n) {
    const Tensor p = random_probabilities(3, 4, rng);
    CHECK(s.update(Branch::student, ids, p) == p);
  }
}

TEST_CASE("ensembled rows stay probability vectors and match an independent recursion") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> ua(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    const double alpha = ua(rng);
    PredEmaState s(alpha);
    std::vector<std::vector<double>> oracle(6);
    std::uniform_int_distribution<std::uint64_t> pick(0, 5);
    for (int n = 0; n < 1000; ++n) {
      const std::vector<std::uint64_t> ids{pick(rng), pick(rng) + 6};
      const Tensor p = random_probabilities(2, 3, rng);
      const Tensor out = s.update(Branch::student, ids, p);
      const std::size_t k = ids[0];
      if (oracle[k].empty()) {
        oracle[k].assign(p.row_span(0).begin(), p.row_span(0).end());
      } else {
        for (std::size_t j = 0; j < 3; ++j) oracle[k][j] = (1.0 - alpha) * oracle[k][j] + alpha * p(0, j);
      }
      for (std::size_t i = 0; i < 2; ++i) {
        double sum = 0.0;
        for (double v : out.row_span(i)) {
          CHECK(v >= 0.0);
          sum += v;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-9);
      }
      for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(out(0, j) - oracle[k][j]) <= 1e-12);
    }
  }
}
