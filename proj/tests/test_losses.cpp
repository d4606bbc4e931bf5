#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "ren/losses.hpp"
#include "support.hpp"

using namespace ren;

namespace {

double scalar(const Graph& g, Var v) { return g.value(v)[0]; }

ParamSet zero_disc(std::size_t width) {
  ParamSet d = Discriminator::make(width, 5, 1).params;
  for (auto& t : d.tensors) t.value.fill(0.0);
  return d;
}

// One sigmoid unit D(h) = sigmoid(w * h).
ParamSet unit_disc(double w) {
  return {{{1, 1}, {Activation::sigmoid}}, {{"layer0.weight", Tensor(1, 1, w)}, {"layer0.bias", Tensor(1, 1)}}};
}

}  // namespace

TEST_CASE("cross entropy worked examples") {
  Graph g;
  const std::vector<int> y0{0};
  CHECK(scalar(g, cross_entropy(g, g.constant(Tensor::row({1, 0, 0})), y0)) == 0.0);
  CHECK(scalar(g, cross_entropy(g, g.constant(Tensor::row({0.25, 0.25, 0.25, 0.25})), y0)) ==
        Catch::Approx(std::log(4.0)).epsilon(1e-14));
  const std::vector<int> y{1, 2};
  const Tensor p = Tensor::from_rows({{0, 1, 0, 0}, {0.25, 0.25, 0.25, 0.25}});
  CHECK(scalar(g, cross_entropy(g, g.constant(p), y)) == Catch::Approx(0.6931).margin(1e-4));
  // floored, not infinite
  CHECK(scalar(g, cross_entropy(g, g.constant(Tensor::row({1, 0})), std::vector<int>{1})) ==
        Catch::Approx(-std::log(1e-12)).epsilon(1e-12));
  CHECK_THROWS_AS(cross_entropy(g, g.constant(Tensor::row({1, 0})), std::vector<int>{2}), ContractError);
  CHECK_THROWS_AS(cross_entropy(g, g.constant(Tensor::row({1, 0})), std::vector<int>{-1}), ContractError);
}

TEST_CASE("adversarial loss with an undecided discriminator is 2 ln 2") {
  std::mt19937_64 rng(1);
  const Tensor f = testing::random_tensor(4, 3, rng);
  const Tensor p = testing::random_tensor(4, 2, rng, 0.0, 1.0);
  Graph g;
  const ParamSet zd = zero_disc(6);
  const BoundParams d = bind(g, zd);
  Var fs = g.constant(f), pv = g.constant(p);
  CHECK(scalar(g, adv_student(g, d, fs, fs, pv, pv, 1.0)) == Catch::Approx(2.0 * std::log(2.0)).epsilon(1e-14));
  CHECK(scalar(g, adv_teacher(g, d, fs, fs, pv, pv, 1.0)) == Catch::Approx(2.0 * std::log(2.0)).epsilon(1e-14));
  CHECK_THROWS_AS(domain_adv_loss(g, d, g.constant(Tensor(0, 6)), g.constant(Tensor(2, 6)), 1.0), ContractError);
  CHECK_THROWS_AS(domain_adv_loss(g, d, g.constant(Tensor(2, 5)), g.constant(Tensor(2, 5)), 1.0), DimensionError);
}

TEST_CASE("a near-perfect discriminator drives the loss toward zero") {
  Graph g;
  const ParamSet ud = unit_disc(100.0);
  const BoundParams d = bind(g, ud);
  const double loss = scalar(g, domain_adv_loss(g, d, g.constant(Tensor(2, 1, 1.0)), g.constant(Tensor(2, 1, -1.0)), 1.0));
  CHECK(loss >= 0.0);
  CHECK(loss <= 2.01 * kDiscriminatorEps);
}

TEST_CASE("lambda = 0 blocks gradient to the features but leaves D's gradient unchanged") {
  std::mt19937_64 rng(4);
  const ParamSet disc = Discriminator::make(6, 5, 2).params;
  const Tensor fs = testing::random_tensor(3, 3, rng), ft = testing::random_tensor(3, 3, rng);
  const Tensor ps = testing::random_tensor(3, 2, rng, 0.0, 1.0), pt = testing::random_tensor(3, 2, rng, 0.0, 1.0);
  auto run = [&](double lambda, Tensor& f_grad) {
    Graph g;
    const BoundParams d = bind(g, disc);
    Var a = g.parameter(fs), b = g.parameter(ft);
    g.backward(adv_student(g, d, a, b, g.constant(ps), g.constant(pt), lambda));
    f_grad = g.grad(a);
    return gradients(g, d);
  };
  Tensor f0, f1;
  const auto d0 = run(0.0, f0);
  const auto d1 = run(1.0, f1);
  for (double v : f0.values()) CHECK(v == 0.0);
  CHECK(testing::max_abs_diff(f1, Tensor(f1.shape())) > 0.0);
  REQUIRE(d0.size() == d1.size());
  for (std::size_t t = 0; t < d0.size(); ++t) CHECK(d0[t] == d1[t]);
}

TEST_CASE("a single class reduces the conditioned loss to the unconditioned one") {
  std::mt19937_64 rng(9);
  const ParamSet disc = Discriminator::make(4, 5, 3).params;
  const Tensor fs = testing::random_tensor(3, 4, rng), ft = testing::random_tensor(5, 4, rng);
  Graph g;
  const BoundParams d = bind(g, disc);
  const double conditioned =
      scalar(g, adv_student(g, d, g.constant(fs), g.constant(ft), g.constant(Tensor(3, 1, 1.0)),
                            g.constant(Tensor(5, 1, 1.0)), 1.0));
  const double plain = scalar(g, domain_adv_loss(g, d, g.constant(fs), g.constant(ft), 1.0));
  CHECK(conditioned == plain);
}

TEST_CASE("consistency worked examples and value symmetry") {
  Graph g;
  CHECK(scalar(g, consistency(g, g.constant(Tensor::row({1, 0})), g.constant(Tensor::row({0, 1})))) == 2.0);
  CHECK(scalar(g, consistency(g, g.constant(Tensor::row({0.3, 0.7})), g.constant(Tensor::row({0.3, 0.7})))) == 0.0);
  CHECK(scalar(g, consistency(g, g.constant(Tensor::row({1, 0})), g.constant(Tensor::row({0, 1})),
                              ConsistencyNorm::l2)) == Catch::Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK_THROWS_AS(consistency(g, g.constant(Tensor(2, 2)), g.constant(Tensor(2, 3))), DimensionError);
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor a = testing::random_tensor(4, 3, rng), b = testing::random_tensor(4, 3, rng);
    double oracle = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) oracle += (a[k] - b[k]) * (a[k] - b[k]);
    oracle /= 4.0;
    const double ab = scalar(g, consistency(g, g.constant(a), g.constant(b)));
    const double ba = scalar(g, consistency(g, g.constant(b), g.constant(a)));
    CHECK(ab >= 0.0);
    CHECK(ab == ba);
    CHECK(ab == Catch::Approx(oracle).epsilon(1e-13));
  }
}

TEST_CASE("consistency sends no gradient to the teacher argument once it is detached") {
  Graph g;
  Var s = g.parameter(Tensor::row({0.2, 0.8}));
  Var t = g.parameter(Tensor::row({0.6, 0.4}));
  g.backward(consistency(g, s, detach(g, t)));
  CHECK(testing::max_abs_diff(g.grad(s), Tensor::row({-0.8, 0.8})) <= 1e-15);
  CHECK(g.grad(t) == Tensor::row({0.0, 0.0}));
}

TEST_CASE("total loss weighting") {
  const LossBreakdown parts{1.0, 0.5, 0.5, 0.2, 0.0};
  CHECK(total_loss(parts, {1.0, 1.0, 1.0}) == Catch::Approx(2.2).epsilon(1e-15));
  CHECK(total_loss(parts, {0.0, 0.0, 0.0}) == 1.0);
  CHECK_THROWS_AS(total_loss(parts, {-1.0, 1.0, 1.0}), ConfigError);
  CHECK_THROWS_AS(total_loss(parts, {1.0, 1.0, -0.1}), ConfigError);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    Graph g;
    const LossWeights w{u(rng), u(rng), u(rng)};
    LossTerms terms{g.constant(Tensor(1, 1, u(rng))), g.constant(Tensor(1, 1, u(rng))),
                    g.constant(Tensor(1, 1, u(rng))), g.constant(Tensor(1, 1, u(rng)))};
    const LossBreakdown b = breakdown(g, terms, total_loss(g, terms, w), w);
    CHECK(std::abs(b.total - (b.l_c + w.lambda_stu * b.l_d_stu + w.lambda_tea * b.l_d_tea + w.gamma * b.l_con)) <=
          1e-10);
    CHECK(std::abs(b.total - total_loss(b, w)) <= 1e-10);
  }
}
