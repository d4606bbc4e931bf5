#include <catch_amalgamated.hpp>

#include <random>

#include "ren/gradcheck.hpp"
#include "support.hpp"

using ren::Graph;
using ren::ParamSet;
using ren::Tensor;
using ren::Var;

namespace {

ParamSet single_tensor(const Tensor& t) {
  ParamSet ps{{{t.rows(), t.cols()}, {ren::Activation::identity}}, {{"w", t}}};
  return ps;
}

}  // namespace

TEST_CASE("quadratic loss is checked to 1e-7") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    ParamSet ps = single_tensor(testing::random_tensor(3, 4, rng, -2.0, 2.0));
    const Tensor target = testing::random_tensor(3, 4, rng);
    auto loss = [&](Graph& g, std::span<const ren::BoundParams> b) {
      return ren::scale(g, ren::sum(g, ren::square(g, ren::sub(g, b[0].vars[0], g.constant(target)))), 0.5);
    };
    const auto r = ren::finite_diff_check(loss, {&ps});
    CHECK(r.max_rel_error <= 1e-7);
    CHECK(r.checked == 12);
  }
}

TEST_CASE("a loss that ignores its parameters has zero gradients on both sides") {
  ParamSet ps = single_tensor(Tensor::row({1.0, -2.0}));
  auto loss = [](Graph& g, std::span<const ren::BoundParams>) { return g.constant(Tensor(1, 1, 3.0)); };
  const auto r = ren::finite_diff_check(loss, {&ps});
  CHECK(r.max_rel_error == 0.0);
  CHECK(r.worst.analytic == 0.0);
  CHECK(r.worst.numeric == 0.0);
}

TEST_CASE("every REN loss term and the total pass on 4-sample batches") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ren::GradProblem p = ren::make_grad_problem(seed);
    for (ren::LossTerm term : ren::kAllLossTerms) {
      const auto r = ren::check_term(p, term);
      INFO(ren::to_string(term) << " seed " << seed << " worst " << r.worst.tensor << "[" << r.worst.index << "]");
      CHECK(r.max_rel_error <= 1e-4);
      CHECK(r.passed());
    }
  }
}

TEST_CASE("a corrupted analytic gradient is caught and located") {
  ren::GradProblem p = ren::make_grad_problem(3);
  const auto r = ren::check_term(p, ren::LossTerm::total, 1e-5, 1e-4,
                                 [](std::vector<std::vector<Tensor>>& g) { g[2][0][4] += 0.05; });
  CHECK_FALSE(r.passed());
  CHECK(r.worst.tensor == "disc.layer0.weight");
  CHECK(r.worst.index == 4);
}

TEST_CASE("the check leaves parameters untouched and rejects a non-positive step") {
  ren::GradProblem p = ren::make_grad_problem(1);
  const auto before = p.student;
  ren::check_term(p, ren::LossTerm::l_con);
  CHECK(p.student == before);
  ParamSet ps = single_tensor(Tensor::row({1.0}));
  auto loss = [](Graph& g, std::span<const ren::BoundParams> b) { return ren::sum(g, b[0].vars[0]); };
  CHECK_THROWS_AS(ren::finite_diff_check(loss, {&ps}, 0.0), ren::ConfigError);
}

TEST_CASE("reversal-identity mode only affects gradient reversal nodes") {
  Graph g;
  g.set_reversal_identity(true);
  Var x = g.parameter(Tensor::row({2.0, 3.0}));
  g.backward(ren::sum(g, ren::grad_reverse(g, ren::square(g, x), 0.7)));
  CHECK(g.grad(x) == Tensor::row({4.0, 6.0}));
}
