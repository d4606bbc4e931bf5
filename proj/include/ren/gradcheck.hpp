#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ren/autograd.hpp"
#include "ren/errors.hpp"
#include "ren/losses.hpp"
#include "ren/networks.hpp"
#include "ren/random.hpp"
#include "ren/tensor.hpp"

namespace ren {

/// Builds a scalar loss from parameters bound on `g`, one BoundParams per checked ParamSet.
using LossFn = std::function<Var(Graph& g, std::span<const BoundParams> params)>;

/// Lets tests tamper with analytic gradients before they are compared.
using GradientHook = std::function<void(std::vector<std::vector<Tensor>>& grads)>;

struct GradCheckEntry {
  std::string tensor;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  GradCheckEntry worst;
  std::size_t checked = 0;
  double tolerance = 1e-4;

  bool passed() const { return max_rel_error <= tolerance; }
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

/// Compares backward() against central differences (L(w+h) - L(w-h)) / 2h for
/// every entry of every ParamSet. Gradient reversal is treated as identity on
/// both sides, so the check covers the loss as written.
inline GradCheckReport finite_diff_check(const LossFn& loss_fn, std::vector<ParamSet*> params, double h = 1e-5,
                                         double tol = 1e-4, const GradientHook& hook = {}) {
  if (!(h > 0.0)) throw ConfigError("finite_diff_check: h must be positive");
  auto evaluate = [&](bool with_grad, std::vector<std::vector<Tensor>>* grads) {
    Graph g;
    g.set_reversal_identity(true);
    std::vector<BoundParams> bound;
    bound.reserve(params.size());
    for (ParamSet* ps : params) bound.push_back(bind(g, *ps));
    Var loss = loss_fn(g, bound);
    if (g.value(loss).shape() != Shape{1, 1}) throw ContractError("finite_diff_check: loss must be 1x1");
    if (with_grad) {
      g.backward(loss);
      for (const auto& b : bound) grads->push_back(gradients(g, b));
    }
    return g.value(loss)[0];
  };

  std::vector<std::vector<Tensor>> analytic;
  evaluate(true, &analytic);
  if (hook) hook(analytic);

  GradCheckReport report;
  report.tolerance = tol;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& tensors = params[p]->tensors;
    for (std::size_t t = 0; t < tensors.size(); ++t) {
      auto values = tensors[t].value.values();
      for (std::size_t k = 0; k < values.size(); ++k) {
        const double saved = values[k];
        values[k] = saved + h;
        const double up = evaluate(false, nullptr);
        values[k] = saved - h;
        const double down = evaluate(false, nullptr);
        values[k] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double a = analytic[p][t][k];
        const double err = relative_error(a, numeric);
        ++report.checked;
        if (report.checked == 1 || err > report.max_rel_error) {
          report.max_rel_error = err;
          report.worst = {tensors[t].name, k, a, numeric, err};
        }
      }
    }
  }
  return report;
}

/// A small REN problem: student F, C and D with random inputs, labels and
/// fixed ensembled predictions for the conditioning.
struct GradProblem {
  Network student;
  Discriminator disc;
  Tensor source_x, target_x;
  std::vector<int> source_y;
  Tensor hat_stu_s, hat_stu_t, hat_tea_s, hat_tea_t;
  Tensor teacher_pred;  // rows for source then target
  double lambda_grl = 1.0;
  LossWeights weights{};
};

struct GradProblemSize {
  std::size_t batch = 4;
  std::size_t input = 4;
  std::size_t hidden = 5;
  std::size_t feature_dim = 4;
  std::size_t classes = 3;
  std::size_t disc_hidden = 5;
};

namespace detail {

inline Tensor random_probabilities(std::size_t rows, std::size_t cols, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Tensor logits(rows, cols);
  for (double& v : logits.values()) v = n01(rng);
  return kernels::softmax_rows(logits);
}

}  // namespace detail

inline GradProblem make_grad_problem(std::uint64_t seed, const GradProblemSize& size = {}) {
  if (size.batch == 0 || size.classes < 2) throw ConfigError("gradcheck: need a batch and at least two classes");
  GradProblem p{{init_params(feature_extractor_arch(size.input, size.hidden, size.feature_dim), derive_seed(seed, {1}),
                             "F."),
                 init_params(classifier_arch(size.feature_dim, size.classes), derive_seed(seed, {2}), "C.")},
                Discriminator::make(size.feature_dim * size.classes, size.disc_hidden, derive_seed(seed, {3})),
                {}, {}, {}, {}, {}, {}, {}, {}};
  Rng rng(derive_seed(seed, {4}));
  std::normal_distribution<double> n01(0.0, 1.0);
  p.source_x = Tensor(size.batch, size.input);
  p.target_x = Tensor(size.batch, size.input);
  for (double& v : p.source_x.values()) v = n01(rng);
  for (double& v : p.target_x.values()) v = n01(rng);
  std::uniform_int_distribution<int> label(0, static_cast<int>(size.classes) - 1);
  for (std::size_t i = 0; i < size.batch; ++i) p.source_y.push_back(label(rng));
  p.hat_stu_s = detail::random_probabilities(size.batch, size.classes, rng);
  p.hat_stu_t = detail::random_probabilities(size.batch, size.classes, rng);
  p.hat_tea_s = detail::random_probabilities(size.batch, size.classes, rng);
  p.hat_tea_t = detail::random_probabilities(size.batch, size.classes, rng);
  p.teacher_pred = detail::random_probabilities(2 * size.batch, size.classes, rng);
  p.lambda_grl = std::uniform_real_distribution<double>(0.1, 1.0)(rng);
  // Zero biases put ReLU inputs exactly on the kink whenever a whole layer is
  // inactive for a row; random biases keep the check away from it.
  for (ParamSet* ps : {&p.student.feature, &p.student.classifier, &p.disc.params}) {
    for (std::size_t l = 0; l < ps->arch.layers(); ++l) {
      for (double& v : ps->tensors[2 * l + 1].value.values()) v = 0.5 * n01(rng);
    }
  }
  return p;
}

enum class LossTerm { l_c, l_d_stu, l_d_tea, l_con, total };

inline constexpr LossTerm kAllLossTerms[] = {LossTerm::l_c, LossTerm::l_d_stu, LossTerm::l_d_tea, LossTerm::l_con,
                                             LossTerm::total};

inline const char* to_string(LossTerm t) {
  switch (t) {
    case LossTerm::l_c: return "l_c";
    case LossTerm::l_d_stu: return "l_d_stu";
    case LossTerm::l_d_tea: return "l_d_tea";
    case LossTerm::l_con: return "l_con";
    case LossTerm::total: return "total";
  }
  return "?";
}

/// Loss for one term of `p`; params are bound in the order F, C, D.
inline LossFn grad_problem_loss(const GradProblem& p, LossTerm term) {
  return [&p, term](Graph& g, std::span<const BoundParams> b) {
    const std::size_t ms = p.source_x.rows();
    const std::size_t mt = p.target_x.rows();
    FCVars stu = forward_fc(g, b[0], b[1], g.constant(kernels::concat_rows(p.source_x, p.target_x)));
    Var f_s = slice_rows(g, stu.features, 0, ms);
    Var f_t = slice_rows(g, stu.features, ms, ms + mt);
    LossTerms terms;
    terms.l_c = cross_entropy(g, slice_rows(g, stu.predictions, 0, ms), p.source_y);
    if (term == LossTerm::l_c) return terms.l_c;
    terms.l_d_stu = adv_student(g, b[2], f_s, f_t, g.constant(p.hat_stu_s), g.constant(p.hat_stu_t), p.lambda_grl);
    if (term == LossTerm::l_d_stu) return *terms.l_d_stu;
    terms.l_d_tea = adv_teacher(g, b[2], f_s, f_t, g.constant(p.hat_tea_s), g.constant(p.hat_tea_t), p.lambda_grl);
    if (term == LossTerm::l_d_tea) return *terms.l_d_tea;
    terms.l_con = consistency(g, stu.predictions, g.constant(p.teacher_pred));
    if (term == LossTerm::l_con) return *terms.l_con;
    return total_loss(g, terms, p.weights);
  };
}

inline GradCheckReport check_term(GradProblem& p, LossTerm term, double h = 1e-5, double tol = 1e-4,
                                  const GradientHook& hook = {}) {
  return finite_diff_check(grad_problem_loss(p, term), {&p.student.feature, &p.student.classifier, &p.disc.params}, h,
                           tol, hook);
}

}  // namespace ren
