#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>

#include "ren/autograd.hpp"
#include "ren/conditioning.hpp"
#include "ren/errors.hpp"
#include "ren/networks.hpp"

namespace ren {

inline constexpr double kProbabilityFloor = 1e-12;

/// Mean over rows of -log p[i, label_i], with p floored at 1e-12.
inline Var cross_entropy(Graph& g, Var predictions, std::span<const int> labels) {
  const Tensor& p = g.value(predictions);
  if (p.rows() == 0) throw ContractError("cross_entropy: empty batch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= p.cols()) {
      throw ContractError("cross_entropy: label " + std::to_string(y) + " out of range [0, " +
                          std::to_string(p.cols()) + ")");
    }
  }
  Var picked = clamp(g, pick(g, predictions, labels), kProbabilityFloor, 1.0);
  return scale(g, mean(g, log(g, picked)), -1.0);
}

/// -mean log D(h_s) - mean log(1 - D(h_t)). Both inputs pass through a gradient
/// reversal with factor lambda_grl before D, so one minimisation trains D to
/// separate the domains while pushing upstream features to confuse it.
inline Var domain_adv_loss(Graph& g, const BoundParams& disc, Var h_source, Var h_target, double lambda_grl) {
  const Tensor& hs = g.value(h_source);
  const Tensor& ht = g.value(h_target);
  if (hs.rows() == 0 || ht.rows() == 0) throw ContractError("domain_adv_loss: empty batch");
  if (hs.cols() != disc.arch->input_width() || ht.cols() != disc.arch->input_width()) {
    throw DimensionError("domain_adv_loss: inputs " + to_string(hs.shape()) + " and " + to_string(ht.shape()) +
                         " do not match discriminator width " + std::to_string(disc.arch->input_width()));
  }
  Var d_s = discriminate(g, disc, grad_reverse(g, h_source, lambda_grl));
  Var d_t = discriminate(g, disc, grad_reverse(g, h_target, lambda_grl));
  Var source_term = scale(g, mean(g, log(g, d_s)), -1.0);
  Var target_term = scale(g, mean(g, log(g, affine(g, d_t, -1.0, 1.0))), -1.0);
  return add(g, source_term, target_term);
}

/// Student-conditioned adversarial loss: D sees student features (x) ensembled student predictions.
inline Var adv_student(Graph& g, const BoundParams& disc, Var f_source, Var f_target, Var p_hat_source,
                       Var p_hat_target, double lambda_grl) {
  return domain_adv_loss(g, disc, multilinear_map(g, f_source, p_hat_source),
                         multilinear_map(g, f_target, p_hat_target), lambda_grl);
}

/// Teacher-conditioned adversarial loss: still student features, conditioned on
/// ensembled teacher predictions.
inline Var adv_teacher(Graph& g, const BoundParams& disc, Var f_source, Var f_target, Var p_hat_source,
                       Var p_hat_target, double lambda_grl) {
  return domain_adv_loss(g, disc, multilinear_map(g, f_source, p_hat_source),
                         multilinear_map(g, f_target, p_hat_target), lambda_grl);
}

enum class ConsistencyNorm { squared, l2 };

/// Mean over rows of ||p_stu - p_tea||^2 (or ||.||_2). The teacher side is detached.
inline Var consistency(Graph& g, Var p_student, Var p_teacher, ConsistencyNorm norm = ConsistencyNorm::squared) {
  require_same_shape(g.value(p_student), g.value(p_teacher), "consistency");
  if (g.value(p_student).rows() == 0) throw ContractError("consistency: empty batch");
  Var per_row = row_sum(g, square(g, sub(g, p_student, detach(g, p_teacher))));
  if (norm == ConsistencyNorm::l2) per_row = sqrt(g, per_row);
  return mean(g, per_row);
}

struct LossWeights {
  double lambda_stu = 1.0;
  double lambda_tea = 1.0;
  double gamma = 1.0;

  void validate() const {
    if (!(lambda_stu >= 0.0) || !(lambda_tea >= 0.0) || !(gamma >= 0.0)) {
      throw ConfigError("loss weights must be non-negative");
    }
  }
};

/// Values of every loss term for one step, and the weights they were combined with.
struct LossBreakdown {
  double l_c = 0.0;
  double l_d_stu = 0.0;
  double l_d_tea = 0.0;
  double l_con = 0.0;
  double total = 0.0;
  LossWeights weights{};
};

inline double total_loss(const LossBreakdown& parts, const LossWeights& w) {
  w.validate();
  return parts.l_c + w.lambda_stu * parts.l_d_stu + w.lambda_tea * parts.l_d_tea + w.gamma * parts.l_con;
}

/// Optional loss terms as graph nodes; inactive terms are left empty.
struct LossTerms {
  Var l_c;
  std::optional<Var> l_d_stu;
  std::optional<Var> l_d_tea;
  std::optional<Var> l_con;
};

/// Weighted sum of the active terms, as one graph node.
inline Var total_loss(Graph& g, const LossTerms& terms, const LossWeights& w) {
  w.validate();
  Var total = terms.l_c;
  if (terms.l_d_stu) total = add(g, total, scale(g, *terms.l_d_stu, w.lambda_stu));
  if (terms.l_d_tea) total = add(g, total, scale(g, *terms.l_d_tea, w.lambda_tea));
  if (terms.l_con) total = add(g, total, scale(g, *terms.l_con, w.gamma));
  return total;
}

inline LossBreakdown breakdown(const Graph& g, const LossTerms& terms, Var total, const LossWeights& w) {
  LossBreakdown b;
  b.l_c = g.value(terms.l_c)[0];
  if (terms.l_d_stu) b.l_d_stu = g.value(*terms.l_d_stu)[0];
  if (terms.l_d_tea) b.l_d_tea = g.value(*terms.l_d_tea)[0];
  if (terms.l_con) b.l_con = g.value(*terms.l_con)[0];
  b.total = g.value(total)[0];
  b.weights = w;
  return b;
}

}  // namespace ren
