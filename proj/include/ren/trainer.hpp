#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ren/autograd.hpp"
#include "ren/conditioning.hpp"
#include "ren/datasets.hpp"
#include "ren/errors.hpp"
#include "ren/evaluation.hpp"
#include "ren/losses.hpp"
#include "ren/networks.hpp"
#include "ren/variant.hpp"

namespace ren {

struct TrainConfig {
  double eta0 = 0.01;
  double anneal_alpha = 10.0;
  double anneal_beta = 0.75;
  double momentum = 0.9;
  double disc_lr_mult = 5.0;  // D follows the same schedule, scaled
  std::size_t batch_size = 32;
  std::size_t total_steps = 1500;
  EmaCoefficient alpha_theta{0.99, true};
  double alpha_p = 0.6;
  double lambda_stu = 1.0;
  double lambda_tea = 1.0;
  double gamma = 1.0;
  double gamma_rampup = 0.2;  // fraction of training over which gamma ramps in
  bool grl_ramp = false;
  std::uint64_t seed = 0;
  Variant variant = Variant::ren;
  std::size_t eval_every = 50;
  std::size_t hidden_width = 64;
  std::size_t feature_dim = 16;
  std::size_t disc_hidden = 64;
  ConsistencyNorm consistency_norm = ConsistencyNorm::squared;

  LossWeights weights() const { return {lambda_stu, lambda_tea, gamma}; }

  void validate() const {
    if (!(eta0 >= 0.0) || !(anneal_alpha >= 0.0) || !(anneal_beta >= 0.0)) {
      throw ConfigError("learning-rate parameters must be non-negative");
    }
    if (!(disc_lr_mult >= 0.0)) throw ConfigError("disc_lr_mult must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (eval_every == 0) throw ConfigError("eval_every must be positive");
    if (!(gamma_rampup >= 0.0 && gamma_rampup <= 1.0)) throw ConfigError("gamma_rampup must lie in [0, 1]");
    if (hidden_width == 0 || feature_dim == 0 || disc_hidden == 0) throw ConfigError("layer widths must be positive");
    if (!(alpha_p >= 0.0 && alpha_p <= 1.0)) throw ConfigError("alpha_p must lie in [0, 1]");
    alpha_theta.validate();
    weights().validate();
  }
};

/// Annealed learning rate eta0 * (1 + alpha * p)^(-beta) at training progress p in [0, 1].
inline double lr_schedule(double progress, const TrainConfig& cfg) {
  return cfg.eta0 * std::pow(1.0 + cfg.anneal_alpha * progress, -cfg.anneal_beta);
}

/// Gradient-reversal factor 2 / (1 + exp(-10 p)) - 1, or 1 when the ramp is off.
inline double grl_lambda(double progress, bool ramp = true) {
  if (!ramp) return 1.0;
  return 2.0 / (1.0 + std::exp(-10.0 * progress)) - 1.0;
}

/// Consistency weight ramp exp(-5 (1 - p / rampup)^2) for p < rampup, then 1.
inline double sigmoid_rampup(double progress, double rampup) {
  if (rampup <= 0.0 || progress >= rampup) return 1.0;
  const double t = 1.0 - progress / rampup;
  return std::exp(-5.0 * t * t);
}

inline double progress_at(std::size_t step, std::size_t total_steps) {
  return total_steps == 0 ? 0.0 : static_cast<double>(step) / static_cast<double>(total_steps);
}

/// Momentum buffers for one ParamSet; shapes mirror the parameters.
struct MomentumBuffer {
  std::vector<Tensor> velocity;
};

/// v <- mu * v + g; theta <- theta - eta * v.
inline void sgd_momentum_step(ParamSet& params, std::span<const Tensor> grads, MomentumBuffer& state, double eta,
                              double mu) {
  if (grads.size() != params.tensors.size()) {
    throw DimensionError("sgd_momentum_step: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.tensors.size()) + " tensors");
  }
  if (state.velocity.empty()) {
    for (const auto& t : params.tensors) state.velocity.emplace_back(t.value.shape());
  }
  for (std::size_t t = 0; t < grads.size(); ++t) {
    Tensor& w = params.tensors[t].value;
    Tensor& v = state.velocity[t];
    require_same_shape(w, grads[t], "sgd_momentum_step");
    require_same_shape(w, v, "sgd_momentum_step");
    for (std::size_t k = 0; k < w.size(); ++k) {
      v[k] = mu * v[k] + grads[t][k];
      w[k] -= eta * v[k];
    }
  }
}

struct OptimizerState {
  MomentumBuffer feature;
  MomentumBuffer classifier;
  MomentumBuffer discriminator;
  std::size_t step = 0;
};

/// Everything a run mutates.
struct TrainState {
  DualNet nets;
  std::optional<Discriminator> disc;
  OptimizerState opt;
  PredEmaState pred_ema;
};

inline TrainState make_train_state(const TrainConfig& cfg, std::size_t input_dim, std::size_t classes) {
  cfg.validate();
  TrainState s{make_dual_net(feature_extractor_arch(input_dim, cfg.hidden_width, cfg.feature_dim),
                             classifier_arch(cfg.feature_dim, classes), derive_seed(cfg.seed, {100}),
                             has_teacher(cfg.variant), cfg.alpha_theta),
               std::nullopt, {}, PredEmaState(cfg.alpha_p)};
  if (uses_adversarial(cfg.variant)) {
    s.disc = Discriminator::make(cfg.feature_dim * classes, cfg.disc_hidden, derive_seed(cfg.seed, {101}));
  }
  return s;
}

/// One optimisation step:
///  1. student forward on source and target rows together
///  2. teacher forward, detached
///  3. ensembled predictions for both networks
///  4. loss terms active for the variant
///  5. a single backward pass
///  6. momentum SGD on student F, C and on D
///  7. teacher EMA update
inline LossBreakdown train_step(TrainState& state, const Batch& batch, const TrainConfig& cfg, std::size_t step) {
  const Variant variant = cfg.variant;
  const std::size_t ms = batch.source_x.rows();
  const std::size_t mt = batch.target_x.rows();
  if (ms == 0 || mt == 0) throw ContractError("train_step: empty source or target batch");
  if (batch.source_y.size() != ms || batch.source_ids.size() != ms || batch.target_ids.size() != mt) {
    throw DimensionError("train_step: batch columns disagree");
  }
  const double progress = progress_at(step, cfg.total_steps);

  Graph g;
  BoundParams sf = bind(g, state.nets.student.feature);
  BoundParams sc = bind(g, state.nets.student.classifier);
  Var x = g.constant(kernels::concat_rows(batch.source_x, batch.target_x));
  FCVars stu = forward_fc(g, sf, sc, x);
  Var f_s = slice_rows(g, stu.features, 0, ms);
  Var f_t = slice_rows(g, stu.features, ms, ms + mt);
  Var p_s = slice_rows(g, stu.predictions, 0, ms);
  Var p_t = slice_rows(g, stu.predictions, ms, ms + mt);

  std::optional<Var> p_tea;
  if (state.nets.teacher) {
    BoundParams tf = bind(g, state.nets.teacher->feature);
    BoundParams tc = bind(g, state.nets.teacher->classifier);
    p_tea = detach(g, forward_fc(g, tf, tc, x).predictions);
  }

  LossWeights w = cfg.weights();
  LossTerms terms;
  terms.l_c = cross_entropy(g, p_s, batch.source_y);

  std::optional<BoundParams> d;
  if (uses_adversarial(variant)) {
    if (!state.disc) throw ContractError("train_step: adversarial variant without a discriminator");
    d = bind(g, state.disc->params);
    const double lambda = grl_lambda(progress, cfg.grl_ramp);
    if (uses_dual_conditioning(variant)) {
      if (!p_tea) throw ContractError("train_step: dual conditioning needs a teacher");
      const Tensor& pt = g.value(*p_tea);
      Var hat_stu_s = g.constant(pred_ema(state.pred_ema, Branch::student, batch.source_ids, g.value(p_s)));
      Var hat_stu_t = g.constant(pred_ema(state.pred_ema, Branch::student, batch.target_ids, g.value(p_t)));
      Var hat_tea_s =
          g.constant(pred_ema(state.pred_ema, Branch::teacher, batch.source_ids, kernels::slice_rows(pt, 0, ms)));
      Var hat_tea_t = g.constant(
          pred_ema(state.pred_ema, Branch::teacher, batch.target_ids, kernels::slice_rows(pt, ms, ms + mt)));
      terms.l_d_stu = adv_student(g, *d, f_s, f_t, hat_stu_s, hat_stu_t, lambda);
      terms.l_d_tea = adv_teacher(g, *d, f_s, f_t, hat_tea_s, hat_tea_t, lambda);
    } else {
      terms.l_d_stu = adv_student(g, *d, f_s, f_t, detach(g, p_s), detach(g, p_t), lambda);
      w.lambda_tea = 0.0;
    }
  } else {
    w.lambda_stu = 0.0;
    w.lambda_tea = 0.0;
  }

  if (uses_consistency(variant)) {
    terms.l_con = consistency(g, stu.predictions, *p_tea, cfg.consistency_norm);
    w.gamma = cfg.gamma * sigmoid_rampup(progress, cfg.gamma_rampup);
  } else {
    w.gamma = 0.0;
  }

  Var total = total_loss(g, terms, w);
  g.backward(total);

  const double eta = lr_schedule(progress, cfg);
  const auto gf = gradients(g, sf);
  const auto gc = gradients(g, sc);
  sgd_momentum_step(state.nets.student.feature, gf, state.opt.feature, eta, cfg.momentum);
  sgd_momentum_step(state.nets.student.classifier, gc, state.opt.classifier, eta, cfg.momentum);
  if (d) {
    const auto gd = gradients(g, *d);
    sgd_momentum_step(state.disc->params, gd, state.opt.discriminator, eta * cfg.disc_lr_mult, cfg.momentum);
  }
  ++state.opt.step;
  if (state.nets.teacher) ema_update(state.nets);
  return breakdown(g, terms, total, w);
}

struct RunResult {
  DualNet nets;
  std::optional<Discriminator> disc;
  std::vector<MetricsRecord> metrics;
};

inline MetricsRecord evaluate(const TrainState& state, const DomainDataset& ds, std::size_t step, double lr,
                              const LossBreakdown& loss) {
  MetricsRecord r;
  r.step = step;
  r.lr = lr;
  r.loss = loss;
  r.acc_student_target = accuracy(state.nets.student, ds.target_x, ds.target_y);
  r.acc_student_source = accuracy(state.nets.student, ds.source_x, ds.source_y);
  if (state.nets.teacher) r.acc_teacher_target = accuracy(*state.nets.teacher, ds.target_x, ds.target_y);
  return r;
}

/// Runs cfg.total_steps steps, evaluating at step 0, every eval_every steps and at the end.
inline RunResult run(const TrainConfig& cfg, const DomainDataset& ds) {
  cfg.validate();
  TrainState state = make_train_state(cfg, ds.input_dim(), ds.classes);
  RunResult out;
  out.metrics.push_back(evaluate(state, ds, 0, lr_schedule(0.0, cfg), LossBreakdown{}));
  if (cfg.total_steps > 0) {
    const std::size_t per_epoch = batches_per_epoch(ds, cfg.batch_size);
    const std::uint64_t batch_seed = derive_seed(cfg.seed, {102});
    std::vector<Batch> epoch_batches;
    std::size_t loaded_epoch = static_cast<std::size_t>(-1);
    for (std::size_t n = 0; n < cfg.total_steps; ++n) {
      const std::size_t epoch = n / per_epoch;
      if (epoch != loaded_epoch) {
        epoch_batches = batches(ds, cfg.batch_size, batch_seed, epoch);
        loaded_epoch = epoch;
      }
      const LossBreakdown loss = train_step(state, epoch_batches[n % per_epoch], cfg, n);
      const std::size_t done = n + 1;
      if (done % cfg.eval_every == 0 || done == cfg.total_steps) {
        out.metrics.push_back(evaluate(state, ds, done, lr_schedule(progress_at(n, cfg.total_steps), cfg), loss));
      }
    }
  }
  out.nets = std::move(state.nets);
  out.disc = std::move(state.disc);
  return out;
}

}  // namespace ren
