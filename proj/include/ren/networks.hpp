#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ren/autograd.hpp"
#include "ren/errors.hpp"
#include "ren/random.hpp"
#include "ren/tensor.hpp"

namespace ren {

enum class Activation { identity, relu, sigmoid };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

/// Layer widths (input first) and one activation per affine layer.
struct Architecture {
  std::vector<std::size_t> widths;
  std::vector<Activation> activations;

  std::size_t layers() const { return activations.size(); }
  std::size_t input_width() const { return widths.front(); }
  std::size_t output_width() const { return widths.back(); }

  void validate() const {
    if (widths.size() < 2) throw ConfigError("architecture needs at least one layer");
    if (activations.size() + 1 != widths.size()) {
      throw ConfigError("architecture has " + std::to_string(widths.size()) + " widths but " +
                        std::to_string(activations.size()) + " activations");
    }
    for (std::size_t w : widths) {
      if (w == 0) throw ConfigError("architecture has a zero-width layer");
    }
  }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// F: in -> hidden -> hidden -> feature_dim. ReLU on hidden layers, linear bottleneck.
inline Architecture feature_extractor_arch(std::size_t in, std::size_t hidden, std::size_t feature_dim) {
  return {{in, hidden, hidden, feature_dim},
          {Activation::relu, Activation::relu, Activation::identity}};
}

/// C: linear feature_dim -> classes. Softmax is applied by forward_fc.
inline Architecture classifier_arch(std::size_t feature_dim, std::size_t classes) {
  return {{feature_dim, classes}, {Activation::identity}};
}

/// D: (d*c) -> hidden -> 1 with ReLU, then sigmoid.
inline Architecture discriminator_arch(std::size_t input, std::size_t hidden) {
  return {{input, hidden, 1}, {Activation::relu, Activation::sigmoid}};
}

struct NamedTensor {
  std::string name;
  Tensor value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Weights and biases of one MLP: tensors alternate layer{i}.weight [in x out], layer{i}.bias [1 x out].
struct ParamSet {
  Architecture arch;
  std::vector<NamedTensor> tensors;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.value.size();
    return n;
  }

  const Tensor& weight(std::size_t layer) const { return tensors[2 * layer].value; }
  const Tensor& bias(std::size_t layer) const { return tensors[2 * layer + 1].value; }

  friend bool operator==(const ParamSet&, const ParamSet&) = default;
};

/// Glorot-uniform weights in [-a, a], a = sqrt(6 / (fan_in + fan_out)); zero biases.
inline ParamSet init_params(const Architecture& arch, std::uint64_t seed, const std::string& prefix = "") {
  arch.validate();
  Rng rng(seed);
  ParamSet ps{arch, {}};
  for (std::size_t l = 0; l < arch.layers(); ++l) {
    const std::size_t fan_in = arch.widths[l], fan_out = arch.widths[l + 1];
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    Tensor w(fan_in, fan_out);
    for (double& v : w.values()) v = dist(rng);
    const std::string base = prefix + "layer" + std::to_string(l);
    ps.tensors.push_back({base + ".weight", std::move(w)});
    ps.tensors.push_back({base + ".bias", Tensor(1, fan_out)});
  }
  return ps;
}

/// Graph handles for one ParamSet, in the same order as ParamSet::tensors.
struct BoundParams {
  const Architecture* arch = nullptr;
  std::vector<Var> vars;
};

inline BoundParams bind(Graph& g, const ParamSet& ps) {
  BoundParams b{&ps.arch, {}};
  b.vars.reserve(ps.tensors.size());
  for (const auto& t : ps.tensors) b.vars.push_back(g.parameter(t.value));
  return b;
}
// BoundParams points at the architecture, so the ParamSet must outlive it.
BoundParams bind(Graph&, const ParamSet&&) = delete;

inline std::vector<Tensor> gradients(const Graph& g, const BoundParams& b) {
  std::vector<Tensor> out;
  out.reserve(b.vars.size());
  for (Var v : b.vars) out.push_back(g.grad(v));
  return out;
}

inline Var apply_activation(Graph& g, Var x, Activation a) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::relu: return relu(g, x);
    case Activation::sigmoid: return sigmoid(g, x);
  }
  return x;
}

inline Var mlp(Graph& g, const BoundParams& p, Var x) {
  const Architecture& arch = *p.arch;
  if (g.value(x).cols() != arch.input_width()) {
    throw DimensionError("mlp: input " + to_string(g.value(x).shape()) + " but network expects width " +
                         std::to_string(arch.input_width()));
  }
  Var h = x;
  for (std::size_t l = 0; l < arch.layers(); ++l) {
    h = add_bias(g, matmul(g, h, p.vars[2 * l]), p.vars[2 * l + 1]);
    h = apply_activation(g, h, arch.activations[l]);
  }
  return h;
}

/// Graph-free forward pass.
inline Tensor mlp_values(const ParamSet& ps, const Tensor& x) {
  if (x.cols() != ps.arch.input_width()) {
    throw DimensionError("mlp: input " + to_string(x.shape()) + " but network expects width " +
                         std::to_string(ps.arch.input_width()));
  }
  Tensor h = x;
  for (std::size_t l = 0; l < ps.arch.layers(); ++l) {
    Tensor z = kernels::matmul(h, ps.weight(l));
    const Tensor& b = ps.bias(l);
    for (std::size_t i = 0; i < z.rows(); ++i)
      for (std::size_t j = 0; j < z.cols(); ++j) {
        double v = z(i, j) + b[j];
        switch (ps.arch.activations[l]) {
          case Activation::identity: break;
          case Activation::relu: v = v > 0.0 ? v : 0.0; break;
          case Activation::sigmoid: v = kernels::sigmoid(v); break;
        }
        z(i, j) = v;
      }
    h = std::move(z);
  }
  return h;
}

struct FCVars {
  Var features;
  Var logits;
  Var predictions;
};

struct FCValues {
  Tensor features;
  Tensor logits;
  Tensor predictions;
};

inline void require_chain(const Architecture& f, const Architecture& c) {
  if (f.output_width() != c.input_width()) {
    throw DimensionError("feature width " + std::to_string(f.output_width()) +
                         " does not match classifier input " + std::to_string(c.input_width()));
  }
}

inline FCVars forward_fc(Graph& g, const BoundParams& feature, const BoundParams& classifier, Var x) {
  require_chain(*feature.arch, *classifier.arch);
  FCVars out{};
  out.features = mlp(g, feature, x);
  out.logits = mlp(g, classifier, out.features);
  out.predictions = softmax_rows(g, out.logits);
  return out;
}

inline FCValues forward_fc(const ParamSet& feature, const ParamSet& classifier, const Tensor& x) {
  require_chain(feature.arch, classifier.arch);
  FCValues out;
  out.features = mlp_values(feature, x);
  out.logits = mlp_values(classifier, out.features);
  out.predictions = kernels::softmax_rows(out.logits);
  return out;
}

/// Feature extractor plus classifier.
struct Network {
  ParamSet feature;
  ParamSet classifier;

  std::size_t parameter_count() const { return feature.parameter_count() + classifier.parameter_count(); }
  friend bool operator==(const Network&, const Network&) = default;
};

inline constexpr double kDiscriminatorEps = 1e-7;

struct Discriminator {
  ParamSet params;

  static Discriminator make(std::size_t input_width, std::size_t hidden, std::uint64_t seed) {
    return {init_params(discriminator_arch(input_width, hidden), seed, "disc.")};
  }
  std::size_t input_width() const { return params.arch.input_width(); }
};

/// Sigmoid output clamped to [eps, 1 - eps].
inline Var discriminate(Graph& g, const BoundParams& disc, Var h) {
  if (disc.arch->output_width() != 1 || disc.arch->activations.back() != Activation::sigmoid) {
    throw ConfigError("discriminator must end in a single sigmoid unit");
  }
  return clamp(g, mlp(g, disc, h), kDiscriminatorEps, 1.0 - kDiscriminatorEps);
}

/// Smoothing coefficient for the teacher weight average. A ramped coefficient
/// follows min(value, 1 - 1/(n+1)) for the n-th update (n >= 1).
struct EmaCoefficient {
  double value = 0.99;
  bool ramp = true;

  double at(std::size_t update_index) const {
    if (!ramp) return value;
    const double r = 1.0 - 1.0 / static_cast<double>(update_index + 1);
    return std::min(value, r);
  }
  void validate() const {
    if (!(value >= 0.0 && value <= 1.0)) throw ConfigError("alpha_theta must lie in [0, 1]");
  }
};

/// Student/teacher pair. The teacher is absent for variants that do not use one.
struct DualNet {
  Network student;
  std::optional<Network> teacher;
  EmaCoefficient alpha_theta;
  std::size_t step_count = 0;

  std::size_t parameter_count() const {
    return student.parameter_count() + (teacher ? teacher->parameter_count() : 0);
  }
};

inline DualNet make_dual_net(const Architecture& feature, const Architecture& classifier, std::uint64_t seed,
                             bool with_teacher, EmaCoefficient alpha = {}) {
  alpha.validate();
  require_chain(feature, classifier);
  DualNet net;
  net.student.feature = init_params(feature, derive_seed(seed, {1}), "F.");
  net.student.classifier = init_params(classifier, derive_seed(seed, {2}), "C.");
  if (with_teacher) net.teacher = net.student;
  net.alpha_theta = alpha;
  return net;
}

/// teacher <- alpha * teacher + (1 - alpha) * student, entry by entry.
inline void ema_blend(ParamSet& teacher, const ParamSet& student, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha_theta must lie in [0, 1]");
  if (teacher.arch != student.arch || teacher.tensors.size() != student.tensors.size()) {
    throw DimensionError("ema_blend: teacher and student architectures differ");
  }
  for (std::size_t t = 0; t < teacher.tensors.size(); ++t) {
    auto tv = teacher.tensors[t].value.values();
    auto sv = student.tensors[t].value.values();
    for (std::size_t k = 0; k < tv.size(); ++k) tv[k] = alpha * tv[k] + (1.0 - alpha) * sv[k];
  }
}

/// One teacher update; call once per optimizer step, after the student moved.
inline void ema_update(DualNet& net) {
  if (!net.teacher) throw ContractError("ema_update: this network has no teacher");
  net.alpha_theta.validate();
  const double alpha = net.alpha_theta.at(net.step_count + 1);
  ema_blend(net.teacher->feature, net.student.feature, alpha);
  ema_blend(net.teacher->classifier, net.student.classifier, alpha);
  ++net.step_count;
}

}  // namespace ren
