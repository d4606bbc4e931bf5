#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ren/autograd.hpp"
#include "ren/errors.hpp"
#include "ren/tensor.hpp"

namespace ren {

/// Row i of the result is the flattened outer product f_i (x) p_i, index (j, k) -> j * c + k.
inline Var multilinear_map(Graph& g, Var features, Var predictions) {
  return outer_rows(g, features, predictions);
}

/// Which network's predictions an ensembled row belongs to.
enum class Branch { student, teacher };

inline constexpr double kProbabilityTolerance = 1e-9;

inline void require_probability_rows(const Tensor& p, const char* what) {
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double s = 0.0;
    for (double v : p.row_span(i)) {
      if (v < -kProbabilityTolerance) {
        throw ContractError(std::string(what) + ": row " + std::to_string(i) + " has a negative entry");
      }
      s += v;
    }
    if (std::abs(s - 1.0) > kProbabilityTolerance) {
      throw ContractError(std::string(what) + ": row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
  }
}

/// Per-sample ensembled predictions p_hat_n = (1 - alpha_p) * p_hat_{n-1} + alpha_p * p_n.
/// The first visit of a sample stores p_n unchanged.
class PredEmaState {
 public:
  explicit PredEmaState(double alpha_p = 0.6) : alpha_p_(alpha_p) {
    if (!(alpha_p >= 0.0 && alpha_p <= 1.0)) throw ConfigError("alpha_p must lie in [0, 1]");
  }

  double alpha_p() const { return alpha_p_; }

  /// Updates and returns the ensembled rows for `ids`. The result carries no graph history.
  Tensor update(Branch which, std::span<const std::uint64_t> ids, const Tensor& predictions) {
    if (ids.size() != predictions.rows()) {
      throw DimensionError("pred_ema: " + std::to_string(ids.size()) + " ids for predictions " +
                           to_string(predictions.shape()));
    }
    require_probability_rows(predictions, "pred_ema");
    auto& store = which == Branch::student ? student_ : teacher_;
    Tensor out(predictions.shape());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto p = predictions.row_span(i);
      auto [it, inserted] = store.try_emplace(ids[i], p.begin(), p.end());
      auto& hat = it->second;
      if (!inserted) {
        if (hat.size() != p.size()) throw DimensionError("pred_ema: class count changed for a sample");
        // hat + alpha (p - hat): the same blend, but a constant input is an exact fixed point
        for (std::size_t k = 0; k < p.size(); ++k) {
          hat[k] = alpha_p_ == 1.0 ? p[k] : hat[k] + alpha_p_ * (p[k] - hat[k]);
        }
      }
      std::copy(hat.begin(), hat.end(), out.row_span(i).begin());
    }
    return out;
  }

  /// Stored row for a sample, or nullptr if it was never visited.
  const std::vector<double>* find(Branch which, std::uint64_t id) const {
    const auto& store = which == Branch::student ? student_ : teacher_;
    auto it = store.find(id);
    return it == store.end() ? nullptr : &it->second;
  }

  std::size_t size(Branch which) const { return (which == Branch::student ? student_ : teacher_).size(); }

 private:
  double alpha_p_;
  std::unordered_map<std::uint64_t, std::vector<double>> student_;
  std::unordered_map<std::uint64_t, std::vector<double>> teacher_;
};

inline Tensor pred_ema(PredEmaState& state, Branch which, std::span<const std::uint64_t> ids,
                       const Tensor& predictions) {
  return state.update(which, ids, predictions);
}

}  // namespace ren
