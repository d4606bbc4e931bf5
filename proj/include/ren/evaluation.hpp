#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ren/datasets.hpp"
#include "ren/errors.hpp"
#include "ren/losses.hpp"
#include "ren/networks.hpp"
#include "ren/tensor.hpp"
#include "ren/variant.hpp"

namespace ren {

/// Index of the row maximum; ties go to the lowest index.
inline std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < row.size(); ++k) {
    if (row[k] > row[best]) best = k;
  }
  return best;
}

/// Fraction of rows whose argmax equals the label.
inline double accuracy_from_scores(const Tensor& scores, std::span<const int> labels) {
  if (scores.rows() == 0) throw ContractError("accuracy: empty evaluation set");
  if (labels.size() != scores.rows()) throw DimensionError("accuracy: label count does not match rows");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= scores.cols()) {
      throw ContractError("accuracy: label " + std::to_string(labels[i]) + " out of range");
    }
    if (argmax_row(scores.row_span(i)) == static_cast<std::size_t>(labels[i])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(scores.rows());
}

inline double accuracy(const ParamSet& feature, const ParamSet& classifier, const Tensor& x,
                       std::span<const int> labels) {
  if (x.rows() == 0) throw ContractError("accuracy: empty evaluation set");
  return accuracy_from_scores(forward_fc(feature, classifier, x).logits, labels);
}

inline double accuracy(const Network& net, const Tensor& x, std::span<const int> labels) {
  return accuracy(net.feature, net.classifier, x, labels);
}

inline double sample_stddev(std::span<const double> xs) {
  if (xs.size() < 2) throw ContractError("sample_stddev: need at least two values");
  // deviations from the first value keep a constant series at exactly zero
  const double origin = xs[0];
  double mean = 0.0;
  for (double v : xs) mean += v - origin;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double v : xs) ss += (v - origin - mean) * (v - origin - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

/// Sample standard deviation over the final `window_fraction` of the series
/// (rounded up). The window must hold at least two points.
inline double stability(std::span<const double> series, double window_fraction = 0.5) {
  if (!(window_fraction > 0.0 && window_fraction <= 1.0)) {
    throw ConfigError("stability: window fraction must lie in (0, 1]");
  }
  const auto n = series.size();
  const auto window = std::min<std::size_t>(
      n, static_cast<std::size_t>(std::ceil(window_fraction * static_cast<double>(n) - 1e-12)));
  if (window < 2) throw ContractError("stability: series too short for the requested window");
  return sample_stddev(series.subspan(n - window));
}

/// One evaluation point of a training run.
struct MetricsRecord {
  std::size_t step = 0;
  double lr = 0.0;
  LossBreakdown loss;
  double acc_student_target = 0.0;
  std::optional<double> acc_teacher_target;
  double acc_student_source = 0.0;

  /// The model reported at test time: the teacher when there is one.
  double reported_accuracy() const { return acc_teacher_target.value_or(acc_student_target); }
};

inline constexpr const char* kMetricsHeader =
    "step,lr,l_c,l_d_stu,l_d_tea,l_con,total,acc_student_target,acc_teacher_target,acc_student_source";

/// One record per row in a fixed column order; a run without a teacher leaves acc_teacher_target empty.
inline void write_metrics_csv(std::ostream& os, std::span<const MetricsRecord> records) {
  os << kMetricsHeader << '\n';
  for (const auto& r : records) {
    os << r.step << ',' << format_double(r.lr) << ',' << format_double(r.loss.l_c) << ','
       << format_double(r.loss.l_d_stu) << ',' << format_double(r.loss.l_d_tea) << ','
       << format_double(r.loss.l_con) << ',' << format_double(r.loss.total) << ','
       << format_double(r.acc_student_target) << ','
       << (r.acc_teacher_target ? format_double(*r.acc_teacher_target) : std::string()) << ','
       << format_double(r.acc_student_source) << '\n';
  }
}

inline void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRecord> records) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_metrics_csv(os, records);
  if (!os) throw FormatError("write failed: " + path.string());
}

inline std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != kMetricsHeader) throw FormatError("metrics csv: bad header");
  std::vector<MetricsRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() == 9) cells.emplace_back();  // getline drops a trailing empty cell
    if (cells.size() != 10) throw FormatError("metrics csv: expected 10 columns in '" + line + "'");
    MetricsRecord r;
    r.step = std::stoul(cells[0]);
    r.lr = std::stod(cells[1]);
    r.loss.l_c = std::stod(cells[2]);
    r.loss.l_d_stu = std::stod(cells[3]);
    r.loss.l_d_tea = std::stod(cells[4]);
    r.loss.l_con = std::stod(cells[5]);
    r.loss.total = std::stod(cells[6]);
    r.acc_student_target = std::stod(cells[7]);
    if (!cells[8].empty()) r.acc_teacher_target = std::stod(cells[8]);
    r.acc_student_source = std::stod(cells[9]);
    out.push_back(r);
  }
  return out;
}

// ---- ablation ---------------------------------------------------------------

struct RunOutcome {
  Variant variant = Variant::ren;
  std::uint64_t seed = 0;
  double accuracy = 0.0;  // final reported (teacher-or-student) target accuracy in [0, 1]
};

struct VariantSummary {
  Variant variant = Variant::ren;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;  // sorted by seed
  double mean = 0.0;
  double stddev = 0.0;
};

struct AblationSummary {
  std::vector<VariantSummary> variants;  // canonical ladder order
  double tolerance = 0.005;
  bool ordering_holds = true;
  std::vector<std::string> violations;
  bool enough_seeds = true;  // at least 3 seeds per variant
};

inline constexpr std::size_t kMinAblationSeeds = 3;

/// Per-variant mean and sample std of final accuracies, and the non-strict
/// ordering check cdan <= cdan_m <= cdan_m_d <= ren over the variants present
/// (a later variant may trail an earlier one by at most `tolerance`).
inline AblationSummary ablation_report(std::span<const RunOutcome> runs, std::span<const Variant> requested,
                                       double tolerance = 0.005) {
  AblationSummary out;
  out.tolerance = tolerance;
  for (Variant v : kAllVariants) {
    if (std::find(requested.begin(), requested.end(), v) == requested.end()) continue;
    std::vector<RunOutcome> mine;
    for (const auto& r : runs) {
      if (r.variant == v) mine.push_back(r);
    }
    if (mine.empty()) throw ContractError("ablation_report: no runs for variant " + to_string(v));
    std::sort(mine.begin(), mine.end(), [](const auto& a, const auto& b) { return a.seed < b.seed; });
    VariantSummary s;
    s.variant = v;
    for (const auto& r : mine) {
      s.seeds.push_back(r.seed);
      s.accuracies.push_back(r.accuracy);
      s.mean += r.accuracy;
    }
    s.mean /= static_cast<double>(mine.size());
    s.stddev = mine.size() >= 2 ? sample_stddev(s.accuracies) : 0.0;
    out.enough_seeds = out.enough_seeds && mine.size() >= kMinAblationSeeds;
    out.variants.push_back(std::move(s));
  }
  const VariantSummary* prev = nullptr;
  for (const auto& s : out.variants) {
    if (std::find(kAblationLadder.begin(), kAblationLadder.end(), s.variant) == kAblationLadder.end()) continue;
    if (prev != nullptr && s.mean + tolerance < prev->mean) {
      out.ordering_holds = false;
      out.violations.push_back(to_string(s.variant) + " (" + format_double(s.mean) + ") trails " +
                               to_string(prev->variant) + " (" + format_double(prev->mean) + ")");
    }
    prev = &s;
  }
  return out;
}

inline nlohmann::json to_json(const AblationSummary& s) {
  nlohmann::json j;
  j["tolerance"] = s.tolerance;
  j["ordering"] = "cdan <= cdan_m <= cdan_m_d <= ren";
  j["ordering_holds"] = s.ordering_holds;
  j["violations"] = s.violations;
  j["enough_seeds"] = s.enough_seeds;
  nlohmann::json vs = nlohmann::json::array();
  for (const auto& v : s.variants) {
    vs.push_back({{"variant", to_string(v.variant)},
                  {"seeds", v.seeds},
                  {"accuracies", v.accuracies},
                  {"mean", v.mean},
                  {"std", v.stddev}});
  }
  j["variants"] = vs;
  return j;
}

// ---- projection -------------------------------------------------------------

/// Centers the rows and projects them onto the two leading principal directions.
/// Each direction's largest-magnitude loading is made positive.
inline Tensor project_2d(const Tensor& features) {
  const std::size_t m = features.rows(), d = features.cols();
  if (d < 2) throw DimensionError("project_2d: need at least two feature dimensions");
  if (m < 2) throw ContractError("project_2d: need at least two rows");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = features(i, j);
  x.rowwise() -= x.colwise().mean();
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(m - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  Eigen::MatrixXd basis(static_cast<Eigen::Index>(d), 2);
  for (Eigen::Index k = 0; k < 2; ++k) {
    Eigen::VectorXd v = eig.eigenvectors().col(static_cast<Eigen::Index>(d) - 1 - k);
    Eigen::Index at = 0;
    v.cwiseAbs().maxCoeff(&at);
    if (v(at) < 0.0) v = -v;
    basis.col(k) = v;
  }
  const Eigen::MatrixXd proj = x * basis;
  Tensor out(m, 2);
  for (std::size_t i = 0; i < m; ++i) {
    out(i, 0) = proj(static_cast<Eigen::Index>(i), 0);
    out(i, 1) = proj(static_cast<Eigen::Index>(i), 1);
  }
  return out;
}

/// Columns: id, domain, label, pc1, pc2.
inline void write_projection_csv(const std::filesystem::path& path, const Tensor& projected,
                                 std::span<const std::uint64_t> ids, std::span<const std::string> domains,
                                 std::span<const int> labels) {
  if (projected.cols() != 2 || ids.size() != projected.rows() || domains.size() != projected.rows() ||
      labels.size() != projected.rows()) {
    throw DimensionError("write_projection_csv: column lengths disagree");
  }
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os << "id,domain,label,pc1,pc2\n";
  for (std::size_t i = 0; i < projected.rows(); ++i) {
    os << ids[i] << ',' << domains[i] << ',' << labels[i] << ',' << format_double(projected(i, 0)) << ','
       << format_double(projected(i, 1)) << '\n';
  }
}

}  // namespace ren
