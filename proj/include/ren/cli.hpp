#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ren/checkpoint.hpp"
#include "ren/config_io.hpp"
#include "ren/datasets.hpp"
#include "ren/errors.hpp"
#include "ren/evaluation.hpp"
#include "ren/gradcheck.hpp"
#include "ren/trainer.hpp"
#include "ren/variant.hpp"

namespace ren::cli {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kUsage = 1, kCheckFailed = 2 };

namespace fs = std::filesystem;

inline DomainDataset load_dataset(const ExperimentConfig& cfg) {
  return cfg.data.empty() ? make_benchmark(cfg.benchmark()) : read_dataset_csv(cfg.data);
}

// ---- datagen ----------------------------------------------------------------

/// Writes `out` (CSV) and its metadata sidecar.
inline int cmd_datagen(const ExperimentConfig& cfg, const fs::path& out, std::ostream& log) {
  const DomainDataset ds = make_benchmark(cfg.benchmark());
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_dataset_csv(out, ds);
  log << "wrote " << out.string() << " (" << ds.n_source() << " source, " << ds.n_target() << " target, dim "
      << ds.input_dim() << ")\n";
  return kOk;
}

// ---- train ------------------------------------------------------------------

struct RunArtifacts {
  fs::path dir;
  fs::path manifest, config, metrics, checkpoint;
};

inline RunArtifacts run_artifacts(const fs::path& out_root, const ExperimentConfig& cfg) {
  RunArtifacts a;
  a.dir = out_root / run_dir_name(cfg);
  a.manifest = a.dir / "manifest.json";
  a.config = a.dir / "config.txt";
  a.metrics = a.dir / "metrics.csv";
  a.checkpoint = a.dir / "checkpoint.bin";
  return a;
}

inline nlohmann::json manifest_json(const ExperimentConfig& cfg, const DomainDataset& ds, const RunArtifacts& a) {
  nlohmann::json config = nlohmann::json::object();
  std::istringstream lines(serialize_config(cfg));
  for (std::string line; std::getline(lines, line);) {
    const auto eq = line.find(" = ");
    config[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return {{"tool", "ren"},
          {"version", kToolVersion},
          {"config", config},
          {"config_hash", config_hash(cfg)},
          {"seeds", {cfg.train.seed}},
          {"dataset", ds.metadata},
          {"artifacts",
           {{"config", a.config.filename().string()},
            {"metrics", a.metrics.filename().string()},
            {"checkpoint", a.checkpoint.filename().string()}}}};
}

inline std::vector<NamedTensor> checkpoint_tensors(const RunResult& r) {
  std::vector<NamedTensor> out;
  collect(out, "student", r.nets.student.feature);
  collect(out, "student", r.nets.student.classifier);
  if (r.nets.teacher) {
    collect(out, "teacher", r.nets.teacher->feature);
    collect(out, "teacher", r.nets.teacher->classifier);
  }
  if (r.disc) collect(out, "disc", r.disc->params);
  return out;
}

struct TrainOutcome {
  RunArtifacts artifacts;
  RunResult result;
};

/// Trains one run into out_root/run-<hash>-s<seed>. The manifest and config
/// snapshot are written before the first step.
inline TrainOutcome train_run(const ExperimentConfig& cfg, const fs::path& out_root, std::ostream& log) {
  cfg.train.validate();
  const DomainDataset ds = load_dataset(cfg);
  TrainOutcome out{run_artifacts(out_root, cfg), {}};
  const RunArtifacts& a = out.artifacts;
  fs::create_directories(a.dir);
  {
    std::ofstream os(a.manifest);
    if (!os) throw FormatError("cannot write " + a.manifest.string());
    os << manifest_json(cfg, ds, a).dump(2) << '\n';
  }
  {
    std::ofstream os(a.config);
    if (!os) throw FormatError("cannot write " + a.config.string());
    os << serialize_config(cfg);
  }
  out.result = run(cfg.train, ds);
  write_metrics_csv(a.metrics, out.result.metrics);
  save_checkpoint(a.checkpoint, checkpoint_tensors(out.result));
  const MetricsRecord& last = out.result.metrics.back();
  log << a.dir.string() << ": variant " << to_string(cfg.train.variant) << " seed " << cfg.train.seed
      << " target accuracy " << format_double(last.reported_accuracy()) << '\n';
  return out;
}

inline int cmd_train(const ExperimentConfig& cfg, const fs::path& out_root, std::ostream& log) {
  train_run(cfg, out_root, log);
  return kOk;
}

// ---- ablate -----------------------------------------------------------------

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

/// Runs every (variant, seed) pair in sorted order and writes ablation.json.
inline AblationSummary run_ablation(const ExperimentConfig& base, std::vector<std::uint64_t> seeds,
                                    std::vector<Variant> variants, const fs::path& out_root, std::ostream& log) {
  if (seeds.empty()) throw ConfigError("ablate: need at least one seed");
  if (variants.empty()) throw ConfigError("ablate: need at least one variant");
  std::sort(seeds.begin(), seeds.end());
  seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());
  std::sort(variants.begin(), variants.end());
  variants.erase(std::unique(variants.begin(), variants.end()), variants.end());
  std::vector<RunOutcome> outcomes;
  for (Variant v : variants) {
    for (std::uint64_t seed : seeds) {
      ExperimentConfig cfg = base;
      cfg.train.variant = v;
      cfg.train.seed = seed;
      const TrainOutcome t = train_run(cfg, out_root, log);
      outcomes.push_back({v, seed, t.result.metrics.back().reported_accuracy()});
    }
  }
  AblationSummary summary = ablation_report(outcomes, variants);
  fs::create_directories(out_root);
  write_json(out_root / "ablation.json", to_json(summary));
  return summary;
}

inline void print_summary(const AblationSummary& s, std::ostream& log) {
  for (const auto& v : s.variants) {
    log << to_string(v.variant) << ": mean " << format_double(v.mean) << " std " << format_double(v.stddev)
        << " over " << v.accuracies.size() << " seeds\n";
  }
  log << "ordering cdan <= cdan_m <= cdan_m_d <= ren: " << (s.ordering_holds ? "holds" : "violated") << '\n';
  for (const auto& msg : s.violations) log << "  " << msg << '\n';
  if (!s.enough_seeds) log << "note: fewer than " << kMinAblationSeeds << " seeds per variant\n";
}

inline int cmd_ablate(const ExperimentConfig& base, const std::vector<std::uint64_t>& seeds,
                      const std::vector<Variant>& variants, const fs::path& out_root, std::ostream& log) {
  print_summary(run_ablation(base, seeds, variants, out_root, log), log);
  return kOk;
}

// ---- gradcheck --------------------------------------------------------------

struct GradcheckOptions {
  std::uint64_t seed = 0;
  std::size_t trials = 20;
  GradProblemSize size{};
  double h = 1e-5;
  double tol = 1e-4;
  bool corrupt = false;  // perturbs one analytic entry; the check must then fail
};

inline int cmd_gradcheck(const GradcheckOptions& opt, std::ostream& log) {
  bool ok = true;
  for (LossTerm term : kAllLossTerms) {
    GradCheckReport worst;
    std::uint64_t worst_seed = 0;
    for (std::size_t trial = 0; trial < opt.trials; ++trial) {
      const std::uint64_t seed = derive_seed(opt.seed, {trial});
      GradProblem p = make_grad_problem(seed, opt.size);
      GradientHook hook;
      if (opt.corrupt) hook = [](std::vector<std::vector<Tensor>>& g) { g[0][0][0] += 1e-2; };
      const GradCheckReport r = check_term(p, term, opt.h, opt.tol, hook);
      if (trial == 0 || r.max_rel_error > worst.max_rel_error) {
        worst = r;
        worst_seed = seed;
      }
    }
    const bool pass = worst.passed();
    ok = ok && pass;
    log << (pass ? "PASS " : "FAIL ") << to_string(term) << ": max rel error " << format_double(worst.max_rel_error)
        << " at " << worst.worst.tensor << '[' << worst.worst.index << "] (analytic "
        << format_double(worst.worst.analytic) << ", numeric " << format_double(worst.worst.numeric) << ", seed "
        << worst_seed << ")\n";
  }
  return ok ? kOk : kCheckFailed;
}

// ---- report -----------------------------------------------------------------

struct RunRecord {
  fs::path dir;
  ExperimentConfig config;
  std::vector<MetricsRecord> metrics;
};

/// Every run directory directly under `root` that has a config and a metrics file.
inline std::vector<RunRecord> scan_runs(const fs::path& root) {
  if (!fs::is_directory(root)) throw ConfigError("report: " + root.string() + " is not a directory");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && fs::exists(e.path() / "config.txt") && fs::exists(e.path() / "metrics.csv")) {
      dirs.push_back(e.path());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<RunRecord> out;
  for (const auto& d : dirs) {
    RunRecord r{d, load_config(d / "config.txt"), read_metrics_csv(d / "metrics.csv")};
    if (r.metrics.empty()) throw FormatError("report: " + (d / "metrics.csv").string() + " has no rows");
    out.push_back(std::move(r));
  }
  return out;
}

/// Re-aggregates final accuracies from metrics CSVs, plus mean stability of
/// student and reported curves per variant.
inline nlohmann::json report_json(const std::vector<RunRecord>& runs) {
  std::vector<RunOutcome> outcomes;
  std::vector<Variant> variants;
  std::map<Variant, std::vector<std::pair<double, double>>> stab;
  for (const auto& r : runs) {
    const Variant v = r.config.train.variant;
    outcomes.push_back({v, r.config.train.seed, r.metrics.back().reported_accuracy()});
    if (std::find(variants.begin(), variants.end(), v) == variants.end()) variants.push_back(v);
    if (r.metrics.size() >= 4) {
      std::vector<double> stu, rep;
      for (const auto& m : r.metrics) {
        stu.push_back(m.acc_student_target);
        rep.push_back(m.reported_accuracy());
      }
      stab[v].push_back({stability(stu), stability(rep)});
    }
  }
  nlohmann::json j = to_json(ablation_report(outcomes, variants));
  nlohmann::json s = nlohmann::json::object();
  for (const auto& [v, pairs] : stab) {
    double a = 0.0, b = 0.0;
    for (const auto& [x, y] : pairs) {
      a += x;
      b += y;
    }
    const double n = static_cast<double>(pairs.size());
    s[to_string(v)] = {{"student", a / n}, {"reported", b / n}, {"runs", pairs.size()}};
  }
  j["stability"] = s;
  return j;
}

/// Projects the final features of a run (teacher when present) over source and
/// target rows to two dimensions.
inline void export_projection(const fs::path& run_dir, const fs::path& out) {
  const ExperimentConfig cfg = load_config(run_dir / "config.txt");
  const DomainDataset ds = load_dataset(cfg);
  TrainState state = make_train_state(cfg.train, ds.input_dim(), ds.classes);
  const auto saved = load_checkpoint(run_dir / "checkpoint.bin");
  Network net = state.nets.student;
  restore(net.feature, "student", saved);
  restore(net.classifier, "student", saved);
  if (state.nets.teacher) {
    restore(net.feature, "teacher", saved);
    restore(net.classifier, "teacher", saved);
  }
  const Tensor x = kernels::concat_rows(ds.source_x, ds.target_x);
  const Tensor proj = project_2d(mlp_values(net.feature, x));
  std::vector<std::uint64_t> ids;
  std::vector<std::string> domains;
  std::vector<int> labels;
  for (std::size_t i = 0; i < ds.n_source(); ++i) {
    ids.push_back(sample_id(ds, false, i));
    domains.emplace_back("source");
    labels.push_back(ds.source_y[i]);
  }
  for (std::size_t i = 0; i < ds.n_target(); ++i) {
    ids.push_back(sample_id(ds, true, i));
    domains.emplace_back("target");
    labels.push_back(ds.target_y[i]);
  }
  write_projection_csv(out, proj, ids, domains, labels);
}

inline int cmd_report(const fs::path& root, const fs::path& json_out, const std::vector<fs::path>& project_runs,
                      std::ostream& log) {
  const auto runs = scan_runs(root);
  if (runs.empty()) throw ConfigError("report: no run directories under " + root.string());
  const nlohmann::json j = report_json(runs);
  if (!json_out.empty()) write_json(json_out, j);
  log << j.dump(2) << '\n';
  for (const auto& d : project_runs) {
    const fs::path out = d / "projection.csv";
    export_projection(d, out);
    log << "wrote " << out.string() << '\n';
  }
  return kOk;
}

}  // namespace ren::cli
