// ren: datagen | train | ablate | gradcheck | report

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ren/cli.hpp"

namespace {

using ren::ExperimentConfig;
namespace fs = std::filesystem;

// Leftover `--key value` / `--key=value` pairs become config overrides.
void apply_overrides(ExperimentConfig& cfg, const std::vector<std::string>& extras, bool allow_n) {
  for (std::size_t i = 0; i < extras.size(); ++i) {
    std::string arg = extras[i];
    if (!arg.starts_with("--")) throw ren::ConfigError("unexpected argument '" + arg + "'");
    arg.erase(0, 2);
    std::string value;
    if (const auto eq = arg.find('='); eq != std::string::npos) {
      value = arg.substr(eq + 1);
      arg.erase(eq);
    } else {
      if (i + 1 >= extras.size()) throw ren::ConfigError("config key '" + arg + "' needs a value");
      value = extras[++i];
    }
    if (allow_n && arg == "n") {
      ren::set_config_value(cfg, "n_source", value);
      ren::set_config_value(cfg, "n_target", value);
      continue;
    }
    ren::set_config_value(cfg, arg, value);
  }
}

ExperimentConfig build_config(const std::string& config_path, const std::vector<std::string>& extras,
                              bool allow_n = false) {
  ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : ren::load_config(config_path);
  apply_overrides(cfg, extras, allow_n);
  return cfg;
}

std::vector<std::uint64_t> parse_seeds(const std::string& list) {
  std::vector<std::uint64_t> out;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    auto end = list.find(',', pos);
    if (end == std::string::npos) end = list.size();
    out.push_back(ren::detail::parse_count("seeds", list.substr(pos, end - pos)));
    pos = end + 1;
  }
  return out;
}

std::vector<ren::Variant> parse_variants(const std::string& list) {
  std::vector<ren::Variant> out;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    auto end = list.find(',', pos);
    if (end == std::string::npos) end = list.size();
    out.push_back(ren::parse_variant(list.substr(pos, end - pos)));
    pos = end + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"REN domain adaptation: student/teacher training with dual conditional adversarial losses"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ren::cli::kToolVersion);

  std::string config_path, out;

  auto* datagen = app.add_subcommand("datagen", "Write a benchmark dataset CSV and its metadata sidecar");
  datagen->add_option("--config", config_path, "Config file (key = value)");
  datagen->add_option("--out", out, "Output CSV path")->required();
  datagen->allow_extras();
  datagen->footer("Other flags set config keys, e.g. --gen two_moons --n 500 --rot 45 --seed 1");

  auto* train = app.add_subcommand("train", "Train one run into <out>/run-<hash>-s<seed>");
  train->add_option("--config", config_path, "Config file (key = value)");
  std::string train_out = "runs";
  train->add_option("--out", train_out, "Directory that receives the run directory")->capture_default_str();
  train->allow_extras();
  train->footer("Other flags set config keys, e.g. --variant ren --seed 7 --steps 1500");

  auto* ablate = app.add_subcommand("ablate", "Run variants x seeds and summarize");
  ablate->add_option("--config", config_path, "Base config file (key = value)");
  std::string ablate_out = "ablation", seeds = "1,2,3,4,5", variants = "cdan,cdan_m,cdan_m_d,ren";
  ablate->add_option("--out", ablate_out, "Output directory")->capture_default_str();
  ablate->add_option("--seeds", seeds, "Comma-separated seeds")->capture_default_str();
  ablate->add_option("--variants", variants, "Comma-separated variants")->capture_default_str();
  ablate->allow_extras();

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every loss term");
  ren::cli::GradcheckOptions gc;
  gradcheck->add_option("--seed", gc.seed, "Base seed")->capture_default_str();
  gradcheck->add_option("--trials", gc.trials, "Random problems per loss term")->capture_default_str();
  gradcheck->add_option("--batch", gc.size.batch, "Rows per domain")->capture_default_str();
  gradcheck->add_option("--input", gc.size.input, "Input width")->capture_default_str();
  gradcheck->add_option("--hidden", gc.size.hidden, "Hidden width of F")->capture_default_str();
  gradcheck->add_option("--feature-dim", gc.size.feature_dim, "Feature width d")->capture_default_str();
  gradcheck->add_option("--classes", gc.size.classes, "Classes c")->capture_default_str();
  gradcheck->add_option("--tol", gc.tol, "Relative error tolerance")->capture_default_str();
  gradcheck->add_flag("--corrupt", gc.corrupt, "Perturb one analytic gradient entry (self-test)");

  auto* report = app.add_subcommand("report", "Re-aggregate runs from their metrics CSVs");
  std::string runs_dir, json_out;
  std::vector<std::string> project;
  report->add_option("--runs", runs_dir, "Directory holding run directories")->required();
  report->add_option("--json", json_out, "Write the summary JSON here");
  report->add_option("--project", project, "Run directory to export a 2-D feature projection for");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? ren::cli::kOk : ren::cli::kUsage;
  }

  try {
    if (*datagen) {
      return ren::cli::cmd_datagen(build_config(config_path, datagen->remaining(), true), out, std::cout);
    }
    if (*train) return ren::cli::cmd_train(build_config(config_path, train->remaining()), train_out, std::cout);
    if (*ablate) {
      return ren::cli::cmd_ablate(build_config(config_path, ablate->remaining()), parse_seeds(seeds),
                                  parse_variants(variants), ablate_out, std::cout);
    }
    if (*gradcheck) return ren::cli::cmd_gradcheck(gc, std::cout);
    if (*report) {
      std::vector<fs::path> dirs(project.begin(), project.end());
      return ren::cli::cmd_report(runs_dir, json_out, dirs, std::cout);
    }
  } catch (const ren::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ren::cli::kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ren::cli::kUsage;
  }
  return ren::cli::kUsage;
}
