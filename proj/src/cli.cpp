#include "monoflow/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "monoflow/error.hpp"
#include "monoflow/experiments.hpp"

namespace monoflow {

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct CommonOptions {
  std::string config_path;
  std::string out_dir;
  std::optional<long long> seed;
  std::vector<std::string> overrides;
  std::string suite = "all";
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig load(const CommonOptions& opts) {
  std::vector<std::string> overrides = opts.overrides;
  if (opts.seed) {
    if (*opts.seed < 0) throw ConfigError("--seed: must be non-negative");
    overrides.push_back("seed=" + std::to_string(*opts.seed));
  }
  if (!opts.out_dir.empty()) overrides.push_back("output_dir=" + nlohmann::json(opts.out_dir).dump());
  std::optional<std::string> text;
  if (!opts.config_path.empty()) text = read_file(opts.config_path);
  try {
    return resolve_config(text ? std::optional<std::string_view>(*text) : std::nullopt, overrides);
  } catch (const ConfigError& e) {
    if (opts.config_path.empty()) throw;
    throw ConfigError(opts.config_path + ": " + e.what());
  }
}

fs::path prepare_output(const ExperimentConfig& cfg, const std::string& file) {
  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec) throw ConfigError("output_dir: cannot create '" + cfg.output_dir.string() + "'");
  return cfg.output_dir / file;
}

std::ofstream open_csv(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void emit_metadata(const fs::path& file, const std::string& command, const ExperimentConfig& cfg,
                   Clock::time_point start) {
  write_metadata(file, {command, cfg.hash(), cfg.seed, seconds_since(start)});
}

int cmd_flow(const ExperimentConfig& cfg, std::ostream& out) {
  const auto start = Clock::now();
  Rng rng(cfg.seed);
  const FlowTrace trace =
      run_flow(cfg.target(), cfg.initial(), parse_h(cfg.flow.h), cfg.flow.settings, rng);
  const fs::path path = prepare_output(cfg, "flow.csv");
  {
    std::ofstream csv = open_csv(path);
    write_flow_csv(csv, trace);
  }
  emit_metadata(path, "flow", cfg, start);
  const FlowRecord& last = trace.records.back();
  out << "flow h=" << cfg.flow.h << " source=" << to_string(cfg.flow.settings.source)
      << " t=" << last.time << " final KL=" << last.kl << '\n'
      << "wrote " << path.string() << '\n';
  return kExitOk;
}

nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

int cmd_train(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto start = Clock::now();
  const TrainReport report = train(cfg.train);
  const fs::path trace_path = prepare_output(cfg, "train.csv");
  {
    std::ofstream csv = open_csv(trace_path);
    write_train_csv(csv, report);
  }
  emit_metadata(trace_path, "train", cfg, start);

  nlohmann::json result;
  result["divergence"] = FDivergence(cfg.train.divergence).name();
  result["ratio_model"] = to_string(cfg.train.ratio_model);
  result["converged"] = report.converged;
  result["outcome"] = to_string(report.outcome);
  result["behavior"] = report.behavior;
  result["tail_mu_dist"] = report.tail_mu_dist;
  result["tail_cov_dist"] = report.tail_cov_dist;
  result["final_mu"] = std::vector<double>(report.final_mu.data(),
                                           report.final_mu.data() + report.final_mu.size());
  result["final_s"] = matrix_json(report.final_s);
  result["final_cov"] = matrix_json(report.final_cov);
  const fs::path result_path = prepare_output(cfg, "train_result.json");
  {
    std::ofstream f(result_path, std::ios::binary);
    if (!f) throw Error("cannot write " + result_path.string());
    f << result.dump(2) << '\n';
  }
  emit_metadata(result_path, "train", cfg, start);

  out << "train " << result["divergence"].get<std::string>() << " / "
      << to_string(cfg.train.ratio_model) << ": " << to_string(report.outcome)
      << " (mean distance " << report.tail_mu_dist << ", covariance distance "
      << report.tail_cov_dist << ")\n"
      << "wrote " << trace_path.string() << " and " << result_path.string() << '\n';
  if (report.outcome == TrainOutcome::Diverged) {
    err << "numeric failure: " << report.behavior << '\n';
    return kExitNumeric;
  }
  return kExitOk;
}

int cmd_table2(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto start = Clock::now();
  const Table2Result result = run_table2(cfg.train);
  const fs::path path = prepare_output(cfg, "table2.csv");
  {
    std::ofstream csv = open_csv(path);
    write_table2_csv(csv, result);
  }
  emit_metadata(path, "table2", cfg, start);
  const fs::path grid_path = prepare_output(cfg, "table2.txt");
  {
    std::ofstream txt(grid_path, std::ios::binary);
    if (!txt) throw Error("cannot write " + grid_path.string());
    txt << result.grid();
  }
  emit_metadata(grid_path, "table2", cfg, start);
  out << result.grid() << "wrote " << path.string() << '\n';
  if (!result.matches()) {
    err << "matrix mismatch:\n" << result.diff();
    return kExitMismatch;
  }
  return kExitOk;
}

int cmd_losses(const ExperimentConfig& cfg, std::ostream& out) {
  const auto start = Clock::now();
  const LossesConfig& l = cfg.losses;
  std::vector<double> grid(static_cast<std::size_t>(l.n));
  for (int i = 0; i < l.n; ++i)
    grid[static_cast<std::size_t>(i)] = l.d_min + (l.d_max - l.d_min) * i / (l.n - 1);
  const LossProfile profile = loss_rescaling_profile(generator_losses(l.shifts), grid);
  const fs::path path = prepare_output(cfg, "losses.csv");
  {
    std::ofstream csv = open_csv(path);
    write_profile_csv(csv, profile);
  }
  emit_metadata(path, "losses", cfg, start);
  out << "wrote " << path.string() << " (" << profile.losses.size() << " losses, " << l.n
      << " points)\n";
  return kExitOk;
}

int cmd_verify(const ExperimentConfig& cfg, const std::string& suite, std::ostream& out,
               std::ostream& err) {
  const auto start = Clock::now();
  const std::vector<CheckResult> checks = run_verify(suite, cfg.seed);
  const fs::path path = prepare_output(cfg, "verify.csv");
  int failures = 0;
  {
    std::ofstream csv = open_csv(path);
    csv << "suite,id,passed,value,threshold,detail\n";
    char nums[64];
    for (const CheckResult& c : checks) {
      std::snprintf(nums, sizeof nums, "%.6g,%.6g", c.value, c.threshold);
      std::string detail = c.detail;
      std::replace(detail.begin(), detail.end(), '"', '\'');
      csv << c.suite << ',' << c.id << ',' << (c.passed ? "true" : "false") << ',' << nums
          << ",\"" << detail << "\"\n";
      out << (c.passed ? "PASS " : "FAIL ") << c.suite << '/' << c.id << "  value=" << c.value
          << " threshold=" << c.threshold;
      if (!c.detail.empty()) out << "  (" << c.detail << ')';
      out << '\n';
      if (!c.passed) {
        ++failures;
        err << "check failed: " << c.suite << '/' << c.id << '\n';
      }
    }
  }
  emit_metadata(path, "verify", cfg, start);
  out << checks.size() - static_cast<std::size_t>(failures) << '/' << checks.size()
      << " checks passed\n";
  return failures == 0 ? kExitOk : kExitVerify;
}

}  // namespace

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Particle flows with monotone rescaling and generator training on Gaussians",
               "monoflow"};
  app.require_subcommand(1);
  CommonOptions opts;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config_path, "JSON configuration document");
    sub->add_option("--out", opts.out_dir, "Output directory (overrides output_dir)");
    sub->add_option("--seed", opts.seed, "Random seed (overrides seed)");
    sub->add_option("--override", opts.overrides, "dotted.key=value, repeatable")
        ->allow_extra_args(false);
  };
  CLI::App* flow = app.add_subcommand("flow", "Run the particle flow and write its trace");
  CLI::App* trainer = app.add_subcommand("train", "Train one generator");
  CLI::App* table = app.add_subcommand("table2", "Train every divergence x ratio-model pair");
  CLI::App* losses = app.add_subcommand("losses", "Tabulate generator losses and their slopes");
  CLI::App* verify = app.add_subcommand("verify", "Run property-check suites");
  for (CLI::App* sub : {flow, trainer, table, losses, verify}) add_common(sub);
  verify->add_option("--suite", opts.suite,
                     "lemma, corollary, dissipation, gradients, langevin or all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    const ExperimentConfig cfg = load(opts);
    if (flow->parsed()) return cmd_flow(cfg, out);
    if (trainer->parsed()) return cmd_train(cfg, out, err);
    if (table->parsed()) return cmd_table2(cfg, out, err);
    if (losses->parsed()) return cmd_losses(cfg, out);
    return cmd_verify(cfg, opts.suite, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericOverflow& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const NotPositiveDefinite& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumeric;
  }
}

}  // namespace monoflow
