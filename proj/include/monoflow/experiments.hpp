#pragma once

// Experiment configuration, run metadata, the divergence x ratio-model
// training sweep, and the property-check suites behind `monoflow verify`.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "monoflow/flow.hpp"
#include "monoflow/generator.hpp"

namespace monoflow {

inline constexpr std::string_view kVersion = "1.0.0";
inline constexpr int kSchemaVersion = 1;

struct FlowConfig {
  std::string h = "identity";
  FlowSettings settings;
};

struct LossesConfig {
  double d_min = -10.0;
  double d_max = 10.0;
  int n = 401;
  std::vector<double> shifts = {0, 1, 3, 5};
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  Vector target_mean;
  Matrix target_cov;
  Vector init_mean;
  Matrix init_scale;
  FlowConfig flow;
  /// divergence and ratio_model select the single `train` run; the sweep
  /// overrides both.
  TrainConfig train;
  LossesConfig losses;
  std::filesystem::path output_dir = "out";
  /// Fully resolved document, serialized with sorted keys.
  std::string canonical;

  Gaussian target() const { return Gaussian(target_mean, target_cov); }
  Gaussian initial() const { return Gaussian(init_mean, init_scale.transpose() * init_scale); }
  /// FNV-1a 64 of `canonical`, as 16 hex digits.
  std::string hash() const;
};

/// The embedded defaults as a JSON document.
std::string default_config_text();

/// Resolves defaults <- document <- overrides. Sections present in the
/// document must be complete; unknown keys anywhere are rejected. Each
/// override is "dotted.key=value" with a JSON value (bare words are strings).
/// Throws ConfigError with a line or field diagnostic.
ExperimentConfig resolve_config(std::optional<std::string_view> document,
                                const std::vector<std::string>& overrides = {});

struct RunMetadata {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  double duration_seconds = 0.0;
};

/// Writes <output>.meta.json next to `output`.
void write_metadata(const std::filesystem::path& output, const RunMetadata& meta);

/// The expected converged/not-converged pattern for each cell of the sweep.
bool table2_expected(FKind divergence, RatioModel model);

struct Table2Cell {
  FKind divergence;
  RatioModel model;
  bool expected = false;
  TrainReport report;
};

struct Table2Result {
  std::vector<Table2Cell> cells;

  bool matches() const;
  /// 6 x 3 grid of check marks / crosses.
  std::string grid() const;
  /// One line per mismatched cell.
  std::string diff() const;
};

/// Hardware concurrency capped by MONOFLOW_THREADS when set.
unsigned sweep_threads();

/// Trains every (divergence, ratio model) pair from `base`, in parallel.
Table2Result run_table2(const TrainConfig& base, unsigned threads = sweep_threads());

/// Header divergence,ratio_model,expected,observed,outcome,tail_mu_dist,tail_cov_dist,behavior
void write_table2_csv(std::ostream& out, const Table2Result& result);

struct CheckResult {
  std::string suite;
  std::string id;
  bool passed = false;
  double value = 0.0;
  double threshold = 0.0;
  std::string detail;
};

inline constexpr std::string_view kVerifySuites[] = {"lemma", "corollary", "dissipation",
                                                     "gradients", "langevin"};

/// Runs one suite, or every suite for "all". Throws ConfigError for an
/// unknown name.
std::vector<CheckResult> run_verify(std::string_view suite, std::uint64_t seed = 0);

/// Final moments of the identity flow and of Langevin dynamics from the same
/// initial distribution after `steps` steps of size `dt`.
struct MarginalComparison {
  double mean_gap = 0.0;
  double cov_gap = 0.0;
};

/// Cloud size used by the langevin suite.
inline constexpr int kLangevinParticles = 20000;

MarginalComparison compare_langevin_and_flow(const Gaussian& p, const Gaussian& q0, double dt,
                                             int steps, int particles, std::uint64_t seed);

}  // namespace monoflow
