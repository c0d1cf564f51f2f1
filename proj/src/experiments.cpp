#include "monoflow/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "monoflow/error.hpp"
#include "monoflow/kernels.hpp"
#include "monoflow/ratio_variants.hpp"

namespace monoflow {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

std::string default_config_text() {
  return R"({
  "schema_version": 1,
  "seed": 0,
  "target": {"mean": [0.0, 0.0], "cov": [[1.0, 0.8], [0.8, 0.89]]},
  "init": {"mean": [1.0, 1.0], "scale": [[1.0, 0.0], [0.0, 1.0]]},
  "flow": {
    "h": "identity",
    "ratio_source": "moment_matched",
    "alpha": 0.001,
    "steps": 5000,
    "particles": 4096
  },
  "train": {
    "divergence": "kl",
    "ratio_model": "full",
    "steps": 5000,
    "batch": 512,
    "generator": {"lr": 0.01, "beta1": 0.9, "beta2": 0.999},
    "disc": {
      "lr": 0.005,
      "beta1": 0.5,
      "beta2": 0.999,
      "updates_per_step": 1,
      "hidden": [64, 64],
      "leaky_slope": 0.2
    },
    "clip_norm": 1000.0,
    "tol_mean": 0.1,
    "tol_cov": 0.15,
    "tail_window": 100
  },
  "losses": {"d_min": -10.0, "d_max": 10.0, "n": 401, "shifts": [0.0, 1.0, 3.0, 5.0]},
  "output_dir": "out"
}
)";
}

namespace {

std::string join_path(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

// Every key of `doc` must exist in `schema`; nested objects must carry every
// key of their schema counterpart.
void check_against_schema(const json& doc, const json& schema, const std::string& path,
                          bool require_all) {
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string field = join_path(path, it.key());
    if (!schema.contains(it.key())) throw ConfigError(field + ": unknown key");
    const json& expected = schema.at(it.key());
    if (expected.is_object()) {
      if (!it.value().is_object()) throw ConfigError(field + ": expected an object");
      check_against_schema(it.value(), expected, field, true);
    }
  }
  if (require_all)
    for (auto it = schema.begin(); it != schema.end(); ++it)
      if (!doc.contains(it.key()))
        throw ConfigError(join_path(path, it.key()) + ": missing required field");
}

void merge_into(json& base, const json& patch) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (it.value().is_object() && base[it.key()].is_object())
      merge_into(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
}

std::string line_column(std::string_view text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "': expected KEY=VALUE");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (!node->is_object() || !node->contains(part))
      throw ConfigError(key + ": unknown key in override");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  if (node->is_object()) throw ConfigError(key + ": cannot override a whole section");
  *node = std::move(value);
}

double get_number(const json& doc, const std::string& path) {
  const json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    node = &node->at(path.substr(start, dot == std::string::npos ? dot : dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (!node->is_number()) throw ConfigError(path + ": expected a number");
  const double v = node->get<double>();
  if (!std::isfinite(v)) throw ConfigError(path + ": must be finite");
  return v;
}

const json& get_node(const json& doc, const std::string& path) {
  const json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    node = &node->at(path.substr(start, dot == std::string::npos ? dot : dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return *node;
}

std::string get_string(const json& doc, const std::string& path) {
  const json& node = get_node(doc, path);
  if (!node.is_string()) throw ConfigError(path + ": expected a string");
  return node.get<std::string>();
}

long long get_integer(const json& doc, const std::string& path, long long min_value) {
  const double v = get_number(doc, path);
  if (v != std::floor(v)) throw ConfigError(path + ": expected an integer");
  if (v < static_cast<double>(min_value))
    throw ConfigError(path + ": must be at least " + std::to_string(min_value));
  return static_cast<long long>(v);
}

double get_positive(const json& doc, const std::string& path) {
  const double v = get_number(doc, path);
  if (!(v > 0.0)) throw ConfigError(path + ": must be positive");
  return v;
}

double get_unit_interval(const json& doc, const std::string& path) {
  const double v = get_number(doc, path);
  if (!(v >= 0.0 && v < 1.0)) throw ConfigError(path + ": must lie in [0, 1)");
  return v;
}

std::vector<double> get_numbers(const json& doc, const std::string& path) {
  const json& node = get_node(doc, path);
  if (!node.is_array()) throw ConfigError(path + ": expected an array of numbers");
  std::vector<double> out;
  for (const json& v : node) {
    if (!v.is_number()) throw ConfigError(path + ": expected an array of numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

Vector get_vector(const json& doc, const std::string& path) {
  const std::vector<double> v = get_numbers(doc, path);
  if (v.empty()) throw ConfigError(path + ": must be nonempty");
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Matrix get_matrix(const json& doc, const std::string& path, Eigen::Index dim) {
  const json& node = get_node(doc, path);
  if (!node.is_array() || static_cast<Eigen::Index>(node.size()) != dim)
    throw ConfigError(path + ": expected a " + std::to_string(dim) + " x " + std::to_string(dim) +
                      " matrix");
  Matrix m(dim, dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    const json& row = node[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != dim)
      throw ConfigError(path + ": expected a " + std::to_string(dim) + " x " +
                        std::to_string(dim) + " matrix");
    for (Eigen::Index j = 0; j < dim; ++j) {
      if (!row[static_cast<std::size_t>(j)].is_number())
        throw ConfigError(path + ": matrix entries must be numbers");
      m(i, j) = row[static_cast<std::size_t>(j)].get<double>();
    }
  }
  return m;
}

template <class Parse>
auto named(const json& doc, const std::string& path, Parse parse) {
  const std::string name = get_string(doc, path);
  try {
    return parse(name);
  } catch (const Error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

ExperimentConfig from_json(const json& doc) {
  ExperimentConfig c;
  if (get_integer(doc, "schema_version", 1) != kSchemaVersion)
    throw ConfigError("schema_version: unsupported version (expected " +
                      std::to_string(kSchemaVersion) + ")");
  c.seed = static_cast<std::uint64_t>(get_integer(doc, "seed", 0));
  c.target_mean = get_vector(doc, "target.mean");
  const Eigen::Index dim = c.target_mean.size();
  c.target_cov = get_matrix(doc, "target.cov", dim);
  c.init_mean = get_vector(doc, "init.mean");
  if (c.init_mean.size() != dim) throw ConfigError("init.mean: must match target.mean length");
  c.init_scale = get_matrix(doc, "init.scale", dim);
  try {
    (void)c.target();
  } catch (const Error& e) {
    throw ConfigError(std::string("target.cov: ") + e.what());
  }
  try {
    (void)c.initial();
  } catch (const Error& e) {
    throw ConfigError(std::string("init.scale: ") + e.what());
  }

  FlowConfig& f = c.flow;
  f.h = get_string(doc, "flow.h");
  const HFunction h = named(doc, "flow.h", [](const std::string& s) { return parse_h(s); });
  if (!h.monotone()) throw ConfigError("flow.h: '" + f.h + "' is not monotone");
  f.settings.source = named(doc, "flow.ratio_source",
                            [](const std::string& s) { return parse_ratio_source(s); });
  f.settings.alpha = get_positive(doc, "flow.alpha");
  f.settings.steps = static_cast<int>(get_integer(doc, "flow.steps", 1));
  f.settings.particles = static_cast<int>(get_integer(doc, "flow.particles", dim + 1));

  TrainConfig& t = c.train;
  t.divergence = named(doc, "train.divergence",
                       [](const std::string& s) { return parse_divergence(s).kind(); });
  t.ratio_model = named(doc, "train.ratio_model",
                        [](const std::string& s) { return parse_ratio_model(s); });
  t.steps = static_cast<int>(get_integer(doc, "train.steps", 1));
  t.batch = static_cast<int>(get_integer(doc, "train.batch", 1));
  t.generator = OptimizerSettings::adam(get_number(doc, "train.generator.lr"),
                                        get_unit_interval(doc, "train.generator.beta1"),
                                        get_unit_interval(doc, "train.generator.beta2"));
  t.disc.optimizer = OptimizerSettings::adam(get_number(doc, "train.disc.lr"),
                                             get_unit_interval(doc, "train.disc.beta1"),
                                             get_unit_interval(doc, "train.disc.beta2"));
  t.disc.updates_per_step = static_cast<int>(get_integer(doc, "train.disc.updates_per_step", 1));
  t.disc.hidden.clear();
  for (double w : get_numbers(doc, "train.disc.hidden")) {
    if (!(w >= 1.0 && w == std::floor(w)))
      throw ConfigError("train.disc.hidden: widths must be positive integers");
    t.disc.hidden.push_back(static_cast<std::size_t>(w));
  }
  t.disc.leaky_slope = get_number(doc, "train.disc.leaky_slope");
  if (!(t.disc.leaky_slope > 0.0 && t.disc.leaky_slope < 1.0))
    throw ConfigError("train.disc.leaky_slope: must lie in (0, 1)");
  t.clip_norm = get_positive(doc, "train.clip_norm");
  t.tol_mean = get_positive(doc, "train.tol_mean");
  t.tol_cov = get_positive(doc, "train.tol_cov");
  t.tail_window = static_cast<int>(get_integer(doc, "train.tail_window", 1));
  t.seed = c.seed;
  t.target_mean = c.target_mean;
  t.target_cov = c.target_cov;
  t.init_mean = c.init_mean;
  t.init_scale = c.init_scale;
  if (get_number(doc, "train.generator.lr") < 0.0)
    throw ConfigError("train.generator.lr: must be non-negative");
  if (get_number(doc, "train.disc.lr") < 0.0)
    throw ConfigError("train.disc.lr: must be non-negative");
  t.validate();

  LossesConfig& l = c.losses;
  l.d_min = get_number(doc, "losses.d_min");
  l.d_max = get_number(doc, "losses.d_max");
  if (!(l.d_min < l.d_max)) throw ConfigError("losses.d_min: must be below losses.d_max");
  l.n = static_cast<int>(get_integer(doc, "losses.n", 2));
  l.shifts = get_numbers(doc, "losses.shifts");

  c.output_dir = get_string(doc, "output_dir");
  c.canonical = doc.dump();
  return c;
}

}  // namespace

std::string ExperimentConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ExperimentConfig resolve_config(std::optional<std::string_view> document,
                                const std::vector<std::string>& overrides) {
  const json schema = json::parse(default_config_text());
  json resolved = schema;
  if (document) {
    json doc;
    try {
      doc = json::parse(document->begin(), document->end());
    } catch (const json::parse_error& e) {
      throw ConfigError("malformed JSON at " + line_column(*document, e.byte));
    }
    if (!doc.is_object()) throw ConfigError("config: top level must be an object");
    if (!doc.contains("schema_version")) throw ConfigError("schema_version: missing required field");
    check_against_schema(doc, schema, "", false);
    merge_into(resolved, doc);
  }
  for (const std::string& o : overrides) apply_override(resolved, o);
  try {
    return from_json(resolved);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

void write_metadata(const std::filesystem::path& output, const RunMetadata& meta) {
  json m;
  m["artifact_version"] = std::string(kVersion);
  m["command"] = meta.command;
  m["config_hash"] = meta.config_hash;
  m["seed"] = meta.seed;
  m["rng"] = std::string(Rng::kAlgorithm);
  m["kernels"] = std::string(kernels::active().name);
  m["duration_seconds"] = meta.duration_seconds;
  m["output"] = output.filename().string();
  std::filesystem::path path = output;
  path += ".meta.json";
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << m.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Sweep

bool table2_expected(FKind divergence, RatioModel model) {
  if (model == RatioModel::Full) return divergence != FKind::Exp;
  return divergence == FKind::KL || divergence == FKind::Exp;
}

bool Table2Result::matches() const {
  return std::all_of(cells.begin(), cells.end(),
                     [](const Table2Cell& c) { return c.expected == c.report.converged; });
}

namespace {

constexpr RatioModel kModels[] = {RatioModel::Full, RatioModel::Detached, RatioModel::GanBilevel};

const char* mark(bool ok) { return ok ? "yes" : "no"; }

}  // namespace

std::string Table2Result::grid() const {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %-10s %-10s %-10s\n", "divergence", "full",
                "detached", "gan");
  out << line;
  for (FKind f : kAllFKinds) {
    std::string row[3];
    for (const Table2Cell& c : cells) {
      if (c.divergence != f) continue;
      const auto idx = static_cast<std::size_t>(c.model);
      row[idx] = std::string(c.report.converged ? "✓" : "✗") +
                 (c.report.converged == c.expected ? "" : " (!)");
    }
    std::snprintf(line, sizeof line, "%-16s %-12s %-12s %-12s\n",
                  FDivergence(f).name().c_str(), row[0].c_str(), row[1].c_str(), row[2].c_str());
    out << line;
  }
  return out.str();
}

std::string Table2Result::diff() const {
  std::ostringstream out;
  for (const Table2Cell& c : cells) {
    if (c.expected == c.report.converged) continue;
    out << FDivergence(c.divergence).name() << " / " << to_string(c.model) << ": expected "
        << (c.expected ? "converged" : "not converged") << ", got "
        << to_string(c.report.outcome) << " (mean distance " << c.report.tail_mu_dist
        << ", covariance distance " << c.report.tail_cov_dist << ")";
    if (!c.report.behavior.empty()) out << "; " << c.report.behavior;
    out << '\n';
  }
  return out.str();
}

unsigned sweep_threads() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("MONOFLOW_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) n = std::min(n, static_cast<unsigned>(cap));
  }
  return n;
}

Table2Result run_table2(const TrainConfig& base, unsigned threads) {
  Table2Result result;
  for (RatioModel m : kModels)
    for (FKind f : kAllFKinds) result.cells.push_back({f, m, table2_expected(f, m), {}});

  // Longest cells first so the tail of the schedule is short.
  std::vector<std::size_t> order(result.cells.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_partition(order.begin(), order.end(), [&](std::size_t i) {
    return result.cells[i].model == RatioModel::GanBilevel;
  });

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < order.size();) {
      Table2Cell& cell = result.cells[order[k]];
      TrainConfig cfg = base;
      cfg.divergence = cell.divergence;
      cfg.ratio_model = cell.model;
      cell.report = train(cfg);
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(order.size())));
  std::vector<std::thread> pool;
  for (unsigned i = 1; i < threads; ++i) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();
  return result;
}

void write_table2_csv(std::ostream& out, const Table2Result& result) {
  out << "divergence,ratio_model,expected,observed,outcome,tail_mu_dist,tail_cov_dist,behavior\n";
  char nums[64];
  for (const Table2Cell& c : result.cells) {
    std::string behavior = c.report.behavior;
    std::replace(behavior.begin(), behavior.end(), '"', '\'');
    std::snprintf(nums, sizeof nums, "%.6g,%.6g", c.report.tail_mu_dist, c.report.tail_cov_dist);
    out << FDivergence(c.divergence).name() << ',' << to_string(c.model) << ','
        << mark(c.expected) << ',' << mark(c.report.converged) << ','
        << to_string(c.report.outcome) << ',' << nums << ",\"" << behavior << "\"\n";
  }
}

// ---------------------------------------------------------------------------
// Verification suites

namespace {

CheckResult check(std::string suite, std::string id, double value, double threshold,
                  bool passed, std::string detail = {}) {
  return {std::move(suite), std::move(id), passed, value, threshold, std::move(detail)};
}

CheckResult below(std::string suite, std::string id, double value, double threshold) {
  const bool ok = std::isfinite(value) && value < threshold;
  return check(std::move(suite), std::move(id), value, threshold, ok);
}

std::vector<RatioVariant> lemma_variants() {
  std::vector<RatioVariant> out{RatioVariant::vanilla_gan(), RatioVariant::non_saturated_gan(),
                                RatioVariant::least_squares(),
                                RatioVariant::generalized_ebm_kl()};
  for (FKind f : kAllFKinds) {
    if (!FDivergence(f).strictly_convex()) continue;
    out.push_back(RatioVariant::fgan(f));
    out.push_back(RatioVariant::bgan(f));
  }
  return out;
}

void lemma_suite(std::vector<CheckResult>& out) {
  for (const RatioVariant& v : lemma_variants()) {
    double worst = 0.0;
    std::string detail;
    try {
      for (double r : {0.1, 0.5, 1.0, 2.0, 10.0})
        worst = std::max(worst, std::abs(lemma_oracle(v, r) - v.t_inverse(r)));
    } catch (const Error& e) {
      worst = std::numeric_limits<double>::infinity();
      detail = e.what();
    }
    CheckResult c = below("lemma", "oracle:" + v.name(), worst, 1e-5);
    c.detail = detail;
    out.push_back(c);
    const bool cond = check_lemma_condition(v);
    out.push_back(check("lemma", "condition:" + v.name(), cond ? 1.0 : 0.0, 1.0, cond));
  }
}

void corollary_suite(std::vector<CheckResult>& out) {
  const std::vector<double> grid = default_reconstruction_grid();
  for (const HFunction& h : monotone_registry()) {
    const FTable table = reconstruct_f_from_h(h, grid);
    out.push_back(below("corollary", "identity:" + h.name(), check_h_f_identity(h, table), 1e-3));
    double min_second = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i + 1 < grid.size(); ++i) {
      // Second divided difference on the non-uniform grid.
      const double left = (table.f[i] - table.f[i - 1]) / (grid[i] - grid[i - 1]);
      const double right = (table.f[i + 1] - table.f[i]) / (grid[i + 1] - grid[i]);
      min_second = std::min(min_second, right - left);
    }
    out.push_back(check("corollary", "convex:" + h.name(), min_second, 0.0, min_second > 0.0));
  }
  const FTable kl = reconstruct_f_from_h(HFunction::identity(), grid);
  double err = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double r = grid[i];
    err = std::max(err, std::abs(kl.f[i] - (r - 1.0 - std::log(r))));
    err = std::max(err, std::abs(kl.f_prime[i] - (1.0 - 1.0 / r)));
  }
  out.push_back(below("corollary", "closed_form:identity", err, 1e-6));
  for (FKind f : kAllFKinds) {
    const FDivergence div(f);
    if (!div.strictly_convex()) continue;
    const HFunction h = HFunction::induced_by(f);
    double worst = 0.0;
    for (double r = 0.1; r <= 10.0; r *= 1.05) {
      const double expect = r * r * div.f_second(r);
      worst = std::max(worst, std::abs(h.derivative(std::log(r)) - expect) / std::abs(expect));
    }
    out.push_back(below("corollary", "rescaling:" + div.name(), worst, 1e-5));
  }
}

Gaussian random_gaussian(Rng& rng, Eigen::Index dim, double spread) {
  Vector mean(dim);
  Matrix a(dim, dim);
  for (Eigen::Index i = 0; i < dim; ++i) mean(i) = spread * rng.normal();
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = 0.5 * rng.normal();
  Matrix cov = a * a.transpose();
  cov.diagonal().array() += 0.5;
  return Gaussian(mean, cov);
}

void dissipation_suite(std::vector<CheckResult>& out, std::uint64_t seed) {
  for (const HFunction& h : monotone_registry()) {
    double worst = -std::numeric_limits<double>::infinity();
    for (std::uint64_t s = 0; s < 20; ++s) {
      Rng rng = Rng(seed).split(100 + s);
      const Gaussian p = random_gaussian(rng, 2, 0.5);
      const Gaussian q = random_gaussian(rng, 2, 0.5);
      const ParticleCloud cloud{q.sample(rng, 2000), 0.0};
      const Gaussian q_hat = fit_gaussian(cloud.positions, 1e-8);
      const McEstimate est = dissipation_estimate(cloud, p, q_hat, h);
      worst = std::max(worst, est.mean - 3.0 * est.std_error);
    }
    out.push_back(check("dissipation", "sign:" + h.name(), worst, 0.0, worst <= 0.0));
  }
  // Identity rescaling: the particle estimate is the time derivative of the
  // closed-form KL along the moment ODE.
  TrainConfig defaults;
  const Gaussian p(defaults.target_mean, defaults.target_cov);
  const Gaussian q0(defaults.init_mean, defaults.init_scale.transpose() * defaults.init_scale);
  Rng rng = Rng(seed).split(7);
  const ParticleCloud cloud{q0.sample(rng, 50000), 0.0};
  const McEstimate est =
      dissipation_estimate(cloud, p, fit_gaussian(cloud.positions, 1e-8), HFunction::identity());
  const double dt = 1e-6;
  const double slope =
      (kl_closed_form(moment_flow_step(p, q0, dt), p) - kl_closed_form(q0, p)) / dt;
  const double rel = std::abs(est.mean - slope) / std::abs(slope);
  out.push_back(below("dissipation", "rate:identity", rel, 0.1));
}

double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-12);
}

// Flattened (mu, s) <-> generator.
Eigen::VectorXd flatten(const GeneratorGradient& g) {
  Eigen::VectorXd v(g.mu.size() + g.s.size());
  v << g.mu, Eigen::Map<const Eigen::VectorXd>(g.s.data(), g.s.size());
  return v;
}

GaussianGenerator perturbed(const GaussianGenerator& g, Eigen::Index k, double eps) {
  GaussianGenerator out = g;
  if (k < g.mu.size())
    out.mu(k) += eps;
  else
    out.s.data()[k - g.mu.size()] += eps;
  return out;
}

Eigen::VectorXd central_difference(const GaussianGenerator& g,
                                   const std::function<double(const GaussianGenerator&)>& loss,
                                   double eps) {
  const Eigen::Index n = g.mu.size() + g.s.size();
  Eigen::VectorXd out(n);
  for (Eigen::Index k = 0; k < n; ++k)
    out(k) = (loss(perturbed(g, k, eps)) - loss(perturbed(g, k, -eps))) / (2.0 * eps);
  return out;
}

PointBatch normals(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  PointBatch z(rows, cols);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  return z;
}

GaussianGenerator random_generator(Rng& rng) {
  GaussianGenerator g{Vector(2), Matrix::Identity(2, 2)};
  g.mu << 0.5 * rng.normal(), 0.5 * rng.normal();
  for (Eigen::Index i = 0; i < 4; ++i) g.s.data()[i] += 0.25 * rng.normal();
  return g;
}

void gradients_suite(std::vector<CheckResult>& out, std::uint64_t seed) {
  // Network parameters and inputs.
  double worst_param = 0.0, worst_input = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng rng = Rng(seed).split(200 + s);
    Mlp net = Mlp::glorot({2, 16, 16, 1}, 0.2, rng);
    for (double& w : net.parameters()) w += 0.1 * rng.normal();
    const PointBatch x = normals(rng, 8, 2);
    const Vector up = normals(rng, 8, 1);
    const MlpGradients g = backward(net, x, up);
    const double eps = 1e-5;
    auto objective = [&](const Mlp& m, const PointBatch& pts) {
      return forward_batch(m, pts).dot(up);
    };
    Eigen::VectorXd fd(static_cast<Eigen::Index>(net.parameters().size()));
    for (std::size_t k = 0; k < net.parameters().size(); ++k) {
      Mlp plus = net, minus = net;
      plus.parameters()[k] += eps;
      minus.parameters()[k] -= eps;
      fd(static_cast<Eigen::Index>(k)) = (objective(plus, x) - objective(minus, x)) / (2 * eps);
    }
    worst_param = std::max(
        worst_param,
        relative_error(Eigen::Map<const Eigen::VectorXd>(g.params.data(), fd.size()), fd));
    Eigen::VectorXd fdx(x.size()), gx(x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      PointBatch plus = x, minus = x;
      plus.data()[k] += eps;
      minus.data()[k] -= eps;
      fdx(k) = (objective(net, plus) - objective(net, minus)) / (2 * eps);
      gx(k) = g.inputs.data()[k];
    }
    worst_input = std::max(worst_input, relative_error(gx, fdx));
  }
  out.push_back(below("gradients", "network:parameters", worst_param, 1e-3));
  out.push_back(below("gradients", "network:inputs", worst_input, 1e-3));

  TrainConfig defaults;
  const Gaussian target(defaults.target_mean, defaults.target_cov);
  double worst_full = 0.0, worst_detached = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng rng = Rng(seed).split(300 + s);
    const GaussianGenerator g = random_generator(rng);
    const PointBatch z = normals(rng, 256, 2);
    const FKind kind = kAllFKinds[s % std::size(kAllFKinds)];
    const FDivergence f(kind);
    auto full_loss = [&](const GaussianGenerator& gg) {
      const Gaussian q = gg.as_gaussian();
      const PointBatch x = gen_sample(gg, z);
      const Vector u = target.log_density(x) - q.log_density(x);
      double total = 0.0;
      for (Eigen::Index i = 0; i < u.size(); ++i) total += f.f(std::exp(u(i)));
      return total / static_cast<double>(u.size());
    };
    worst_full = std::max(worst_full, relative_error(flatten(full_gradient(g, f, target, z)),
                                                     central_difference(g, full_loss, 1e-6)));
    const HFunction h = monotone_registry()[s % monotone_registry().size()];
    const Gaussian frozen = g.as_gaussian();
    auto detached_loss = [&](const GaussianGenerator& gg) {
      const PointBatch x = gen_sample(gg, z);
      const Vector u = target.log_density(x) - frozen.log_density(x);
      double total = 0.0;
      for (Eigen::Index i = 0; i < u.size(); ++i) total -= h.value(u(i));
      return total / static_cast<double>(u.size());
    };
    worst_detached =
        std::max(worst_detached, relative_error(flatten(detached_gradient(g, h, target, z)),
                                                central_difference(g, detached_loss, 1e-6)));
  }
  out.push_back(below("gradients", "generator:full", worst_full, 1e-3));
  out.push_back(below("gradients", "generator:detached", worst_detached, 1e-3));
}

void langevin_suite(std::vector<CheckResult>& out, std::uint64_t seed) {
  TrainConfig defaults;
  const Gaussian p(defaults.target_mean, defaults.target_cov);
  const Gaussian q0(defaults.init_mean, defaults.init_scale.transpose() * defaults.init_scale);
  const MarginalComparison cmp = compare_langevin_and_flow(p, q0, 1e-3, 5000, kLangevinParticles, seed);
  out.push_back(below("langevin", "final_mean_gap", cmp.mean_gap, 0.05));
  out.push_back(below("langevin", "final_cov_gap", cmp.cov_gap, 0.05));
}

}  // namespace

MarginalComparison compare_langevin_and_flow(const Gaussian& p, const Gaussian& q0, double dt,
                                             int steps, int particles, std::uint64_t seed) {
  Rng flow_rng = Rng(seed).split(11);
  FlowSettings settings;
  settings.alpha = dt;
  settings.steps = steps;
  settings.particles = particles;
  const FlowTrace trace = run_flow(p, q0, HFunction::identity(), settings, flow_rng);

  Rng lang_rng = Rng(seed).split(12);
  ParticleCloud cloud{q0.sample(lang_rng, particles), 0.0};
  for (int k = 0; k < steps; ++k) cloud = langevin_step(cloud, p, dt, lang_rng);

  const auto [flow_mean, flow_cov] = sample_moments(trace.final_cloud.positions);
  const auto [lang_mean, lang_cov] = sample_moments(cloud.positions);
  return {(flow_mean - lang_mean).norm(), (flow_cov - lang_cov).norm()};
}

std::vector<CheckResult> run_verify(std::string_view suite, std::uint64_t seed) {
  const bool all = suite == "all";
  if (!all && std::find(std::begin(kVerifySuites), std::end(kVerifySuites), suite) ==
                  std::end(kVerifySuites))
    throw ConfigError("unknown verify suite '" + std::string(suite) + "'");
  std::vector<CheckResult> out;
  auto wants = [&](std::string_view name) { return all || suite == name; };
  if (wants("lemma")) lemma_suite(out);
  if (wants("corollary")) corollary_suite(out);
  if (wants("dissipation")) dissipation_suite(out, seed);
  if (wants("gradients")) gradients_suite(out, seed);
  if (wants("langevin")) langevin_suite(out, seed);
  return out;
}

}  // namespace monoflow
