#pragma once

#include "coadapt/config.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace coadapt {

enum class ConfigId { fixed_freq, event_fixed, dammrl_r1, dammrl_r2 };

inline std::string to_string(ConfigId c) {
  switch (c) {
    case ConfigId::fixed_freq: return "fixed_freq";
    case ConfigId::event_fixed: return "event_fixed";
    case ConfigId::dammrl_r1: return "dammrl_r1";
    case ConfigId::dammrl_r2: return "dammrl_r2";
  }
  return "?";
}

inline ConfigId config_id_from_string(const std::string& s) {
  if (s == "fixed_freq") return ConfigId::fixed_freq;
  if (s == "event_fixed") return ConfigId::event_fixed;
  if (s == "dammrl_r1") return ConfigId::dammrl_r1;
  if (s == "dammrl_r2") return ConfigId::dammrl_r2;
  throw ConfigInvalid("unknown config_id '" + s + "'");
}

inline bool is_rl(ConfigId c) { return c == ConfigId::dammrl_r1 || c == ConfigId::dammrl_r2; }

struct ExperimentSpec {
  ConfigId config_id = ConfigId::event_fixed;
  std::vector<std::uint64_t> seeds;
  RewardWeights weights;
  std::string checkpoint;

  void validate() const {
    if (seeds.empty()) throw ConfigInvalid("experiment spec needs at least one seed");
    std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
    if (uniq.size() != seeds.size()) throw ConfigInvalid("experiment seeds must be distinct");
    if (config_id == ConfigId::dammrl_r1 && weights.beta != 0.0) throw ConfigInvalid("dammrl_r1 requires beta = 0");
    weights.validate();
  }
};

// One comparison: several configs over one shared seed list.
struct ComparisonSpec {
  std::vector<ExperimentSpec> configs;
  Fidelity fidelity = Fidelity::dynamic;
  std::string out_dir;
  bool write_traces = true;
  int bootstrap_resamples = 1000;
};

inline std::vector<std::uint64_t> seed_range(std::uint64_t base, int n) {
  std::vector<std::uint64_t> s(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) s[static_cast<std::size_t>(k)] = base + static_cast<std::uint64_t>(k);
  return s;
}

inline ExperimentSpec make_spec(ConfigId id, const std::vector<std::uint64_t>& seeds, const RewardWeights& base,
                                const std::string& checkpoint = {}) {
  ExperimentSpec s;
  s.config_id = id;
  s.seeds = seeds;
  s.weights = id == ConfigId::dammrl_r1 ? weights_for(RewardVariant::r1, base) : base;
  s.checkpoint = checkpoint;
  return s;
}

// Spec file: {"episodes": n, "seed_base": b | "seeds": [...], "fidelity": "...",
//             "out_dir": "...", "write_traces": bool,
//             "configs": [{"config_id": "...", "checkpoint": "..."}]}
inline ComparisonSpec comparison_spec_from_json(const nlohmann::json& j, const AppConfig& app) {
  cfgdetail::check_keys(j, "spec", {"episodes", "seed_base", "seeds", "fidelity", "out_dir", "write_traces", "configs",
                                    "bootstrap_resamples"});
  ComparisonSpec cs;
  cs.out_dir = j.value("out_dir", app.experiment.out_dir + "/compare");
  cs.write_traces = j.value("write_traces", true);
  cs.bootstrap_resamples = j.value("bootstrap_resamples", app.experiment.bootstrap_resamples);
  if (j.contains("fidelity")) cs.fidelity = fidelity_from_string(j.at("fidelity").get<std::string>());
  std::vector<std::uint64_t> seeds;
  if (j.contains("seeds")) {
    seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  } else {
    seeds = seed_range(j.value("seed_base", app.experiment.seed_base), j.value("episodes", app.experiment.compare_episodes));
  }
  if (!j.contains("configs") || !j.at("configs").is_array() || j.at("configs").empty())
    throw ConfigInvalid("spec.configs must be a non-empty array");
  for (const auto& c : j.at("configs")) {
    cfgdetail::check_keys(c, "spec.configs[]", {"config_id", "checkpoint"});
    const auto id = config_id_from_string(c.at("config_id").get<std::string>());
    cs.configs.push_back(make_spec(id, seeds, app.world.weights, c.value("checkpoint", std::string())));
  }
  return cs;
}

struct MetricsRow {
  std::string config_id;
  std::uint64_t seed = 0;
  bool success = false;
  double total_time = 0.0;
  double final_error = 0.0;
  int osc_count = 0;
  double jerk_integral = 0.0;
  int microsteps = 0;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"success",   "total_time",    "final_error",
                                                 "osc_count", "jerk_integral", "microsteps"};
  return names;
}

inline double metric_value(const MetricsRow& r, const std::string& m) {
  if (m == "success") return r.success ? 1.0 : 0.0;
  if (m == "total_time") return r.total_time;
  if (m == "final_error") return r.final_error;
  if (m == "osc_count") return r.osc_count;
  if (m == "jerk_integral") return r.jerk_integral;
  if (m == "microsteps") return r.microsteps;
  throw std::invalid_argument("unknown metric '" + m + "'");
}

struct Aggregate {
  std::string config_id;
  std::string metric;
  int n = 0;
  double mean = 0.0;
  double median = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;

  friend bool operator==(const Aggregate&, const Aggregate&) = default;
};

struct MetricsTable {
  std::vector<MetricsRow> rows;
  std::vector<Aggregate> aggregates;

  std::vector<double> values(const std::string& config_id, const std::string& metric) const {
    std::vector<double> v;
    for (const auto& r : rows)
      if (r.config_id == config_id) v.push_back(metric_value(r, metric));
    return v;
  }

  const Aggregate& aggregate(const std::string& config_id, const std::string& metric) const {
    for (const auto& a : aggregates)
      if (a.config_id == config_id && a.metric == metric) return a;
    throw std::out_of_range("no aggregate for " + config_id + "/" + metric);
  }
};

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Linear-interpolated quantile of sorted data.
inline double quantile_sorted(const std::vector<double>& s, double p) {
  if (s.empty()) return 0.0;
  const double h = p * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, 0.5);
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double x) const { return lo <= x && x <= hi; }
};

// Percentile bootstrap of a statistic (default: the mean), 95% by default.
template <class Stat>
Interval bootstrap_ci(const std::vector<double>& v, int resamples, std::uint64_t seed, Stat stat, double level = 0.95) {
  if (v.empty()) return {};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, v.size() - 1);
  std::vector<double> stats(static_cast<std::size_t>(resamples));
  std::vector<double> sample(v.size());
  for (auto& s : stats) {
    for (auto& x : sample) x = v[pick(rng)];
    s = stat(sample);
  }
  std::sort(stats.begin(), stats.end());
  const double a = 0.5 * (1.0 - level);
  return {quantile_sorted(stats, a), quantile_sorted(stats, 1.0 - a)};
}

inline Interval bootstrap_mean_ci(const std::vector<double>& v, int resamples, std::uint64_t seed) {
  return bootstrap_ci(v, resamples, seed, [](const std::vector<double>& s) { return mean_of(s); });
}

inline std::uint64_t stable_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::vector<Aggregate> compute_aggregates(const std::vector<MetricsRow>& rows, int resamples = 1000) {
  std::vector<std::string> ids;
  for (const auto& r : rows)
    if (std::find(ids.begin(), ids.end(), r.config_id) == ids.end()) ids.push_back(r.config_id);
  std::vector<Aggregate> out;
  for (const auto& id : ids) {
    for (const auto& m : metric_names()) {
      std::vector<double> v;
      for (const auto& r : rows)
        if (r.config_id == id) v.push_back(metric_value(r, m));
      Aggregate a;
      a.config_id = id;
      a.metric = m;
      a.n = static_cast<int>(v.size());
      a.mean = mean_of(v);
      a.median = median_of(v);
      const auto ci = bootstrap_mean_ci(v, resamples, stable_hash(id + "/" + m));
      a.ci_lo = ci.lo;
      a.ci_hi = ci.hi;
      out.push_back(a);
    }
  }
  return out;
}

struct PairedDifference {
  int n = 0;
  double mean = 0.0;  // mean of (a - b) over shared seeds
  Interval ci;
};

// Paired by seed; only seeds present for both configs count.
inline PairedDifference paired_difference(const MetricsTable& t, const std::string& a, const std::string& b,
                                          const std::string& metric, int resamples = 1000) {
  std::map<std::uint64_t, double> va, vb;
  for (const auto& r : t.rows) {
    if (r.config_id == a) va[r.seed] = metric_value(r, metric);
    if (r.config_id == b) vb[r.seed] = metric_value(r, metric);
  }
  std::vector<double> d;
  for (const auto& [seed, x] : va)
    if (auto it = vb.find(seed); it != vb.end()) d.push_back(x - it->second);
  PairedDifference out;
  out.n = static_cast<int>(d.size());
  out.mean = mean_of(d);
  out.ci = bootstrap_mean_ci(d, resamples, stable_hash(a + "-" + b + "/" + metric));
  return out;
}

// ---- CSV ----

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) f.push_back(cell);
  if (!line.empty() && line.back() == ',') f.emplace_back();
  return f;
}

inline const char* kRowsHeader = "config_id,seed,success,total_time,final_error,osc_count,jerk_integral,microsteps";
inline const char* kAggHeader = "config_id,metric,n,mean,median,ci_lo,ci_hi";

inline std::string rows_to_csv(const std::vector<MetricsRow>& rows) {
  std::string out = std::string(kRowsHeader) + "\n";
  for (const auto& r : rows)
    out += r.config_id + "," + std::to_string(r.seed) + "," + (r.success ? "1" : "0") + "," + format_double(r.total_time) +
           "," + format_double(r.final_error) + "," + std::to_string(r.osc_count) + "," +
           format_double(r.jerk_integral) + "," + std::to_string(r.microsteps) + "\n";
  return out;
}

inline std::vector<MetricsRow> rows_from_csv(std::istream& in, const std::string& name = "rows.csv") {
  std::string line;
  if (!std::getline(in, line) || line != kRowsHeader) throw FormatError(name + ": unexpected header");
  std::vector<MetricsRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 8) throw FormatError(name + ":" + std::to_string(lineno) + ": expected 8 fields");
    try {
      MetricsRow r;
      r.config_id = f[0];
      r.seed = std::stoull(f[1]);
      r.success = f[2] == "1";
      r.total_time = std::stod(f[3]);
      r.final_error = std::stod(f[4]);
      r.osc_count = std::stoi(f[5]);
      r.jerk_integral = std::stod(f[6]);
      r.microsteps = std::stoi(f[7]);
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw FormatError(name + ":" + std::to_string(lineno) + ": unparsable field");
    }
  }
  return rows;
}

inline std::string aggregates_to_csv(const std::vector<Aggregate>& aggs) {
  std::string out = std::string(kAggHeader) + "\n";
  for (const auto& a : aggs)
    out += a.config_id + "," + a.metric + "," + std::to_string(a.n) + "," + format_double(a.mean) + "," +
           format_double(a.median) + "," + format_double(a.ci_lo) + "," + format_double(a.ci_hi) + "\n";
  return out;
}

inline std::vector<Aggregate> aggregates_from_csv(std::istream& in, const std::string& name = "aggregates.csv") {
  std::string line;
  if (!std::getline(in, line) || line != kAggHeader) throw FormatError(name + ": unexpected header");
  std::vector<Aggregate> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 7) throw FormatError(name + ":" + std::to_string(lineno) + ": expected 7 fields");
    try {
      out.push_back({f[0], f[1], std::stoi(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5]), std::stod(f[6])});
    } catch (const std::logic_error&) {
      throw FormatError(name + ":" + std::to_string(lineno) + ": unparsable field");
    }
  }
  return out;
}

inline MetricsRow row_from_trace(const std::string& config_id, std::uint64_t seed, const EpisodeSummary& s) {
  return {config_id, seed, s.success, s.total_time, s.final_error, s.osc_count, s.jerk_integral, s.microstep_count};
}

// ---- comparison ----

inline EpisodeConfig episode_config_for(const AppConfig& app, ConfigId id, Fidelity fidelity, std::uint64_t seed) {
  EpisodeConfig e = app.env;
  e.fidelity = fidelity;
  e.seed = seed;
  switch (id) {
    case ConfigId::fixed_freq: e.controller = Controller::fixed_frequency; break;
    case ConfigId::event_fixed: e.controller = Controller::event_fixed_model; break;
    default: e.controller = Controller::dammrl; break;
  }
  return e;
}

inline std::string trace_file_name(const std::string& config_id, std::uint64_t seed) {
  return config_id + "_seed" + std::to_string(seed) + ".jsonl";
}

struct ComparisonOutput {
  MetricsTable table;
  std::vector<std::pair<std::string, EpisodeTrace>> traces;  // (config_id, trace), when kept
};

inline ComparisonOutput run_comparison(const AppConfig& app, const ComparisonSpec& spec, bool keep_traces = false) {
  namespace fs = std::filesystem;
  if (spec.configs.empty()) throw ConfigInvalid("comparison needs at least one config");
  for (const auto& c : spec.configs) {
    c.validate();
    if (c.seeds != spec.configs.front().seeds) throw ConfigInvalid("all configs of a comparison must share one seed list");
    if (is_rl(c.config_id)) {
      if (c.checkpoint.empty()) throw MissingCheckpoint(to_string(c.config_id) + ": no checkpoint given");
      if (!fs::exists(c.checkpoint)) throw MissingCheckpoint("checkpoint not found: " + c.checkpoint);
    }
  }
  const bool write = !spec.out_dir.empty();
  if (write && spec.write_traces) fs::create_directories(fs::path(spec.out_dir) / "traces");
  else if (write) fs::create_directories(spec.out_dir);

  ComparisonOutput out;
  for (const auto& c : spec.configs) {
    World w = app.world;
    w.weights = c.weights;
    std::optional<DualAgentLearner> learner;
    Policy policy = Policy::fixed(app.env.fixed_model);
    if (is_rl(c.config_id)) {
      learner.emplace(DualAgentLearner::from_checkpoint(c.checkpoint, app.learner));
      policy = greedy_policy(*learner);
    }
    const auto id = to_string(c.config_id);
    for (auto seed : c.seeds) {
      const auto cfg = episode_config_for(app, c.config_id, spec.fidelity, seed);
      const auto tr = run_controller(w, cfg, policy);
      out.table.rows.push_back(row_from_trace(id, seed, tr.summary));
      if (write && spec.write_traces) write_trace((fs::path(spec.out_dir) / "traces" / trace_file_name(id, seed)).string(), tr);
      if (keep_traces) out.traces.emplace_back(id, tr);
    }
  }
  out.table.aggregates = compute_aggregates(out.table.rows, spec.bootstrap_resamples);
  if (write) {
    std::ofstream rows(fs::path(spec.out_dir) / "rows.csv"), aggs(fs::path(spec.out_dir) / "aggregates.csv");
    if (!rows || !aggs) throw std::runtime_error("cannot write tables in " + spec.out_dir);
    rows << rows_to_csv(out.table.rows);
    aggs << aggregates_to_csv(out.table.aggregates);
  }
  return out;
}

// ---- step-size profile ----

inline constexpr std::array<double, 3> kBandEdges = {0.05, 0.15, std::numeric_limits<double>::infinity()};

struct BandStats {
  std::string label;
  int decisions = 0;
  std::array<int, 3> small{};  // per-axis small-step selections

  double small_fraction(int axis) const {
    return decisions > 0 ? static_cast<double>(small[static_cast<std::size_t>(axis)]) / decisions : 0.0;
  }
};

struct StepSizeProfile {
  std::array<BandStats, 3> bands{BandStats{"[0,5)cm"}, BandStats{"[5,15)cm"}, BandStats{"[15,inf)cm"}};
};

inline int band_of(double distance) {
  for (int b = 0; b < 3; ++b)
    if (distance < kBandEdges[static_cast<std::size_t>(b)]) return b;
  return 2;
}

// Distance to goal is taken at decision time (before the step executes).
inline StepSizeProfile step_size_profile(const std::vector<EpisodeTrace>& traces, const StepMagnitudes& m = {}) {
  StepSizeProfile p;
  int n = 0;
  for (const auto& tr : traces) {
    double d = (tr.summary.x_goal - tr.summary.x_start).norm();
    for (const auto& r : tr.records) {
      auto& band = p.bands[static_cast<std::size_t>(band_of(d))];
      ++band.decisions;
      ++n;
      for (int a = 0; a < 3; ++a)
        if (r.command.deltas[a] == m.small[a]) ++band.small[static_cast<std::size_t>(a)];
      d = r.error;
    }
  }
  if (n == 0) throw EmptyTraceSet("step_size_profile: no step records in the trace set");
  return p;
}

inline std::string profile_to_csv(const StepSizeProfile& p) {
  std::string out = "band,decisions,small_x,small_y,small_z\n";
  for (const auto& b : p.bands)
    out += b.label + "," + std::to_string(b.decisions) + "," + format_double(b.small_fraction(0)) + "," +
           format_double(b.small_fraction(1)) + "," + format_double(b.small_fraction(2)) + "\n";
  return out;
}

inline std::vector<EpisodeTrace> read_trace_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".jsonl") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<EpisodeTrace> out;
  for (const auto& f : files) out.push_back(read_trace(f.string()));
  return out;
}

}  // namespace coadapt
