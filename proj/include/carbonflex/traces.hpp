#pragma once

// Ingestion, validation and synthesis of the three input kinds: scaling
// profiles, job traces and carbon-intensity traces, plus the key/value cluster
// configuration file.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "carbonflex/csv.hpp"
#include "carbonflex/error.hpp"
#include "carbonflex/model.hpp"

namespace carbonflex {

using ProfileMap = std::map<std::string, ProfilePtr>;

namespace detail {

inline std::int64_t parse_timestamp(const std::string& s, const std::string& where) {
  // Epoch seconds, or ISO-8601 "YYYY-MM-DD[T ]HH:MM[:SS][Z|+00:00]" in UTC.
  if (!s.empty() && s.find('-', 1) == std::string::npos) return csv::to_int(s, where) / 60;
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  char sep = 0;
  int n = std::sscanf(s.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d, &sep, &h, &mi, &sec);
  if (n < 6 || (sep != 'T' && sep != ' ')) throw ParseError(where + ": bad timestamp '" + s + "'");
  std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(mo)},
                                  std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h < 0 || h > 23 || mi < 0 || mi > 59 || sec != 0)
    throw ParseError(where + ": bad timestamp '" + s + "' (whole minutes, UTC)");
  const auto days = std::chrono::sys_days{ymd}.time_since_epoch().count();
  return static_cast<std::int64_t>(days) * 1440 + h * 60 + mi;
}

inline std::string format_timestamp(std::int64_t minute) {
  auto days = minute >= 0 ? minute / 1440 : -((-minute + 1439) / 1440);
  auto rem = minute - days * 1440;
  std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{days}}};
  return fmt::format("{:04d}-{:02d}-{:02d}T{:02d}:{:02d}:00Z", static_cast<int>(ymd.year()),
                     static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), rem / 60, rem % 60);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Carbon traces

inline CarbonTrace load_carbon_trace(const std::string& path) {
  auto rows = csv::read(path, {"timestamp", "ci_g_per_kwh"});
  CarbonTrace trace;
  auto slash = path.find_last_of('/');
  trace.region = path.substr(slash == std::string::npos ? 0 : slash + 1);
  if (auto dot = trace.region.rfind('.'); dot != std::string::npos) trace.region.resize(dot);
  std::int64_t prev = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto where = path + ":" + std::to_string(rows[i].line);
    const auto ts = detail::parse_timestamp(rows[i].fields[0], where);
    const double ci = csv::to_double(rows[i].fields[1], where);
    if (!(ci >= 0.0) || !std::isfinite(ci)) throw ParseError(where + ": carbon intensity must be finite and >= 0");
    if (i == 0) {
      trace.start_minute = ts;
    } else if (i == 1) {
      if (ts <= prev) throw ParseError(where + ": duplicate or decreasing timestamp");
      trace.step_minutes = static_cast<int>(ts - prev);
    } else if (ts - prev != trace.step_minutes) {
      throw ParseError(where + (ts <= prev ? ": duplicate or decreasing timestamp" : ": non-uniform step (gap)"));
    }
    prev = ts;
    trace.values.push_back(ci);
  }
  if (trace.values.empty()) throw ParseError(path + ": empty carbon trace");
  return trace;
}

inline void write_carbon_trace(const CarbonTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path + "'");
  out << "timestamp,ci_g_per_kwh\n";
  for (int t = 0; t < trace.size(); ++t)
    out << detail::format_timestamp(trace.start_minute + static_cast<std::int64_t>(t) * trace.step_minutes) << ','
        << fmt::format("{}", trace.values[static_cast<std::size_t>(t)]) << '\n';
}

/// Day-ahead forecast: the next `horizon` values starting at slot t. With
/// noise_sigma > 0 each value is scaled by (1 + N(0, sigma)) and clamped at 0.
inline std::vector<double> forecast_window(const CarbonTrace& trace, int t, int horizon = 24, double noise_sigma = 0.0,
                                           std::uint64_t seed = 0) {
  if (t < 0 || horizon < 0 || t + horizon > trace.size())
    throw RangeError("forecast [" + std::to_string(t) + ", " + std::to_string(t + horizon) + ") beyond trace of " +
                     std::to_string(trace.size()) + " slots");
  std::vector<double> out(trace.values.begin() + t, trace.values.begin() + t + horizon);
  if (noise_sigma > 0.0) {
    std::mt19937_64 rng(seed ^ (static_cast<std::uint64_t>(t) * 0x9E3779B97F4A7C15ULL));
    std::normal_distribution<double> noise(0.0, noise_sigma);
    for (auto& v : out) v = std::max(0.0, v * (1.0 + noise(rng)));
  }
  return out;
}

/// Sinusoidal diurnal trace. A pure sinusoid has CoV = amplitude / sqrt(2);
/// the optional multiplicative noise raises the CoV slightly.
inline CarbonTrace synthesize_carbon(int slots, double mean, double cov, int period = 24, double noise_sigma = 0.0,
                                     std::uint64_t seed = 1, double phase = 0.0) {
  CarbonTrace trace;
  trace.region = "synthetic";
  trace.start_minute = 0;
  trace.step_minutes = 60;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, noise_sigma > 0.0 ? noise_sigma : 1.0);
  const double amplitude = cov * std::numbers::sqrt2;
  for (int t = 0; t < slots; ++t) {
    double v = mean * (1.0 + amplitude * std::sin(2.0 * std::numbers::pi * t / period + phase));
    if (noise_sigma > 0.0) v *= 1.0 + noise(rng);
    trace.values.push_back(std::max(0.0, v));
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Scaling profiles

inline ProfileMap load_profiles(const std::string& path) {
  auto rows = csv::read(path, {"profile_id", "k", "marginal", "net_gb_per_slot"});
  struct Acc {
    int k_min = 0, last_k = 0;
    std::vector<double> marginal, net;
  };
  std::map<std::string, Acc> acc;
  std::vector<std::string> order;
  for (const auto& row : rows) {
    const auto where = path + ":" + std::to_string(row.line);
    const auto& id = row.fields[0];
    const int k = static_cast<int>(csv::to_int(row.fields[1], where));
    auto [it, fresh] = acc.try_emplace(id);
    auto& a = it->second;
    if (fresh) {
      a.k_min = k;
    } else if (k != a.last_k + 1) {
      throw ParseError(where + ": profile '" + id + "' scales must be contiguous and ascending");
    }
    a.last_k = k;
    a.marginal.push_back(csv::to_double(row.fields[2], where));
    a.net.push_back(csv::to_double(row.fields[3], where));
  }
  ProfileMap out;
  for (auto& [id, a] : acc) {
    try {
      out[id] = std::make_shared<const ScalingProfile>(id, a.k_min, a.marginal, a.net);
    } catch (const DomainError& e) {
      throw ParseError(path + ": " + e.what());
    }
  }
  return out;
}

inline void write_profiles(const ProfileMap& profiles, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path + "'");
  out << "profile_id,k,marginal,net_gb_per_slot\n";
  for (const auto& [id, p] : profiles)
    for (int k = p->k_min(); k <= p->k_max(); ++k)
      out << id << ',' << k << ',' << fmt::format("{}", p->marginal(k)) << ','
          << fmt::format("{}", p->net_gb_per_slot(k)) << '\n';
}

/// Amdahl-style profile: speedup S(k) = k / (1 + s (k - 1)); marginals are the
/// increments of S, normalized so p(1) = 1. Strictly decreasing for s > 0.
inline ProfilePtr amdahl_profile(std::string id, int k_max, double serial_fraction, double net_gb_at_k2 = 0.0) {
  std::vector<double> marginal, net;
  double prev = 0.0;
  for (int k = 1; k <= k_max; ++k) {
    const double s = k / (1.0 + serial_fraction * (k - 1));
    marginal.push_back(k == 1 ? 1.0 : s - prev);
    net.push_back(k == 1 ? 0.0 : net_gb_at_k2 * (k - 1));
    prev = s;
  }
  return std::make_shared<const ScalingProfile>(std::move(id), 1, std::move(marginal), std::move(net));
}

// ---------------------------------------------------------------------------
// Job traces

inline std::vector<Job> load_jobs(const std::string& path, const std::vector<QueueConfig>& queues,
                                  const ProfileMap& profiles) {
  auto rows = csv::read(path, {"job_id", "arrival_slot", "length_slots", "profile_id"});
  std::vector<Job> jobs;
  jobs.reserve(rows.size());
  for (const auto& row : rows) {
    const auto where = path + ":" + std::to_string(row.line);
    Job job;
    job.id = row.fields[0];
    job.arrival = static_cast<int>(csv::to_int(row.fields[1], where));
    job.length = csv::to_double(row.fields[2], where);
    auto it = profiles.find(row.fields[3]);
    if (it == profiles.end()) throw ParseError(where + ": unknown profile id '" + row.fields[3] + "'");
    job.profile = it->second;
    if (!(job.length > 0.0)) throw ParseError(where + ": job '" + job.id + "' has non-positive length");
    if (job.arrival < 0) throw ParseError(where + ": job '" + job.id + "' has negative arrival");
    const auto& q = route_queue(queues, job.length);
    job.queue = q.id;
    job.slack = q.slack_slots;
    jobs.push_back(std::move(job));
  }
  return jobs;
}

inline void write_jobs(std::span<const Job> jobs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path + "'");
  out << "job_id,arrival_slot,length_slots,profile_id\n";
  for (const auto& j : jobs)
    out << j.id << ',' << j.arrival << ',' << fmt::format("{}", j.length) << ',' << j.prof().id() << '\n';
}

/// Mean job length per queue id.
inline std::map<std::string, double> mean_length_per_queue(std::span<const Job> jobs) {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& j : jobs) {
    acc[j.queue].first += j.length;
    acc[j.queue].second += 1;
  }
  std::map<std::string, double> out;
  for (const auto& [q, a] : acc) out[q] = a.first / a.second;
  return out;
}

struct SynthSpec {
  double rate_per_slot = 1.0;                // Poisson mean arrivals per slot
  std::string length_dist = "exponential";  // fixed | uniform | exponential | lognormal
  double mean_length = 4.0;
  double min_length = 1.0;
  double max_length = 48.0;
  double lognormal_sigma = 1.0;
  int horizon_slots = 168;
  std::uint64_t seed = 1;
  std::vector<ProfilePtr> profiles;  // drawn uniformly per job
  std::string id_prefix = "j";
};

inline bool valid_length_dist(const std::string& name) {
  return name == "fixed" || name == "uniform" || name == "exponential" || name == "lognormal";
}

namespace detail {

inline double draw_length(const SynthSpec& spec, std::mt19937_64& rng) {
  double l = spec.mean_length;
  if (spec.length_dist == "uniform") {
    l = std::uniform_real_distribution<double>(spec.min_length, spec.max_length)(rng);
  } else if (spec.length_dist == "exponential") {
    l = std::exponential_distribution<double>(1.0 / spec.mean_length)(rng);
  } else if (spec.length_dist == "lognormal") {
    const double mu = std::log(spec.mean_length) - 0.5 * spec.lognormal_sigma * spec.lognormal_sigma;
    l = std::lognormal_distribution<double>(mu, spec.lognormal_sigma)(rng);
  } else if (spec.length_dist != "fixed") {
    throw DomainError("unknown length distribution '" + spec.length_dist + "'");
  }
  return std::clamp(std::ceil(l), std::ceil(spec.min_length), std::floor(spec.max_length));
}

}  // namespace detail

/// Deterministic synthetic job trace: Poisson arrivals per slot, integer
/// lengths from the configured distribution, profiles drawn uniformly.
inline std::vector<Job> synthesize_trace(const SynthSpec& spec, const std::vector<QueueConfig>& queues) {
  if (!valid_length_dist(spec.length_dist)) throw DomainError("unknown length distribution '" + spec.length_dist + "'");
  if (spec.rate_per_slot < 0.0) throw DomainError("arrival rate must be >= 0");
  std::vector<Job> jobs;
  if (spec.rate_per_slot == 0.0) return jobs;
  if (spec.profiles.empty()) throw DomainError("synthesis needs at least one profile");
  std::mt19937_64 rng(spec.seed);
  std::poisson_distribution<int> arrivals(spec.rate_per_slot);
  std::uniform_int_distribution<std::size_t> pick(0, spec.profiles.size() - 1);
  for (int t = 0; t < spec.horizon_slots; ++t) {
    const int n = arrivals(rng);
    for (int i = 0; i < n; ++i) {
      Job job;
      job.id = fmt::format("{}{:06d}", spec.id_prefix, jobs.size());
      job.arrival = t;
      job.length = detail::draw_length(spec, rng);
      job.profile = spec.profiles[pick(rng)];
      const auto& q = route_queue(queues, job.length);
      job.queue = q.id;
      job.slack = q.slack_slots;
      jobs.push_back(std::move(job));
    }
  }
  return jobs;
}

/// Offered load: sum of l_j * k_min over M * horizon.
inline double utilization_estimate(std::span<const Job> jobs, int max_capacity, int horizon_slots) {
  if (max_capacity <= 0 || horizon_slots <= 0) return 0.0;
  double demand = 0.0;
  for (const auto& j : jobs) demand += j.length * j.prof().k_min();
  return demand / (static_cast<double>(max_capacity) * horizon_slots);
}

/// Arrival rate that makes the expected offered load equal `target`.
inline double rate_for_utilization(double target, int max_capacity, const SynthSpec& spec) {
  if (spec.profiles.empty()) throw DomainError("synthesis needs at least one profile");
  std::mt19937_64 rng(0x5EED);
  double mean_len = 0.0;
  constexpr int kDraws = 200000;
  for (int i = 0; i < kDraws; ++i) mean_len += detail::draw_length(spec, rng);
  mean_len /= kDraws;
  double mean_kmin = 0.0;
  for (const auto& p : spec.profiles) mean_kmin += p->k_min();
  mean_kmin /= static_cast<double>(spec.profiles.size());
  return target * max_capacity / (mean_len * mean_kmin);
}

// ---------------------------------------------------------------------------
// Key/value configuration file

/// `key = value` lines; '#' starts a comment; values may be double-quoted.
class ConfigFile {
 public:
  static ConfigFile load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config '" + path + "'");
    ConfigFile cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      auto t = csv::trim(line);
      if (t.empty()) continue;
      auto eq = t.find('=');
      if (eq == std::string_view::npos) throw ParseError(path + ":" + std::to_string(lineno) + ": expected key = value");
      std::string key(csv::trim(t.substr(0, eq)));
      std::string value(csv::trim(t.substr(eq + 1)));
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
      cfg.values_[key] = value;
    }
    return cfg;
  }

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  /// Returns and consumes the value, so leftovers can be reported as unknown.
  std::optional<std::string> take(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    std::string v = it->second;
    values_.erase(it);
    return v;
  }
  double take_double(const std::string& key, double fallback) {
    auto v = take(key);
    return v ? csv::to_double(*v, "config key '" + key + "'") : fallback;
  }
  long long take_int(const std::string& key, long long fallback) {
    auto v = take(key);
    return v ? csv::to_int(*v, "config key '" + key + "'") : fallback;
  }
  const std::map<std::string, std::string>& remaining() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// "short:6:2,medium:24:12,long:48:inf" -> queues (id:slack_slots:max_length),
/// ranges chained in the listed order starting at 0.
inline std::vector<QueueConfig> parse_queues(const std::string& text) {
  std::vector<QueueConfig> queues;
  double lower = 0.0;
  for (const auto& item : csv::split(text, ',')) {
    auto parts = csv::split(item, ':');
    if (parts.size() != 3) throw ParseError("queue spec '" + item + "': expected id:slack_slots:max_length");
    QueueConfig q;
    q.id = parts[0];
    q.slack_slots = static_cast<int>(csv::to_int(parts[1], "queue '" + q.id + "' slack"));
    q.min_length = lower;
    q.max_length = csv::to_double(parts[2], "queue '" + q.id + "' max length");
    lower = q.max_length;
    queues.push_back(q);
  }
  try {
    validate_queues(queues);
  } catch (const DomainError& e) {
    throw ParseError(std::string("queues: ") + e.what());
  }
  return queues;
}

inline std::string format_queues(const std::vector<QueueConfig>& queues) {
  std::string out;
  for (const auto& q : queues)
    out += fmt::format("{}{}:{}:{}", out.empty() ? "" : ",", q.id, q.slack_slots,
                       std::isinf(q.max_length) ? std::string("inf") : fmt::format("{}", q.max_length));
  return out;
}

/// Consumes the cluster keys from a config file; unknown keys are left in place.
inline ClusterConfig take_cluster_config(ConfigFile& cfg) {
  ClusterConfig c;
  c.max_capacity = static_cast<int>(cfg.take_int("max_capacity", c.max_capacity));
  c.slot_minutes = static_cast<int>(cfg.take_int("slot_minutes", c.slot_minutes));
  c.delta_t_minutes = static_cast<int>(cfg.take_int("delta_t_minutes", c.delta_t_minutes));
  c.power_per_server_kw = cfg.take_double("power_per_server_kw", c.power_per_server_kw);
  c.eta_net_w_per_gbps = cfg.take_double("eta_net_w_per_gbps", c.eta_net_w_per_gbps);
  c.switch_cost_kwh = cfg.take_double("switch_cost_kwh", c.switch_cost_kwh);
  c.idle_power_kw = cfg.take_double("idle_power_kw", c.idle_power_kw);
  if (auto q = cfg.take("queues")) c.queues = parse_queues(*q);
  try {
    c.validate();
  } catch (const DomainError& e) {
    throw ParseError(std::string("cluster config: ") + e.what());
  }
  return c;
}

}  // namespace carbonflex
