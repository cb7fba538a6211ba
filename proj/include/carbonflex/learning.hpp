#pragma once

// Historical learning: system-state features, (state -> capacity, threshold)
// cases extracted from oracle schedules, and the nearest-neighbour knowledge
// base that ages cases out over a rolling window.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "carbonflex/csv.hpp"
#include "carbonflex/error.hpp"
#include "carbonflex/kdtree.hpp"
#include "carbonflex/model.hpp"
#include "carbonflex/oracle.hpp"
#include "carbonflex/traces.hpp"

namespace carbonflex {

/// Day-ahead lookahead used for the CI rank feature, in slots.
inline constexpr int kForecastHorizon = 24;

struct SystemState {
  double ci = 0.0;           // g CO2eq / kWh
  double ci_gradient = 0.0;  // change since the previous slot
  double ci_rank = 0.0;      // share of the next day's slots strictly cleaner than now
  std::vector<double> queue_lengths;
  double mean_elasticity = 0.0;

  /// (ci, ci_gradient, ci_rank, q_1..q_Q, mean_elasticity)
  std::vector<double> features() const {
    std::vector<double> f{ci, ci_gradient, ci_rank};
    f.insert(f.end(), queue_lengths.begin(), queue_lengths.end());
    f.push_back(mean_elasticity);
    return f;
  }

  static SystemState from_features(std::span<const double> f) {
    if (f.size() < 4) throw DomainError("feature vector too short");
    SystemState s;
    s.ci = f[0];
    s.ci_gradient = f[1];
    s.ci_rank = f[2];
    s.queue_lengths.assign(f.begin() + 3, f.end() - 1);
    s.mean_elasticity = f.back();
    return s;
  }

  bool operator==(const SystemState&) const = default;
};

struct Case {
  SystemState state;
  int capacity = 0;                  // m_t
  double threshold = kIdleThreshold;  // rho
  int created_at = 0;                // slot index

  bool operator==(const Case&) const = default;
};

/// State at slot t for the jobs currently in the system (arrived, incomplete).
inline SystemState featurize(int t, const CarbonTrace& trace, std::span<const Job* const> in_system,
                             const std::vector<QueueConfig>& queues) {
  SystemState s;
  s.ci = trace.at(t);
  s.ci_gradient = t >= 1 ? s.ci - trace.at(t - 1) : 0.0;
  const auto ahead = forecast_window(trace, t + 1, kForecastHorizon);
  const auto cleaner = std::count_if(ahead.begin(), ahead.end(), [&](double v) { return v < s.ci; });
  s.ci_rank = static_cast<double>(cleaner) / kForecastHorizon;
  s.queue_lengths.assign(queues.size(), 0.0);
  double elasticity = 0.0;
  for (const Job* job : in_system) {
    for (std::size_t q = 0; q < queues.size(); ++q)
      if (queues[q].id == job->queue) s.queue_lengths[q] += 1.0;
    elasticity += job->prof().elasticity();
  }
  if (!in_system.empty()) s.mean_elasticity = elasticity / static_cast<double>(in_system.size());
  return s;
}

inline SystemState featurize(int t, const CarbonTrace& trace, std::span<const Job> in_system,
                             const std::vector<QueueConfig>& queues) {
  std::vector<const Job*> ptrs;
  for (const auto& j : in_system) ptrs.push_back(&j);
  return featurize(t, trace, std::span<const Job* const>(ptrs), queues);
}

/// One case per slot in [begin, end): the state under the oracle's own job
/// population at t, and the oracle's (m_t, rho_t). `end` < 0 means the
/// result's horizon.
inline std::vector<Case> extract_cases(const OracleResult& result, const CarbonTrace& trace, std::span<const Job> jobs,
                                       const std::vector<QueueConfig>& queues, int begin = 0, int end = -1) {
  if (!result.feasible) throw InfeasibleError("cannot learn from an infeasible oracle schedule");
  if (end < 0) end = static_cast<int>(result.per_slot_capacity.size());
  std::vector<double> finish(jobs.size());
  for (std::size_t j = 0; j < jobs.size(); ++j)
    finish[j] = completion_time(jobs[j], result.schedule.jobs[j], result.schedule.steps_per_slot).value_or(1e300);
  std::vector<Case> cases;
  cases.reserve(static_cast<std::size_t>(std::max(0, end - begin)));
  std::vector<const Job*> in_system;
  for (int t = begin; t < end; ++t) {
    in_system.clear();
    for (std::size_t j = 0; j < jobs.size(); ++j)
      if (jobs[j].arrival <= t && finish[j] > t + 1e-9) in_system.push_back(&jobs[j]);
    Case c;
    c.state = featurize(t, trace, std::span<const Job* const>(in_system), queues);
    const auto ut = static_cast<std::size_t>(t);
    c.capacity = ut < result.per_slot_capacity.size() ? result.per_slot_capacity[ut] : 0;
    c.threshold = ut < result.per_slot_threshold.size() ? result.per_slot_threshold[ut] : kIdleThreshold;
    c.created_at = t;
    cases.push_back(std::move(c));
  }
  return cases;
}

/// Per-feature min-max scaling; zero-width features map to 0.
struct Normalization {
  std::vector<double> min;
  std::vector<double> max;

  double scale(std::size_t i, double v) const {
    const double range = max[i] - min[i];
    return range > 0.0 ? (v - min[i]) / range : 0.0;
  }
};

class KnowledgeBase {
 public:
  struct Match {
    Case c;
    double distance;
    std::size_t index;  // insertion order
  };

  explicit KnowledgeBase(std::vector<std::string> queue_ids = {"short", "medium", "long"}, double window_days = 14.0,
                         int slot_minutes = 60)
      : queue_ids_(std::move(queue_ids)), window_days_(window_days), slot_minutes_(slot_minutes) {
    if (window_days_ <= 0.0) throw DomainError("window_days must be positive");
  }

  const std::vector<std::string>& queue_ids() const { return queue_ids_; }
  double window_days() const { return window_days_; }
  int slot_minutes() const { return slot_minutes_; }
  int window_slots() const { return static_cast<int>(std::lround(window_days_ * 1440.0 / slot_minutes_)); }
  const std::vector<Case>& cases() const { return cases_; }
  const Normalization& normalization() const { return norm_; }
  bool empty() const { return cases_.empty(); }
  std::size_t size() const { return cases_.size(); }
  std::size_t dimension() const { return queue_ids_.size() + 4; }

  /// Normalized query vector, clamped to [0, 1].
  std::vector<double> normalize(const SystemState& s) const {
    auto f = s.features();
    if (f.size() != dimension()) throw DomainError("state has " + std::to_string(f.size()) + " features, expected " +
                                                   std::to_string(dimension()));
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = std::clamp(norm_.scale(i, f[i]), 0.0, 1.0);
    return f;
  }

  /// The kk nearest cases in normalized feature space; ties by insertion order.
  std::vector<Match> query(const SystemState& state, int kk = 5) const {
    if (cases_.empty()) throw DomainError("knowledge base is empty: learning phase not run");
    if (kk < 1) throw DomainError("neighbour count must be >= 1");
    std::vector<Match> out;
    for (const auto& n : index_.nearest(normalize(state), static_cast<std::size_t>(kk)))
      out.push_back({cases_[n.index], n.distance, n.index});
    return out;
  }

  /// Drops cases at least window_days old at `now`, appends `fresh`, and
  /// recomputes normalization and the index.
  void refresh(std::span<const Case> fresh, int now) {
    const int window = window_slots();
    std::erase_if(cases_, [&](const Case& c) { return now - c.created_at >= window; });
    insert(fresh);
  }

  /// Appends cases without aging.
  void insert(std::span<const Case> fresh) {
    for (const auto& c : fresh) {
      if (c.state.features().size() != dimension()) throw DomainError("case feature count does not match queues");
      cases_.push_back(c);
    }
    rebuild();
  }

 private:
  void rebuild() {
    const std::size_t d = dimension();
    norm_.min.assign(d, 0.0);
    norm_.max.assign(d, 0.0);
    std::vector<std::vector<double>> raw;
    raw.reserve(cases_.size());
    for (const auto& c : cases_) raw.push_back(c.state.features());
    for (std::size_t i = 0; i < d && !raw.empty(); ++i) {
      norm_.min[i] = norm_.max[i] = raw.front()[i];
      for (const auto& f : raw) {
        norm_.min[i] = std::min(norm_.min[i], f[i]);
        norm_.max[i] = std::max(norm_.max[i], f[i]);
      }
    }
    for (auto& f : raw)
      for (std::size_t i = 0; i < d; ++i) f[i] = norm_.scale(i, f[i]);
    index_ = KdTree(std::move(raw));
  }

  std::vector<std::string> queue_ids_;
  double window_days_;
  int slot_minutes_;
  std::vector<Case> cases_;
  Normalization norm_;
  KdTree index_;
};

inline KnowledgeBase refresh(KnowledgeBase kb, std::span<const Case> new_cases, int now) {
  kb.refresh(new_cases, now);
  return kb;
}

// ---------------------------------------------------------------------------
// Persistence: '#'-prefixed metadata lines, then a CSV of cases.

inline std::vector<std::string> knowledge_base_columns(const std::vector<std::string>& queue_ids) {
  std::vector<std::string> cols{"created_at", "capacity", "threshold", "ci", "ci_gradient", "ci_rank"};
  for (const auto& q : queue_ids) cols.push_back("q_" + q);
  cols.push_back("mean_elasticity");
  return cols;
}

inline void save_knowledge_base(const KnowledgeBase& kb, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path + "'");
  auto join = [](const std::vector<double>& v) {
    std::string s;
    for (double x : v) s += (s.empty() ? "" : ";") + fmt::format("{}", x);
    return s;
  };
  std::string queues;
  for (const auto& q : kb.queue_ids()) queues += (queues.empty() ? "" : ";") + q;
  out << "# carbonflex-knowledge-base v1\n";
  out << "# window_days=" << fmt::format("{}", kb.window_days()) << "\n";
  out << "# slot_minutes=" << kb.slot_minutes() << "\n";
  out << "# queues=" << queues << "\n";
  out << "# norm_min=" << join(kb.normalization().min) << "\n";
  out << "# norm_max=" << join(kb.normalization().max) << "\n";
  const auto cols = knowledge_base_columns(kb.queue_ids());
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& c : kb.cases()) {
    out << c.created_at << ',' << c.capacity << ',' << fmt::format("{}", c.threshold);
    for (double f : c.state.features()) out << ',' << fmt::format("{}", f);
    out << '\n';
  }
}

inline KnowledgeBase load_knowledge_base(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open knowledge base '" + path + "'");
  std::map<std::string, std::string> meta;
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  std::vector<Case> cases;
  std::optional<KnowledgeBase> kb;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = csv::trim(line);
    if (t.empty()) continue;
    const auto where = path + ":" + std::to_string(lineno);
    if (t.front() == '#') {
      auto body = csv::trim(t.substr(1));
      if (auto eq = body.find('='); eq != std::string_view::npos)
        meta[std::string(body.substr(0, eq))] = std::string(body.substr(eq + 1));
      continue;
    }
    auto fields = csv::split(t);
    if (header.empty()) {
      std::vector<std::string> queue_ids;
      if (meta.count("queues") && !meta["queues"].empty()) queue_ids = csv::split(meta["queues"], ';');
      kb.emplace(queue_ids, meta.count("window_days") ? csv::to_double(meta["window_days"], where) : 14.0,
                 meta.count("slot_minutes") ? static_cast<int>(csv::to_int(meta["slot_minutes"], where)) : 60);
      header = fields;
      if (header != knowledge_base_columns(queue_ids)) throw ParseError(where + ": knowledge base header mismatch");
      continue;
    }
    if (fields.size() != header.size()) throw ParseError(where + ": wrong field count");
    Case c;
    c.created_at = static_cast<int>(csv::to_int(fields[0], where));
    c.capacity = static_cast<int>(csv::to_int(fields[1], where));
    c.threshold = csv::to_double(fields[2], where);
    std::vector<double> f;
    for (std::size_t i = 3; i < fields.size(); ++i) f.push_back(csv::to_double(fields[i], where));
    c.state = SystemState::from_features(f);
    cases.push_back(std::move(c));
  }
  if (!kb) throw ParseError(path + ": missing knowledge base header");
  // Stored cases were inside the window when saved; no aging on load.
  kb->insert(cases);
  return std::move(*kb);
}

}  // namespace carbonflex
