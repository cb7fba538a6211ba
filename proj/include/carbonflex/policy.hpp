#pragma once

// Online provisioning (cluster capacity and scheduling threshold per slot)
// and threshold-filtered greedy scheduling every delta-t, plus the SLO guard
// that forces jobs to run once deferring them further would miss the deadline.

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "carbonflex/error.hpp"
#include "carbonflex/learning.hpp"
#include "carbonflex/model.hpp"

namespace carbonflex {

struct ProvisioningParams {
  int kk = 5;                          // neighbours per query
  double delta = 0.5;                  // expected distance, normalized units
  double epsilon = 0.1;                // tolerated violation rate
  int violation_window_slots = 1;      // lookback for the violation rate
  bool max_distance = false;           // aggregate neighbour distances by max instead of mean

  void validate() const {
    if (kk < 1) throw DomainError("kk must be >= 1");
    if (delta < 0.0) throw DomainError("delta must be >= 0");
    if (epsilon < 0.0 || epsilon > 1.0) throw DomainError("epsilon must be in [0, 1]");
    if (violation_window_slots < 1) throw DomainError("violation window must be >= 1 slot");
  }
};

enum class ProvisionMode { mean, max_fallback, full_fallback };

inline std::string to_string(ProvisionMode m) {
  switch (m) {
    case ProvisionMode::mean: return "mean";
    case ProvisionMode::max_fallback: return "max-fallback";
    case ProvisionMode::full_fallback: return "full-fallback";
  }
  return "?";
}

struct ProvisionDecision {
  int capacity = 0;
  double threshold = 0.0;
  ProvisionMode mode = ProvisionMode::mean;
  std::vector<double> matched_distances;
};

/// Capacity for the next slot from the nearest historical cases:
/// far matches with too many violations -> M; too many violations -> max of
/// the matches; otherwise the mean, rounded half-up. The threshold is the
/// nearest case's.
inline ProvisionDecision provision(const SystemState& state, const KnowledgeBase& kb, const ProvisioningParams& params,
                                   double violation_rate, int max_capacity) {
  ProvisionDecision d;
  if (kb.empty()) {
    d.capacity = max_capacity;
    d.threshold = 0.0;
    d.mode = ProvisionMode::full_fallback;
    return d;
  }
  const auto matches = kb.query(state, params.kk);
  double dist = 0.0, sum = 0.0;
  int most = 0;
  for (const auto& m : matches) {
    d.matched_distances.push_back(m.distance);
    dist = params.max_distance ? std::max(dist, m.distance) : dist + m.distance;
    sum += m.c.capacity;
    most = std::max(most, m.c.capacity);
  }
  if (!params.max_distance) dist /= static_cast<double>(matches.size());
  const bool violating = violation_rate > params.epsilon;
  if (violating && dist > params.delta) {
    d.capacity = max_capacity;
    d.threshold = 0.0;
    d.mode = ProvisionMode::full_fallback;
    return d;
  }
  if (violating) {
    d.capacity = most;
    d.mode = ProvisionMode::max_fallback;
  } else {
    d.capacity = static_cast<int>(std::floor(sum / static_cast<double>(matches.size()) + 0.5));
    d.mode = ProvisionMode::mean;
  }
  d.capacity = std::clamp(d.capacity, 0, max_capacity);
  d.threshold = matches.front().c.threshold;
  return d;
}

/// True when skipping the coming step would leave less time before the
/// deadline than the remaining work needs at k_min.
inline bool must_force(double now, double step_length, double remaining_work, double deadline) {
  return remaining_work > deadline - (now + step_length) + 1e-9;
}

/// Indices (into `jobs`) of the jobs the guard forces to run.
inline std::vector<std::size_t> force_run_guard(double now, double step_length, std::span<const Job> jobs,
                                                std::span<const double> remaining_work) {
  std::vector<std::size_t> forced;
  for (std::size_t j = 0; j < jobs.size(); ++j)
    if (remaining_work[j] > kWorkEpsilon && must_force(now, step_length, remaining_work[j], jobs[j].deadline()))
      forced.push_back(j);
  return forced;
}

struct SchedulingJob {
  const Job* job = nullptr;
  bool forced = false;
};

/// Allocation for the current delta-t step. Forced jobs first receive k_min
/// (earliest a_j + d_j first) and may lift capacity up to min(M, their total
/// k_min). Remaining capacity goes to increments (j, k) with p(k_min) >= rho
/// or p(k) > rho above k_min, in descending p(k), then ascending a_j + d_j - t,
/// then job id. Returns servers per input job.
inline std::vector<int> schedule(double now, std::span<const SchedulingJob> jobs, int capacity, double rho,
                                 int max_capacity) {
  std::vector<int> alloc(jobs.size(), 0);
  int forced_demand = 0;
  std::vector<std::size_t> forced;
  for (std::size_t i = 0; i < jobs.size(); ++i)
    if (jobs[i].forced) {
      forced.push_back(i);
      forced_demand += jobs[i].job->prof().k_min();
    }
  const int effective = std::clamp(std::max(capacity, forced_demand), 0, max_capacity);
  auto slack = [&](std::size_t i) { return jobs[i].job->arrival + jobs[i].job->slack - now; };
  auto by_slack_then_id = [&](std::size_t a, std::size_t b) {
    if (slack(a) != slack(b)) return slack(a) < slack(b);
    if (jobs[a].job->id != jobs[b].job->id) return jobs[a].job->id < jobs[b].job->id;
    return a < b;
  };
  std::stable_sort(forced.begin(), forced.end(), by_slack_then_id);
  int used = 0;
  for (std::size_t i : forced) {
    const int k = jobs[i].job->prof().k_min();
    if (used + k <= effective) {
      alloc[i] = k;
      used += k;
    }
  }

  struct Entry {
    std::size_t job;
    int k;
    double p;
  };
  std::vector<Entry> list;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto& prof = jobs[i].job->prof();
    for (int k = prof.k_min(); k <= prof.k_max(); ++k) {
      const double p = prof.marginal(k);
      if (k == prof.k_min() ? p >= rho : p > rho) list.push_back({i, k, p});
    }
  }
  std::stable_sort(list.begin(), list.end(), [&](const Entry& a, const Entry& b) {
    if (a.p != b.p) return a.p > b.p;
    if (a.job != b.job) return by_slack_then_id(a.job, b.job);
    return a.k < b.k;
  });
  for (const auto& e : list) {
    if (used >= effective) break;
    const auto& prof = jobs[e.job].job->prof();
    if (alloc[e.job] != prof.below(e.k)) continue;
    const int delta = e.k - alloc[e.job];
    if (used + delta > effective) continue;
    alloc[e.job] = e.k;
    used += delta;
  }
  return alloc;
}

/// Share of recently completed jobs that finished after their deadline.
class ViolationTracker {
 public:
  explicit ViolationTracker(double window_slots = 1.0) : window_(window_slots) {}

  /// Records a completion and returns the violation rate as of `finish`.
  double record_completion(const Job& job, double finish) {
    if (finish < job.arrival) throw DomainError("job '" + job.id + "' finishes before it arrives");
    events_.push_back({finish, finish > job.deadline() + 1e-9});
    return rate(finish);
  }

  /// Completions with finish in (now - window, now].
  double rate(double now) const {
    int total = 0, late = 0;
    for (const auto& e : events_) {
      if (e.finish > now - window_ && e.finish <= now + 1e-12) {
        ++total;
        late += e.late ? 1 : 0;
      }
    }
    return total == 0 ? 0.0 : static_cast<double>(late) / total;
  }

  void prune(double now) {
    while (!events_.empty() && events_.front().finish <= now - window_) events_.pop_front();
  }

 private:
  struct Event {
    double finish;
    bool late;
  };
  double window_;
  std::deque<Event> events_;
};

}  // namespace carbonflex
