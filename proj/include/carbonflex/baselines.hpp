#pragma once

// Comparison policies run through the same engine as CarbonFlex:
// carbon-agnostic FCFS, GAIA lowest-window start, Wait Awhile percentile
// threshold, and the CarbonScaler per-job plan.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "carbonflex/engine.hpp"
#include "carbonflex/error.hpp"
#include "carbonflex/model.hpp"
#include "carbonflex/oracle.hpp"
#include "carbonflex/traces.hpp"

namespace carbonflex {

/// Nearest-rank percentile: the ceil(pct/100 * n)-th smallest value (rank >= 1).
inline double nearest_rank_percentile(std::vector<double> values, double pct) {
  if (values.empty()) throw DomainError("percentile of an empty sample");
  if (pct <= 0.0 || pct > 100.0) throw DomainError("percentile must be in (0, 100]");
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(pct * n / 100.0 - 1e-12));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

/// Estimated length for a job from per-queue historical means; 1 slot when
/// the queue has no history.
inline double estimated_length(const Job& job, const std::map<std::string, double>& mean_length) {
  const auto it = mean_length.find(job.queue);
  return it == mean_length.end() ? 1.0 : it->second;
}

namespace detail {

/// Allocates k_min along `order` with head-of-line blocking: stops at the
/// first eligible job that does not fit.
inline void fcfs_fill(const StepView& view, std::span<const std::size_t> order, const std::vector<bool>& eligible,
                      std::vector<int>& alloc, int& used) {
  for (std::size_t j : order) {
    if (!eligible[j] || alloc[j] > 0) continue;
    const int k = view.jobs[j].prof().k_min();
    if (used + k > view.cluster->max_capacity) break;
    alloc[j] = k;
    used += k;
  }
}

}  // namespace detail

class CarbonAgnosticPolicy : public Policy {
 public:
  std::string name() const override { return "carbon-agnostic"; }

  std::vector<int> allocate(const StepView& view) override {
    std::vector<int> alloc(view.jobs.size(), 0);
    std::vector<bool> eligible(view.jobs.size(), false);
    for (std::size_t j : view.active) eligible[j] = true;
    int used = 0;
    keep_started(view, alloc, used);
    detail::fcfs_fill(view, view.active, eligible, alloc, used);
    return alloc;
  }

 protected:
  // Started jobs are never paused.
  static void keep_started(const StepView& view, std::vector<int>& alloc, int& used) {
    for (std::size_t j : view.active)
      if (view.state[j].first_start >= 0.0) {
        alloc[j] = view.jobs[j].prof().k_min();
        used += alloc[j];
      }
  }
};

/// Picks, at arrival, the start in [a, a + d] with the lowest mean CI over
/// the estimated run length, then runs non-preemptively at k_min. Jobs whose
/// start is blocked wait in FCFS order.
class GaiaPolicy : public CarbonAgnosticPolicy {
 public:
  explicit GaiaPolicy(std::map<std::string, double> mean_length) : mean_length_(std::move(mean_length)) {}

  std::string name() const override { return "gaia"; }

  void on_slot_start(const StepView& view) override {
    if (start_.empty()) start_.assign(view.jobs.size(), -1);
    for (std::size_t j : view.active)
      if (start_[j] < 0) start_[j] = best_start(view.jobs[j], *view.trace, mean_length_);
  }

  std::vector<int> allocate(const StepView& view) override {
    std::vector<int> alloc(view.jobs.size(), 0);
    std::vector<bool> eligible(view.jobs.size(), false);
    for (std::size_t j : view.active) eligible[j] = view.state[j].forced || view.slot >= start_[j];
    int used = 0;
    keep_started(view, alloc, used);
    detail::fcfs_fill(view, view.active, eligible, alloc, used);
    return alloc;
  }

  /// argmin over t* in [a, a + d] of mean CI over [t*, t* + ceil(l_hat)),
  /// windows clipped to the trace; earliest start wins ties.
  static int best_start(const Job& job, const CarbonTrace& trace, const std::map<std::string, double>& mean_length) {
    const int span = std::max(1, static_cast<int>(std::ceil(estimated_length(job, mean_length) - kWorkEpsilon)));
    int best = job.arrival;
    double best_mean = std::numeric_limits<double>::infinity();
    for (int s = job.arrival; s <= job.arrival + job.slack && s < trace.size(); ++s) {
      const int end = std::min(trace.size(), s + span);
      double sum = 0.0;
      for (int t = s; t < end; ++t) sum += trace.at(t);
      const double mean = sum / (end - s);
      if (mean < best_mean) {
        best_mean = mean;
        best = s;
      }
    }
    return best;
  }

 private:
  std::map<std::string, double> mean_length_;
  std::vector<int> start_;
};

/// Runs jobs at k_min only while the current CI is at or below the 30th
/// percentile of the next 24 slots' forecast. Suspend-resume, FCFS.
class WaitAwhilePolicy : public Policy {
 public:
  explicit WaitAwhilePolicy(double percentile = 30.0, double forecast_noise = 0.0, std::uint64_t seed = 0)
      : percentile_(percentile), noise_(forecast_noise), seed_(seed) {}

  std::string name() const override { return "wait-awhile"; }
  int lookahead_slots() const override { return kForecastSlots; }

  void on_slot_start(const StepView& view) override {
    threshold_ = nearest_rank_percentile(forecast_window(*view.trace, view.slot, kForecastSlots, noise_, seed_),
                                         percentile_);
    clean_ = view.trace->at(view.slot) <= threshold_;
  }

  std::vector<int> allocate(const StepView& view) override {
    std::vector<int> alloc(view.jobs.size(), 0);
    std::vector<bool> eligible(view.jobs.size(), false);
    for (std::size_t j : view.active) eligible[j] = clean_ || view.state[j].forced;
    int used = 0;
    detail::fcfs_fill(view, view.active, eligible, alloc, used);
    return alloc;
  }

  SlotDecision decision() const override { return {name(), -1, threshold_}; }

  static constexpr int kForecastSlots = 24;

 private:
  double percentile_;
  double noise_;
  std::uint64_t seed_;
  double threshold_ = 0.0;
  bool clean_ = true;
};

/// Per-job plan from the single-job greedy over [a, a + ceil(l_hat) + d)
/// with estimated work l_hat. Each step, forced jobs get k_min first; the
/// planned scales (k_min for jobs that outlast their plan) are then admitted
/// increment by increment in descending marginal throughput under M.
class CarbonScalerPolicy : public Policy {
 public:
  explicit CarbonScalerPolicy(std::map<std::string, double> mean_length) : mean_length_(std::move(mean_length)) {}

  std::string name() const override { return "carbonscaler"; }

  void on_slot_start(const StepView& view) override {
    if (plans_.empty()) plans_.resize(view.jobs.size());
    for (std::size_t j : view.active)
      if (!plans_[j]) plans_[j] = plan(view.jobs[j], *view.trace, *view.cluster, mean_length_);
  }

  struct Plan {
    std::map<int, int> servers;  // slot -> k
    int last_slot = -1;
  };

  static Plan plan(const Job& job, const CarbonTrace& trace, const ClusterConfig& cluster,
                   const std::map<std::string, double>& mean_length) {
    Job estimate = job;
    estimate.length = estimated_length(job, mean_length);
    const auto result = detail::greedy(std::span<const Job>(&estimate, 1), trace, cluster, /*clip=*/true);
    Plan p;
    for (const auto& [slot, cell] : result.schedule.jobs[0].cells) {
      p.servers[slot] = cell.servers;
      p.last_slot = std::max(p.last_slot, slot);
    }
    return p;
  }

  std::vector<int> allocate(const StepView& view) override {
    std::vector<int> alloc(view.jobs.size(), 0);
    const int M = view.cluster->max_capacity;
    int used = 0;
    std::vector<std::size_t> forced;
    for (std::size_t j : view.active)
      if (view.state[j].forced) forced.push_back(j);
    std::stable_sort(forced.begin(), forced.end(), [&](std::size_t a, std::size_t b) {
      return view.jobs[a].deadline() < view.jobs[b].deadline();
    });
    for (std::size_t j : forced) {
      const int k = view.jobs[j].prof().k_min();
      if (used + k <= M) {
        alloc[j] = k;
        used += k;
      }
    }

    struct Entry {
      std::size_t job;
      int k;
      double p;
      int order;
    };
    std::vector<Entry> list;
    int order = 0;
    for (std::size_t j : view.active) {
      const auto& prof = view.jobs[j].prof();
      const auto& pl = *plans_[j];
      int target = 0;
      if (view.slot > pl.last_slot) {
        target = prof.k_min();
      } else if (auto it = pl.servers.find(view.slot); it != pl.servers.end()) {
        target = it->second;
      }
      if (view.state[j].forced) target = std::max(target, prof.k_min());
      for (int k = prof.k_min(); k <= target; ++k) list.push_back({j, k, prof.marginal(k), order});
      ++order;
    }
    std::stable_sort(list.begin(), list.end(), [](const Entry& a, const Entry& b) {
      if (a.p != b.p) return a.p > b.p;
      if (a.order != b.order) return a.order < b.order;
      return a.k < b.k;
    });
    for (const auto& e : list) {
      const auto& prof = view.jobs[e.job].prof();
      if (alloc[e.job] != prof.below(e.k)) continue;
      const int delta = e.k - alloc[e.job];
      if (used + delta > M) continue;
      alloc[e.job] = e.k;
      used += delta;
    }
    return alloc;
  }

 private:
  std::map<std::string, double> mean_length_;
  std::vector<std::optional<Plan>> plans_;
};

inline Schedule carbon_agnostic(std::span<const Job> jobs, const CarbonTrace& trace, const ClusterConfig& cluster) {
  CarbonAgnosticPolicy p;
  return run_policy(jobs, trace, cluster, p).schedule;
}

inline Schedule gaia_lowest_window(std::span<const Job> jobs, const CarbonTrace& trace, const ClusterConfig& cluster,
                                   const std::map<std::string, double>& mean_length) {
  GaiaPolicy p(mean_length);
  return run_policy(jobs, trace, cluster, p).schedule;
}

inline Schedule wait_awhile(std::span<const Job> jobs, const CarbonTrace& trace, const ClusterConfig& cluster) {
  WaitAwhilePolicy p;
  return run_policy(jobs, trace, cluster, p).schedule;
}

inline Schedule carbonscaler(std::span<const Job> jobs, const CarbonTrace& trace, const ClusterConfig& cluster,
                             const std::map<std::string, double>& mean_length) {
  CarbonScalerPolicy p(mean_length);
  return run_policy(jobs, trace, cluster, p).schedule;
}

}  // namespace carbonflex
