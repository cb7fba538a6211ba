#pragma once

// Offline carbon-minimizing scheduler with full knowledge of arrivals, job
// lengths and carbon intensity, plus an exhaustive reference search used to
// verify it on small instances.
//
// Offline schedules use one step per slot. Overshoot past a job's length is
// trimmed from the job's marginal (last-admitted) increment: that cell keeps
// its top server for only a fraction of the slot.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "carbonflex/error.hpp"
#include "carbonflex/model.hpp"

namespace carbonflex {

/// Threshold recorded for slots where nothing runs.
inline constexpr double kIdleThreshold = 2.0;

struct OracleResult {
  Schedule schedule;
  bool feasible = false;
  std::vector<std::pair<std::string, int>> extended_jobs;  // (job id, extra slack slots)
  std::vector<int> per_slot_capacity;                      // m_t
  std::vector<double> per_slot_threshold;                  // rho_t
  std::vector<double> remaining_progress;                  // per job, 0 when complete
  int rounds = 1;
};

/// Fills m_t, rho_t, remaining progress and the feasibility flag from the schedule.
inline void summarize(OracleResult& result, std::span<const Job> jobs, int horizon) {
  const auto& s = result.schedule;
  result.per_slot_capacity.assign(static_cast<std::size_t>(horizon), 0);
  result.per_slot_threshold.assign(static_cast<std::size_t>(horizon), kIdleThreshold);
  result.remaining_progress.assign(jobs.size(), 0.0);
  result.feasible = true;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    for (const auto& [t, cell] : s.jobs[j].cells) {
      if (t < 0 || t >= horizon) continue;
      result.per_slot_capacity[static_cast<std::size_t>(t)] += cell.servers;
      auto& rho = result.per_slot_threshold[static_cast<std::size_t>(t)];
      rho = std::min(rho, jobs[j].prof().marginal(cell.servers));
    }
    const double done = work_done(jobs[j], s.jobs[j], s.steps_per_slot);
    if (done < jobs[j].length - kWorkEpsilon) {
      result.feasible = false;
      result.remaining_progress[j] = 1.0 - done / jobs[j].length;
    }
  }
}

namespace detail {

struct Candidate {
  double ratio;     // p_j(k) / CI_t
  double deadline;  // a_j + l_j + d_j
  std::size_t job;
  int slot;
  int k;
};

inline int covered_horizon(std::span<const Job> jobs, const CarbonTrace& trace, bool clip) {
  int horizon = 0;
  for (const auto& j : jobs) {
    validate(j);
    if (j.arrival >= trace.size() && !jobs.empty())
      throw RangeError("job '" + j.id + "' arrives at slot " + std::to_string(j.arrival) + " beyond the carbon trace");
    if (!clip && j.window_end() > trace.size())
      throw RangeError("carbon trace (" + std::to_string(trace.size()) + " slots) does not cover job '" + j.id +
                       "' window ending at " + std::to_string(j.window_end()));
    horizon = std::max(horizon, std::min(j.window_end(), trace.size()));
  }
  return horizon;
}

inline OracleResult greedy(std::span<const Job> jobs, const CarbonTrace& trace, const ClusterConfig& cluster,
                           bool clip) {
  const int horizon = covered_horizon(jobs, trace, clip);
  std::vector<Candidate> list;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const auto& job = jobs[j];
    const int end = std::min(job.window_end(), trace.size());
    for (int t = job.arrival; t < end; ++t)
      for (int k = job.prof().k_min(); k <= job.prof().k_max(); ++k)
        list.push_back({job.prof().marginal(k) / trace.at(t), job.deadline(), j, t, k});
  }
  std::sort(list.begin(), list.end(), [&](const Candidate& a, const Candidate& b) {
    if (a.ratio != b.ratio) return a.ratio > b.ratio;
    if (a.deadline != b.deadline) return a.deadline < b.deadline;
    if (a.job != b.job) {
      const auto& ia = jobs[a.job].id;
      const auto& ib = jobs[b.job].id;
      return ia != ib ? ia < ib : a.job < b.job;
    }
    if (a.slot != b.slot) return a.slot < b.slot;
    return a.k < b.k;
  });

  OracleResult result;
  result.schedule.steps_per_slot = 1;
  result.schedule.jobs.resize(jobs.size());
  std::vector<int> occupancy(static_cast<std::size_t>(horizon), 0);
  std::vector<double> work(jobs.size(), 0.0);
  std::vector<std::pair<int, int>> last(jobs.size(), {-1, 0});

  for (const auto& c : list) {
    const auto& job = jobs[c.job];
    if (work[c.job] >= job.length - kWorkEpsilon) continue;  // already complete
    auto& cells = result.schedule.jobs[c.job].cells;
    const int current = result.schedule.jobs[c.job].servers(c.slot);
    if (current != job.prof().below(c.k)) continue;  // scales are raised one increment at a time
    auto& occ = occupancy[static_cast<std::size_t>(c.slot)];
    if (occ - current + c.k > cluster.max_capacity) continue;
    occ += c.k - current;
    cells[c.slot] = Cell{c.k, 1.0};
    work[c.job] += job.prof().marginal(c.k);
    last[c.job] = {c.slot, c.k};
  }

  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const double overshoot = work[j] - jobs[j].length;
    if (overshoot <= kWorkEpsilon || last[j].first < 0) continue;
    const double increment = jobs[j].prof().marginal(last[j].second);
    auto& cell = result.schedule.jobs[j].cells.at(last[j].first);
    cell.fraction = std::clamp((increment - overshoot) / increment, 0.0, 1.0);
  }
  summarize(result, jobs, horizon);
  return result;
}

}  // namespace detail

/// Greedy schedule: candidates (job, slot, scale) over each job's window are
/// admitted in descending p_j(k)/CI_t order (ties: earlier deadline, then job
/// id) while slot occupancy stays within M and the job is incomplete.
/// Infeasibility is reported through `feasible`, never thrown.
inline OracleResult oracle_schedule(std::span<const Job> jobs, const CarbonTrace& trace, const ClusterConfig& cluster) {
  return detail::greedy(jobs, trace, cluster, /*clip=*/false);
}

/// Reruns the greedy, granting one extra slot of slack to every unfinished
/// job per round, until feasible or `max_rounds` rounds have run. Windows
/// extended past the end of the trace are clipped to it.
inline OracleResult retry_with_extension(std::span<const Job> jobs, const CarbonTrace& trace,
                                         const ClusterConfig& cluster, int max_rounds) {
  if (max_rounds < 1) throw DomainError("max_rounds must be >= 1");
  std::vector<Job> current(jobs.begin(), jobs.end());
  std::vector<int> extra(jobs.size(), 0);
  OracleResult result;
  for (int round = 1; round <= max_rounds; ++round) {
    result = detail::greedy(current, trace, cluster, /*clip=*/true);
    result.rounds = round;
    if (result.feasible || round == max_rounds) break;
    for (std::size_t j = 0; j < current.size(); ++j) {
      if (result.remaining_progress[j] > 0.0) {
        current[j].slack += 1;
        extra[j] += 1;
      }
    }
  }
  for (std::size_t j = 0; j < jobs.size(); ++j)
    if (extra[j] > 0) result.extended_jobs.emplace_back(jobs[j].id, extra[j]);
  return result;
}

struct BruteForceLimits {
  double max_matrices_per_job = 2.0e6;
  double max_total_matrices = 6.0e6;
};

/// Exhaustive minimum-carbon schedule. Enumerates every allocation matrix of
/// every job (k in {0} u [k_min, k_max] per slot of its window), bills each
/// completing matrix with its best single trimmed cell, and searches job
/// combinations under the capacity cap with branch and bound.
inline OracleResult brute_force_schedule(std::span<const Job> jobs, const CarbonTrace& trace,
                                         const ClusterConfig& cluster, const BruteForceLimits& limits = {}) {
  const int horizon = detail::covered_horizon(jobs, trace, /*clip=*/false);
  double total = 0.0;
  for (const auto& job : jobs) {
    const double count = std::pow(job.prof().k_max() - job.prof().k_min() + 2.0, job.window_end() - job.arrival);
    if (count > limits.max_matrices_per_job)
      throw RefusalError("job '" + job.id + "' has " + std::to_string(count) + " allocation matrices; refusing");
    total += count;
  }
  if (total > limits.max_total_matrices)
    throw RefusalError("instance has " + std::to_string(total) + " allocation matrices; refusing");

  struct Option {
    double carbon;
    JobSchedule cells;
  };
  std::vector<std::vector<Option>> options(jobs.size());

  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const auto& job = jobs[j];
    const auto& prof = job.prof();
    const int width = job.window_end() - job.arrival;
    std::vector<int> scales;
    scales.push_back(0);
    for (int k = prof.k_min(); k <= prof.k_max(); ++k) scales.push_back(k);
    std::vector<std::size_t> digit(static_cast<std::size_t>(width), 0);
    while (true) {
      double work = 0.0;
      JobSchedule js;
      for (int i = 0; i < width; ++i) {
        const int k = scales[digit[static_cast<std::size_t>(i)]];
        if (k == 0) continue;
        work += prof.cumulative(k);
        js.cells[job.arrival + i] = Cell{k, 1.0};
      }
      if (work >= job.length - kWorkEpsilon) {
        const double overshoot = work - job.length;
        std::optional<Option> best;
        auto consider = [&](JobSchedule candidate) {
          const double g = job_carbon(job, candidate, 1, trace, cluster);
          if (!best || g < best->carbon) best = Option{g, std::move(candidate)};
        };
        if (overshoot <= kWorkEpsilon) {
          consider(js);
        } else {
          for (const auto& [t, cell] : js.cells) {
            const double increment = prof.marginal(cell.servers);
            if (overshoot >= increment - kWorkEpsilon) continue;  // dominated by dropping this increment
            JobSchedule trimmed = js;
            trimmed.cells[t].fraction = (increment - overshoot) / increment;
            consider(std::move(trimmed));
          }
        }
        if (best) options[j].push_back(std::move(*best));
      }
      std::size_t i = 0;
      while (i < digit.size() && ++digit[i] == scales.size()) digit[i++] = 0;
      if (i == digit.size()) break;
    }
    std::stable_sort(options[j].begin(), options[j].end(),
                     [](const Option& a, const Option& b) { return a.carbon < b.carbon; });
  }

  // Branch and bound over one option per job.
  std::vector<double> tail_min(jobs.size() + 1, 0.0);
  bool all_have_options = true;
  for (std::size_t j = jobs.size(); j-- > 0;) {
    if (options[j].empty()) all_have_options = false;
    tail_min[j] = tail_min[j + 1] + (options[j].empty() ? 0.0 : options[j].front().carbon);
  }

  OracleResult result;
  result.schedule.steps_per_slot = 1;
  result.schedule.jobs.resize(jobs.size());
  if (all_have_options) {
    std::vector<int> occupancy(static_cast<std::size_t>(horizon), 0);
    std::vector<std::size_t> choice(jobs.size(), 0), best_choice;
    double best = std::numeric_limits<double>::infinity();
    auto fits = [&](const JobSchedule& js, int sign) {
      for (const auto& [t, cell] : js.cells) occupancy[static_cast<std::size_t>(t)] += sign * cell.servers;
      if (sign < 0) return true;
      for (const auto& [t, cell] : js.cells)
        if (occupancy[static_cast<std::size_t>(t)] > cluster.max_capacity) return false;
      return true;
    };
    auto search = [&](auto&& self, std::size_t j, double acc) -> void {
      if (j == jobs.size()) {
        if (acc < best) {
          best = acc;
          best_choice = choice;
        }
        return;
      }
      for (std::size_t o = 0; o < options[j].size(); ++o) {
        const auto& opt = options[j][o];
        if (acc + opt.carbon + tail_min[j + 1] >= best) break;  // options sorted by carbon
        const bool ok = fits(opt.cells, +1);
        if (ok) {
          choice[j] = o;
          self(self, j + 1, acc + opt.carbon);
        }
        fits(opt.cells, -1);
      }
    };
    search(search, 0, 0.0);
    if (!best_choice.empty() || jobs.empty())
      for (std::size_t j = 0; j < jobs.size(); ++j) result.schedule.jobs[j] = options[j][best_choice[j]].cells;
  }
  summarize(result, jobs, horizon);
  return result;
}

}  // namespace carbonflex
