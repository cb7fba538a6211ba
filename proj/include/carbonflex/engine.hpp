#pragma once

// Discrete-time execution engine. Time advances in delta-t steps inside
// one-slot provisioning epochs. Each step: completions of the previous step
// are already applied, arrivals join at slot start, the force-run guard
// marks jobs that can no longer wait, the policy allocates, and progress,
// energy and carbon accrue for the step.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "carbonflex/model.hpp"
#include "carbonflex/policy.hpp"

namespace carbonflex {

struct JobRuntime {
  double remaining = 0.0;  // work units
  bool arrived = false;
  bool done = false;
  bool forced = false;     // sticky until completion
  double first_start = -1.0;  // slots
  double finish = -1.0;       // slots
};

struct StepView {
  int step = 0;
  int slot = 0;
  double now = 0.0;          // slots
  double step_length = 1.0;  // slots
  std::span<const Job> jobs;
  std::span<const JobRuntime> state;
  std::span<const std::size_t> active;  // arrived and incomplete, FCFS order
  const CarbonTrace* trace = nullptr;
  const ClusterConfig* cluster = nullptr;

  bool slot_start() const { return step % cluster->steps_per_slot() == 0; }
};

struct SlotDecision {
  std::string mode;
  int capacity = -1;  // -1: not applicable
  double threshold = std::numeric_limits<double>::quiet_NaN();
};

class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::string name() const = 0;
  /// Slots of carbon data the policy needs past the current slot.
  virtual int lookahead_slots() const { return 0; }
  virtual void on_slot_start(const StepView&) {}
  /// Servers per job (indexed like view.jobs); inactive jobs must get 0.
  virtual std::vector<int> allocate(const StepView& view) = 0;
  virtual void on_completion(const Job&, double /*finish*/) {}
  virtual SlotDecision decision() const { return {name(), -1, std::numeric_limits<double>::quiet_NaN()}; }
  /// Servers provisioned this slot (idle servers may draw idle power).
  virtual int provisioned(int max_capacity) const { return max_capacity; }
};

struct SlotLogRow {
  int slot = 0;
  double ci = 0.0;
  std::string mode;
  int capacity = -1;
  double threshold = std::numeric_limits<double>::quiet_NaN();
  int forced_jobs = 0;
  std::string allocations;  // "job:k;..." at the slot's first step
  double energy_kwh = 0.0;
  double carbon_g = 0.0;
};

struct RunResult {
  std::string policy;
  Schedule schedule;
  std::vector<JobRuntime> jobs;
  std::vector<SlotLogRow> log;
  double total_energy_kwh = 0.0;
  double total_carbon_g = 0.0;
  double used_server_slots = 0.0;
  int slots_run = 0;
  bool all_complete = true;
};

struct EngineOptions {
  int max_slots = -1;  // < 0: as far as the trace and policy lookahead allow
};

/// Jobs indices ordered by (arrival, id, index).
inline std::vector<std::size_t> fcfs_order(std::span<const Job> jobs) {
  std::vector<std::size_t> order(jobs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (jobs[a].arrival != jobs[b].arrival) return jobs[a].arrival < jobs[b].arrival;
    return jobs[a].id < jobs[b].id;
  });
  return order;
}

inline RunResult run_policy(std::span<const Job> jobs, const CarbonTrace& trace, const ClusterConfig& cluster,
                            Policy& policy, const EngineOptions& options = {}) {
  const int n = cluster.steps_per_slot();
  const double step_len = 1.0 / n;
  int max_slots = std::max(0, trace.size() - policy.lookahead_slots());
  if (options.max_slots >= 0) max_slots = std::min(max_slots, options.max_slots);

  RunResult run;
  run.policy = policy.name();
  run.schedule.steps_per_slot = n;
  run.schedule.jobs.resize(jobs.size());
  run.jobs.resize(jobs.size());
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    validate(jobs[j]);
    run.jobs[j].remaining = jobs[j].length;
  }
  const auto order = fcfs_order(jobs);
  std::size_t next_arrival = 0;
  std::size_t pending = jobs.size();
  std::vector<std::size_t> active;
  std::vector<int> prev(jobs.size(), 0);

  int step = 0;
  for (;; ++step) {
    const int slot = step / n;
    if (pending == 0 || slot >= max_slots) break;
    const bool slot_start = step % n == 0;
    const double now = step * step_len;
    if (slot_start) {
      while (next_arrival < order.size() && jobs[order[next_arrival]].arrival <= slot)
        run.jobs[order[next_arrival++]].arrived = true;
    }
    active.clear();
    for (std::size_t j : order)
      if (run.jobs[j].arrived && !run.jobs[j].done) active.push_back(j);
    for (std::size_t j : active)
      if (!run.jobs[j].forced && must_force(now, step_len, run.jobs[j].remaining, jobs[j].deadline()))
        run.jobs[j].forced = true;

    StepView view{step, slot, now, step_len, jobs, run.jobs, active, &trace, &cluster};
    if (slot_start) policy.on_slot_start(view);
    const auto alloc = policy.allocate(view);
    if (alloc.size() != jobs.size()) throw std::logic_error(policy.name() + ": allocation size mismatch");

    int used = 0;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      const int k = alloc[j];
      if (k == 0) continue;
      if (!run.jobs[j].arrived || run.jobs[j].done)
        throw std::logic_error(policy.name() + ": allocation to inactive job '" + jobs[j].id + "'");
      if (!jobs[j].prof().valid_scale(k))
        throw std::logic_error(policy.name() + ": scale " + std::to_string(k) + " invalid for '" + jobs[j].id + "'");
      used += k;
    }
    if (used > cluster.max_capacity)
      throw std::logic_error(policy.name() + ": " + std::to_string(used) + " servers exceed M at step " +
                             std::to_string(step));

    if (slot_start) {
      const auto d = policy.decision();
      SlotLogRow row;
      row.slot = slot;
      row.ci = trace.at(slot);
      row.mode = d.mode;
      row.capacity = d.capacity;
      row.threshold = d.threshold;
      for (std::size_t j : active) {
        row.forced_jobs += run.jobs[j].forced ? 1 : 0;
        if (alloc[j] > 0) row.allocations += fmt::format("{}{}:{}", row.allocations.empty() ? "" : ";", jobs[j].id, alloc[j]);
      }
      run.log.push_back(std::move(row));
    }
    auto& row = run.log.back();
    const double ci = trace.at(slot);

    double step_energy = 0.0;
    for (std::size_t j : active) {
      const int k = alloc[j];
      auto& st = run.jobs[j];
      if (k > 0) {
        run.schedule.jobs[j].cells[step] = Cell{k, 1.0};
        step_energy += slot_energy(jobs[j].prof(), k, step_len, cluster);
        st.remaining -= jobs[j].prof().cumulative(k) * step_len;
        if (st.first_start < 0) st.first_start = now;
        run.used_server_slots += k * step_len;
      }
      if (cluster.switch_cost_kwh > 0.0 && st.first_start >= 0 && st.first_start < now && k != prev[j])
        step_energy += cluster.switch_cost_kwh;
      prev[j] = k;
    }
    const int idle = std::max(0, policy.provisioned(cluster.max_capacity) - used);
    step_energy += idle * cluster.idle_power_kw * cluster.slot_hours() * step_len;
    row.energy_kwh += step_energy;
    row.carbon_g += step_energy * ci;

    for (std::size_t j : active) {
      auto& st = run.jobs[j];
      if (alloc[j] > 0 && st.remaining <= kWorkEpsilon) {
        st.done = true;
        st.finish = now + step_len;
        --pending;
        policy.on_completion(jobs[j], st.finish);
      }
    }
  }
  run.slots_run = (step + n - 1) / n;
  for (const auto& row : run.log) {
    run.total_energy_kwh += row.energy_kwh;
    run.total_carbon_g += row.carbon_g;
  }
  for (const auto& st : run.jobs) run.all_complete = run.all_complete && st.done;
  return run;
}

}  // namespace carbonflex
