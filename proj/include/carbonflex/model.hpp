#pragma once

// Domain types for elastic batch jobs on a variable-capacity cluster, the work
// (progress) semantics of scaling profiles, and operational energy / carbon
// accounting.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "carbonflex/error.hpp"

namespace carbonflex {

/// Absolute tolerance on work units when deciding that a job is complete.
inline constexpr double kWorkEpsilon = 1e-9;

/// Normalized elastic scaling profile of a job: marginal throughput p(k) of
/// the k-th server for k in [k_min, k_max], with p(k_min) = 1, plus the
/// network volume (gigabits per slot) the job moves at each scale.
class ScalingProfile {
 public:
  ScalingProfile(std::string id, int k_min, std::vector<double> marginal, std::vector<double> net_gb_per_slot = {})
      : id_(std::move(id)), k_min_(k_min), marginal_(std::move(marginal)), net_(std::move(net_gb_per_slot)) {
    if (k_min_ < 1) throw DomainError("profile '" + id_ + "': k_min must be >= 1");
    if (marginal_.empty()) throw DomainError("profile '" + id_ + "': empty marginal curve");
    if (net_.empty()) net_.assign(marginal_.size(), 0.0);
    if (net_.size() != marginal_.size()) throw DomainError("profile '" + id_ + "': net volume length mismatch");
    if (marginal_.front() != 1.0) throw DomainError("profile '" + id_ + "': p(k_min) must be exactly 1");
    for (std::size_t i = 0; i < marginal_.size(); ++i) {
      if (!(marginal_[i] > 0.0) || !std::isfinite(marginal_[i]))
        throw DomainError("profile '" + id_ + "': marginal throughput must be positive");
      if (i > 0 && marginal_[i] > marginal_[i - 1])
        throw DomainError("profile '" + id_ + "': marginal throughput must be non-increasing");
      if (!(net_[i] >= 0.0) || !std::isfinite(net_[i]))
        throw DomainError("profile '" + id_ + "': network volume must be non-negative");
    }
    cumulative_.resize(marginal_.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < marginal_.size(); ++i) cumulative_[i] = sum += marginal_[i];
  }

  const std::string& id() const { return id_; }
  int k_min() const { return k_min_; }
  int k_max() const { return k_min_ + static_cast<int>(marginal_.size()) - 1; }
  bool valid_scale(int k) const { return k == 0 || (k >= k_min_ && k <= k_max()); }

  /// p(k); the k-th server's marginal contribution.
  double marginal(int k) const { return marginal_.at(index(k)); }

  /// Work units per slot at scale k; 0 when paused.
  double cumulative(int k) const { return k == 0 ? 0.0 : cumulative_.at(index(k)); }

  double net_gb_per_slot(int k) const { return k == 0 ? 0.0 : net_.at(index(k)); }

  /// The scale a job steps down to when its top increment is removed.
  int below(int k) const { return k > k_min_ ? k - 1 : 0; }

  bool strictly_decreasing() const {
    for (std::size_t i = 1; i < marginal_.size(); ++i)
      if (!(marginal_[i] < marginal_[i - 1])) return false;
    return true;
  }

  /// Scalar elasticity in [0, 1]: mean of p(k) over (k_min, k_max]; 0 if inelastic.
  double elasticity() const {
    if (marginal_.size() < 2) return 0.0;
    double s = 0.0;
    for (std::size_t i = 1; i < marginal_.size(); ++i) s += marginal_[i];
    return s / static_cast<double>(marginal_.size() - 1);
  }

  const std::vector<double>& marginals() const { return marginal_; }
  const std::vector<double>& net_volumes() const { return net_; }

 private:
  std::size_t index(int k) const {
    if (k < k_min_ || k > k_max())
      throw DomainError("profile '" + id_ + "': scale " + std::to_string(k) + " outside [" + std::to_string(k_min_) +
                        ", " + std::to_string(k_max()) + "]");
    return static_cast<std::size_t>(k - k_min_);
  }

  std::string id_;
  int k_min_;
  std::vector<double> marginal_;
  std::vector<double> net_;
  std::vector<double> cumulative_;
};

using ProfilePtr = std::shared_ptr<const ScalingProfile>;

struct Job {
  std::string id;
  int arrival = 0;       // slot index a_j
  double length = 1.0;   // work units = slots at k_min
  std::string queue;
  int slack = 0;         // slots d_j
  ProfilePtr profile;

  const ScalingProfile& prof() const { return *profile; }
  int length_slots() const { return static_cast<int>(std::ceil(length - kWorkEpsilon)); }
  /// Latest on-time finish, in slots.
  double deadline() const { return arrival + length + slack; }
  /// One past the last slot of the job's scheduling window.
  int window_end() const { return arrival + length_slots() + slack; }
};

inline void validate(const Job& job) {
  if (!job.profile) throw DomainError("job '" + job.id + "': missing scaling profile");
  if (!(job.length > 0.0) || !std::isfinite(job.length)) throw DomainError("job '" + job.id + "': length must be > 0");
  if (job.slack < 0) throw DomainError("job '" + job.id + "': slack must be >= 0");
  if (job.arrival < 0) throw DomainError("job '" + job.id + "': arrival must be >= 0");
}

/// A submission queue. Jobs with length in (min_length, max_length] route here.
struct QueueConfig {
  std::string id;
  int slack_slots = 0;
  double min_length = 0.0;
  double max_length = std::numeric_limits<double>::infinity();

  bool contains(double length) const { return length > min_length && length <= max_length; }
};

/// Short (l <= 2), medium (2 < l <= 12) and long (l > 12) queues with 6, 24 and 48 slots of slack.
inline std::vector<QueueConfig> default_queues() {
  return {{"short", 6, 0.0, 2.0}, {"medium", 24, 2.0, 12.0}, {"long", 48, 12.0, std::numeric_limits<double>::infinity()}};
}

inline void validate_queues(const std::vector<QueueConfig>& queues) {
  if (queues.empty()) throw DomainError("at least one queue is required");
  std::vector<QueueConfig> sorted = queues;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.min_length < b.min_length; });
  if (sorted.front().min_length != 0.0) throw DomainError("queue length ranges must start at 0");
  if (!std::isinf(sorted.back().max_length)) throw DomainError("queue length ranges must extend to infinity");
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i].slack_slots < 0) throw DomainError("queue '" + sorted[i].id + "': negative slack");
    if (!(sorted[i].max_length > sorted[i].min_length)) throw DomainError("queue '" + sorted[i].id + "': empty range");
    if (i > 0 && sorted[i].min_length != sorted[i - 1].max_length)
      throw DomainError("queue ranges must partition (0, inf]: gap or overlap at '" + sorted[i].id + "'");
  }
}

inline const QueueConfig& route_queue(const std::vector<QueueConfig>& queues, double length) {
  for (const auto& q : queues)
    if (q.contains(length)) return q;
  throw DomainError("no queue accepts job length " + std::to_string(length));
}

struct ClusterConfig {
  int max_capacity = 1;  // M
  int slot_minutes = 60;
  int delta_t_minutes = 5;
  std::vector<QueueConfig> queues = default_queues();
  double power_per_server_kw = 0.1;
  double eta_net_w_per_gbps = 0.1;
  double switch_cost_kwh = 0.0;
  double idle_power_kw = 0.0;  // provisioned-but-idle servers; sim only

  int steps_per_slot() const { return slot_minutes / delta_t_minutes; }
  double slot_hours() const { return slot_minutes / 60.0; }

  void validate() const {
    if (max_capacity < 1) throw DomainError("max_capacity must be >= 1");
    if (slot_minutes <= 0 || delta_t_minutes <= 0) throw DomainError("slot and delta_t lengths must be positive");
    if (slot_minutes % delta_t_minutes != 0) throw DomainError("slot_minutes must be divisible by delta_t_minutes");
    if (power_per_server_kw < 0 || eta_net_w_per_gbps < 0 || switch_cost_kwh < 0 || idle_power_kw < 0)
      throw DomainError("power and energy parameters must be non-negative");
    validate_queues(queues);
  }
};

/// Time-indexed carbon intensity series in g CO2eq / kWh, one value per step.
struct CarbonTrace {
  std::int64_t start_minute = 0;  // minutes since the Unix epoch
  int step_minutes = 60;
  std::vector<double> values;
  std::string region;

  int size() const { return static_cast<int>(values.size()); }
  double at(int t) const {
    if (t < 0 || t >= size())
      throw RangeError("carbon trace has " + std::to_string(size()) + " slots; slot " + std::to_string(t) + " requested");
    return values[static_cast<std::size_t>(t)];
  }
};

/// One job's allocation over one step. The job runs at `servers` for the first
/// `fraction` of the step and at the scale below (k-1, or paused at k_min) for
/// the remainder. Online schedules always use fraction 1; offline schedules
/// trim the overshoot of a job's marginal increment through `fraction`.
struct Cell {
  int servers = 0;
  double fraction = 1.0;

  bool operator==(const Cell&) const = default;
};

struct JobSchedule {
  std::map<int, Cell> cells;  // step -> cell; absent steps are paused

  int servers(int step) const {
    auto it = cells.find(step);
    return it == cells.end() ? 0 : it->second.servers;
  }
  bool operator==(const JobSchedule&) const = default;
};

/// Per-job allocation matrices aligned with a job list. A step is
/// 1/steps_per_slot of a slot; offline schedules use one step per slot.
struct Schedule {
  int steps_per_slot = 1;
  std::vector<JobSchedule> jobs;

  int occupancy(int step) const {
    int total = 0;
    for (const auto& js : jobs) total += js.servers(step);
    return total;
  }
  /// One past the last step holding an allocation.
  int end_step() const {
    int end = 0;
    for (const auto& js : jobs)
      if (!js.cells.empty()) end = std::max(end, js.cells.rbegin()->first + 1);
    return end;
  }
  bool operator==(const Schedule&) const = default;
};

/// Work units per slot at scale k (running sum of marginals).
inline double cumulative_throughput(const ScalingProfile& profile, int k) {
  if (!profile.valid_scale(k))
    throw DomainError("scale " + std::to_string(k) + " is neither 0 nor in [" + std::to_string(profile.k_min()) + ", " +
                      std::to_string(profile.k_max()) + "]");
  return profile.cumulative(k);
}

/// Work done by one cell, in work units.
inline double cell_work(const ScalingProfile& profile, const Cell& cell, int steps_per_slot) {
  const double hi = cumulative_throughput(profile, cell.servers);
  const double lo = profile.cumulative(profile.below(cell.servers));
  return (cell.fraction * hi + (1.0 - cell.fraction) * lo) / steps_per_slot;
}

inline double work_done(const Job& job, const JobSchedule& js, int steps_per_slot) {
  double w = 0.0;
  for (const auto& [step, cell] : js.cells) w += cell_work(job.prof(), cell, steps_per_slot);
  return w;
}

/// Completed fraction of the job's work; may exceed 1 when the last step overshoots.
inline double progress(const Job& job, const JobSchedule& js, int steps_per_slot) {
  return work_done(job, js, steps_per_slot) / job.length;
}

/// Time (in slots since trace start) at which accumulated work first reaches
/// the job length, walking cells chronologically; nullopt if never.
inline std::optional<double> completion_time(const Job& job, const JobSchedule& js, int steps_per_slot) {
  const auto& prof = job.prof();
  const double step_len = 1.0 / steps_per_slot;
  double remaining = job.length;
  for (const auto& [step, cell] : js.cells) {
    const double start = step * step_len;
    const double hi_rate = prof.cumulative(cell.servers);
    const double lo_rate = prof.cumulative(prof.below(cell.servers));
    const double hi_time = cell.fraction * step_len;
    const double hi_work = hi_rate * hi_time;
    if (hi_work >= remaining - kWorkEpsilon) return start + std::min(hi_time, remaining / hi_rate);
    remaining -= hi_work;
    const double lo_work = lo_rate * (step_len - hi_time);
    if (lo_rate > 0.0 && lo_work >= remaining - kWorkEpsilon)
      return start + hi_time + std::min(step_len - hi_time, remaining / lo_rate);
    remaining -= lo_work;
  }
  return std::nullopt;
}

/// 1-based index of the delta-t sub-slot, within the slot where the job
/// completes, during which progress reaches 100%.
inline std::optional<int> completion_subslot(const Job& job, const JobSchedule& js, int steps_per_slot,
                                             const ClusterConfig& cluster) {
  auto done = completion_time(job, js, steps_per_slot);
  if (!done) return std::nullopt;
  const int n = cluster.steps_per_slot();
  const double within = *done - std::ceil(*done - 1e-12) + 1.0;  // in (0, 1]
  return std::clamp(static_cast<int>(std::ceil(within * n - 1e-9)), 1, n);
}

/// Energy in kWh of a job at scale k active for `active_fraction` of a slot:
/// compute power of k servers plus the network term eta_net x volume.
inline double slot_energy(const ScalingProfile& profile, int k, double active_fraction, const ClusterConfig& cluster) {
  if (k == 0) return 0.0;
  const double compute_kwh = k * cluster.power_per_server_kw * cluster.slot_hours();
  // W/Gbps x Gb = W*s; 3.6e6 W*s per kWh.
  const double network_kwh = cluster.eta_net_w_per_gbps * profile.net_gb_per_slot(k) / 3.6e6;
  return (compute_kwh + network_kwh) * active_fraction;
}

inline double cell_energy(const ScalingProfile& profile, const Cell& cell, int steps_per_slot,
                          const ClusterConfig& cluster) {
  const double step = 1.0 / steps_per_slot;
  return slot_energy(profile, cell.servers, cell.fraction * step, cluster) +
         slot_energy(profile, profile.below(cell.servers), (1.0 - cell.fraction) * step, cluster);
}

/// Steps at which the job changes scale after its first start (pauses,
/// resumes, rescales). The final release at completion is not an event.
inline std::vector<int> scale_change_steps(const JobSchedule& js) {
  std::vector<int> events;
  if (js.cells.empty()) return events;
  int prev_step = js.cells.begin()->first;
  int prev = js.cells.begin()->second.servers;
  for (auto it = std::next(js.cells.begin()); it != js.cells.end(); ++it) {
    if (it->first > prev_step + 1) {
      if (prev != 0) events.push_back(prev_step + 1);  // paused
      prev = 0;
    }
    if (it->second.servers != prev) events.push_back(it->first);
    prev = it->second.servers;
    prev_step = it->first;
  }
  return events;
}

inline double step_ci(const CarbonTrace& trace, int step, int steps_per_slot) {
  const int slot = step / steps_per_slot;
  if (slot >= trace.size()) throw RangeError("carbon trace shorter than schedule (slot " + std::to_string(slot) + ")");
  return trace.at(slot);
}

/// Emissions of one job in g CO2eq.
inline double job_carbon(const Job& job, const JobSchedule& js, int steps_per_slot, const CarbonTrace& trace,
                         const ClusterConfig& cluster) {
  double g = 0.0;
  for (const auto& [step, cell] : js.cells)
    g += cell_energy(job.prof(), cell, steps_per_slot, cluster) * step_ci(trace, step, steps_per_slot);
  if (cluster.switch_cost_kwh > 0.0)
    for (int step : scale_change_steps(js)) g += cluster.switch_cost_kwh * step_ci(trace, step, steps_per_slot);
  return g;
}

inline double total_carbon(const Schedule& schedule, std::span<const Job> jobs, const CarbonTrace& trace,
                           const ClusterConfig& cluster) {
  if (schedule.jobs.size() != jobs.size()) throw DomainError("schedule and job list sizes differ");
  double g = 0.0;
  for (std::size_t j = 0; j < jobs.size(); ++j)
    g += job_carbon(jobs[j], schedule.jobs[j], schedule.steps_per_slot, trace, cluster);
  return g;
}

/// Checks the structural schedule invariants (capacity, scale range, no
/// allocation before arrival). Returns a description of the first violation.
inline std::optional<std::string> check_schedule(const Schedule& schedule, std::span<const Job> jobs, int max_capacity) {
  if (schedule.jobs.size() != jobs.size()) return "schedule and job list sizes differ";
  std::map<int, int> occupancy;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    for (const auto& [step, cell] : schedule.jobs[j].cells) {
      if (!jobs[j].prof().valid_scale(cell.servers))
        return "job " + jobs[j].id + ": scale " + std::to_string(cell.servers) + " out of range";
      if (step < jobs[j].arrival * schedule.steps_per_slot)
        return "job " + jobs[j].id + ": allocated before arrival at step " + std::to_string(step);
      if (cell.fraction < 0.0 || cell.fraction > 1.0) return "job " + jobs[j].id + ": cell fraction out of [0,1]";
      occupancy[step] += cell.servers;
    }
  }
  for (const auto& [step, used] : occupancy)
    if (used > max_capacity)
      return "step " + std::to_string(step) + ": occupancy " + std::to_string(used) + " exceeds M=" +
             std::to_string(max_capacity);
  return std::nullopt;
}

}  // namespace carbonflex
