#pragma once

// Learn -> execute pipeline: oracle replays build the knowledge base, the
// CarbonFlex policy consults it online, and compare() runs every requested
// policy on identical inputs with savings relative to carbon-agnostic.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "carbonflex/baselines.hpp"
#include "carbonflex/engine.hpp"
#include "carbonflex/error.hpp"
#include "carbonflex/learning.hpp"
#include "carbonflex/model.hpp"
#include "carbonflex/oracle.hpp"
#include "carbonflex/policy.hpp"
#include "carbonflex/traces.hpp"

namespace carbonflex {

/// Online CarbonFlex: per slot, featurize and provision (m_t, rho); per
/// delta-t step, threshold-filtered greedy scheduling under m_t.
class CarbonFlexPolicy : public Policy {
 public:
  CarbonFlexPolicy(const KnowledgeBase& kb, ProvisioningParams params, std::vector<QueueConfig> queues)
      : kb_(kb), params_(params), queues_(std::move(queues)), violations_(params.violation_window_slots) {
    params_.validate();
  }

  std::string name() const override { return "carbonflex"; }
  int lookahead_slots() const override { return kForecastHorizon + 1; }

  void on_slot_start(const StepView& view) override {
    std::vector<const Job*> in_system;
    for (std::size_t j : view.active) in_system.push_back(&view.jobs[j]);
    const auto state = featurize(view.slot, *view.trace, std::span<const Job* const>(in_system), queues_);
    violations_.prune(view.now);
    decision_ = provision(state, kb_, params_, violations_.rate(view.now), view.cluster->max_capacity);
  }

  std::vector<int> allocate(const StepView& view) override {
    std::vector<SchedulingJob> in_system;
    for (std::size_t j : view.active) in_system.push_back({&view.jobs[j], view.state[j].forced});
    const auto local = schedule(view.now, in_system, decision_.capacity, decision_.threshold,
                                view.cluster->max_capacity);
    std::vector<int> alloc(view.jobs.size(), 0);
    for (std::size_t i = 0; i < local.size(); ++i) alloc[view.active[i]] = local[i];
    return alloc;
  }

  void on_completion(const Job& job, double finish) override { violations_.record_completion(job, finish); }

  SlotDecision decision() const override { return {to_string(decision_.mode), decision_.capacity, decision_.threshold}; }
  int provisioned(int) const override { return decision_.capacity; }

 private:
  const KnowledgeBase& kb_;
  ProvisioningParams params_;
  std::vector<QueueConfig> queues_;
  ViolationTracker violations_;
  ProvisionDecision decision_;
};

// ---------------------------------------------------------------------------
// Metrics

struct PolicyOutcome {
  std::string policy;
  double total_carbon_g = 0.0;
  double total_energy_kwh = 0.0;
  double savings_pct = 0.0;
  double mean_wait_hours = 0.0;
  double mean_delay_hours = 0.0;            // finish - (a + l)
  double mean_delay_violation_hours = 0.0;  // max(0, finish - deadline)
  double violation_rate = 0.0;
  double mean_utilization = 0.0;
  int jobs_completed = 0;
  int jobs_total = 0;
  bool all_complete = true;
  std::vector<SlotLogRow> log;
};

namespace detail {

/// Fills the job-level metrics from start/finish times in slots. Unfinished
/// jobs count as violations and contribute no wait/delay.
inline void job_metrics(PolicyOutcome& out, std::span<const Job> jobs, std::span<const double> first_start,
                        std::span<const double> finish, double slot_hours) {
  out.jobs_total = static_cast<int>(jobs.size());
  double wait = 0.0, delay = 0.0, violation = 0.0;
  int late = 0;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    if (finish[j] < 0.0) {
      ++late;
      continue;
    }
    ++out.jobs_completed;
    wait += std::max(0.0, first_start[j] - jobs[j].arrival);
    delay += std::max(0.0, finish[j] - (jobs[j].arrival + jobs[j].length));
    const double over = finish[j] - jobs[j].deadline();
    if (over > 1e-9) {
      ++late;
      violation += over;
    }
  }
  out.all_complete = out.jobs_completed == out.jobs_total;
  if (out.jobs_completed > 0) {
    out.mean_wait_hours = wait / out.jobs_completed * slot_hours;
    out.mean_delay_hours = delay / out.jobs_completed * slot_hours;
    out.mean_delay_violation_hours = violation / out.jobs_completed * slot_hours;
  }
  out.violation_rate = jobs.empty() ? 0.0 : static_cast<double>(late) / static_cast<double>(jobs.size());
}

}  // namespace detail

inline PolicyOutcome summarize_run(const RunResult& run, std::span<const Job> jobs, const ClusterConfig& cluster) {
  PolicyOutcome out;
  out.policy = run.policy;
  out.total_carbon_g = run.total_carbon_g;
  out.total_energy_kwh = run.total_energy_kwh;
  out.log = run.log;
  std::vector<double> start, finish;
  for (const auto& st : run.jobs) {
    start.push_back(st.first_start);
    finish.push_back(st.done ? st.finish : -1.0);
  }
  detail::job_metrics(out, jobs, start, finish, cluster.slot_hours());
  if (run.slots_run > 0)
    out.mean_utilization = run.used_server_slots / (static_cast<double>(cluster.max_capacity) * run.slots_run);
  return out;
}

/// Outcome row for an offline oracle schedule (one step per slot).
inline PolicyOutcome summarize_oracle(const OracleResult& result, std::span<const Job> jobs, const CarbonTrace& trace,
                                      const ClusterConfig& cluster) {
  PolicyOutcome out;
  out.policy = "oracle";
  const auto& s = result.schedule;
  const int horizon = std::max(s.end_step(), 0);
  out.log.resize(static_cast<std::size_t>(horizon));
  double used = 0.0;
  std::vector<double> start(jobs.size(), -1.0), finish(jobs.size(), -1.0);
  for (int t = 0; t < horizon; ++t) {
    auto& row = out.log[static_cast<std::size_t>(t)];
    row.slot = t;
    row.ci = trace.at(t);
    row.mode = "oracle";
    row.capacity = static_cast<std::size_t>(t) < result.per_slot_capacity.size() ? result.per_slot_capacity[t] : 0;
    row.threshold = static_cast<std::size_t>(t) < result.per_slot_threshold.size() ? result.per_slot_threshold[t]
                                                                                     : kIdleThreshold;
  }
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const auto& js = s.jobs[j];
    for (const auto& [t, cell] : js.cells) {
      auto& row = out.log[static_cast<std::size_t>(t)];
      const double e = cell_energy(jobs[j].prof(), cell, s.steps_per_slot, cluster);
      row.energy_kwh += e;
      row.carbon_g += e * row.ci;
      row.allocations += fmt::format("{}{}:{}", row.allocations.empty() ? "" : ";", jobs[j].id, cell.servers);
      used += cell.servers * cell.fraction + jobs[j].prof().below(cell.servers) * (1.0 - cell.fraction);
    }
    if (!js.cells.empty()) start[j] = js.cells.begin()->first;
    if (auto c = completion_time(jobs[j], js, s.steps_per_slot)) finish[j] = *c;
  }
  for (const auto& row : out.log) out.total_energy_kwh += row.energy_kwh;
  out.total_carbon_g = total_carbon(s, jobs, trace, cluster);
  detail::job_metrics(out, jobs, start, finish, cluster.slot_hours());
  if (horizon > 0) out.mean_utilization = used / (static_cast<double>(cluster.max_capacity) * horizon);
  return out;
}

// ---------------------------------------------------------------------------
// Learning

struct LearningOptions {
  std::vector<int> replay_offsets{0};
  int window_slots = -1;  // < 0: max arrival + 1
  int max_rounds = 48;
  double window_days = 14.0;
};

struct LearningReport {
  KnowledgeBase kb;
  int replays_feasible = 0;
  int replays_infeasible = 0;
  int extended_jobs = 0;
  int window_slots = 0;
};

inline std::vector<Job> shift_arrivals(std::span<const Job> jobs, int offset) {
  std::vector<Job> out(jobs.begin(), jobs.end());
  for (auto& j : out) j.arrival += offset;
  return out;
}

/// Replays the historical jobs at each offset, runs the oracle (with slack
/// extension for infeasible replays) and stores one case per slot of the
/// learning window.
inline LearningReport run_learning(std::span<const Job> historical, const CarbonTrace& trace,
                                   const ClusterConfig& cluster, const std::vector<QueueConfig>& queues,
                                   const LearningOptions& options) {
  cluster.validate();
  if (options.replay_offsets.empty()) throw DomainError("at least one replay offset is required");
  int window = options.window_slots;
  if (window < 0) {
    window = 1;
    for (const auto& j : historical) window = std::max(window, j.arrival + 1);
  }
  std::vector<std::string> ids;
  for (const auto& q : queues) ids.push_back(q.id);
  LearningReport report{KnowledgeBase(ids, options.window_days, cluster.slot_minutes)};
  report.window_slots = window;
  for (int offset : options.replay_offsets) {
    if (offset < 0 || offset + window + kForecastHorizon + 1 > trace.size())
      throw RangeError(fmt::format("replay offset {} with a {}-slot window needs {} slots of carbon data, trace has {}",
                                   offset, window, offset + window + kForecastHorizon + 1, trace.size()));
  }
  for (int offset : options.replay_offsets) {
    const auto jobs = shift_arrivals(historical, offset);
    const auto result = retry_with_extension(jobs, trace, cluster, options.max_rounds);
    if (!result.feasible) {
      ++report.replays_infeasible;
      continue;
    }
    ++report.replays_feasible;
    report.extended_jobs += static_cast<int>(result.extended_jobs.size());
    const auto cases = extract_cases(result, trace, jobs, queues, offset, offset + window);
    report.kb.refresh(cases, offset + window);
  }
  if (report.replays_feasible == 0)
    throw InfeasibleError(fmt::format("all {} replays infeasible after {} extension rounds",
                                      options.replay_offsets.size(), options.max_rounds));
  return report;
}

// ---------------------------------------------------------------------------
// Execution and comparison

inline const std::vector<std::string>& policy_names() {
  static const std::vector<std::string> names{"carbon-agnostic", "gaia",       "wait-awhile",
                                              "carbonscaler",    "carbonflex", "oracle"};
  return names;
}

struct RunParams {
  ProvisioningParams provisioning;
  std::map<std::string, double> mean_length;  // per-queue historical means (GAIA, CarbonScaler)
  double forecast_noise = 0.0;                // multiplicative sigma for the Wait Awhile forecast
  std::uint64_t seed = 0;
  int max_rounds = 48;                        // oracle slack extension rounds
};

/// Slots every engine run may use: the trace minus the longest policy lookahead.
inline int execution_slots(const CarbonTrace& trace) { return std::max(0, trace.size() - (kForecastHorizon + 1)); }

inline PolicyOutcome run_execution(std::span<const Job> jobs, const CarbonTrace& trace, const ClusterConfig& cluster,
                                   const KnowledgeBase& kb, const RunParams& params,
                                   const std::vector<QueueConfig>& queues) {
  if (kb.empty()) throw DomainError("knowledge base is empty: learning phase not run");
  CarbonFlexPolicy policy(kb, params.provisioning, queues);
  return summarize_run(run_policy(jobs, trace, cluster, policy, {execution_slots(trace)}), jobs, cluster);
}

inline PolicyOutcome run_named(const std::string& name, std::span<const Job> jobs, const CarbonTrace& trace,
                               const ClusterConfig& cluster, const KnowledgeBase* kb, const RunParams& params) {
  const EngineOptions opts{execution_slots(trace)};
  auto engine = [&](Policy& p) { return summarize_run(run_policy(jobs, trace, cluster, p, opts), jobs, cluster); };
  if (name == "carbon-agnostic") {
    CarbonAgnosticPolicy p;
    return engine(p);
  }
  if (name == "gaia") {
    GaiaPolicy p(params.mean_length);
    return engine(p);
  }
  if (name == "wait-awhile") {
    WaitAwhilePolicy p(30.0, params.forecast_noise, params.seed);
    return engine(p);
  }
  if (name == "carbonscaler") {
    CarbonScalerPolicy p(params.mean_length);
    return engine(p);
  }
  if (name == "carbonflex") {
    if (kb == nullptr) throw DomainError("carbonflex requires a knowledge base");
    return run_execution(jobs, trace, cluster, *kb, params, cluster.queues);
  }
  if (name == "oracle") {
    CarbonTrace window = trace;
    window.values.resize(static_cast<std::size_t>(execution_slots(trace)));
    return summarize_oracle(retry_with_extension(jobs, window, cluster, params.max_rounds), jobs, window, cluster);
  }
  throw DomainError("unknown policy '" + name + "'");
}

struct SimOutcome {
  std::vector<PolicyOutcome> rows;  // carbon-agnostic first, then the requested order
  double denominator_g = 0.0;

  const PolicyOutcome& at(const std::string& policy) const {
    for (const auto& r : rows)
      if (r.policy == policy) return r;
    throw RangeError("no outcome for policy '" + policy + "'");
  }
};

inline double savings_pct(double carbon, double baseline) {
  return baseline > 0.0 ? 100.0 * (1.0 - carbon / baseline) : 0.0;
}

/// Runs carbon-agnostic (the savings denominator) and every requested policy
/// on identical inputs, in parallel; rows are merged in a fixed order.
inline SimOutcome compare(std::span<const Job> jobs, const CarbonTrace& trace, const ClusterConfig& cluster,
                          const KnowledgeBase* kb, const RunParams& params, const std::vector<std::string>& policies) {
  cluster.validate();
  std::vector<std::string> order{"carbon-agnostic"};
  for (const auto& p : policies) {
    if (std::find(policy_names().begin(), policy_names().end(), p) == policy_names().end())
      throw DomainError("unknown policy '" + p + "'");
    if (std::find(order.begin(), order.end(), p) == order.end()) order.push_back(p);
  }
  std::vector<std::future<PolicyOutcome>> futures;
  for (const auto& name : order)
    futures.push_back(std::async(std::launch::async, [&, name] { return run_named(name, jobs, trace, cluster, kb, params); }));
  SimOutcome outcome;
  for (auto& f : futures) outcome.rows.push_back(f.get());
  outcome.denominator_g = outcome.rows.front().total_carbon_g;
  for (auto& r : outcome.rows) r.savings_pct = savings_pct(r.total_carbon_g, outcome.denominator_g);
  outcome.rows.front().savings_pct = 0.0;
  return outcome;
}

// ---------------------------------------------------------------------------
// Output

inline constexpr int kOutcomeSchemaVersion = 1;

inline nlohmann::ordered_json outcome_json(const SimOutcome& outcome, const nlohmann::ordered_json& config) {
  nlohmann::ordered_json doc;
  doc["schema_version"] = kOutcomeSchemaVersion;
  doc["config"] = config;
  doc["denominator_policy"] = "carbon-agnostic";
  auto& rows = doc["policies"] = nlohmann::ordered_json::array();
  for (const auto& r : outcome.rows) {
    nlohmann::ordered_json row;
    row["policy"] = r.policy;
    row["total_carbon_g"] = r.total_carbon_g;
    row["total_energy_kwh"] = r.total_energy_kwh;
    row["savings_pct"] = r.savings_pct;
    row["mean_wait_hours"] = r.mean_wait_hours;
    row["mean_delay_hours"] = r.mean_delay_hours;
    row["mean_delay_violation_hours"] = r.mean_delay_violation_hours;
    row["violation_rate"] = r.violation_rate;
    row["mean_utilization"] = r.mean_utilization;
    row["jobs_completed"] = r.jobs_completed;
    row["jobs_total"] = r.jobs_total;
    row["all_complete"] = r.all_complete;
    row["log"] = r.policy + "_log.csv";
    rows.push_back(std::move(row));
  }
  return doc;
}

inline std::string format_number(double v) {
  if (std::isnan(v)) return "";
  return fmt::format("{}", v);
}

inline void write_slot_log(const std::vector<SlotLogRow>& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path + "'");
  out << "slot,ci,mode,m_t,rho,forced_jobs,allocations,energy_kwh,carbon_g\n";
  for (const auto& r : log)
    out << r.slot << ',' << format_number(r.ci) << ',' << r.mode << ','
        << (r.capacity < 0 ? std::string() : std::to_string(r.capacity)) << ',' << format_number(r.threshold) << ','
        << r.forced_jobs << ',' << r.allocations << ',' << format_number(r.energy_kwh) << ','
        << format_number(r.carbon_g) << '\n';
}

/// Writes outcome.json and one <policy>_log.csv per row into `dir`.
inline void write_outcome(const SimOutcome& outcome, const nlohmann::ordered_json& config, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const auto base = std::filesystem::path(dir);
  std::ofstream out(base / "outcome.json");
  if (!out) throw ParseError("cannot write '" + (base / "outcome.json").string() + "'");
  out << outcome_json(outcome, config).dump(2) << '\n';
  for (const auto& r : outcome.rows) write_slot_log(r.log, (base / (r.policy + "_log.csv")).string());
}

}  // namespace carbonflex
