#pragma once

// Command-line front end: learn, run, synth, validate.
// Exit codes: 0 success, 1 runtime infeasibility, 2 usage or parse error.

#include <iostream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "carbonflex/error.hpp"
#include "carbonflex/learning.hpp"
#include "carbonflex/sim.hpp"
#include "carbonflex/traces.hpp"

namespace carbonflex {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInfeasible = 1;
inline constexpr int kExitUsage = 2;

namespace detail {

/// Config-file settings beyond the cluster itself.
struct Settings {
  ClusterConfig cluster;
  ProvisioningParams provisioning;
  double window_days = 14.0;
  int max_rounds = 48;
};

inline Settings load_settings(const std::string& path) {
  ConfigFile cfg = path.empty() ? ConfigFile{} : ConfigFile::load(path);
  Settings s;
  s.cluster = take_cluster_config(cfg);
  s.provisioning.kk = static_cast<int>(cfg.take_int("kk", s.provisioning.kk));
  s.provisioning.delta = cfg.take_double("delta", s.provisioning.delta);
  s.provisioning.epsilon = cfg.take_double("epsilon", s.provisioning.epsilon);
  s.provisioning.violation_window_slots =
      static_cast<int>(cfg.take_int("violation_window_slots", s.provisioning.violation_window_slots));
  if (auto agg = cfg.take("distance_aggregation")) {
    if (*agg != "mean" && *agg != "max") throw ParseError("distance_aggregation must be 'mean' or 'max'");
    s.provisioning.max_distance = *agg == "max";
  }
  s.window_days = cfg.take_double("window_days", s.window_days);
  s.max_rounds = static_cast<int>(cfg.take_int("max_rounds", s.max_rounds));
  if (!cfg.remaining().empty()) throw ParseError("unknown config key '" + cfg.remaining().begin()->first + "'");
  try {
    s.provisioning.validate();
  } catch (const DomainError& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  if (s.max_rounds < 1) throw ParseError("config: max_rounds must be >= 1");
  return s;
}

inline std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
  std::vector<int> out;
  for (const auto& item : csv::split(text, ',')) out.push_back(static_cast<int>(csv::to_int(std::string(csv::trim(item)), what)));
  return out;
}

inline nlohmann::ordered_json config_json(const Settings& s) {
  nlohmann::ordered_json c;
  c["max_capacity"] = s.cluster.max_capacity;
  c["slot_minutes"] = s.cluster.slot_minutes;
  c["delta_t_minutes"] = s.cluster.delta_t_minutes;
  c["power_per_server_kw"] = s.cluster.power_per_server_kw;
  c["eta_net_w_per_gbps"] = s.cluster.eta_net_w_per_gbps;
  c["switch_cost_kwh"] = s.cluster.switch_cost_kwh;
  c["idle_power_kw"] = s.cluster.idle_power_kw;
  c["queues"] = format_queues(s.cluster.queues);
  c["kk"] = s.provisioning.kk;
  c["delta"] = s.provisioning.delta;
  c["epsilon"] = s.provisioning.epsilon;
  c["violation_window_slots"] = s.provisioning.violation_window_slots;
  c["distance_aggregation"] = s.provisioning.max_distance ? "max" : "mean";
  c["window_days"] = s.window_days;
  c["max_rounds"] = s.max_rounds;
  return c;
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Carbon-aware cluster provisioning and scheduling simulator", "carbonflex"};
  app.require_subcommand(1);

  std::string config, carbon, jobs_path, profiles_path, out_path, kb_path, history_path;

  auto* learn = app.add_subcommand("learn", "Build a knowledge base from oracle replays of historical jobs");
  std::string offsets_text = "0";
  std::optional<int> window_slots;
  learn->add_option("--config", config, "Cluster config file (key = value)")->check(CLI::ExistingFile);
  learn->add_option("--carbon", carbon, "Carbon-intensity trace CSV")->required();
  learn->add_option("--jobs", jobs_path, "Historical job trace CSV")->required();
  learn->add_option("--profiles", profiles_path, "Scaling profiles CSV")->required();
  learn->add_option("--out", out_path, "Knowledge-base output file")->required();
  learn->add_option("--replay-offsets", offsets_text, "Comma-separated replay start offsets in slots");
  learn->add_option("--window-slots", window_slots, "Slots per replay that produce cases (default: max arrival + 1)");

  auto* run = app.add_subcommand("run", "Run policies on an evaluation trace and write the outcome");
  std::string policies_text;
  std::uint64_t seed = 0;
  double forecast_noise = 0.0;
  run->add_option("--config", config, "Cluster config file (key = value)")->check(CLI::ExistingFile);
  run->add_option("--carbon", carbon, "Carbon-intensity trace CSV")->required();
  run->add_option("--jobs", jobs_path, "Evaluation job trace CSV")->required();
  run->add_option("--profiles", profiles_path, "Scaling profiles CSV")->required();
  run->add_option("--kb", kb_path, "Knowledge base from `learn` (required for carbonflex)");
  run->add_option("--history", history_path, "Historical jobs for per-queue mean lengths (default: evaluation jobs)");
  run->add_option("--policies", policies_text, "Comma-separated policies (default: all; carbonflex only with --kb)");
  run->add_option("--seed", seed, "Seed for forecast noise");
  run->add_option("--forecast-noise", forecast_noise, "Multiplicative sigma of Wait Awhile forecast noise")
      ->check(CLI::NonNegativeNumber);
  run->add_option("--out", out_path, "Output directory")->required();

  auto* synth = app.add_subcommand("synth", "Generate a synthetic job trace");
  std::optional<double> rate, target_util;
  int capacity = 0, slots = 168;
  SynthSpec spec;
  std::string carbon_out;
  double ci_mean = 300.0, ci_cov = 0.3, ci_noise = 0.0;
  synth->add_option("--config", config, "Cluster config file (queues, max_capacity)")->check(CLI::ExistingFile);
  auto* rate_opt = synth->add_option("--rate", rate, "Mean arrivals per slot")->check(CLI::NonNegativeNumber);
  synth->add_option("--target-utilization", target_util, "Choose the rate for this offered load")
      ->check(CLI::Range(0.0, 10.0))
      ->excludes(rate_opt);
  synth->add_option("--capacity", capacity, "Cluster size M for --target-utilization (default: config)");
  synth->add_option("--slots", slots, "Horizon in slots")->check(CLI::PositiveNumber);
  synth->add_option("--seed", spec.seed, "Random seed");
  synth->add_option("--length-dist", spec.length_dist, "fixed | uniform | exponential | lognormal");
  synth->add_option("--mean-length", spec.mean_length, "Mean length in slots")->check(CLI::PositiveNumber);
  synth->add_option("--min-length", spec.min_length, "Minimum length in slots")->check(CLI::PositiveNumber);
  synth->add_option("--max-length", spec.max_length, "Maximum length in slots")->check(CLI::PositiveNumber);
  synth->add_option("--lognormal-sigma", spec.lognormal_sigma, "Sigma of the lognormal length")
      ->check(CLI::PositiveNumber);
  synth->add_option("--profiles", profiles_path, "Scaling profiles CSV (default: built-in Amdahl profiles)");
  synth->add_option("--out", out_path, "Job trace output CSV")->required();
  synth->add_option("--carbon-out", carbon_out, "Also write a sinusoidal carbon trace covering the horizon + 48");
  synth->add_option("--ci-mean", ci_mean, "Mean CI of the synthetic carbon trace")->check(CLI::PositiveNumber);
  synth->add_option("--ci-cov", ci_cov, "Coefficient of variation of the synthetic carbon trace")
      ->check(CLI::Range(0.0, 0.7));
  synth->add_option("--ci-noise", ci_noise, "Multiplicative noise sigma of the synthetic carbon trace")
      ->check(CLI::NonNegativeNumber);

  auto* check = app.add_subcommand("validate", "Check input files against their schemas");
  check->add_option("--config", config, "Cluster config file");
  check->add_option("--carbon", carbon, "Carbon-intensity trace CSV");
  check->add_option("--profiles", profiles_path, "Scaling profiles CSV");
  check->add_option("--jobs", jobs_path, "Job trace CSV (needs --profiles)");
  check->add_option("--kb", kb_path, "Knowledge-base file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*learn) {
      const auto s = detail::load_settings(config);
      const auto trace = load_carbon_trace(carbon);
      const auto profiles = load_profiles(profiles_path);
      const auto jobs = load_jobs(jobs_path, s.cluster.queues, profiles);
      LearningOptions opts;
      opts.replay_offsets = detail::parse_int_list(offsets_text, "--replay-offsets");
      if (window_slots) opts.window_slots = *window_slots;
      opts.max_rounds = s.max_rounds;
      opts.window_days = s.window_days;
      const auto report = run_learning(jobs, trace, s.cluster, s.cluster.queues, opts);
      save_knowledge_base(report.kb, out_path);
      out << fmt::format("cases: {}\nreplays: {} feasible, {} infeasible\nwindow: {} slots\nextended jobs: {}\n",
                         report.kb.size(), report.replays_feasible, report.replays_infeasible, report.window_slots,
                         report.extended_jobs);
      return kExitOk;
    }

    if (*run) {
      const auto s = detail::load_settings(config);
      std::vector<std::string> policies;
      if (policies_text.empty()) {
        policies = {"carbon-agnostic", "gaia", "wait-awhile", "carbonscaler", "oracle"};
        if (!kb_path.empty()) policies.insert(policies.end() - 1, "carbonflex");
      } else {
        for (const auto& p : csv::split(policies_text, ',')) policies.emplace_back(csv::trim(p));
      }
      for (const auto& p : policies) {
        if (std::find(policy_names().begin(), policy_names().end(), p) == policy_names().end()) {
          std::string valid;
          for (const auto& n : policy_names()) valid += (valid.empty() ? "" : ", ") + n;
          err << "error: unknown policy '" << p << "'; valid: " << valid << '\n';
          return kExitUsage;
        }
      }
      const bool needs_kb = std::find(policies.begin(), policies.end(), "carbonflex") != policies.end();
      if (needs_kb && kb_path.empty()) {
        err << "error: policy carbonflex requires --kb\n";
        return kExitUsage;
      }
      const auto trace = load_carbon_trace(carbon);
      const auto profiles = load_profiles(profiles_path);
      const auto jobs = load_jobs(jobs_path, s.cluster.queues, profiles);
      std::optional<KnowledgeBase> kb;
      if (needs_kb) {
        kb = load_knowledge_base(kb_path);
        if (kb->slot_minutes() != s.cluster.slot_minutes)
          throw ParseError("knowledge base slot length differs from the cluster config");
        std::vector<std::string> ids;
        for (const auto& q : s.cluster.queues) ids.push_back(q.id);
        if (kb->queue_ids() != ids) throw ParseError("knowledge base queues differ from the cluster config");
      }
      RunParams params;
      params.provisioning = s.provisioning;
      params.mean_length = mean_length_per_queue(
          history_path.empty() ? jobs : load_jobs(history_path, s.cluster.queues, profiles));
      params.forecast_noise = forecast_noise;
      params.seed = seed;
      params.max_rounds = s.max_rounds;
      const auto outcome = compare(jobs, trace, s.cluster, kb ? &*kb : nullptr, params, policies);

      auto cfg = detail::config_json(s);
      cfg["seed"] = seed;
      cfg["forecast_noise"] = forecast_noise;
      cfg["policies"] = policies;
      cfg["jobs"] = jobs.size();
      cfg["trace_slots"] = trace.size();
      cfg["execution_slots"] = execution_slots(trace);
      cfg["knowledge_base_cases"] = kb ? kb->size() : 0;
      write_outcome(outcome, cfg, out_path);

      out << fmt::format("{:<16} {:>16} {:>10} {:>12} {:>10}\n", "policy", "carbon_g", "savings_%", "mean_wait_h",
                         "violations");
      for (const auto& r : outcome.rows)
        out << fmt::format("{:<16} {:>16.3f} {:>10.2f} {:>12.3f} {:>10.3f}\n", r.policy, r.total_carbon_g,
                           r.savings_pct, r.mean_wait_hours, r.violation_rate);
      return kExitOk;
    }

    if (*synth) {
      if (!valid_length_dist(spec.length_dist)) {
        err << "error: unknown length distribution '" << spec.length_dist
            << "'; valid: fixed, uniform, exponential, lognormal\n";
        return kExitUsage;
      }
      const auto s = detail::load_settings(config);
      spec.horizon_slots = slots;
      if (profiles_path.empty()) {
        spec.profiles = {amdahl_profile("high", 8, 0.05, 2.0), amdahl_profile("mid", 4, 0.3, 1.0),
                         amdahl_profile("low", 2, 0.7, 0.5)};
      } else {
        for (const auto& [id, p] : load_profiles(profiles_path)) spec.profiles.push_back(p);
      }
      const int M = capacity > 0 ? capacity : s.cluster.max_capacity;
      if (target_util) {
        spec.rate_per_slot = rate_for_utilization(*target_util, M, spec);
      } else if (rate) {
        spec.rate_per_slot = *rate;
      }
      const auto jobs = synthesize_trace(spec, s.cluster.queues);
      write_jobs(jobs, out_path);
      if (!carbon_out.empty())
        write_carbon_trace(synthesize_carbon(slots + 48, ci_mean, ci_cov, 24, ci_noise, spec.seed), carbon_out);
      err << fmt::format("jobs: {}\nrate_per_slot: {}\nutilization_estimate: {:.4f}\n", jobs.size(),
                         spec.rate_per_slot, utilization_estimate(jobs, M, slots));
      return kExitOk;
    }

    if (*check) {
      const auto s = detail::load_settings(config);
      if (!carbon.empty()) {
        const auto trace = load_carbon_trace(carbon);
        out << fmt::format("carbon: {} slots of {} min ({})\n", trace.size(), trace.step_minutes, trace.region);
      }
      std::optional<ProfileMap> profiles;
      if (!profiles_path.empty()) {
        profiles = load_profiles(profiles_path);
        out << fmt::format("profiles: {}\n", profiles->size());
      }
      if (!jobs_path.empty()) {
        if (!profiles) throw ParseError("--jobs needs --profiles");
        out << fmt::format("jobs: {}\n", load_jobs(jobs_path, s.cluster.queues, *profiles).size());
      }
      if (!kb_path.empty()) out << fmt::format("knowledge base: {} cases\n", load_knowledge_base(kb_path).size());
      out << "ok\n";
      return kExitOk;
    }
  } catch (const InfeasibleError& e) {
    err << "infeasible: " << e.what() << '\n';
    return kExitInfeasible;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const RangeError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInfeasible;
  }
  return kExitUsage;
}

}  // namespace carbonflex
