#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "carbonflex/model.hpp"

namespace carbonflex::testing {

inline ProfilePtr profile(std::vector<double> p, int k_min = 1, std::vector<double> net = {}, std::string id = "p") {
  return std::make_shared<const ScalingProfile>(std::move(id), k_min, std::move(p), std::move(net));
}

inline Job job(std::string id, int arrival, double length, int slack, ProfilePtr prof, std::string queue = "short") {
  Job j;
  j.id = std::move(id);
  j.arrival = arrival;
  j.length = length;
  j.slack = slack;
  j.profile = std::move(prof);
  j.queue = std::move(queue);
  return j;
}

inline CarbonTrace trace(std::vector<double> values, int step_minutes = 60) {
  CarbonTrace t;
  t.step_minutes = step_minutes;
  t.values = std::move(values);
  t.region = "test";
  return t;
}

inline ClusterConfig cluster(int M, int delta_t_minutes = 60) {
  ClusterConfig c;
  c.max_capacity = M;
  c.delta_t_minutes = delta_t_minutes;
  c.power_per_server_kw = 0.1;
  c.eta_net_w_per_gbps = 0.1;
  return c;
}

/// Strictly decreasing marginals starting at 1.
inline std::vector<double> random_marginals(std::mt19937_64& rng, int k_max) {
  std::uniform_real_distribution<double> drop(0.05, 0.35);
  std::vector<double> p{1.0};
  for (int k = 2; k <= k_max; ++k) p.push_back(p.back() * (1.0 - drop(rng)));
  return p;
}

}  // namespace carbonflex::testing
