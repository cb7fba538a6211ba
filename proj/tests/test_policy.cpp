#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "carbonflex/policy.hpp"
#include "fixtures.hpp"

namespace cf = carbonflex;
using namespace carbonflex::testing;

namespace {

cf::SystemState state(double ci, double rank = 0.0) {
  cf::SystemState s;
  s.ci = ci;
  s.ci_rank = rank;
  s.queue_lengths = {0, 0, 0};
  return s;
}

cf::Case make_case(double ci, int m, double rho, double rank = 0.0) {
  cf::Case c;
  c.state = state(ci, rank);
  c.capacity = m;
  c.threshold = rho;
  return c;
}

/// Five cases clustered near ci = 100 with capacities {4, 4, 6, 6, 5}, plus
/// one far case that anchors the normalization.
cf::KnowledgeBase five_case_kb() {
  cf::KnowledgeBase kb;
  kb.insert(std::vector<cf::Case>{make_case(100, 4, 0.7), make_case(101, 4, 0.9), make_case(102, 6, 0.9),
                                  make_case(103, 6, 0.9), make_case(104, 5, 0.9), make_case(1000, 10, 0.5, 1.0)});
  return kb;
}

std::vector<cf::SchedulingJob> wrap(const std::vector<cf::Job>& jobs, std::vector<bool> forced = {}) {
  std::vector<cf::SchedulingJob> out;
  for (std::size_t i = 0; i < jobs.size(); ++i) out.push_back({&jobs[i], i < forced.size() && forced[i]});
  return out;
}

}  // namespace

TEST(Provision, MeanOfMatches) {
  const auto kb = five_case_kb();
  const auto d = cf::provision(state(100), kb, {}, 0.0, 20);
  EXPECT_EQ(d.capacity, 5);
  EXPECT_EQ(d.mode, cf::ProvisionMode::mean);
  EXPECT_EQ(d.threshold, 0.7);  // nearest case
  EXPECT_EQ(d.matched_distances.size(), 5u);
}

TEST(Provision, MeanRoundsHalfUpAndClamps) {
  cf::KnowledgeBase kb;
  kb.insert(std::vector<cf::Case>{make_case(1, 4, 1), make_case(2, 5, 1), make_case(50, 0, 1)});
  cf::ProvisioningParams p;
  p.kk = 2;
  EXPECT_EQ(cf::provision(state(1), kb, p, 0.0, 10).capacity, 5);  // 4.5 -> 5
  EXPECT_EQ(cf::provision(state(1), kb, p, 0.0, 3).capacity, 3);
}

TEST(Provision, MaxFallbackWhenViolating) {
  const auto d = cf::provision(state(100), five_case_kb(), {}, 0.2, 20);
  EXPECT_EQ(d.capacity, 6);
  EXPECT_EQ(d.mode, cf::ProvisionMode::max_fallback);
}

TEST(Provision, FullFallbackWhenViolatingAndFar) {
  // Query far from every stored case in normalized space.
  const auto kb = five_case_kb();
  auto s = state(550, 0.5);
  s.mean_elasticity = 5.0;
  const auto d = cf::provision(s, kb, {}, 0.2, 20);
  EXPECT_EQ(d.capacity, 20);
  EXPECT_EQ(d.threshold, 0.0);
  EXPECT_EQ(d.mode, cf::ProvisionMode::full_fallback);
  // Far but not violating -> mean.
  EXPECT_EQ(cf::provision(s, kb, {}, 0.0, 20).mode, cf::ProvisionMode::mean);
}

TEST(Provision, EmptyKnowledgeBaseFallsBack) {
  const auto d = cf::provision(state(1), cf::KnowledgeBase{}, {}, 0.0, 7);
  EXPECT_EQ(d.capacity, 7);
  EXPECT_EQ(d.threshold, 0.0);
  EXPECT_EQ(d.mode, cf::ProvisionMode::full_fallback);
}

TEST(Provision, PureFunction) {
  const auto kb = five_case_kb();
  const auto a = cf::provision(state(101.5), kb, {}, 0.05, 20);
  const auto b = cf::provision(state(101.5), kb, {}, 0.05, 20);
  EXPECT_EQ(a.capacity, b.capacity);
  EXPECT_EQ(a.threshold, b.threshold);
  EXPECT_EQ(a.matched_distances, b.matched_distances);
}

TEST(Provision, ParamsValidation) {
  cf::ProvisioningParams p;
  p.kk = 0;
  EXPECT_THROW(p.validate(), cf::DomainError);
  p = {};
  p.epsilon = 1.5;
  EXPECT_THROW(p.validate(), cf::DomainError);
}

TEST(Schedule, KminBeforeScaling) {
  const std::vector<cf::Job> jobs{job("a", 0, 4, 6, profile({1.0, 0.9})), job("b", 0, 4, 6, profile({1.0, 0.9}))};
  EXPECT_EQ(cf::schedule(0, wrap(jobs), 2, 0.0, 4), (std::vector<int>{1, 1}));
}

TEST(Schedule, SentinelThresholdBlocksEverything) {
  const std::vector<cf::Job> jobs{job("a", 0, 4, 6, profile({1.0, 0.9})), job("b", 0, 4, 6, profile({1.0}))};
  EXPECT_EQ(cf::schedule(0, wrap(jobs), 4, 2.0, 4), (std::vector<int>{0, 0}));
}

TEST(Schedule, ThresholdFiltersIncrements) {
  const std::vector<cf::Job> jobs{job("A", 0, 4, 6, profile({1.0, 0.9})), job("B", 0, 4, 6, profile({1.0, 0.5}))};
  const auto got = cf::schedule(0, wrap(jobs), 3, 0.6, 4);
  EXPECT_EQ(got, (std::vector<int>{2, 1}));

  // Enumeration oracle: among allocations that respect the filter and the
  // capacity, the greedy one maximizes total throughput.
  double best = -1.0;
  std::vector<int> arg;
  for (int a = 0; a <= 2; ++a)
    for (int b = 0; b <= 2; ++b) {
      if (a + b > 3) continue;
      if (a == 2 && !(0.9 > 0.6)) continue;
      if (b == 2 && !(0.5 > 0.6)) continue;
      const double thr = jobs[0].prof().cumulative(a) + jobs[1].prof().cumulative(b);
      if (thr > best) {
        best = thr;
        arg = {a, b};
      }
    }
  EXPECT_EQ(got, arg);
}

TEST(Schedule, KminAdmittedAtThresholdOne) {
  const std::vector<cf::Job> jobs{job("a", 0, 4, 6, profile({1.0, 0.9}))};
  EXPECT_EQ(cf::schedule(0, wrap(jobs), 4, 1.0, 4), (std::vector<int>{1}));
}

TEST(Schedule, TieBreakBySlackThenId) {
  const std::vector<cf::Job> jobs{job("b", 0, 4, 6, profile({1.0})), job("a", 0, 4, 6, profile({1.0})),
                                  job("c", 0, 4, 2, profile({1.0}))};
  EXPECT_EQ(cf::schedule(1, wrap(jobs), 2, 0.0, 4), (std::vector<int>{0, 1, 1}));
}

TEST(Schedule, ForcedJobsLiftCapacityUpToM) {
  const std::vector<cf::Job> jobs{job("a", 0, 2, 0, profile({1.0})), job("b", 0, 2, 0, profile({1.0})),
                                  job("c", 0, 2, 0, profile({1.0}))};
  const auto got = cf::schedule(0, wrap(jobs, {true, true, true}), 1, 2.0, 2);
  EXPECT_EQ(got[0] + got[1] + got[2], 2);
  EXPECT_EQ(std::count(got.begin(), got.end(), 0), 1);
}

TEST(ForceRunGuard, Boundaries) {
  const std::vector<cf::Job> jobs{job("a", 0, 4, 4, profile({1.0})), job("b", 0, 4, 7, profile({1.0}))};
  const double now = 6.0;  // a's deadline 8 (2 slots away), b's 11 (5 away)
  const std::vector<double> remaining{2.0, 2.0};
  EXPECT_EQ(cf::force_run_guard(now, 1.0 / 12, jobs, remaining), (std::vector<std::size_t>{0}));
  EXPECT_TRUE(cf::must_force(6.0, 1.0 / 12, 2.0, 8.0));
  EXPECT_FALSE(cf::must_force(6.0, 1.0 / 12, 2.0, 11.0));
  // Only fires once skipping one more step would be too late.
  EXPECT_FALSE(cf::must_force(6.0, 1.0 / 12, 1.9, 8.0));
}

TEST(ViolationTracker, Rates) {
  cf::ViolationTracker v(1.0);
  EXPECT_EQ(v.rate(5.0), 0.0);
  const auto j = job("a", 0, 1, 1, profile({1.0}));  // deadline 2
  v.record_completion(j, 1.8);
  v.record_completion(j, 1.6);
  v.record_completion(j, 1.7);
  EXPECT_EQ(v.record_completion(j, 2.5), 0.25);
  EXPECT_EQ(v.rate(3.2), 1.0);  // only the 2.5 completion is in (2.2, 3.2]
  EXPECT_EQ(v.rate(10.0), 0.0);
  EXPECT_THROW(v.record_completion(job("b", 5, 1, 0, profile({1.0})), 4.0), cf::DomainError);
}

TEST(ScheduleProperty, CapacityMonotoneThresholdAndKminFirst) {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> n(1, 8), kmax(1, 4), slack(0, 20), cap(0, 12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<cf::Job> jobs;
    const int count = n(rng);
    for (int j = 0; j < count; ++j)
      jobs.push_back(job("j" + std::to_string(j), 0, 4, slack(rng), profile(random_marginals(rng, kmax(rng)))));
    std::vector<bool> forced(jobs.size());
    for (std::size_t j = 0; j < jobs.size(); ++j) forced[j] = u(rng) < 0.15;
    const int M = 10, m = cap(rng);
    const double rho = u(rng);
    const auto in = wrap(jobs, forced);
    const auto alloc = cf::schedule(0, in, m, rho, M);
    int used = 0, forced_demand = 0;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      used += alloc[j];
      forced_demand += forced[j] ? 1 : 0;
      EXPECT_TRUE(jobs[j].prof().valid_scale(alloc[j]));
    }
    const int effective = std::clamp(std::max(m, forced_demand), 0, M);
    EXPECT_LE(used, effective);

    const auto higher = cf::schedule(0, in, m, std::min(1.0, rho + 0.2), M);
    for (std::size_t j = 0; j < jobs.size(); ++j) EXPECT_LE(higher[j], alloc[j]) << "trial " << trial;

    const bool scaled = std::any_of(alloc.begin(), alloc.end(), [](int k) { return k > 1; });
    if (scaled)
      for (std::size_t j = 0; j < jobs.size(); ++j) EXPECT_GT(alloc[j], 0) << "trial " << trial;
  }
}
