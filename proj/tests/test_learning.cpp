#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <random>

#include "carbonflex/kdtree.hpp"
#include "carbonflex/learning.hpp"
#include "carbonflex/oracle.hpp"
#include "fixtures.hpp"

namespace cf = carbonflex;
using namespace carbonflex::testing;

namespace {

std::vector<double> ramp(int n, double start = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = start + i;
  return v;
}

cf::SystemState state(double ci, double grad, double rank, std::vector<double> q, double e) {
  cf::SystemState s;
  s.ci = ci;
  s.ci_gradient = grad;
  s.ci_rank = rank;
  s.queue_lengths = std::move(q);
  s.mean_elasticity = e;
  return s;
}

cf::Case make_case(cf::SystemState s, int m, double rho, int at) {
  cf::Case c;
  c.state = std::move(s);
  c.capacity = m;
  c.threshold = rho;
  c.created_at = at;
  return c;
}

}  // namespace

TEST(Featurize, ConstantTrace) {
  const auto t = trace(std::vector<double>(30, 200.0));
  const auto s = cf::featurize(3, t, std::span<const cf::Job>{}, cf::default_queues());
  EXPECT_EQ(s.ci, 200.0);
  EXPECT_EQ(s.ci_gradient, 0.0);
  EXPECT_EQ(s.ci_rank, 0.0);
  EXPECT_EQ(s.queue_lengths, (std::vector<double>{0, 0, 0}));
  EXPECT_EQ(s.mean_elasticity, 0.0);
}

TEST(Featurize, StrictMaximumRanksOne) {
  auto v = std::vector<double>(30, 100.0);
  v[2] = 500.0;
  const auto s = cf::featurize(2, trace(v), std::span<const cf::Job>{}, cf::default_queues());
  EXPECT_EQ(s.ci_rank, 1.0);
  EXPECT_EQ(s.ci_gradient, 400.0);
}

TEST(Featurize, RankAndGradientExact) {
  // Descending ramp: at t = 5 value 25; the next 24 values 24..1 are all smaller.
  std::vector<double> v(40);
  for (int i = 0; i < 40; ++i) v[static_cast<std::size_t>(i)] = 30.0 - i;
  auto s = cf::featurize(5, trace(v), std::span<const cf::Job>{}, cf::default_queues());
  EXPECT_EQ(s.ci_rank, 1.0);
  EXPECT_EQ(s.ci_gradient, -1.0);
  // Ascending ramp: nothing ahead is cleaner.
  s = cf::featurize(0, trace(ramp(30)), std::span<const cf::Job>{}, cf::default_queues());
  EXPECT_EQ(s.ci_rank, 0.0);
  EXPECT_EQ(s.ci_gradient, 0.0);  // t = 0 has no predecessor
  // 7 of the next 24 strictly below CI_t.
  std::vector<double> w(30, 50.0);
  for (int i = 1; i <= 7; ++i) w[static_cast<std::size_t>(i)] = 10.0;
  w[0] = 20.0;
  s = cf::featurize(0, trace(w), std::span<const cf::Job>{}, cf::default_queues());
  EXPECT_NEAR(s.ci_rank, 7.0 / 24.0, 1e-12);
}

TEST(Featurize, ForecastBeyondTraceIsRangeError) {
  EXPECT_THROW(cf::featurize(10, trace(ramp(30)), std::span<const cf::Job>{}, cf::default_queues()), cf::RangeError);
  EXPECT_NO_THROW(cf::featurize(5, trace(ramp(30)), std::span<const cf::Job>{}, cf::default_queues()));
}

TEST(Featurize, RankInvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> ci(10, 400);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(40), w(40);
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = ci(rng);
      w[i] = std::exp(v[i] / 100.0) + 3.0;
    }
    for (int t = 0; t < 15; ++t)
      EXPECT_EQ(cf::featurize(t, trace(v), std::span<const cf::Job>{}, cf::default_queues()).ci_rank,
                cf::featurize(t, trace(w), std::span<const cf::Job>{}, cf::default_queues()).ci_rank);
  }
}

TEST(Featurize, QueueCountsAndElasticity) {
  const std::vector<cf::Job> jobs{job("a", 0, 1, 6, profile({1.0, 0.8}), "short"),
                                  job("b", 0, 5, 24, profile({1.0}), "medium"),
                                  job("c", 0, 1, 6, profile({1.0, 0.6, 0.4}), "short")};
  const auto s = cf::featurize(0, trace(ramp(30)), jobs, cf::default_queues());
  EXPECT_EQ(s.queue_lengths, (std::vector<double>{2, 1, 0}));
  EXPECT_NEAR(s.mean_elasticity, (0.8 + 0.0 + 0.5) / 3.0, 1e-15);
}

TEST(ExtractCases, OnePerSlotWithOracleDecisions) {
  // Two inelastic jobs at k_min in slot 0, idle slot 1 with a pending job, then work.
  const std::vector<cf::Job> jobs{job("a", 0, 1, 0, profile({1.0})), job("b", 0, 1, 0, profile({1.0, 0.5})),
                                  job("c", 1, 1, 1, profile({1.0}))};
  auto v = std::vector<double>(30, 100.0);
  v[1] = 900.0;
  const auto t = trace(v);
  const auto r = cf::oracle_schedule(jobs, t, cluster(2));
  ASSERT_TRUE(r.feasible);
  const auto cases = cf::extract_cases(r, t, jobs, cf::default_queues(), 0, 3);
  ASSERT_EQ(cases.size(), 3u);
  EXPECT_EQ(cases[0].capacity, 2);
  EXPECT_EQ(cases[0].threshold, 1.0);
  EXPECT_EQ(cases[0].state.queue_lengths[0], 2.0);
  EXPECT_EQ(cases[1].capacity, 0);
  EXPECT_EQ(cases[1].threshold, cf::kIdleThreshold);
  EXPECT_EQ(cases[1].state.queue_lengths[0], 1.0);  // c pending
  EXPECT_EQ(cases[2].capacity, 1);
  EXPECT_EQ(cases[2].created_at, 2);
}

TEST(ExtractCases, InfeasibleResultRejected) {
  const std::vector<cf::Job> jobs{job("a", 0, 2, 0, profile({1.0})), job("b", 0, 2, 0, profile({1.0}))};
  const auto t = trace(std::vector<double>(30, 1.0));
  const auto r = cf::oracle_schedule(jobs, t, cluster(1));
  EXPECT_THROW(cf::extract_cases(r, t, jobs, cf::default_queues()), cf::InfeasibleError);
}

TEST(KdTree, MatchesLinearScan) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> grid(0, 3);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 80, dim = 1 + rng() % 7, k = 1 + rng() % 8;
    const bool ties = trial % 3 == 0;  // coarse grid forces equal distances
    std::vector<std::vector<double>> pts(n, std::vector<double>(dim));
    for (auto& p : pts)
      for (auto& x : p) x = ties ? grid(rng) / 3.0 : u(rng);
    std::vector<double> q(dim);
    for (auto& x : q) x = ties ? grid(rng) / 3.0 : u(rng);
    const cf::KdTree tree(pts);
    const auto got = tree.nearest(q, k);
    std::vector<std::pair<double, std::size_t>> ref;
    for (std::size_t i = 0; i < n; ++i) ref.emplace_back(cf::KdTree::squared_distance(pts[i], q), i);
    std::sort(ref.begin(), ref.end());
    ASSERT_EQ(got.size(), std::min(k, n));
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].index, ref[i].second) << "trial " << trial;
      EXPECT_EQ(got[i].distance, std::sqrt(ref[i].first));
    }
  }
}

TEST(KnowledgeBase, EmptyQueryNamesLearningPhase) {
  cf::KnowledgeBase kb;
  try {
    kb.query(state(1, 0, 0, {0, 0, 0}, 0));
    FAIL();
  } catch (const cf::DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("learning phase not run"), std::string::npos);
  }
}

TEST(KnowledgeBase, ExactMatchFirstAndClamp) {
  cf::KnowledgeBase kb;
  const std::vector<cf::Case> cases{make_case(state(100, 0, 0.1, {1, 0, 0}, 0.5), 3, 1.0, 0),
                                    make_case(state(200, 5, 0.5, {0, 2, 0}, 0.2), 5, 0.8, 1),
                                    make_case(state(300, -5, 0.9, {0, 0, 1}, 0.9), 1, 2.0, 2)};
  kb.insert(cases);
  const auto m = kb.query(cases[1].state, 5);
  ASSERT_EQ(m.size(), 3u);
  EXPECT_EQ(m[0].index, 1u);
  EXPECT_EQ(m[0].distance, 0.0);
  EXPECT_EQ(m[0].c.capacity, 5);
}

TEST(KnowledgeBase, TwoDimensionalNearest) {
  // Only ci and ci_rank vary; the other features are constant and normalize to 0.
  cf::KnowledgeBase kb(std::vector<std::string>{});
  kb.insert(std::vector<cf::Case>{make_case(state(0, 0, 0, {}, 0), 1, 1, 0),
                                  make_case(state(10, 0, 1, {}, 0), 2, 1, 0)});
  const auto m = kb.query(state(1, 0, 0, {}, 0), 1);
  EXPECT_EQ(m[0].c.capacity, 1);
  EXPECT_NEAR(m[0].distance, 0.1, 1e-12);
}

TEST(KnowledgeBase, RefreshAgesAndRenormalizes) {
  cf::KnowledgeBase kb({"short", "medium", "long"}, 1.0);  // 24 slots
  kb.refresh(std::vector<cf::Case>{make_case(state(100, 0, 0, {0, 0, 0}, 0), 1, 1, 0),
                                   make_case(state(200, 0, 0, {0, 0, 0}, 0), 2, 1, 10)},
             10);
  EXPECT_EQ(kb.size(), 2u);
  const auto before = kb.cases();
  kb.refresh({}, 20);
  EXPECT_EQ(kb.cases(), before);  // nothing aged, no new cases
  kb.refresh(std::vector<cf::Case>{make_case(state(500, 0, 0, {0, 0, 0}, 0), 3, 1, 30)}, 30);
  ASSERT_EQ(kb.size(), 2u);  // slot-0 case is 30 slots old
  EXPECT_EQ(kb.cases()[0].created_at, 10);
  EXPECT_EQ(kb.normalize(kb.cases()[1].state)[0], 1.0);
  kb.refresh(std::vector<cf::Case>{make_case(state(1, 0, 0, {0, 0, 0}, 0), 3, 1, 100)}, 100);
  ASSERT_EQ(kb.size(), 1u);
  EXPECT_EQ(kb.cases()[0].created_at, 100);
}

TEST(KnowledgeBase, PersistenceRoundTrip) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  cf::KnowledgeBase kb({"a", "b"}, 7.0, 30);
  std::vector<cf::Case> cases;
  for (int i = 0; i < 50; ++i)
    cases.push_back(make_case(state(u(rng) * 500, u(rng) - 0.5, u(rng), {std::floor(u(rng) * 5), 1}, u(rng)),
                              static_cast<int>(u(rng) * 10), u(rng), i));
  kb.insert(cases);
  const auto path = (std::filesystem::temp_directory_path() / "cf_kb_roundtrip.csv").string();
  cf::save_knowledge_base(kb, path);
  const auto back = cf::load_knowledge_base(path);
  EXPECT_EQ(back.queue_ids(), kb.queue_ids());
  EXPECT_EQ(back.window_days(), 7.0);
  EXPECT_EQ(back.slot_minutes(), 30);
  EXPECT_EQ(back.cases(), kb.cases());
  EXPECT_EQ(back.normalization().min, kb.normalization().min);
  EXPECT_EQ(back.normalization().max, kb.normalization().max);
  std::filesystem::remove(path);
}
