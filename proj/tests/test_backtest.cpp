#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <random>
#include <set>

#include "adnn/backtest.hpp"
#include "helpers.hpp"

using namespace adnn;
using namespace adnn::backtest;

namespace {

DayBatch toy_day(const std::vector<double>& returns, const std::string& date = "2020-01-01") {
  DayBatch b;
  b.date = date;
  for (std::size_t i = 0; i < returns.size(); ++i) {
    b.ticker_ids.push_back(i);
    b.tickers.push_back("S" + std::to_string(10 + i));
  }
  b.forward_returns = returns;
  return b;
}

Factor column(std::size_t k) {
  return {"col" + std::to_string(k), [k](const DayBatch& b) {
            std::vector<double> v(b.size());
            for (std::size_t i = 0; i < b.size(); ++i) v[i] = std::sin(static_cast<double>(i * (k + 3) + b.day));
            return v;
          }};
}

LabeledSet separable(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  LabeledSet s;
  s.feature_count = 3;
  for (std::size_t i = 0; i < n; ++i) {
    LabeledRow r;
    r.features = {u(rng), u(rng), u(rng)};
    r.label = r.features[0] > 0 ? 1 : 0;
    s.rows.push_back(r);
  }
  return s;
}

const market::Dataset& planted() {
  static const market::Dataset data(
      [] {
        market::SyntheticConfig c;
        c.seed = 21;
        return market::generate_synthetic(c);
      }(),
      market::SplitSpec{}, 30, 5);
  return data;
}

ScoreFn oracle_scorer() {
  return [](const DayBatch& b) { return market::planted_signal(planted().raw(), b.day, b.ticker_ids); };
}

// all tickers flat, one rebalance in the 5-day test range
market::Dataset flat_dataset(std::size_t tickers) {
  std::vector<std::vector<double>> closes(tickers, std::vector<double>(26, 50.0));
  return market::Dataset(testing_helpers::panel_from_closes(closes), market::SplitSpec{10, 5, 5}, 3, 5);
}

}  // namespace

TEST(Labels, TenStocksGiveThreeAndThree) {
  const std::vector<DayBatch> days = {toy_day({0.1, -0.3, 0.5, 0.2, -0.1, 0.0, 0.7, -0.6, 0.3, -0.2})};
  const auto set = build_labels(days, {});
  ASSERT_EQ(set.rows.size(), 6u);
  std::set<std::string> pos, neg;
  for (const auto& r : set.rows) (r.label ? pos : neg).insert(r.ticker);
  EXPECT_EQ(pos, (std::set<std::string>{"S16", "S12", "S18"}));
  EXPECT_EQ(neg, (std::set<std::string>{"S17", "S11", "S19"}));
}

TEST(Labels, TiesBrokenByTickerOrder) {
  const std::vector<DayBatch> days = {toy_day(std::vector<double>(10, 0.01))};
  const auto set = build_labels(days, {});
  std::set<std::string> pos, neg;
  for (const auto& r : set.rows) (r.label ? pos : neg).insert(r.ticker);
  EXPECT_EQ(pos, (std::set<std::string>{"S10", "S11", "S12"}));
  EXPECT_EQ(neg, (std::set<std::string>{"S17", "S18", "S19"}));
}

TEST(Labels, EmptyRangeAndSmallDays) {
  EXPECT_TRUE(build_labels({}, {column(0)}).empty());
  const std::vector<DayBatch> days = {toy_day(std::vector<double>(9, 0.0))};
  const auto set = build_labels(days, {column(0)});
  EXPECT_TRUE(set.empty());
  ASSERT_EQ(set.warnings.size(), 1u);
}

TEST(Labels, PartitionPropertyOnPanelDays) {
  const auto days = planted().batches(market::Segment::Validation);
  const auto set = build_labels(days, {column(0), column(1)});
  std::map<std::string, std::pair<std::size_t, std::size_t>> per_day;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& r : set.rows) {
    EXPECT_TRUE(seen.insert({r.date, r.ticker}).second) << "row twice " << r.date << " " << r.ticker;
    (r.label ? per_day[r.date].first : per_day[r.date].second)++;
    ASSERT_EQ(r.features.size(), 2u);
    for (double f : r.features) EXPECT_TRUE(f >= 0.0 && f <= 1.0);
  }
  for (const auto& b : days) {
    const auto [p, n] = per_day[b.date];
    const double target = 0.3 * static_cast<double>(b.size());
    EXPECT_LE(std::abs(static_cast<double>(p) - target), 1.0);
    EXPECT_EQ(p, n);
    EXPECT_GE(b.size() - p - n, static_cast<std::size_t>(0.35 * static_cast<double>(b.size())));
  }
}

TEST(Labels, PositivesOutperformNegatives) {
  const auto days = planted().batches(market::Segment::Validation);
  for (const auto& b : days) {
    const auto set = build_labels(std::span<const DayBatch>(&b, 1), {});
    double lo_pos = 1e9, hi_neg = -1e9;
    for (const auto& r : set.rows) {
      const auto it = std::find(b.tickers.begin(), b.tickers.end(), r.ticker);
      const double ret = b.forward_returns[static_cast<std::size_t>(it - b.tickers.begin())];
      if (r.label) lo_pos = std::min(lo_pos, ret);
      else hi_neg = std::max(hi_neg, ret);
    }
    EXPECT_GE(lo_pos, hi_neg);
  }
}

TEST(Gbdt, SeparableToySet) {
  const auto set = separable(600, 3);
  const auto sc = train_classifier(set);
  std::size_t right = 0;
  for (const auto& r : set.rows) {
    const double p = sc.probability(r.features);
    EXPECT_TRUE(p > 0.0 && p < 1.0);
    right += (p > 0.5) == (r.label == 1);
  }
  EXPECT_GE(static_cast<double>(right) / 600.0, 0.99);
  double total = 0;
  for (double v : sc.importance) total += v;
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_GT(sc.importance[0], 0.9);
}

TEST(Gbdt, TrainingLossNonIncreasing) {
  auto set = separable(400, 8);
  std::mt19937_64 rng(2);
  for (auto& r : set.rows) {
    if (rng() % 5 == 0) r.label = 1 - r.label;
  }
  const auto sc = train_classifier(set, {.rounds = 60});
  ASSERT_EQ(sc.loss_trace.size(), 61u);
  for (std::size_t i = 1; i < sc.loss_trace.size(); ++i) EXPECT_LE(sc.loss_trace[i], sc.loss_trace[i - 1] + 1e-12);
}

TEST(Gbdt, ConstantFeaturesGiveBaseRate) {
  LabeledSet s;
  s.feature_count = 2;
  for (int i = 0; i < 40; ++i) s.rows.push_back({"d", "t", {0.5, 0.5}, i % 4 == 0 ? 1 : 0});
  const auto sc = train_classifier(s);
  EXPECT_NEAR(sc.probability(std::vector<double>{0.5, 0.5}), 0.25, 1e-9);
  EXPECT_NEAR(sc.probability(std::vector<double>{0.0, 1.0}), 0.25, 1e-9);
}

TEST(Gbdt, DeterministicAndErrors) {
  const auto set = separable(200, 4);
  const auto a = train_classifier(set), b = train_classifier(set);
  EXPECT_EQ(a.importance, b.importance);
  EXPECT_EQ(a.loss_trace, b.loss_trace);
  auto one = set;
  for (auto& r : one.rows) r.label = 1;
  EXPECT_THROW(train_classifier(one), UserError);
  EXPECT_THROW(a.probability(std::vector<double>{1.0}), UserError);
}

TEST(SelectFeatures, PlantedSignalRanksFirst) {
  const auto train = planted().batches(market::Segment::Train);
  const Factor oracle{"oracle", [](const DayBatch& b) {
                        return market::planted_signal(planted().raw(), b.day, b.ticker_ids);
                      }};
  const FactorPool pk = {column(0), column(1), column(2), column(3), column(4)};
  const FactorPool fresh = {column(5), oracle, column(6), column(7), column(8)};
  const auto sel = select_features(pk, fresh, train, 50, {.rounds = 30});
  ASSERT_EQ(sel.pool.size(), 10u);
  EXPECT_EQ(sel.warnings.size(), 1u);
  EXPECT_EQ(sel.pool.front().name, "oracle");
  const auto again = select_features(pk, fresh, train, 3, {.rounds = 30});
  ASSERT_EQ(again.pool.size(), 3u);
  EXPECT_TRUE(again.warnings.empty());
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(again.pool[i].name, sel.pool[i].name);
    EXPECT_EQ(again.importance[i], sel.importance[i]);
  }
}

TEST(Simulate, SelfHedgeIsFlat) {
  StrategyConfig cfg;
  cfg.long_fraction = 1.0;
  cfg.commission = 0.0;
  const auto c = simulate(planted(), market::Segment::Test, oracle_scorer(), cfg);
  ASSERT_GT(c.size(), 50u);
  for (double v : c.excess) EXPECT_NEAR(v, 1.0, 1e-12);
  EXPECT_NEAR(performance(c).annual_return, 0.0, 1e-10);
}

TEST(Simulate, FlatRoundTripPaysCommission) {
  const auto data = flat_dataset(12);
  StrategyConfig cfg;
  cfg.long_fraction = 0.5;
  const auto c = simulate(data, market::Segment::Test, [](const DayBatch& b) {
    return std::vector<double>(b.size(), 0.0);
  }, cfg);
  ASSERT_EQ(c.size(), 6u);
  EXPECT_NEAR(c.strategy.back(), 0.995, 1e-12);
  EXPECT_NEAR(c.hedge.back(), 1.0, 1e-15);
}

TEST(Simulate, AccountingClosesAndCurvesAligned) {
  const auto c = simulate(planted(), market::Segment::Test, oracle_scorer(), {});
  EXPECT_EQ(c.strategy.size(), c.dates.size());
  EXPECT_EQ(c.hedge.size(), c.dates.size());
  EXPECT_EQ(c.excess.size(), c.dates.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_GT(c.strategy[i], 0.0);
    EXPECT_GT(c.hedge[i], 0.0);
    EXPECT_DOUBLE_EQ(c.excess[i], c.strategy[i] / c.hedge[i]);
  }
}

TEST(Simulate, OracleBeatsHedgeAndInvertedDoesNot) {
  const auto direct = performance(simulate(planted(), market::Segment::Test, oracle_scorer(), {}));
  const auto inv = performance(simulate(planted(), market::Segment::Test, [](const DayBatch& b) {
    auto v = market::planted_signal(planted().raw(), b.day, b.ticker_ids);
    for (double& x : v) x = -x;
    return v;
  }, {}));
  EXPECT_GT(direct.annual_return, 0.0);
  EXPECT_LE(inv.annual_return, direct.annual_return);
}

TEST(Simulate, CommissionMonotone) {
  double prev = std::numeric_limits<double>::infinity();
  for (double rate : {0.0, 0.001, 0.005, 0.01, 0.03}) {
    StrategyConfig cfg;
    cfg.commission = rate;
    const auto c = simulate(planted(), market::Segment::Test, oracle_scorer(), cfg);
    EXPECT_LE(c.strategy.back(), prev);
    prev = c.strategy.back();
  }
}

TEST(Simulate, Errors) {
  StrategyConfig cfg;
  cfg.holding = 4;
  EXPECT_THROW(simulate(planted(), market::Segment::Test, oracle_scorer(), cfg), UserError);
  cfg.holding = 5;
  cfg.long_fraction = 0.0;
  EXPECT_THROW(simulate(planted(), market::Segment::Test, oracle_scorer(), cfg), UserError);
  cfg.long_fraction = 0.1;
  cfg.commission = -0.1;
  EXPECT_THROW(simulate(planted(), market::Segment::Test, oracle_scorer(), cfg), UserError);
}

TEST(Performance, Examples) {
  EquityCurve up{{"a", "b", "c", "d"}, {}, {}, {1.0, 1.01, 1.05, 1.2}};
  EXPECT_EQ(performance(up).max_drawdown, 0.0);
  EXPECT_GT(performance(up).sharpe, 0.0);
  EquityCurve dd{{"a", "b", "c", "d"}, {}, {}, {1.0, 1.2, 0.9, 1.1}};
  EXPECT_NEAR(performance(dd).max_drawdown, 0.25, 1e-15);
  EXPECT_NEAR(performance(dd).final_excess, 1.1, 1e-15);
  EXPECT_NEAR(performance(dd).annual_return, std::pow(1.1, 84.0) - 1.0, 1e-9);
  EquityCurve flat{{"a", "b", "c"}, {}, {}, {1.0, 1.0, 1.0}};
  EXPECT_EQ(performance(flat).sharpe, 0.0);
  EXPECT_EQ(performance(flat).max_drawdown, 0.0);
  EquityCurve one{{"a"}, {}, {}, {1.0}};
  EXPECT_THROW(performance(one), UserError);
}

TEST(Performance, DrawdownBoundedOnRandomPaths) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 0.03);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> nav = {1.0};
    for (int i = 0; i < 60; ++i) nav.push_back(nav.back() * std::exp(g(rng)));
    const double md = max_drawdown(nav);
    EXPECT_GE(md, 0.0);
    EXPECT_LE(md, 1.0);
    // brute force over all peak/trough pairs
    double brute = 0.0;
    for (std::size_t i = 0; i < nav.size(); ++i) {
      for (std::size_t j = i; j < nav.size(); ++j) brute = std::max(brute, 1.0 - nav[j] / nav[i]);
    }
    EXPECT_NEAR(md, brute, 1e-14);
  }
}
