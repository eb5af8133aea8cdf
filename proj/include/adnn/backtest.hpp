#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "adnn/analysis.hpp"
#include "adnn/error.hpp"
#include "adnn/factor.hpp"
#include "adnn/market_data.hpp"

namespace adnn::backtest {

using market::DayBatch;

inline constexpr double kLabelFraction = 0.3;
inline constexpr std::size_t kMinLabelStocks = 10;

struct LabeledRow {
  std::string date;
  std::string ticker;
  std::vector<double> features;
  int label = 0;
};

struct LabeledSet {
  std::size_t feature_count = 0;
  std::vector<LabeledRow> rows;
  std::vector<std::string> warnings;

  bool empty() const { return rows.empty(); }
};

/// Per-day percentile ranks in [0, 1] of every factor: (m, F) row-major.
inline std::vector<std::vector<double>> day_features(const FactorPool& pool, const DayBatch& b) {
  std::vector<std::vector<double>> out(b.size(), std::vector<double>(pool.size(), 0.5));
  for (std::size_t f = 0; f < pool.size(); ++f) {
    const auto v = pool[f].evaluate(b);
    if (v.size() != b.size()) throw Error("factor " + pool[f].name + " returned wrong length");
    const auto r = analysis::average_ranks(v);
    const double span = b.size() > 1 ? static_cast<double>(b.size() - 1) : 1.0;
    for (std::size_t i = 0; i < b.size(); ++i) out[i][f] = (r[i] - 1.0) / span;
  }
  return out;
}

/// Top 30% of each day's forward returns get label 1, bottom 30% label 0,
/// the rest are dropped. Ties resolve by ticker order. Days with fewer than
/// 10 stocks are skipped with a warning.
inline LabeledSet build_labels(std::span<const DayBatch> days, const FactorPool& pool) {
  LabeledSet set;
  set.feature_count = pool.size();
  for (const auto& b : days) {
    const std::size_t m = b.size();
    if (m < kMinLabelStocks) {
      set.warnings.push_back("skipped " + b.date + ": " + std::to_string(m) + " stocks");
      continue;
    }
    const auto count = static_cast<std::size_t>(std::floor(kLabelFraction * static_cast<double>(m) + 1e-9));
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      if (b.forward_returns[x] != b.forward_returns[y]) return b.forward_returns[x] > b.forward_returns[y];
      return b.tickers[x] < b.tickers[y];
    });
    const auto feats = day_features(pool, b);
    auto emit = [&](std::size_t i, int label) {
      set.rows.push_back({b.date, b.tickers[i], feats[i], label});
    };
    for (std::size_t r = 0; r < count; ++r) emit(order[r], 1);
    for (std::size_t r = m - count; r < m; ++r) emit(order[r], 0);
  }
  return set;
}

// ------------------------------------------------------------------ boosting

struct GbdtConfig {
  std::size_t rounds = 100;
  std::size_t max_depth = 3;
  double learning_rate = 0.1;
  double lambda = 1.0;
  double min_child_hessian = 1e-3;

  void validate() const {
    if (rounds < 1 || max_depth < 1) throw UserError("gbdt rounds and depth must be >= 1");
    if (!(learning_rate > 0.0) || !(lambda >= 0.0)) throw UserError("gbdt learning rate / lambda invalid");
  }
};

struct TreeNode {
  int feature = -1;  // -1: leaf
  double threshold = 0.0;
  std::size_t left = 0;
  std::size_t right = 0;
  double value = 0.0;
};

struct Tree {
  std::vector<TreeNode> nodes;

  double predict(std::span<const double> x) const {
    std::size_t at = 0;
    while (nodes[at].feature >= 0) {
      at = x[static_cast<std::size_t>(nodes[at].feature)] <= nodes[at].threshold ? nodes[at].left : nodes[at].right;
    }
    return nodes[at].value;
  }
};

/// Boosted regression trees on logistic loss.
class Scorer {
 public:
  double base_margin = 0.0;
  double learning_rate = 0.1;
  std::size_t feature_count = 0;
  std::vector<Tree> trees;
  /// Split gain per feature, normalized to sum to 1.
  std::vector<double> importance;
  /// Mean training log-loss before the first round and after each round.
  std::vector<double> loss_trace;

  double margin(std::span<const double> x) const {
    if (x.size() != feature_count) throw UserError("scorer: feature vector has wrong length");
    double s = base_margin;
    for (const auto& t : trees) s += learning_rate * t.predict(x);
    return s;
  }
  double probability(std::span<const double> x) const { return 1.0 / (1.0 + std::exp(-margin(x))); }
};

namespace detail {

inline double log_loss(std::span<const double> margin, std::span<const int> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < margin.size(); ++i) {
    // log(1 + exp(-z)) for y = 1, log(1 + exp(z)) for y = 0, computed stably
    const double z = y[i] == 1 ? margin[i] : -margin[i];
    s += z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
  }
  return s / static_cast<double>(margin.size());
}

struct Split {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
};

}  // namespace detail

inline Scorer train_classifier(const LabeledSet& train, const GbdtConfig& cfg = {}) {
  cfg.validate();
  const std::size_t n = train.rows.size();
  const std::size_t F = train.feature_count;
  std::size_t positives = 0;
  for (const auto& r : train.rows) {
    if (r.features.size() != F) throw UserError("labeled row has wrong feature count");
    positives += r.label == 1 ? 1 : 0;
  }
  if (positives == 0 || positives == n) throw UserError("train_classifier needs both classes");

  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = train.rows[i].label;
  std::vector<std::vector<std::size_t>> sorted(F);
  for (std::size_t f = 0; f < F; ++f) {
    auto& idx = sorted[f];
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return train.rows[a].features[f] < train.rows[b].features[f];
    });
  }

  Scorer sc;
  sc.feature_count = F;
  sc.learning_rate = cfg.learning_rate;
  const double p0 = static_cast<double>(positives) / static_cast<double>(n);
  sc.base_margin = std::log(p0 / (1.0 - p0));
  std::vector<double> gain_sum(F, 0.0);
  std::vector<double> margin(n, sc.base_margin);
  sc.loss_trace.push_back(detail::log_loss(margin, y));

  std::vector<double> g(n), h(n);
  std::vector<std::size_t> node_of(n);
  for (std::size_t round = 0; round < cfg.rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-margin[i]));
      g[i] = p - static_cast<double>(y[i]);
      h[i] = std::max(p * (1.0 - p), 1e-12);
    }
    Tree tree;
    tree.nodes.push_back({});
    std::fill(node_of.begin(), node_of.end(), 0);
    std::vector<std::size_t> frontier = {0};

    for (std::size_t level = 0; level < cfg.max_depth && !frontier.empty(); ++level) {
      const std::size_t N = tree.nodes.size();
      std::vector<double> G(N, 0.0), H(N, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        G[node_of[i]] += g[i];
        H[node_of[i]] += h[i];
      }
      std::vector<char> open(N, 0);
      for (auto id : frontier) open[id] = 1;
      std::vector<detail::Split> best(N);
      for (std::size_t f = 0; f < F; ++f) {
        std::vector<double> gl(N, 0.0), hl(N, 0.0);
        std::vector<double> last(N, std::numeric_limits<double>::quiet_NaN());
        for (std::size_t i : sorted[f]) {
          const std::size_t id = node_of[i];
          if (!open[id]) continue;
          const double v = train.rows[i].features[f];
          if (!std::isnan(last[id]) && v > last[id]) {
            const double gr = G[id] - gl[id], hr = H[id] - hl[id];
            if (hl[id] >= cfg.min_child_hessian && hr >= cfg.min_child_hessian) {
              const double gain = gl[id] * gl[id] / (hl[id] + cfg.lambda) + gr * gr / (hr + cfg.lambda) -
                                  G[id] * G[id] / (H[id] + cfg.lambda);
              if (gain > best[id].gain + 1e-12) best[id] = {gain, static_cast<int>(f), 0.5 * (last[id] + v)};
            }
          }
          gl[id] += g[i];
          hl[id] += h[i];
          last[id] = v;
        }
      }
      std::vector<std::size_t> next;
      std::vector<std::size_t> left_of(N, 0);
      for (auto id : frontier) {
        if (best[id].feature < 0) continue;
        tree.nodes[id].feature = best[id].feature;
        tree.nodes[id].threshold = best[id].threshold;
        gain_sum[static_cast<std::size_t>(best[id].feature)] += best[id].gain;
        tree.nodes[id].left = tree.nodes.size();
        tree.nodes.push_back({});
        tree.nodes[id].right = tree.nodes.size();
        tree.nodes.push_back({});
        next.push_back(tree.nodes[id].left);
        next.push_back(tree.nodes[id].right);
      }
      for (std::size_t i = 0; i < n; ++i) {
        const auto& nd = tree.nodes[node_of[i]];
        if (nd.feature < 0) continue;
        node_of[i] = train.rows[i].features[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
      }
      frontier = std::move(next);
    }
    std::vector<double> G(tree.nodes.size(), 0.0), H(tree.nodes.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      G[node_of[i]] += g[i];
      H[node_of[i]] += h[i];
    }
    for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
      if (tree.nodes[id].feature < 0) tree.nodes[id].value = -G[id] / (H[id] + cfg.lambda);
    }
    for (std::size_t i = 0; i < n; ++i) margin[i] += cfg.learning_rate * tree.nodes[node_of[i]].value;
    sc.trees.push_back(std::move(tree));
    sc.loss_trace.push_back(detail::log_loss(margin, y));
  }

  const double total = std::accumulate(gain_sum.begin(), gain_sum.end(), 0.0);
  sc.importance.assign(F, F > 0 ? 1.0 / static_cast<double>(F) : 0.0);
  if (total > 0.0) {
    for (std::size_t f = 0; f < F; ++f) sc.importance[f] = gain_sum[f] / total;
  }
  return sc;
}

struct Selection {
  FactorPool pool;
  std::vector<double> importance;  // of the kept factors, in kept order
  std::vector<std::string> warnings;
};

/// Trains on the union (train days only), keeps the `keep` most important.
inline Selection select_features(const FactorPool& pk, const FactorPool& fresh,
                                 std::span<const DayBatch> train_days, std::size_t keep,
                                 const GbdtConfig& cfg = {}) {
  FactorPool all = pk;
  all.insert(all.end(), fresh.begin(), fresh.end());
  if (all.empty()) throw UserError("select_features: both pools are empty");
  Selection sel;
  if (all.size() < keep) {
    sel.warnings.push_back("union has " + std::to_string(all.size()) + " factors, fewer than keep = " +
                           std::to_string(keep) + "; keeping all");
  }
  const auto set = build_labels(train_days, all);
  const auto scorer = train_classifier(set, cfg);
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scorer.importance[a] > scorer.importance[b]; });
  for (std::size_t r = 0; r < std::min(keep, all.size()); ++r) {
    sel.pool.push_back(all[order[r]]);
    sel.importance.push_back(scorer.importance[order[r]]);
  }
  return sel;
}

// ---------------------------------------------------------------- simulation

struct StrategyConfig {
  std::size_t holding = 5;
  /// Fraction of eligible stocks held long; 1 holds the whole universe.
  double long_fraction = 0.1;
  /// Round-trip rate, charged half on entry and half on exit.
  double commission = 0.005;

  void validate() const {
    if (holding < 1) throw UserError("holding period must be >= 1");
    if (!(long_fraction > 0.0 && long_fraction <= 1.0)) throw UserError("long_fraction must be in (0, 1]");
    if (!(commission >= 0.0)) throw UserError("commission must be >= 0");
  }
};

struct EquityCurve {
  std::vector<std::string> dates;
  std::vector<double> strategy;
  std::vector<double> hedge;
  std::vector<double> excess;

  std::size_t size() const { return dates.size(); }
};

/// Per-stock scores for a day; higher is better.
using ScoreFn = std::function<std::vector<double>(const DayBatch&)>;

inline ScoreFn pool_scorer(std::shared_ptr<const Scorer> scorer, FactorPool pool) {
  return [scorer, pool = std::move(pool)](const DayBatch& b) {
    const auto feats = day_features(pool, b);
    std::vector<double> out(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) out[i] = scorer->probability(feats[i]);
    return out;
  };
}

namespace detail {

/// Equal-weight buy-and-hold growth of `ids` from `day` to `day + k`.
inline double basket_growth(const market::Panel& raw, std::span<const std::size_t> ids, std::size_t day,
                            std::size_t k) {
  double s = 0.0;
  for (std::size_t id : ids) {
    const auto& t = raw.ticker(id);
    s += t.at(market::Series::AdjClose, day + k) / t.at(market::Series::AdjClose, day);
  }
  return s / static_cast<double>(ids.size());
}

}  // namespace detail

/// Rebalances every `holding` days over the segment's eligible days, long
/// the top-scored fraction equal-weighted, hedged by the equal-weight
/// universe. Commission is (rate / 2) x turnover on entry and again on the
/// final liquidation; turnover is measured on target weights.
inline EquityCurve simulate(const market::Dataset& data, market::Segment seg, const ScoreFn& score,
                            const StrategyConfig& cfg) {
  cfg.validate();
  if (cfg.holding != data.holding()) throw UserError("strategy holding must equal the dataset holding period");
  const auto days = data.days(seg);
  if (days.empty()) throw UserError(std::string("no eligible rebalance days in ") + market::segment_name(seg));
  std::vector<std::size_t> rebalance;
  for (std::size_t d = days.front(); std::binary_search(days.begin(), days.end(), d); d += cfg.holding) {
    rebalance.push_back(d);
  }
  const auto& raw = data.raw();
  const double side = cfg.commission / 2.0;

  EquityCurve c;
  c.dates.push_back(raw.calendar()[rebalance.front()]);
  c.strategy.push_back(1.0);
  c.hedge.push_back(1.0);
  std::vector<double> held(raw.ticker_count(), 0.0);
  for (std::size_t p = 0; p < rebalance.size(); ++p) {
    const std::size_t d = rebalance[p];
    const auto batch = data.batch(seg, d);
    const auto s = score(batch);
    if (s.size() != batch.size()) throw Error("scorer returned wrong length");
    const std::size_t m = batch.size();
    const auto count = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(cfg.long_fraction * static_cast<double>(m))), 1, m);
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    std::vector<std::size_t> picks;
    for (std::size_t r = 0; r < count; ++r) picks.push_back(batch.ticker_ids[order[r]]);
    std::sort(picks.begin(), picks.end());

    std::vector<double> target(raw.ticker_count(), 0.0);
    for (auto id : picks) target[id] = 1.0 / static_cast<double>(count);
    double turnover_in = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) turnover_in += std::abs(target[i] - held[i]);
    held = target;
    const bool last = p + 1 == rebalance.size();
    const double turnover_out = last ? 1.0 : 0.0;

    const double s0 = c.strategy.back();
    const double h0 = c.hedge.back();
    for (std::size_t k = 1; k <= cfg.holding; ++k) {
      const double charge = side * (turnover_in + (last && k == cfg.holding ? turnover_out : 0.0));
      const double nav = s0 * (detail::basket_growth(raw, picks, d, k) - charge);
      if (!(nav > 0.0)) throw Error("strategy NAV fell to zero");
      c.dates.push_back(raw.calendar()[d + k]);
      c.strategy.push_back(nav);
      c.hedge.push_back(h0 * detail::basket_growth(raw, batch.ticker_ids, d, k));
    }
  }
  c.excess.resize(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) c.excess[i] = c.strategy[i] / c.hedge[i];
  return c;
}

struct PerfReport {
  double annual_return = 0.0;
  double sharpe = 0.0;
  double max_drawdown = 0.0;
  double final_excess = 1.0;
};

inline double max_drawdown(std::span<const double> nav) {
  double peak = -std::numeric_limits<double>::infinity();
  double md = 0.0;
  for (double v : nav) {
    peak = std::max(peak, v);
    md = std::max(md, 1.0 - v / peak);
  }
  return md;
}

/// Metrics on the excess NAV: 252-day annualization, zero risk-free rate.
inline PerfReport performance(const EquityCurve& c) {
  if (c.excess.size() < 2) throw UserError("performance needs a curve of length >= 2");
  PerfReport r;
  const std::size_t n = c.excess.size();
  r.final_excess = c.excess.back() / c.excess.front();
  r.annual_return = std::pow(r.final_excess, 252.0 / static_cast<double>(n - 1)) - 1.0;
  std::vector<double> ret(n - 1);
  for (std::size_t i = 1; i < n; ++i) ret[i - 1] = c.excess[i] / c.excess[i - 1] - 1.0;
  const double mean = std::accumulate(ret.begin(), ret.end(), 0.0) / static_cast<double>(ret.size());
  double ss = 0.0;
  for (double v : ret) ss += (v - mean) * (v - mean);
  const double sd = ret.size() > 1 ? std::sqrt(ss / static_cast<double>(ret.size() - 1)) : 0.0;
  r.sharpe = sd > 1e-15 ? mean / sd * std::sqrt(252.0) : 0.0;
  r.max_drawdown = max_drawdown(c.excess);
  return r;
}

}  // namespace adnn::backtest
