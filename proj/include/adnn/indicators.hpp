#pragma once

#include <algorithm>
#include <cctype>
#include <functional>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adnn/error.hpp"
#include "adnn/format.hpp"
#include "adnn/market_data.hpp"

namespace adnn::indicators {

using market::Panel;
using market::Series;
using market::TickerSeries;

enum class Kind { MA, EMA, MACD, PVT, TOP10, DC, BOLL };

/// Which panel an indicator is evaluated on when used as a factor or a
/// pre-training target. Linear smoothers are computed on the standardized
/// panel (so a network reading standardized windows can reproduce them);
/// indicators that divide by prices need the raw panel.
enum class Basis { Standardized, Raw };

struct IndicatorSpec {
  Kind kind = Kind::MA;
  /// N for MA/EMA, n for DC/BOLL, fast EMA for MACD.
  int window = 0;
  /// Slow EMA for MACD.
  int slow = 0;

  void validate() const {
    switch (kind) {
      case Kind::MA:
      case Kind::EMA:
      case Kind::DC:
      case Kind::BOLL:
        if (window < 1) throw UserError(label() + ": window must be >= 1");
        break;
      case Kind::MACD:
        if (window < 1 || slow < 1) throw UserError(label() + ": windows must be >= 1");
        if (window >= slow) throw UserError(label() + ": MACD requires fast < slow");
        break;
      case Kind::PVT:
      case Kind::TOP10:
        break;
    }
  }

  /// Days of history (including the current one) the indicator needs.
  std::size_t history() const {
    switch (kind) {
      case Kind::MA:
      case Kind::EMA:
      case Kind::DC:
      case Kind::BOLL: return static_cast<std::size_t>(window);
      case Kind::MACD: return static_cast<std::size_t>(slow);
      case Kind::PVT: return 2;
      case Kind::TOP10: return 10;
    }
    return 1;
  }

  Basis basis() const {
    switch (kind) {
      case Kind::MA:
      case Kind::EMA:
      case Kind::MACD: return Basis::Standardized;
      default: return Basis::Raw;
    }
  }

  std::string label() const {
    switch (kind) {
      case Kind::MA: return "MA(" + std::to_string(window) + ")";
      case Kind::EMA: return "EMA(" + std::to_string(window) + ")";
      case Kind::MACD: return "MACD(" + std::to_string(window) + "," + std::to_string(slow) + ")";
      case Kind::PVT: return "PVT";
      case Kind::TOP10: return "TOP10";
      case Kind::DC: return "DC(" + std::to_string(window) + ")";
      case Kind::BOLL: return "BOLL(" + std::to_string(window) + ")";
    }
    return "?";
  }

  friend bool operator==(const IndicatorSpec&, const IndicatorSpec&) = default;
};

inline IndicatorSpec ma(int n) { return {Kind::MA, n, 0}; }
inline IndicatorSpec ema(int n) { return {Kind::EMA, n, 0}; }
inline IndicatorSpec macd(int fast, int slow) { return {Kind::MACD, fast, slow}; }
inline IndicatorSpec pvt() { return {Kind::PVT, 0, 0}; }
inline IndicatorSpec top10() { return {Kind::TOP10, 0, 0}; }
inline IndicatorSpec dc(int n) { return {Kind::DC, n, 0}; }
inline IndicatorSpec boll(int n) { return {Kind::BOLL, n, 0}; }

/// Parses labels such as "MA(5)", "MACD(12,26)", "PVT".
inline IndicatorSpec parse_indicator(std::string_view text) {
  text = trim(text);
  const auto open = text.find('(');
  std::string name(trim(text.substr(0, open)));
  for (auto& c : name) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  std::vector<int> args;
  if (open != std::string_view::npos) {
    const auto close = text.rfind(')');
    if (close == std::string_view::npos || close < open) {
      throw UserError("malformed indicator '" + std::string(text) + "'");
    }
    for (auto part : split_view(text.substr(open + 1, close - open - 1), ',')) {
      auto v = parse_double(part);
      if (!v || *v != std::floor(*v)) {
        throw UserError("malformed indicator argument in '" + std::string(text) + "'");
      }
      args.push_back(static_cast<int>(*v));
    }
  }
  auto need = [&](std::size_t count) {
    if (args.size() != count) {
      throw UserError("indicator '" + std::string(text) + "' expects " + std::to_string(count) +
                      " argument(s)");
    }
  };
  IndicatorSpec spec;
  if (name == "MA") {
    need(1);
    spec = ma(args[0]);
  } else if (name == "EMA") {
    need(1);
    spec = ema(args[0]);
  } else if (name == "MACD") {
    need(2);
    spec = macd(args[0], args[1]);
  } else if (name == "PVT") {
    need(0);
    spec = pvt();
  } else if (name == "TOP10") {
    need(0);
    spec = top10();
  } else if (name == "DC") {
    need(1);
    spec = dc(args[0]);
  } else if (name == "BOLL") {
    need(1);
    spec = boll(args[0]);
  } else {
    throw UserError("unknown indicator '" + name + "'");
  }
  spec.validate();
  return spec;
}

using PriorCatalog = std::vector<IndicatorSpec>;

inline PriorCatalog default_catalog() {
  return {ma(5), ma(20), ema(12), ema(26), macd(12, 26), pvt(), top10(), dc(5), dc(15), boll(20)};
}

inline void validate_catalog(const PriorCatalog& catalog) {
  if (catalog.empty()) throw UserError("prior catalog is empty");
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    catalog[i].validate();
    for (std::size_t j = 0; j < i; ++j) {
      if (catalog[i] == catalog[j]) throw UserError("duplicate catalog entry " + catalog[i].label());
    }
  }
}

inline PriorCatalog parse_catalog(std::string_view text) {
  PriorCatalog out;
  std::size_t depth = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    const char c = i < text.size() ? text[i] : ',';
    if (c == '(') ++depth;
    if (c == ')' && depth > 0) --depth;
    if (c == ',' && depth == 0) {
      auto item = trim(text.substr(start, i - start));
      if (!item.empty()) out.push_back(parse_indicator(item));
      start = i + 1;
    }
  }
  validate_catalog(out);
  return out;
}

namespace detail {

inline double mean_of(const TickerSeries& t, Series s, std::size_t day, std::size_t n) {
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) sum += t.at(s, day - k);
  return sum / static_cast<double>(n);
}

inline double std_of(const TickerSeries& t, Series s, std::size_t day, std::size_t n) {
  const double m = mean_of(t, s, day, n);
  double ss = 0.0;
  for (std::size_t k = 0; k < n; ++k) ss += (t.at(s, day - k) - m) * (t.at(s, day - k) - m);
  return std::sqrt(ss / static_cast<double>(n));
}

/// Recursive EMA initialized at the ticker's first observation.
inline double ema_at(const TickerSeries& t, Series s, std::size_t day, int n) {
  const double alpha = 2.0 / (n + 1.0);
  double e = t.at(s, t.first_day);
  for (std::size_t d = t.first_day + 1; d <= day; ++d) e = alpha * t.at(s, d) + (1.0 - alpha) * e;
  return e;
}

inline double adjusted_ma(const TickerSeries& t, Series s, std::size_t day, std::size_t n) {
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t d = day - k;
    sum += t.at(s, d) * t.at(Series::AdjClose, d) / t.at(Series::Close, d);
  }
  return sum / static_cast<double>(n);
}

inline bool has_history(const TickerSeries& t, std::size_t day, std::size_t need) {
  return t.covers(day) && day + 1 >= t.first_day + need;
}

/// Mean MA10 of the top decile (at least one stock) of the cross-section.
inline double top_decile_ma10(const Panel& panel, std::size_t day) {
  std::vector<double> values;
  for (const auto& t : panel.tickers()) {
    if (has_history(t, day, 10)) values.push_back(mean_of(t, Series::Close, day, 10));
  }
  if (values.empty()) throw UserError("TOP10: no ticker has 10 days of history");
  std::sort(values.begin(), values.end(), std::greater<>());
  const std::size_t top =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.1 * values.size() - 1e-9)));
  double sum = 0.0;
  for (std::size_t i = 0; i < top; ++i) sum += values[i];
  return sum / static_cast<double>(top);
}

inline double evaluate(const IndicatorSpec& spec, const Panel& panel, const TickerSeries& t,
                       std::size_t day, std::optional<double> top_ma10) {
  switch (spec.kind) {
    case Kind::MA: return mean_of(t, Series::Close, day, static_cast<std::size_t>(spec.window));
    case Kind::EMA: return ema_at(t, Series::Close, day, spec.window);
    case Kind::MACD:
      return ema_at(t, Series::Close, day, spec.window) - ema_at(t, Series::Close, day, spec.slow);
    case Kind::PVT: {
      double v = 0.0;
      for (std::size_t d = t.first_day + 1; d <= day; ++d) {
        const double prev = t.at(Series::Close, d - 1);
        v += t.at(Series::Volume, d) * (t.at(Series::Close, d) - prev) / prev;
      }
      return v;
    }
    case Kind::TOP10: {
      const double denom = top_ma10 ? *top_ma10 : top_decile_ma10(panel, day);
      return mean_of(t, Series::Close, day, 10) / denom - 1.0;
    }
    case Kind::DC: {
      const auto n = static_cast<std::size_t>(spec.window);
      const double h = adjusted_ma(t, Series::High, day, n);
      const double l = adjusted_ma(t, Series::Low, day, n);
      return t.at(Series::AdjClose, day) / (0.5 * (h + l));
    }
    case Kind::BOLL: {
      const auto n = static_cast<std::size_t>(spec.window);
      const double lb = mean_of(t, Series::Close, day, n) - std_of(t, Series::Close, day, n);
      return lb / t.at(Series::Close, day);
    }
  }
  return std::numeric_limits<double>::quiet_NaN();
}

}  // namespace detail

/// Indicator value for one ticker on one day, computed on `panel` as given.
inline double compute_indicator(const IndicatorSpec& spec, const Panel& panel, std::size_t ticker,
                                std::size_t day) {
  spec.validate();
  const auto& t = panel.ticker(ticker);
  if (!detail::has_history(t, day, spec.history())) {
    throw UserError(spec.label() + ": insufficient history for " + t.ticker + " on day " +
                    std::to_string(day));
  }
  const double v = detail::evaluate(spec, panel, t, day, std::nullopt);
  if (!std::isfinite(v)) {
    throw UserError(spec.label() + ": non-finite value for " + t.ticker);
  }
  return v;
}

/// Values for the given tickers on `day`, NaN where history is insufficient.
inline std::vector<double> indicator_cross_section(const IndicatorSpec& spec, const Panel& panel,
                                                   std::size_t day,
                                                   std::span<const std::size_t> tickers) {
  spec.validate();
  std::optional<double> top;
  if (spec.kind == Kind::TOP10) top = detail::top_decile_ma10(panel, day);
  std::vector<double> out;
  out.reserve(tickers.size());
  for (std::size_t id : tickers) {
    const auto& t = panel.ticker(id);
    if (!detail::has_history(t, day, spec.history())) {
      out.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    out.push_back(detail::evaluate(spec, panel, t, day, top));
  }
  return out;
}

/// Tickers with enough history on `day`, paired with their values, in
/// panel ticker order (the same order day batches use).
inline std::pair<std::vector<std::size_t>, std::vector<double>> indicator_cross_section(
    const IndicatorSpec& spec, const Panel& panel, std::size_t day) {
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < panel.ticker_count(); ++i) {
    if (detail::has_history(panel.ticker(i), day, spec.history())) ids.push_back(i);
  }
  auto values = indicator_cross_section(spec, panel, day, ids);
  return {std::move(ids), std::move(values)};
}

/// Full (ticker, day) table, NaN where undefined. Recursive indicators are
/// swept once per ticker instead of being restarted for every day.
class IndicatorTable {
 public:
  IndicatorTable(const IndicatorSpec& spec, const Panel& panel) : spec_(spec) {
    spec.validate();
    const std::size_t need = spec.history();
    values_.resize(panel.ticker_count());
    for (std::size_t i = 0; i < panel.ticker_count(); ++i) {
      const auto& t = panel.ticker(i);
      auto& out = values_[i];
      out.assign(t.length(), std::numeric_limits<double>::quiet_NaN());
      if (spec.kind == Kind::EMA || spec.kind == Kind::MACD || spec.kind == Kind::PVT) {
        const double a_fast = 2.0 / (spec.window + 1.0);
        const double a_slow = 2.0 / (spec.slow + 1.0);
        double fast = t.at(Series::Close, t.first_day);
        double slow = fast;
        double pv = 0.0;
        for (std::size_t d = t.first_day; d < t.end_day(); ++d) {
          const double c = t.at(Series::Close, d);
          if (d > t.first_day) {
            fast = a_fast * c + (1.0 - a_fast) * fast;
            slow = a_slow * c + (1.0 - a_slow) * slow;
            const double prev = t.at(Series::Close, d - 1);
            pv += t.at(Series::Volume, d) * (c - prev) / prev;
          }
          if (!detail::has_history(t, d, need)) continue;
          double v = 0.0;
          if (spec.kind == Kind::EMA) v = fast;
          if (spec.kind == Kind::MACD) v = fast - slow;
          if (spec.kind == Kind::PVT) v = pv;
          out[d - t.first_day] = v;
        }
      } else if (spec.kind != Kind::TOP10) {
        for (std::size_t d = t.first_day; d < t.end_day(); ++d) {
          if (detail::has_history(t, d, need)) {
            out[d - t.first_day] = detail::evaluate(spec, panel, t, d, std::nullopt);
          }
        }
      }
    }
    if (spec.kind == Kind::TOP10) {
      for (std::size_t d = 0; d < panel.days(); ++d) {
        bool any = false;
        for (const auto& t : panel.tickers()) any = any || detail::has_history(t, d, 10);
        if (!any) continue;
        const double top = detail::top_decile_ma10(panel, d);
        for (std::size_t i = 0; i < panel.ticker_count(); ++i) {
          const auto& t = panel.ticker(i);
          if (detail::has_history(t, d, 10)) {
            values_[i][d - t.first_day] = detail::evaluate(spec, panel, t, d, top);
          }
        }
      }
    }
    first_day_.reserve(panel.ticker_count());
    for (const auto& t : panel.tickers()) first_day_.push_back(t.first_day);
  }

  const IndicatorSpec& spec() const { return spec_; }

  double at(std::size_t ticker, std::size_t day) const {
    const auto& v = values_.at(ticker);
    const std::size_t first = first_day_[ticker];
    if (day < first || day - first >= v.size()) return std::numeric_limits<double>::quiet_NaN();
    return v[day - first];
  }

  std::vector<double> cross_section(std::size_t day, std::span<const std::size_t> tickers) const {
    std::vector<double> out;
    out.reserve(tickers.size());
    for (std::size_t id : tickers) out.push_back(at(id, day));
    return out;
  }

 private:
  IndicatorSpec spec_;
  std::vector<std::vector<double>> values_;
  std::vector<std::size_t> first_day_;
};

/// Table evaluated on the panel matching the indicator's basis.
inline IndicatorTable table_for(const IndicatorSpec& spec, const market::Dataset& data) {
  return IndicatorTable(spec, spec.basis() == Basis::Raw ? data.raw() : data.scaled());
}

}  // namespace adnn::indicators
