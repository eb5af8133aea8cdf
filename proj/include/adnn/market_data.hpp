#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "adnn/error.hpp"
#include "adnn/format.hpp"
#include "adnn/random.hpp"
#include "adnn/tensor.hpp"

namespace adnn::market {

/// Column order inside a TickerSeries.
enum class Series : std::size_t { Open = 0, High, Low, Close, AdjClose, Volume };
inline constexpr std::size_t kSeriesCount = 6;

/// The five raw series fed to feature extractors, in tensor order.
inline constexpr std::array<Series, 5> kInputSeries = {Series::Open, Series::High, Series::Low,
                                                       Series::Close, Series::Volume};
inline constexpr std::size_t kInputSeriesCount = kInputSeries.size();

inline constexpr double kStdFloor = 1e-8;

using WarningSink = std::function<void(const std::string&)>;

struct Bar {
  std::string date;
  std::string ticker;
  double open = 0.0;
  double high = 0.0;
  double low = 0.0;
  double close = 0.0;
  double adj_close = 0.0;
  double volume = 0.0;

  /// Empty string when the bar satisfies its invariants, otherwise the reason.
  std::string violation() const {
    for (double v : {open, high, low, close, adj_close, volume}) {
      if (!std::isfinite(v)) return "non-finite field";
    }
    if (open <= 0 || high <= 0 || low <= 0 || close <= 0) return "non-positive price";
    if (adj_close <= 0) return "adj_close must be > 0";
    if (volume < 0) return "volume must be >= 0";
    if (low > high) return "low > high";
    if (open < low || open > high) return "open outside [low, high]";
    if (close < low || close > high) return "close outside [low, high]";
    return {};
  }
};

/// One ticker's series over a contiguous run of calendar days.
struct TickerSeries {
  std::string ticker;
  std::size_t first_day = 0;
  std::array<std::vector<double>, kSeriesCount> values;
  /// False when standardization had no train-range data for this ticker.
  bool usable = true;

  std::size_t length() const { return values[0].size(); }
  std::size_t end_day() const { return first_day + length(); }
  bool covers(std::size_t day) const { return day >= first_day && day < end_day(); }
  bool covers(std::size_t begin, std::size_t end) const {
    return begin >= first_day && end <= end_day() && begin <= end;
  }
  double at(Series s, std::size_t day) const {
    return values[static_cast<std::size_t>(s)][day - first_day];
  }
  std::span<const double> series(Series s) const { return values[static_cast<std::size_t>(s)]; }
};

/// Aligned daily panel. Immutable once built; standardized panels carry the
/// same layout with z-scored values.
class Panel {
 public:
  Panel() = default;
  Panel(std::vector<std::string> calendar, std::vector<TickerSeries> tickers,
        bool standardized = false)
      : calendar_(std::move(calendar)), tickers_(std::move(tickers)),
        standardized_(standardized) {
    for (std::size_t i = 1; i < calendar_.size(); ++i) {
      if (!(calendar_[i - 1] < calendar_[i])) throw Error("calendar must be strictly increasing");
    }
    for (const auto& t : tickers_) {
      for (const auto& v : t.values) {
        if (v.size() != t.length()) throw Error("ragged series for " + t.ticker);
      }
      if (t.end_day() > calendar_.size()) throw Error("series exceeds calendar: " + t.ticker);
    }
    index_.reserve(tickers_.size());
    for (std::size_t i = 0; i < tickers_.size(); ++i) index_.emplace(tickers_[i].ticker, i);
  }

  /// Validates bars and aligns them onto the calendar formed by their dates.
  /// Tickers whose dates have gaps are dropped and reported to `warn`.
  static Panel from_bars(std::vector<Bar> bars, const WarningSink& warn = {}) {
    if (bars.empty()) throw UserError("no rows");
    std::map<std::string, std::vector<Bar>> by_ticker;
    for (auto& b : bars) by_ticker[b.ticker].push_back(std::move(b));

    for (auto& [ticker, rows] : by_ticker) {
      std::sort(rows.begin(), rows.end(),
                [](const Bar& a, const Bar& b) { return a.date < b.date; });
      for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].date == rows[i - 1].date) {
          throw UserError("duplicate (ticker, date): (" + ticker + ", " + rows[i].date + ")");
        }
      }
    }

    auto build_calendar = [&]() {
      std::vector<std::string> cal;
      for (const auto& [ticker, rows] : by_ticker) {
        for (const auto& r : rows) cal.push_back(r.date);
      }
      std::sort(cal.begin(), cal.end());
      cal.erase(std::unique(cal.begin(), cal.end()), cal.end());
      return cal;
    };

    std::vector<std::string> calendar = build_calendar();
    std::unordered_map<std::string, std::size_t> day_of;
    for (std::size_t i = 0; i < calendar.size(); ++i) day_of.emplace(calendar[i], i);

    bool dropped = false;
    for (auto it = by_ticker.begin(); it != by_ticker.end();) {
      const auto& rows = it->second;
      const std::size_t first = day_of.at(rows.front().date);
      bool contiguous = true;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (day_of.at(rows[i].date) != first + i) {
          contiguous = false;
          break;
        }
      }
      if (!contiguous) {
        if (warn) warn("dropping ticker " + it->first + ": dates are not contiguous on the calendar");
        it = by_ticker.erase(it);
        dropped = true;
      } else {
        ++it;
      }
    }
    if (by_ticker.empty()) throw UserError("no rows: every ticker was dropped");
    if (dropped) {
      calendar = build_calendar();
      day_of.clear();
      for (std::size_t i = 0; i < calendar.size(); ++i) day_of.emplace(calendar[i], i);
    }

    std::vector<TickerSeries> series;
    series.reserve(by_ticker.size());
    for (const auto& [ticker, rows] : by_ticker) {
      TickerSeries ts;
      ts.ticker = ticker;
      ts.first_day = day_of.at(rows.front().date);
      for (auto& v : ts.values) v.reserve(rows.size());
      for (const auto& r : rows) {
        ts.values[0].push_back(r.open);
        ts.values[1].push_back(r.high);
        ts.values[2].push_back(r.low);
        ts.values[3].push_back(r.close);
        ts.values[4].push_back(r.adj_close);
        ts.values[5].push_back(r.volume);
      }
      series.push_back(std::move(ts));
    }
    return Panel(std::move(calendar), std::move(series));
  }

  const std::vector<std::string>& calendar() const { return calendar_; }
  std::size_t days() const { return calendar_.size(); }
  const std::vector<TickerSeries>& tickers() const { return tickers_; }
  std::size_t ticker_count() const { return tickers_.size(); }
  const TickerSeries& ticker(std::size_t i) const { return tickers_.at(i); }
  bool standardized() const { return standardized_; }

  std::optional<std::size_t> ticker_index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<std::size_t> day_index(const std::string& date) const {
    auto it = std::lower_bound(calendar_.begin(), calendar_.end(), date);
    if (it == calendar_.end() || *it != date) return std::nullopt;
    return static_cast<std::size_t>(it - calendar_.begin());
  }

  std::size_t bar_count() const {
    std::size_t n = 0;
    for (const auto& t : tickers_) n += t.length();
    return n;
  }

  /// Keeps only calendar days [0, end).
  Panel truncated(std::size_t end) const {
    end = std::min(end, calendar_.size());
    std::vector<std::string> cal(calendar_.begin(), calendar_.begin() + static_cast<long>(end));
    std::vector<TickerSeries> out;
    for (const auto& t : tickers_) {
      if (t.first_day >= end) continue;
      TickerSeries c = t;
      const std::size_t keep = std::min(t.end_day(), end) - t.first_day;
      for (auto& v : c.values) v.resize(keep);
      out.push_back(std::move(c));
    }
    return Panel(std::move(cal), std::move(out), standardized_);
  }

  friend bool operator==(const Panel& a, const Panel& b) {
    if (a.calendar_ != b.calendar_ || a.tickers_.size() != b.tickers_.size()) return false;
    for (std::size_t i = 0; i < a.tickers_.size(); ++i) {
      const auto& x = a.tickers_[i];
      const auto& y = b.tickers_[i];
      if (x.ticker != y.ticker || x.first_day != y.first_day || x.values != y.values ||
          x.usable != y.usable) {
        return false;
      }
    }
    return a.standardized_ == b.standardized_;
  }

 private:
  std::vector<std::string> calendar_;
  std::vector<TickerSeries> tickers_;
  std::unordered_map<std::string, std::size_t> index_;
  bool standardized_ = false;
};

namespace detail {

inline bool is_iso_date(std::string_view s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
  for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u}) {
    if (s[i] < '0' || s[i] > '9') return false;
  }
  const int month = (s[5] - '0') * 10 + (s[6] - '0');
  const int day = (s[8] - '0') * 10 + (s[9] - '0');
  return month >= 1 && month <= 12 && day >= 1 && day <= 31;
}

}  // namespace detail

inline constexpr std::string_view kCsvHeader = "date,ticker,open,high,low,close,adj_close,volume";

inline Panel parse_panel_csv(std::istream& in, const WarningSink& warn = {}) {
  std::string line;
  std::size_t row = 0;
  bool have_header = false;
  std::vector<Bar> bars;
  while (std::getline(in, line)) {
    ++row;
    if (row == 1 && line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) {
      line.erase(0, 3);  // UTF-8 BOM
    }
    if (trim(line).empty()) continue;
    if (!have_header) {
      std::string header;
      for (auto f : split_view(line, ',')) {
        if (!header.empty()) header += ',';
        header += f;
      }
      if (header != kCsvHeader) {
        throw UserError("row " + std::to_string(row) + ": expected header '" +
                        std::string(kCsvHeader) + "'");
      }
      have_header = true;
      continue;
    }
    const auto fields = split_view(line, ',');
    const std::string where = "row " + std::to_string(row);
    if (fields.size() != 8) {
      throw UserError(where + ": expected 8 fields, got " + std::to_string(fields.size()));
    }
    Bar b;
    b.date = std::string(fields[0]);
    b.ticker = std::string(fields[1]);
    if (!detail::is_iso_date(b.date)) throw UserError(where + ": malformed date '" + b.date + "'");
    if (b.ticker.empty()) throw UserError(where + ": empty ticker");
    double* targets[] = {&b.open, &b.high, &b.low, &b.close, &b.adj_close, &b.volume};
    for (std::size_t i = 0; i < 6; ++i) {
      auto v = parse_double(fields[i + 2]);
      if (!v) {
        throw UserError(where + ": malformed number '" + std::string(fields[i + 2]) + "'");
      }
      *targets[i] = *v;
    }
    if (auto why = b.violation(); !why.empty()) throw UserError(where + ": " + why);
    bars.push_back(std::move(b));
  }
  if (bars.empty()) throw UserError("no rows");
  return Panel::from_bars(std::move(bars), warn);
}

inline Panel load_panel(const std::filesystem::path& path, const WarningSink& warn = {}) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open panel file: " + path.string());
  return parse_panel_csv(in, warn);
}

/// Writes the panel in the input CSV format, date-major then ticker order.
/// Values use shortest round-trip formatting, so reloading is bit-exact.
inline void write_panel_csv(const Panel& panel, std::ostream& out) {
  out << kCsvHeader << '\n';
  for (std::size_t d = 0; d < panel.days(); ++d) {
    for (const auto& t : panel.tickers()) {
      if (!t.covers(d)) continue;
      out << panel.calendar()[d] << ',' << t.ticker;
      for (std::size_t s = 0; s < kSeriesCount; ++s) {
        out << ',' << format_exact(t.values[s][d - t.first_day]);
      }
      out << '\n';
    }
  }
}

inline void write_panel_csv(const Panel& panel, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw UserError("cannot write " + path.string());
  write_panel_csv(panel, out);
  if (!out) throw UserError("write failed: " + path.string());
}

/// close_{t+a} / close_t - 1 on adjusted closes.
inline double forward_return(const Panel& panel, std::size_t ticker, std::size_t day,
                             std::size_t holding) {
  const auto& t = panel.ticker(ticker);
  if (!t.covers(day)) throw UserError("day outside ticker range: " + t.ticker);
  if (!t.covers(day + holding)) throw UserError("insufficient future data for " + t.ticker);
  const double now = t.at(Series::AdjClose, day);
  if (!(now > 0)) throw UserError("non-positive close for " + t.ticker);
  return t.at(Series::AdjClose, day + holding) / now - 1.0;
}

/// Half-open range of calendar day indices.
struct DayRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end > begin ? end - begin : 0; }
  bool empty() const { return size() == 0; }
  bool contains(std::size_t d) const { return d >= begin && d < end; }
  friend bool operator==(const DayRange&, const DayRange&) = default;
};

/// Per-ticker, per-series z-scoring with statistics taken from `train` only.
inline Panel standardize(const Panel& panel, DayRange train) {
  if (train.empty()) throw UserError("standardize: empty train range");
  std::vector<TickerSeries> out = panel.tickers();
  for (auto& t : out) {
    const std::size_t lo = std::max(train.begin, t.first_day);
    const std::size_t hi = std::min(train.end, t.end_day());
    if (lo >= hi) {
      t.usable = false;
      continue;
    }
    for (auto& v : t.values) {
      const auto first = v.begin() + static_cast<long>(lo - t.first_day);
      const auto last = v.begin() + static_cast<long>(hi - t.first_day);
      const double count = static_cast<double>(hi - lo);
      const double mean = std::accumulate(first, last, 0.0) / count;
      double ss = 0.0;
      for (auto it = first; it != last; ++it) ss += (*it - mean) * (*it - mean);
      const double sd = std::max(std::sqrt(ss / count), kStdFloor);
      for (double& x : v) x = (x - mean) / sd;
    }
  }
  return Panel(panel.calendar(), std::move(out), true);
}

struct SplitSpec {
  std::size_t train_days = 250;
  std::size_t val_days = 30;
  std::size_t test_days = 90;

  void validate() const {
    if (train_days < 1 || val_days < 1 || test_days < 1) {
      throw UserError("split counts must all be >= 1");
    }
  }
  std::size_t total() const { return train_days + val_days + test_days; }
};

struct SplitRanges {
  DayRange train;
  DayRange val;
  DayRange test;
};

/// Consecutive train/val/test ranges starting at day 0.
inline SplitRanges split(const Panel& panel, const SplitSpec& spec) {
  spec.validate();
  if (spec.total() > panel.days()) {
    throw UserError("calendar too short: need " + std::to_string(spec.total()) + " days, have " +
                    std::to_string(panel.days()));
  }
  SplitRanges r;
  r.train = {0, spec.train_days};
  r.val = {r.train.end, r.train.end + spec.val_days};
  r.test = {r.val.end, r.val.end + spec.test_days};
  return r;
}

/// One trading day's cross-section: standardized windows plus forward returns.
struct DayBatch {
  std::size_t day = 0;
  std::string date;
  std::vector<std::size_t> ticker_ids;
  std::vector<std::string> tickers;
  /// (m, 5, n): series-major, oldest day first within each series.
  nn::Tensor inputs;
  std::vector<double> forward_returns;

  std::size_t size() const { return ticker_ids.size(); }
  std::size_t window() const { return inputs.rank() == 3 ? inputs.dim(2) : 0; }
  /// Flattened (m, 5n) view for feature extractors.
  nn::Matrix flat_inputs() const { return inputs.as_matrix(); }
  /// Value of input series `s` for stock `i`, `lag` days before the batch day.
  double value(std::size_t i, std::size_t s, std::size_t lag) const {
    return inputs(i, s, window() - 1 - lag);
  }
};

/// Tickers usable on `day`: full window in both panels, `holding` future days
/// before `horizon_end`.
inline std::vector<std::size_t> eligible_tickers(const Panel& raw, const Panel& scaled,
                                                 std::size_t day, std::size_t window,
                                                 std::size_t holding, std::size_t horizon_end) {
  std::vector<std::size_t> out;
  if (day + 1 < window || day + holding >= horizon_end) return out;
  const std::size_t begin = day + 1 - window;
  for (std::size_t i = 0; i < raw.ticker_count(); ++i) {
    const auto& r = raw.ticker(i);
    const auto& s = scaled.ticker(i);
    if (!s.usable) continue;
    if (!r.covers(begin, day + holding + 1) || !s.covers(begin, day + 1)) continue;
    out.push_back(i);
  }
  return out;
}

inline DayBatch day_batch(const Panel& raw, const Panel& scaled, std::size_t day,
                          std::size_t window, std::size_t holding, std::size_t horizon_end) {
  if (raw.ticker_count() != scaled.ticker_count()) {
    throw Error("raw and standardized panels disagree on tickers");
  }
  if (window < 1) throw UserError("window length must be >= 1");
  if (day >= raw.days()) throw UserError("day outside calendar");
  auto ids = eligible_tickers(raw, scaled, day, window, holding, horizon_end);
  if (ids.size() < 2) {
    throw DegenerateCrossSection("degenerate cross-section on " + raw.calendar()[day] + ": " +
                                 std::to_string(ids.size()) + " eligible tickers");
  }
  DayBatch b;
  b.day = day;
  b.date = raw.calendar()[day];
  b.ticker_ids = ids;
  b.inputs = nn::Tensor({ids.size(), kInputSeriesCount, window});
  b.forward_returns.reserve(ids.size());
  const std::size_t begin = day + 1 - window;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& s = scaled.ticker(ids[i]);
    b.tickers.push_back(s.ticker);
    for (std::size_t k = 0; k < kInputSeriesCount; ++k) {
      for (std::size_t j = 0; j < window; ++j) {
        b.inputs(i, k, j) = s.at(kInputSeries[k], begin + j);
      }
    }
    b.forward_returns.push_back(forward_return(raw, ids[i], day, holding));
  }
  return b;
}

/// The reversal signal planted by the synthetic generator: minus the
/// trailing `lookback`-day return on adjusted closes.
inline std::vector<double> planted_signal(const Panel& raw, std::size_t day,
                                          std::span<const std::size_t> ticker_ids,
                                          std::size_t lookback = 5) {
  std::vector<double> out;
  out.reserve(ticker_ids.size());
  for (std::size_t id : ticker_ids) {
    const auto& t = raw.ticker(id);
    if (day < lookback || !t.covers(day - lookback, day + 1)) {
      throw UserError("planted signal needs " + std::to_string(lookback) + " days of history");
    }
    out.push_back(-(t.at(Series::AdjClose, day) / t.at(Series::AdjClose, day - lookback) - 1.0));
  }
  return out;
}

struct SyntheticConfig {
  std::size_t tickers = 50;
  std::size_t days = 400;
  /// Loading of each day's shock on the standardized reversal signal.
  double signal_strength = 0.3;
  std::uint64_t seed = 7;
  std::string start_date = "2016-01-04";

  void validate() const {
    if (tickers < 20) throw UserError("synthetic panel needs >= 20 tickers");
    if (days < 320) throw UserError("synthetic panel needs >= 320 days");
    if (!(signal_strength >= 0.0 && signal_strength < 1.0)) {
      throw UserError("signal_strength must be in [0, 1)");
    }
    if (!detail::is_iso_date(start_date)) throw UserError("start_date must be YYYY-MM-DD");
  }
};

namespace detail {

inline std::vector<std::string> business_days(const std::string& start, std::size_t count) {
  using namespace std::chrono;
  const int y = std::stoi(start.substr(0, 4));
  const unsigned m = static_cast<unsigned>(std::stoi(start.substr(5, 2)));
  const unsigned d = static_cast<unsigned>(std::stoi(start.substr(8, 2)));
  sys_days day{year{y} / month{m} / std::chrono::day{d}};
  std::vector<std::string> out;
  out.reserve(count);
  while (out.size() < count) {
    const weekday wd{day};
    if (wd != Saturday && wd != Sunday) {
      const year_month_day ymd{day};
      char buf[16];
      std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                    static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
      out.emplace_back(buf);
    }
    day += std::chrono::days{1};
  }
  return out;
}

}  // namespace detail

/// Geometric random walks with a planted cross-sectional reversal alpha.
///
/// Each stock's daily log return is beta_i * market_t + sigma_i * u_it with
///   u_it = rho * zhat_i,t-1 + sqrt(1 - rho^2) * eps_it,
/// where zhat is the cross-sectionally standardized minus-trailing-5-day
/// return. The forward 5-day return therefore loads on the planted signal
/// with strength growing in rho; rho = 0 gives a pure random walk.
inline Panel generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  constexpr std::size_t kLookback = 5;
  const std::size_t n = cfg.tickers;
  const std::size_t days = cfg.days;
  Rng rng(cfg.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<double> sigma(n), beta(n), base_volume(n), start(n);
  for (std::size_t i = 0; i < n; ++i) {
    sigma[i] = 0.015 + 0.015 * unif(rng);
    beta[i] = 0.8 + 0.4 * unif(rng);
    base_volume[i] = std::exp(std::log(1e5) + (std::log(5e6) - std::log(1e5)) * unif(rng));
    start[i] = 10.0 + 90.0 * unif(rng);
  }

  std::vector<std::vector<double>> close(n, std::vector<double>(days));
  std::vector<std::vector<double>> ret(n, std::vector<double>(days, 0.0));
  for (std::size_t i = 0; i < n; ++i) close[i][0] = start[i];
  const double noise_scale = std::sqrt(1.0 - cfg.signal_strength * cfg.signal_strength);
  std::vector<double> zhat(n);
  for (std::size_t t = 1; t < days; ++t) {
    std::fill(zhat.begin(), zhat.end(), 0.0);
    if (t - 1 >= kLookback) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        zhat[i] = -(close[i][t - 1] / close[i][t - 1 - kLookback] - 1.0);
        mean += zhat[i];
      }
      mean /= static_cast<double>(n);
      double ss = 0.0;
      for (double z : zhat) ss += (z - mean) * (z - mean);
      const double sd = std::sqrt(ss / static_cast<double>(n));
      for (double& z : zhat) z = sd > 1e-12 ? (z - mean) / sd : 0.0;
    }
    const double market = 0.01 * normal(rng);
    for (std::size_t i = 0; i < n; ++i) {
      const double u = cfg.signal_strength * zhat[i] + noise_scale * normal(rng);
      ret[i][t] = beta[i] * market + sigma[i] * u;
      close[i][t] = close[i][t - 1] * std::exp(ret[i][t]);
    }
  }

  auto calendar = detail::business_days(cfg.start_date, days);
  std::vector<TickerSeries> series(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& ts = series[i];
    char name[32];
    std::snprintf(name, sizeof name, "SYN%03zu", i);
    ts.ticker = name;
    ts.first_day = 0;
    for (auto& v : ts.values) v.resize(days);
    for (std::size_t t = 0; t < days; ++t) {
      const double prev = t == 0 ? close[i][0] : close[i][t - 1];
      const double c = close[i][t];
      const double o = prev * std::exp(0.25 * sigma[i] * normal(rng));
      const double h = std::max(o, c) * std::exp(0.5 * sigma[i] * std::abs(normal(rng)));
      const double l = std::min(o, c) * std::exp(-0.5 * sigma[i] * std::abs(normal(rng)));
      const double vol = std::round(base_volume[i] *
                                    std::exp(0.25 * normal(rng) + 3.0 * std::abs(ret[i][t])));
      ts.values[0][t] = o;
      ts.values[1][t] = h;
      ts.values[2][t] = l;
      ts.values[3][t] = c;
      ts.values[4][t] = c;
      ts.values[5][t] = vol;
    }
  }
  return Panel(std::move(calendar), std::move(series));
}

enum class Segment { Train, Validation, Test };

inline const char* segment_name(Segment s) {
  switch (s) {
    case Segment::Train: return "train";
    case Segment::Validation: return "val";
    case Segment::Test: return "test";
  }
  return "?";
}

/// Raw and train-standardized panels with their split. Batches are scoped to
/// a segment: train and validation forward returns never look past their own
/// segment's end, so nothing fitted on them sees later prices.
class Dataset {
 public:
  Dataset(Panel raw, const SplitSpec& spec, std::size_t window = 30, std::size_t holding = 5)
      : raw_(std::move(raw)), split_(split(raw_, spec)), window_(window), holding_(holding) {
    if (window_ < 1) throw UserError("window length must be >= 1");
    if (holding_ < 1) throw UserError("holding period must be >= 1");
    scaled_ = standardize(raw_, split_.train);
  }

  const Panel& raw() const { return raw_; }
  const Panel& scaled() const { return scaled_; }
  const SplitRanges& ranges() const { return split_; }
  std::size_t window() const { return window_; }
  std::size_t holding() const { return holding_; }

  DayRange range(Segment s) const {
    switch (s) {
      case Segment::Train: return split_.train;
      case Segment::Validation: return split_.val;
      case Segment::Test: return split_.test;
    }
    return {};
  }

  /// Exclusive bound on the last day a segment's forward returns may read.
  std::size_t horizon_end(Segment s) const {
    switch (s) {
      case Segment::Train: return split_.train.end;
      case Segment::Validation: return split_.val.end;
      case Segment::Test: return raw_.days();
    }
    return 0;
  }

  /// Days in the segment with at least two eligible tickers.
  std::vector<std::size_t> days(Segment s) const {
    std::vector<std::size_t> out;
    const auto r = range(s);
    for (std::size_t d = r.begin; d < r.end; ++d) {
      if (eligible_tickers(raw_, scaled_, d, window_, holding_, horizon_end(s)).size() >= 2) {
        out.push_back(d);
      }
    }
    return out;
  }

  DayBatch batch(Segment s, std::size_t day) const {
    if (!range(s).contains(day)) {
      throw UserError("day " + std::to_string(day) + " outside " + segment_name(s) + " range");
    }
    return day_batch(raw_, scaled_, day, window_, holding_, horizon_end(s));
  }

  std::vector<DayBatch> batches(Segment s) const {
    std::vector<DayBatch> out;
    for (std::size_t d : days(s)) out.push_back(batch(s, d));
    return out;
  }

 private:
  Panel raw_;
  Panel scaled_;
  SplitRanges split_;
  std::size_t window_;
  std::size_t holding_;
};

}  // namespace adnn::market
