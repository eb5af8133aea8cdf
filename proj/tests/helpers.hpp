#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

#include "adnn/adnn.hpp"

namespace testing_helpers {

using adnn::market::Bar;
using adnn::market::Panel;

inline std::string date_of(std::size_t d) {
  // 2020-01-01 plus d days, fine for d < 28 * 12
  const auto two = [](std::size_t v) { return (v < 10 ? "0" : "") + std::to_string(v); };
  return "2020-" + two(d / 28 + 1) + "-" + two(d % 28 + 1);
}

/// One ticker per close series; OHLC collapse onto the close, volume 1000.
inline Panel panel_from_closes(const std::vector<std::vector<double>>& closes) {
  std::vector<Bar> bars;
  for (std::size_t i = 0; i < closes.size(); ++i) {
    for (std::size_t d = 0; d < closes[i].size(); ++d) {
      const double c = closes[i][d];
      bars.push_back({date_of(d), "T" + std::to_string(10 + i), c, c, c, c, c, 1000.0});
    }
  }
  return Panel::from_bars(bars);
}

inline adnn::market::Panel small_synthetic(std::size_t tickers = 30, std::size_t days = 320,
                                           double rho = 0.3, std::uint64_t seed = 7) {
  adnn::market::SyntheticConfig c;
  c.tickers = tickers;
  c.days = days;
  c.signal_strength = rho;
  c.seed = seed;
  return adnn::market::generate_synthetic(c);
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("adnn_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace testing_helpers
