#pragma once

#include <functional>
#include <string>
#include <vector>

#include "adnn/market_data.hpp"

namespace adnn {

/// A cross-sectional signal: one value per stock of a day batch, in the
/// batch's ticker order. Trained networks, GP expressions, indicators and
/// the planted oracle are all adapted to this shape for evaluation.
struct Factor {
  std::string name;
  std::function<std::vector<double>(const market::DayBatch&)> evaluate;
};

using FactorPool = std::vector<Factor>;

struct NamedPool {
  std::string name;
  FactorPool factors;
};

}  // namespace adnn
