#pragma once

#include "adnn/analysis.hpp"
#include "adnn/backtest.hpp"
#include "adnn/config.hpp"
#include "adnn/discovery.hpp"
#include "adnn/error.hpp"
#include "adnn/factor.hpp"
#include "adnn/format.hpp"
#include "adnn/gp.hpp"
#include "adnn/ic_objective.hpp"
#include "adnn/indicators.hpp"
#include "adnn/io.hpp"
#include "adnn/market_data.hpp"
#include "adnn/neural.hpp"
#include "adnn/pipeline.hpp"
#include "adnn/random.hpp"
#include "adnn/report.hpp"
#include "adnn/tensor.hpp"
