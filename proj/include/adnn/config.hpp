#pragma once

#include <cstdint>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "adnn/backtest.hpp"
#include "adnn/discovery.hpp"
#include "adnn/error.hpp"
#include "adnn/format.hpp"
#include "adnn/gp.hpp"
#include "adnn/indicators.hpp"
#include "adnn/market_data.hpp"
#include "adnn/neural.hpp"

namespace adnn::config {

struct DataConfig {
  /// CSV panel to read; empty means `<out>/panel.csv`.
  std::string path;
  market::SyntheticConfig synthetic;
  std::size_t window = 30;
  std::size_t holding = 5;
};

struct EvalConfig {
  bool diversity = true;
  std::size_t k = 3;
  /// GP expressions (best validation IC first) that form the GP pool.
  std::size_t gp_top = 10;
  /// GP expressions used to seed GP&ADNN models.
  std::size_t gp_seeds = 3;
};

struct BacktestConfig {
  backtest::StrategyConfig strategy;
  backtest::GbdtConfig gbdt;
  std::size_t keep = 50;
};

struct RunConfig {
  DataConfig data;
  market::SplitSpec split;
  discovery::MiningOptions mining;
  gp::GpConfig gp;
  indicators::PriorCatalog catalog = indicators::default_catalog();
  EvalConfig eval;
  BacktestConfig backtest;
  std::filesystem::path out = "out";
  std::uint64_t seed = 42;
  std::size_t workers = 1;

  std::filesystem::path panel_path() const {
    return data.path.empty() ? out / "panel.csv" : std::filesystem::path(data.path);
  }

  void validate() const {
    data.synthetic.validate();
    split.validate();
    if (data.window < 1) throw UserError("data.window must be >= 1");
    if (data.holding < 1) throw UserError("data.holding must be >= 1");
    mining.mlp.validate();
    mining.schedule.validate();
    mining.kernel.validate();
    if (!(mining.prune_rate >= 0.0 && mining.prune_rate < 1.0)) throw UserError("prune.rate must be in [0, 1)");
    gp.validate();
    indicators::validate_catalog(catalog);
    if (eval.k < 1) throw UserError("eval.k must be >= 1");
    backtest.strategy.validate();
    backtest.gbdt.validate();
    if (backtest.strategy.holding != data.holding) throw UserError("strategy holding must equal data.holding");
    if (workers < 1) throw UserError("workers must be >= 1");
  }
};

namespace detail {

using boost::property_tree::ptree;

class Reader {
 public:
  explicit Reader(const ptree& tree) : tree_(tree) {}

  template <typename T>
  void get(const std::string& section, const std::string& key, T& out) {
    known_[section].insert(key);
    const auto sec = tree_.get_child_optional(section);
    if (!sec) return;
    const auto v = sec->get_optional<std::string>(key);
    if (!v) return;
    const std::string text(trim(*v));
    const std::string where = section + "." + key;
    if constexpr (std::is_same_v<T, std::string>) {
      out = text;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (text == "true" || text == "1" || text == "yes") {
        out = true;
      } else if (text == "false" || text == "0" || text == "no") {
        out = false;
      } else {
        throw UserError(where + ": expected a boolean, got '" + text + "'");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      const auto d = parse_double(text);
      if (!d) throw UserError(where + ": expected a number, got '" + text + "'");
      out = *d;
    } else {
      static_assert(std::is_integral_v<T>);
      const auto d = parse_double(text);
      if (!d || *d < 0 || *d != std::floor(*d) || *d > 1.8e19) {
        throw UserError(where + ": expected a non-negative integer, got '" + text + "'");
      }
      if (text.find_first_not_of("0123456789") == std::string::npos) {
        out = static_cast<T>(std::stoull(text));
      } else {
        out = static_cast<T>(*d);
      }
    }
  }

  /// Rejects sections and keys that no `get` asked for.
  void reject_unknown() const {
    for (const auto& [section, body] : tree_) {
      const auto it = known_.find(section);
      if (it == known_.end()) throw UserError("unknown config section [" + section + "]");
      for (const auto& [key, _] : body) {
        if (!it->second.count(key)) throw UserError("unknown config key " + section + "." + key);
      }
    }
  }

 private:
  const ptree& tree_;
  std::map<std::string, std::set<std::string>> known_;
};

}  // namespace detail

/// Parses INI text. Missing keys keep their defaults; unknown keys are errors.
inline RunConfig parse_config(const std::string& text) {
  detail::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw UserError("config: " + e.message() + " at line " + std::to_string(e.line()));
  }
  RunConfig c;
  detail::Reader r(tree);

  std::string out = c.out.string();
  r.get("run", "seed", c.seed);
  r.get("run", "out", out);
  r.get("run", "workers", c.workers);
  c.out = out;

  r.get("data", "path", c.data.path);
  r.get("data", "tickers", c.data.synthetic.tickers);
  r.get("data", "days", c.data.synthetic.days);
  r.get("data", "signal_strength", c.data.synthetic.signal_strength);
  r.get("data", "start_date", c.data.synthetic.start_date);
  r.get("data", "window", c.data.window);
  r.get("data", "holding", c.data.holding);

  r.get("split", "train_days", c.split.train_days);
  r.get("split", "val_days", c.split.val_days);
  r.get("split", "test_days", c.split.test_days);

  auto& mlp = c.mining.mlp;
  std::string activation = nn::activation_name(mlp.activation);
  r.get("mlp", "layers", mlp.layer_count);
  r.get("mlp", "width", mlp.width);
  r.get("mlp", "activation", activation);
  r.get("mlp", "dropout", mlp.dropout_rate);
  r.get("mlp", "l2", mlp.l2_coeff);
  mlp.activation = nn::parse_activation(activation);

  auto& s = c.mining.schedule;
  r.get("schedule", "pretrain_epochs", s.pretrain_epochs);
  r.get("schedule", "pretrain_batch", s.pretrain_batch);
  r.get("schedule", "pretrain_lr", s.pretrain_lr);
  r.get("schedule", "holdout_fraction", s.holdout_fraction);
  r.get("schedule", "finetune_steps", s.finetune_steps);
  r.get("schedule", "days_per_step", s.days_per_step);
  r.get("schedule", "finetune_lr", s.finetune_lr);
  r.get("schedule", "patience", s.patience);
  r.get("schedule", "eval_every", s.eval_every);

  r.get("prune", "rate", c.mining.prune_rate);
  r.get("kernel", "steepness", c.mining.kernel.steepness);

  r.get("gp", "population", c.gp.population);
  r.get("gp", "generations", c.gp.generations);
  r.get("gp", "tournament", c.gp.tournament);
  r.get("gp", "crossover", c.gp.crossover_prob);
  r.get("gp", "mutation", c.gp.mutation_prob);
  r.get("gp", "elitism", c.gp.elitism);
  r.get("gp", "max_depth", c.gp.max_depth);
  r.get("gp", "fitness_days", c.gp.fitness_days);

  std::string catalog;
  r.get("catalog", "indicators", catalog);
  if (!catalog.empty()) c.catalog = indicators::parse_catalog(catalog);

  r.get("eval", "diversity", c.eval.diversity);
  r.get("eval", "k", c.eval.k);
  r.get("eval", "gp_top", c.eval.gp_top);
  r.get("eval", "gp_seeds", c.eval.gp_seeds);

  auto& st = c.backtest;
  r.get("strategy", "long_fraction", st.strategy.long_fraction);
  r.get("strategy", "commission", st.strategy.commission);
  r.get("strategy", "keep", st.keep);
  r.get("strategy", "rounds", st.gbdt.rounds);
  r.get("strategy", "depth", st.gbdt.max_depth);
  r.get("strategy", "learning_rate", st.gbdt.learning_rate);
  st.strategy.holding = c.data.holding;

  r.reject_unknown();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace adnn::config
