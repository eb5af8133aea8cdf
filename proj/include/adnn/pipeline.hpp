#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adnn/analysis.hpp"
#include "adnn/backtest.hpp"
#include "adnn/config.hpp"
#include "adnn/discovery.hpp"
#include "adnn/error.hpp"
#include "adnn/factor.hpp"
#include "adnn/gp.hpp"
#include "adnn/indicators.hpp"
#include "adnn/io.hpp"
#include "adnn/market_data.hpp"
#include "adnn/random.hpp"
#include "adnn/report.hpp"

namespace adnn::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using config::RunConfig;

/// Structured log lines on a stream (stderr by default).
class Logger {
 public:
  explicit Logger(std::ostream* os = &std::cerr) : os_(os) {}

  void operator()(const std::string& level, const std::string& event, json fields = json::object()) const {
    if (!os_) return;
    json line = {{"level", level}, {"event", event}};
    for (auto& [k, v] : fields.items()) line[k] = v;
    *os_ << line.dump() << std::endl;
  }
  void info(const std::string& event, json fields = json::object()) const { (*this)("info", event, std::move(fields)); }
  void warn(const std::string& event, json fields = json::object()) const { (*this)("warn", event, std::move(fields)); }

 private:
  std::ostream* os_;
};

enum class MineMethod { Adnn, Gp, Both };
enum class PoolChoice { Pk, New, GpPk, Combined, All };

inline MineMethod parse_method(const std::string& s) {
  if (s == "adnn") return MineMethod::Adnn;
  if (s == "gp") return MineMethod::Gp;
  if (s == "both") return MineMethod::Both;
  throw UserError("unknown mine method '" + s + "' (adnn | gp | both)");
}

inline PoolChoice parse_pool(const std::string& s) {
  if (s == "pk") return PoolChoice::Pk;
  if (s == "new") return PoolChoice::New;
  if (s == "gp_pk") return PoolChoice::GpPk;
  if (s == "combined") return PoolChoice::Combined;
  if (s == "all") return PoolChoice::All;
  throw UserError("unknown pool '" + s + "' (pk | new | gp_pk | combined | all)");
}

// Output layout under the run directory.
inline fs::path manifest_path(const RunConfig& c, const std::string& kind) {
  return c.out / "manifests" / (kind + ".jsonl");
}
inline fs::path reports_dir(const RunConfig& c) { return c.out / "reports"; }

// Seed streams.
inline std::uint64_t adnn_seed(const RunConfig& c) { return derive_seed(c.seed, {1}); }
inline std::uint64_t gp_adnn_seed(const RunConfig& c) { return derive_seed(c.seed, {2}); }
inline std::uint64_t gp_seed(const RunConfig& c) { return derive_seed(c.seed, {3}); }
inline std::uint64_t diversity_seed(const RunConfig& c) { return derive_seed(c.seed, {4}); }

// -------------------------------------------------------------------- synth

inline fs::path cmd_synth(const RunConfig& c, const Logger& log = Logger()) {
  c.validate();
  auto sc = c.data.synthetic;
  sc.seed = c.seed;
  const auto panel = market::generate_synthetic(sc);
  const auto path = c.panel_path();
  std::ostringstream csv;
  market::write_panel_csv(panel, csv);
  io::write_text(path, csv.str());
  log.info("synth", {{"path", path.string()}, {"tickers", panel.ticker_count()}, {"days", panel.days()}});
  return path;
}

// --------------------------------------------------------------------- data

inline market::Dataset load_dataset(const RunConfig& c) {
  const auto path = c.panel_path();
  if (!fs::exists(path)) throw UserError("no panel at " + path.string() + " (run synth or set data.path)");
  return market::Dataset(market::load_panel(path), c.split, c.data.window, c.data.holding);
}

// -------------------------------------------------------------------- pools

/// Catalog indicator as a factor; missing values map to 0.
inline Factor indicator_factor(const indicators::IndicatorSpec& spec, const market::Dataset& data) {
  auto table = std::make_shared<indicators::IndicatorTable>(indicators::table_for(spec, data));
  return Factor{spec.label(), [table](const market::DayBatch& b) {
                  auto v = table->cross_section(b.day, b.ticker_ids);
                  for (double& x : v) {
                    if (!std::isfinite(x)) x = 0.0;
                  }
                  return v;
                }};
}

inline FactorPool pk_pool(const RunConfig& c, const market::Dataset& data) {
  FactorPool pool;
  for (const auto& spec : c.catalog) pool.push_back(indicator_factor(spec, data));
  return pool;
}

inline FactorPool model_pool(const RunConfig& c, const std::string& kind) {
  FactorPool pool;
  for (const auto& rec : io::read_jsonl(manifest_path(c, kind))) {
    if (rec.value("status", "") != "ok") continue;
    auto model = std::make_shared<const discovery::FactorModel>(
        io::load_model(c.out / rec.at("model").get<std::string>()));
    pool.push_back(discovery::model_factor(model, rec.at("name").get<std::string>()));
  }
  if (pool.empty()) throw UserError("manifest " + manifest_path(c, kind).string() + " has no usable factors");
  return pool;
}

inline std::vector<gp::Expr> gp_expressions(const RunConfig& c, std::size_t top) {
  std::vector<gp::Expr> out;
  for (const auto& rec : io::read_jsonl(manifest_path(c, "gp"))) {
    if (out.size() >= top) break;
    out.push_back(gp::parse_expr(rec.at("expr").get<std::string>()));
  }
  if (out.empty()) throw UserError("gp manifest is empty");
  return out;
}

inline FactorPool gp_pool(const RunConfig& c) {
  FactorPool pool;
  std::size_t i = 0;
  for (const auto& e : gp_expressions(c, c.eval.gp_top)) {
    char name[32];
    std::snprintf(name, sizeof name, "gp_%02zu", i++);
    pool.push_back(gp::expr_factor(e, name));
  }
  return pool;
}

// --------------------------------------------------------------------- mine

namespace detail {

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline json metrics_json(const discovery::ModelMetrics& m) {
  return io::model_json(discovery::FactorModel{.metrics = m}).at("metrics");
}

/// Saves models, returns manifest records (failures included).
inline std::vector<json> store_models(const RunConfig& c, const std::string& kind,
                                      const std::vector<std::string>& priors,
                                      const discovery::MineResult& res, const Logger& log) {
  std::vector<json> records;
  std::size_t next_model = 0;
  for (std::size_t i = 0; i < priors.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%s_%02zu", kind.c_str(), i);
    const auto failed = std::find_if(res.failures.begin(), res.failures.end(),
                                     [&](const discovery::MineFailure& f) { return f.prior == priors[i]; });
    if (failed != res.failures.end()) {
      log.warn("mine.failed", {{"name", name}, {"prior", priors[i]}, {"error", failed->message}});
      records.push_back({{"name", name}, {"kind", kind}, {"prior", priors[i]}, {"status", "failed"},
                         {"error", failed->message}});
      continue;
    }
    const auto& m = res.models.at(next_model++);
    const std::string rel = "models/" + std::string(name) + ".json";
    io::save_model(m, c.out / rel);
    records.push_back({{"name", name},
                       {"kind", kind},
                       {"prior", priors[i]},
                       {"status", "ok"},
                       {"model", rel},
                       {"checksum", hex64(discovery::params_checksum(m.params))},
                       {"metrics", metrics_json(m.metrics)}});
    log.info("mine.model", records.back());
  }
  return records;
}

}  // namespace detail

inline discovery::MiningOptions mining_options(const RunConfig& c) {
  auto opt = c.mining;
  opt.workers = c.workers;
  return opt;
}

inline void mine_adnn(const RunConfig& c, const market::Dataset& data, const Logger& log) {
  std::vector<std::string> priors;
  for (const auto& s : c.catalog) priors.push_back(s.label());
  log.info("mine.adnn.start", {{"entries", priors.size()}});
  const auto res = discovery::mine(c.catalog, data, mining_options(c), adnn_seed(c),
                                   [&](const std::string& p) { log.info("mine.adnn.done", {{"prior", p}}); });
  io::write_jsonl(manifest_path(c, "adnn"), detail::store_models(c, "adnn", priors, res, log));
}

inline gp::EvolveResult mine_gp(const RunConfig& c, const market::Dataset& data, const Logger& log) {
  auto g = c.gp;
  g.seed = gp_seed(c);
  g.workers = c.workers;
  log.info("mine.gp.start", {{"population", g.population}, {"generations", g.generations}});
  auto res = gp::evolve(data, g, [&](std::size_t gen, double best) {
    log.info("mine.gp.generation", {{"generation", gen}, {"best_train_ic", best}});
  });
  std::vector<json> records;
  for (std::size_t i = 0; i < res.ranked.size(); ++i) {
    const auto& s = res.ranked[i];
    records.push_back({{"name", "gp_" + std::to_string(i)},
                       {"kind", "gp"},
                       {"rank", i},
                       {"expr", gp::to_string(s.expr)},
                       {"train_ic", s.train_ic},
                       {"val_ic", s.val_ic},
                       {"test_ic", io::detail::num(s.test_ic)}});
  }
  io::write_jsonl(manifest_path(c, "gp"), records);
  return res;
}

/// ADNN models pre-trained on the values of the best GP expressions.
inline void mine_gp_adnn(const RunConfig& c, const market::Dataset& data, const Logger& log) {
  const auto exprs = gp_expressions(c, std::max<std::size_t>(1, c.eval.gp_seeds));
  std::vector<std::pair<std::string, discovery::TargetFn>> jobs;
  std::vector<std::string> priors;
  for (const auto& e : exprs) {
    priors.push_back(gp::to_string(e));
    jobs.emplace_back(priors.back(), [e](const market::DayBatch& b) { return gp::eval_expr(e, b); });
  }
  log.info("mine.gp_adnn.start", {{"entries", jobs.size()}});
  const auto res = discovery::mine_targets(jobs, data, mining_options(c), gp_adnn_seed(c));
  io::write_jsonl(manifest_path(c, "gp_adnn"), detail::store_models(c, "gp_adnn", priors, res, log));
}

inline void cmd_mine(const RunConfig& c, MineMethod method, const Logger& log = Logger()) {
  c.validate();
  const auto data = load_dataset(c);
  if (method == MineMethod::Gp || method == MineMethod::Both) mine_gp(c, data, log);
  if (method == MineMethod::Adnn || method == MineMethod::Both) mine_adnn(c, data, log);
  if (method == MineMethod::Both) mine_gp_adnn(c, data, log);
}

// --------------------------------------------------------------------- eval

inline void cmd_eval(const RunConfig& c, bool diversity, const Logger& log = Logger()) {
  c.validate();
  const auto data = load_dataset(c);
  std::vector<NamedPool> pools;
  if (fs::exists(manifest_path(c, "gp"))) pools.push_back({"Only GP", gp_pool(c)});
  if (fs::exists(manifest_path(c, "gp_adnn"))) pools.push_back({"GP&ADNN", model_pool(c, "gp_adnn")});
  if (fs::exists(manifest_path(c, "adnn"))) pools.push_back({"Only ADNN", model_pool(c, "adnn")});
  if (pools.empty()) throw UserError("missing manifest: run mine first (no manifests under " + (c.out / "manifests").string() + ")");

  const auto test = data.batches(market::Segment::Test);
  const std::size_t k = diversity ? c.eval.k : 0;
  for (const auto& p : pools) {
    if (k > 0 && p.factors.size() < k) {
      throw UserError("diversity needs at least k = " + std::to_string(k) + " factors; pool '" + p.name +
                      "' has " + std::to_string(p.factors.size()));
    }
  }
  const auto rows = analysis::scheme_report(pools, test, k, diversity_seed(c));

  report::Table schemes{{"pool", "factors", "mean_test_ic", "diversity", "days"}, {}};
  for (const auto& r : rows) {
    schemes.add({r.pool, std::to_string(r.factors), report::num(r.mean_ic), report::num(r.diversity),
                 std::to_string(r.days)});
    log.info("eval.pool", {{"pool", r.pool}, {"mean_test_ic", r.mean_ic}, {"diversity", io::detail::num(r.diversity)}});
  }
  io::write_text(reports_dir(c) / "ic_diversity.csv", report::to_csv(schemes));

  report::Table factors{{"pool", "factor", "mean_test_ic", "ic_std", "days", "degenerate_days"}, {}};
  for (const auto& p : pools) {
    for (const auto& f : p.factors) {
      const auto s = analysis::evaluate_factor(f, test);
      factors.add({p.name, f.name, report::num(s.mean), report::num(s.stdev), std::to_string(s.days),
                   std::to_string(s.degenerate_days)});
    }
  }
  io::write_text(reports_dir(c) / "factor_ic.csv", report::to_csv(factors));

  if (diversity) {
    // Layout of every factor on the last test day.
    FactorPool all;
    std::vector<std::size_t> group;
    std::vector<std::string> names;
    for (std::size_t g = 0; g < pools.size(); ++g) {
      names.push_back(pools[g].name);
      for (const auto& f : pools[g].factors) {
        all.push_back(f);
        group.push_back(g);
      }
    }
    const auto fm = analysis::factor_matrix(all, test.back());
    const auto layout = analysis::mds_layout(analysis::distance_matrix(fm));
    std::vector<report::Point> pts;
    for (std::size_t i = 0; i < all.size(); ++i) pts.push_back({layout[i][0], layout[i][1], all[i].name, group[i]});
    io::write_text(reports_dir(c) / "clusters.svg",
                   report::scatter("Factor layout on " + test.back().date, pts, names));
  }
}

// ----------------------------------------------------------------- backtest

struct PoolRun {
  std::string name;
  std::size_t factors = 0;
  backtest::EquityCurve curve;
  backtest::PerfReport perf;
};

inline PoolRun run_pool(const std::string& name, const FactorPool& pool, const market::Dataset& data,
                        const std::vector<market::DayBatch>& train, const RunConfig& c, const Logger& log) {
  const auto labels = backtest::build_labels(train, pool);
  for (const auto& w : labels.warnings) log.warn("backtest.labels", {{"pool", name}, {"message", w}});
  auto scorer = std::make_shared<const backtest::Scorer>(backtest::train_classifier(labels, c.backtest.gbdt));
  PoolRun r;
  r.name = name;
  r.factors = pool.size();
  r.curve = backtest::simulate(data, market::Segment::Test, backtest::pool_scorer(scorer, pool), c.backtest.strategy);
  r.perf = backtest::performance(r.curve);
  log.info("backtest.pool", {{"pool", name},
                             {"factors", pool.size()},
                             {"annual_return", r.perf.annual_return},
                             {"max_drawdown", r.perf.max_drawdown},
                             {"sharpe", r.perf.sharpe}});
  return r;
}

/// Feature selection on training days only.
inline FactorPool selected(const std::string& name, const FactorPool& a, const FactorPool& b,
                           const std::vector<market::DayBatch>& train, const RunConfig& c, const Logger& log) {
  auto sel = backtest::select_features(a, b, train, c.backtest.keep, c.backtest.gbdt);
  for (const auto& w : sel.warnings) log.warn("backtest.select", {{"pool", name}, {"message", w}});
  return sel.pool;
}

inline std::vector<PoolRun> cmd_backtest(const RunConfig& c, PoolChoice choice, const Logger& log = Logger()) {
  c.validate();
  const auto data = load_dataset(c);
  const auto train = data.batches(market::Segment::Train);
  const bool all = choice == PoolChoice::All;
  const auto pk = pk_pool(c, data);
  std::vector<PoolRun> runs;
  auto fresh = [&] { return model_pool(c, "adnn"); };
  if (all || choice == PoolChoice::Pk) runs.push_back(run_pool("PK", pk, data, train, c, log));
  if (all || choice == PoolChoice::New) runs.push_back(run_pool("New", fresh(), data, train, c, log));
  if (all || choice == PoolChoice::GpPk) {
    runs.push_back(run_pool("GP-PK", selected("GP-PK", pk, gp_pool(c), train, c, log), data, train, c, log));
  }
  if (all || choice == PoolChoice::Combined) {
    runs.push_back(run_pool("Combined", selected("Combined", pk, fresh(), train, c, log), data, train, c, log));
  }

  report::Table summary{{"pool", "factors", "revenue", "max_drawdown", "sharpe", "final_excess_nav"}, {}};
  std::vector<report::Series> series;
  for (const auto& r : runs) {
    summary.add({r.name, std::to_string(r.factors), report::num(r.perf.annual_return), report::num(r.perf.max_drawdown),
                 report::num(r.perf.sharpe), report::num(r.perf.final_excess)});
    report::Table nav{{"date", "strategy", "hedge", "excess"}, {}};
    for (std::size_t i = 0; i < r.curve.size(); ++i) {
      nav.add({r.curve.dates[i], report::num(r.curve.strategy[i]), report::num(r.curve.hedge[i]),
               report::num(r.curve.excess[i])});
    }
    std::string file = r.name;
    for (auto& ch : file) ch = ch == '-' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    io::write_text(reports_dir(c) / ("nav_" + file + ".csv"), report::to_csv(nav));
    series.push_back({r.name, r.curve.excess});
  }
  io::write_text(reports_dir(c) / "backtest.csv", report::to_csv(summary));
  io::write_text(reports_dir(c) / "equity.svg",
                 report::line_chart("Excess NAV over the equal-weight universe", runs.front().curve.dates, series));
  return runs;
}

// ------------------------------------------------------------------- report

/// Collects the per-model mining metrics and whatever report CSVs exist
/// into a markdown summary.
inline fs::path cmd_report(const RunConfig& c, const Logger& log = Logger()) {
  std::string md = "# Run summary\n\n";
  bool any = false;
  for (const std::string kind : {"adnn", "gp_adnn"}) {
    const auto path = manifest_path(c, kind);
    if (!fs::exists(path)) continue;
    any = true;
    md += "## " + kind + " models\n\n| name | prior | pretrain error | train IC | val IC | test IC |\n|---|---|---|---|---|---|\n";
    for (const auto& rec : io::read_jsonl(path)) {
      if (rec.value("status", "") != "ok") {
        md += "| " + rec.at("name").get<std::string>() + " | " + rec.at("prior").get<std::string>() +
              " | failed: " + rec.value("error", "") + " | | | |\n";
        continue;
      }
      const auto& m = rec.at("metrics");
      auto cell = [&](const char* key) { return report::num(io::detail::num(m.at(key))); };
      md += "| " + rec.at("name").get<std::string>() + " | " + rec.at("prior").get<std::string>() + " | " +
            cell("pretrain_error_rate") + " | " + cell("train_ic") + " | " + cell("val_ic") + " | " +
            cell("test_ic") + " |\n";
    }
    md += "\n";
  }
  if (fs::exists(manifest_path(c, "gp"))) {
    any = true;
    md += "## GP expressions (top 10 by validation IC)\n\n| rank | expression | train IC | val IC | test IC |\n|---|---|---|---|---|\n";
    std::size_t n = 0;
    for (const auto& rec : io::read_jsonl(manifest_path(c, "gp"))) {
      if (n++ >= 10) break;
      md += "| " + std::to_string(rec.at("rank").get<std::size_t>()) + " | `" + rec.at("expr").get<std::string>() +
            "` | " + report::num(rec.at("train_ic").get<double>()) + " | " +
            report::num(rec.at("val_ic").get<double>()) + " | " + report::num(io::detail::num(rec.at("test_ic"))) +
            " |\n";
    }
    md += "\n";
  }
  for (const std::string file : {"ic_diversity.csv", "backtest.csv"}) {
    const auto path = reports_dir(c) / file;
    if (!fs::exists(path)) continue;
    any = true;
    md += "## " + file + "\n\n```\n" + io::read_text(path) + "```\n\n";
  }
  if (!any) throw UserError("nothing to report under " + c.out.string());
  const auto out = reports_dir(c) / "summary.md";
  io::write_text(out, md);
  log.info("report", {{"path", out.string()}});
  return out;
}

}  // namespace adnn::pipeline
