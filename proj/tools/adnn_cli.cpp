// adnn: synth | mine | eval | backtest | report
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "adnn/config.hpp"
#include "adnn/error.hpp"
#include "adnn/pipeline.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> workers;
};

adnn::config::RunConfig resolve(const Overrides& o) {
  auto cfg = o.config.empty() ? adnn::config::RunConfig{} : adnn::config::load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.out = *o.out;
  if (o.workers) cfg.workers = *o.workers;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Alpha factor mining: neural discovery, GP baseline, evaluation and backtest"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("--config", o.config, "INI run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "global seed (overrides run.seed)");
  app.add_option("--out", o.out, "output directory (overrides run.out)");
  app.add_option("--workers", o.workers, "parallel mining jobs")->check(CLI::PositiveNumber);

  auto* synth = app.add_subcommand("synth", "write a synthetic OHLCV panel");
  auto* mine = app.add_subcommand("mine", "mine factors");
  std::string method = "both";
  mine->add_option("--method", method, "adnn | gp | both")->check(CLI::IsMember({"adnn", "gp", "both"}));
  auto* eval = app.add_subcommand("eval", "IC and diversity of the mined pools on the test range");
  bool no_diversity = false;
  eval->add_flag("--no-diversity", no_diversity, "skip diversity scores and the cluster plot");
  auto* bt = app.add_subcommand("backtest", "long/hedged strategy on factor pools");
  std::string pool = "all";
  bt->add_option("--pool", pool, "pk | new | gp_pk | combined | all")
      ->check(CLI::IsMember({"pk", "new", "gp_pk", "combined", "all"}));
  auto* rep = app.add_subcommand("report", "markdown summary of a run directory");
  for (auto* sub : {synth, mine, eval, bt, rep}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const adnn::pipeline::Logger log;
  try {
    const auto cfg = resolve(o);
    if (synth->parsed()) {
      adnn::pipeline::cmd_synth(cfg, log);
    } else if (mine->parsed()) {
      adnn::pipeline::cmd_mine(cfg, adnn::pipeline::parse_method(method), log);
    } else if (eval->parsed()) {
      adnn::pipeline::cmd_eval(cfg, !no_diversity && cfg.eval.diversity, log);
    } else if (bt->parsed()) {
      adnn::pipeline::cmd_backtest(cfg, adnn::pipeline::parse_pool(pool), log);
    } else if (rep->parsed()) {
      adnn::pipeline::cmd_report(cfg, log);
    }
  } catch (const adnn::UserError& e) {
    log("error", "failed", {{"message", e.what()}});
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    log("error", "internal", {{"message", e.what()}});
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
