// Small end-to-end run in memory: synthetic panel, one ADNN factor seeded by
// MA(5), a short GP search, and a backtest of the learned factor.
#include <iostream>
#include <memory>

#include "adnn/adnn.hpp"

int main() {
  using namespace adnn;

  market::SyntheticConfig sc;
  sc.tickers = 40;
  sc.seed = 11;
  market::Dataset data(market::generate_synthetic(sc), market::SplitSpec{}, 30, 5);
  const auto test = data.batches(market::Segment::Test);

  Factor oracle{"planted", [&](const market::DayBatch& b) {
                  return market::planted_signal(data.raw(), b.day, b.ticker_ids);
                }};
  std::cout << "planted signal test IC  " << analysis::evaluate_factor(oracle, test).mean << "\n";

  discovery::MiningOptions opt;
  opt.schedule.pretrain_epochs = 20;
  opt.schedule.finetune_steps = 200;
  discovery::SegmentBatches batches(data);
  const auto prior = indicators::ma(5);
  auto model = std::make_shared<discovery::FactorModel>(discovery::train_factor(
      prior.label(), discovery::indicator_target(prior, data), data, batches, opt, 1));
  std::cout << "ADNN(" << prior.label() << ") pretrain error " << model->metrics.pretrain_error_rate
            << ", test IC " << model->metrics.test_ic << "\n";

  gp::GpConfig g;
  g.population = 100;
  g.generations = 10;
  const auto evolved = gp::evolve(data, g);
  const auto& best = evolved.ranked.front();
  std::cout << "GP best " << gp::to_string(best.expr) << "  test IC " << best.test_ic << "\n";

  FactorPool pool = {discovery::model_factor(model, "adnn_ma5")};
  auto scorer = std::make_shared<const backtest::Scorer>(
      backtest::train_classifier(backtest::build_labels(batches.train, pool)));
  const auto curve = backtest::simulate(data, market::Segment::Test, backtest::pool_scorer(scorer, pool), {});
  const auto perf = backtest::performance(curve);
  std::cout << "backtest: annual excess " << perf.annual_return << ", sharpe " << perf.sharpe
            << ", max drawdown " << perf.max_drawdown << "\n";
  return 0;
}
