#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "adnn/analysis.hpp"
#include "adnn/error.hpp"
#include "adnn/factor.hpp"
#include "adnn/ic_objective.hpp"
#include "adnn/indicators.hpp"
#include "adnn/market_data.hpp"
#include "adnn/neural.hpp"
#include "adnn/random.hpp"

namespace adnn::discovery {

using market::Dataset;
using market::DayBatch;
using market::Segment;
using nn::Matrix;
using nn::MlpConfig;
using nn::MlpParams;
using nn::PruneMask;

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct TrainSchedule {
  std::size_t pretrain_epochs = 50;
  std::size_t pretrain_batch = 256;
  double pretrain_lr = 1e-3;
  /// Fraction of the latest training days held out to measure pre-training error.
  double holdout_fraction = 0.2;
  std::size_t finetune_steps = 500;
  /// Days per update (also the q of the loss average).
  std::size_t days_per_step = 8;
  double finetune_lr = 1e-3;
  /// Early-stopping patience, counted in validation evaluations.
  std::size_t patience = 20;
  std::size_t eval_every = 5;

  void validate() const {
    if (pretrain_batch < 1 || days_per_step < 1 || eval_every < 1 || patience < 1) {
      throw UserError("train schedule counts must be positive");
    }
    if (!(pretrain_lr > 0.0) || !(finetune_lr > 0.0)) throw UserError("learning rates must be > 0");
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
      throw UserError("holdout_fraction must be in (0, 1)");
    }
  }
};

struct Provenance {
  std::string prior;
  double prune_rate = 0.0;
  std::uint64_t seed = 0;
  std::string train_range;
  std::string val_range;
  std::string test_range;
};

struct ModelMetrics {
  double pretrain_error_rate = kNaN;
  double pretrain_test_ic = kNaN;
  double train_ic = kNaN;
  double val_ic = kNaN;
  double test_ic = kNaN;
  std::size_t finetune_steps_run = 0;
  std::size_t degenerate_days = 0;
};

struct FactorModel {
  MlpConfig config;
  MlpParams params;
  PruneMask mask;
  Provenance provenance;
  ModelMetrics metrics;
  std::vector<double> loss_trace;
  std::vector<double> val_trace;

  Matrix evaluate(const Matrix& inputs) const {
    return nn::forward(config, params, mask.empty() ? nullptr : &mask, inputs, false).output;
  }
};

/// FNV-1a over the raw bytes of all weights and biases.
inline std::uint64_t params_checksum(const MlpParams& p) {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&](const double* d, Eigen::Index n) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(d);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (std::size_t l = 0; l < p.layers(); ++l) {
    feed(p.weights[l].data(), p.weights[l].size());
    feed(p.biases[l].data(), p.biases[l].size());
  }
  return h;
}

/// Per-stock target values for a batch; NaN marks unusable entries.
using TargetFn = std::function<std::vector<double>(const DayBatch&)>;

inline TargetFn indicator_target(const indicators::IndicatorSpec& spec, const Dataset& data) {
  auto table = std::make_shared<indicators::IndicatorTable>(indicators::table_for(spec, data));
  return [table](const DayBatch& b) { return table->cross_section(b.day, b.ticker_ids); };
}

struct PretrainResult {
  MlpParams params;
  double error_rate = kNaN;
  std::size_t fit_samples = 0;
  std::size_t holdout_samples = 0;
  std::vector<double> epoch_loss;
};

namespace detail {

struct SampleSet {
  Matrix inputs;
  std::vector<double> targets;
};

inline SampleSet collect(const std::vector<DayBatch>& batches, const TargetFn& target) {
  std::vector<const double*> rows;
  std::vector<double> ys;
  std::size_t cols = 0;
  std::vector<Matrix> flats;
  flats.reserve(batches.size());
  for (const auto& b : batches) {
    flats.push_back(b.flat_inputs());
    cols = static_cast<std::size_t>(flats.back().cols());
  }
  for (std::size_t k = 0; k < batches.size(); ++k) {
    const auto t = target(batches[k]);
    if (t.size() != batches[k].size()) throw Error("target size does not match batch");
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!std::isfinite(t[i])) continue;
      rows.push_back(flats[k].row(static_cast<Eigen::Index>(i)).data());
      ys.push_back(t[i]);
    }
  }
  SampleSet s;
  s.inputs.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy(rows[r], rows[r] + cols, s.inputs.row(static_cast<Eigen::Index>(r)).data());
  }
  s.targets = std::move(ys);
  return s;
}

inline double cosine_lr(double base, std::size_t step, std::size_t total) {
  if (total <= 1) return base;
  const double pi = 3.14159265358979323846;
  const double frac = static_cast<double>(step) / static_cast<double>(total - 1);
  return base * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(pi * frac)));
}

inline std::string range_label(const Dataset& data, market::DayRange r) {
  const auto& cal = data.raw().calendar();
  if (r.empty()) return "";
  return cal[r.begin] + ".." + cal[r.end - 1];
}

}  // namespace detail

/// Fits the network to a prior's values by mean squared error on the
/// earlier training days, then reports mean |(y - f) / y| (|y| > 1e-6) on the
/// held-out latest days. Targets are z-scored for fitting; the error rate is
/// measured back on the target's own scale.
inline PretrainResult pretrain(const MlpConfig& cfg, const TargetFn& target, const Dataset& data,
                               const TrainSchedule& schedule, std::uint64_t seed) {
  cfg.validate();
  schedule.validate();
  const auto days = data.days(Segment::Train);
  if (days.size() < 2) throw UserError("pretrain: not enough training days");
  const auto cut = static_cast<std::size_t>(
      std::floor(static_cast<double>(days.size()) * (1.0 - schedule.holdout_fraction)));
  std::vector<DayBatch> fit_batches, hold_batches;
  for (std::size_t i = 0; i < days.size(); ++i) {
    (i < cut ? fit_batches : hold_batches).push_back(data.batch(Segment::Train, days[i]));
  }
  auto fit = detail::collect(fit_batches, target);
  auto hold = detail::collect(hold_batches, target);
  if (fit.targets.size() + hold.targets.size() < 100) {
    throw UserError("pretrain: prior produces fewer than 100 valid targets");
  }
  if (fit.targets.empty()) throw UserError("pretrain: no valid targets before the hold-out tail");
  if (static_cast<std::size_t>(fit.inputs.cols()) != cfg.input_size) {
    throw UserError("pretrain: network input size does not match 5 x window");
  }

  const auto mo = ic::detail::moments(fit.targets);
  const double shift = mo.mean;
  const double scale = mo.std > 1e-12 ? mo.std : 1.0;

  PretrainResult res;
  res.fit_samples = fit.targets.size();
  res.holdout_samples = hold.targets.size();
  res.params = nn::init_params(cfg, derive_seed(seed, {0}));
  auto state = nn::AdamState::for_params(res.params);
  Rng rng(derive_seed(seed, {1}));

  const std::size_t n = fit.targets.size();
  const std::size_t batch = std::min(schedule.pretrain_batch, n);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const std::size_t total_steps = steps_per_epoch * schedule.pretrain_epochs;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < schedule.pretrain_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t len = std::min(batch, n - start);
      Matrix x(static_cast<Eigen::Index>(len), fit.inputs.cols());
      Matrix y(static_cast<Eigen::Index>(len), 1);
      for (std::size_t r = 0; r < len; ++r) {
        x.row(static_cast<Eigen::Index>(r)) = fit.inputs.row(static_cast<Eigen::Index>(order[start + r]));
        y(static_cast<Eigen::Index>(r), 0) = (fit.targets[order[start + r]] - shift) / scale;
      }
      auto fw = nn::forward(cfg, res.params, nullptr, x, true, derive_seed(seed, {2, step}));
      const Matrix diff = fw.output - y;
      epoch_loss += diff.squaredNorm();
      const Matrix upstream = diff * (2.0 / static_cast<double>(len));
      auto grads = nn::backward(cfg, res.params, nullptr, fw.cache, upstream);
      nn::adam_step(state, res.params, grads, detail::cosine_lr(schedule.pretrain_lr, step, total_steps));
      ++step;
    }
    res.epoch_loss.push_back(epoch_loss / static_cast<double>(n));
  }

  const auto& eval_set = hold.targets.empty() ? fit : hold;
  if (eval_set.targets.empty()) return res;
  const Matrix pred = nn::forward(cfg, res.params, nullptr, eval_set.inputs, false).output;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < eval_set.targets.size(); ++i) {
    const double y = eval_set.targets[i];
    if (std::abs(y) <= 1e-6) continue;
    const double f = pred(static_cast<Eigen::Index>(i), 0) * scale + shift;
    sum += std::abs((y - f) / y);
    ++count;
  }
  res.error_rate = count > 0 ? sum / static_cast<double>(count) : 0.0;
  return res;
}

/// One-shot magnitude pruning: per layer, the round(rate * size) smallest
/// |w| are masked, ties going to the lower flat index. Biases are not pruned.
inline PruneMask prune(const MlpParams& p, double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw UserError("prune rate must be in [0, 1)");
  PruneMask mask = PruneMask::ones(p);
  for (std::size_t l = 0; l < p.layers(); ++l) {
    const auto& w = p.weights[l];
    const auto size = static_cast<std::size_t>(w.size());
    const auto k = static_cast<std::size_t>(std::llround(rate * static_cast<double>(size)));
    std::vector<std::size_t> idx(size);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return std::abs(w.data()[a]) < std::abs(w.data()[b]);
    });
    for (std::size_t i = 0; i < k; ++i) mask.layers[l].data()[idx[i]] = 0.0;
  }
  return mask;
}

/// Adapts a trained model to the Factor interface.
inline Factor model_factor(std::shared_ptr<const FactorModel> model, std::string name) {
  return Factor{std::move(name), [model](const DayBatch& b) {
                  const Matrix out = model->evaluate(b.flat_inputs());
                  return std::vector<double>(out.data(), out.data() + out.size());
                }};
}

inline analysis::IcSummary evaluate_ic(const FactorModel& model,
                                       std::span<const DayBatch> batches) {
  auto ptr = std::shared_ptr<const FactorModel>(&model, [](const FactorModel*) {});
  return analysis::evaluate_factor(model_factor(ptr, model.provenance.prior), batches);
}

inline analysis::IcSummary evaluate_ic(const FactorModel& model, const Dataset& data, Segment s) {
  const auto batches = data.batches(s);
  if (batches.empty()) throw UserError(std::string("no eligible days in ") + market::segment_name(s));
  return evaluate_ic(model, batches);
}

/// Fine-tunes under the IC loss. Each step samples `days_per_step` training
/// days, descends -mean(IC) with the mask frozen, and every `eval_every`
/// steps scores the validation segment; the best-validation parameters are
/// returned. Throws on 50 consecutive steps whose days are all degenerate.
inline FactorModel finetune(FactorModel model, const std::vector<DayBatch>& train,
                            const std::vector<DayBatch>& val, const TrainSchedule& schedule,
                            const ic::RankKernelParams& kernel, std::uint64_t seed) {
  schedule.validate();
  kernel.validate();
  if (schedule.finetune_steps == 0) return model;
  if (train.empty()) throw UserError("finetune: no training days");
  if (val.empty()) throw UserError("finetune: no validation days");
  const PruneMask* mask = model.mask.empty() ? nullptr : &model.mask;
  MlpConfig no_l2 = model.config;
  no_l2.l2_coeff = 0.0;

  auto state = nn::AdamState::for_params(model.params);
  Rng rng(seed);
  auto val_ic = [&] { return evaluate_ic(model, val).mean; };
  double best = val_ic();
  MlpParams best_params = model.params;
  std::size_t best_step = 0;
  model.val_trace.push_back(best);
  std::size_t stale = 0;
  std::size_t collapsed_run = 0;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t q = std::min(schedule.days_per_step, train.size());

  std::size_t step = 0;
  for (; step < schedule.finetune_steps; ++step) {
    // Partial Fisher-Yates: q distinct days.
    for (std::size_t i = 0; i < q; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
      std::swap(order[i], order[pick(rng)]);
    }
    std::vector<ic::IcSample> samples;
    std::vector<nn::ForwardResult> passes;
    for (std::size_t i = 0; i < q; ++i) {
      const auto& b = train[order[i]];
      passes.push_back(nn::forward(model.config, model.params, mask, b.flat_inputs(), true,
                                   derive_seed(seed, {step, i})));
      const auto& out = passes.back().output;
      samples.push_back({std::vector<double>(out.data(), out.data() + out.size()), b.forward_returns});
    }
    const auto lr = ic::loss(samples, kernel);
    model.loss_trace.push_back(lr.loss);
    model.metrics.degenerate_days += lr.degenerate_count;
    collapsed_run = lr.degenerate_count == q ? collapsed_run + 1 : 0;
    if (collapsed_run >= 50) throw UserError("factor collapse: 50 consecutive degenerate steps");

    const auto grads = ic::loss_grad(samples, kernel);
    auto total = nn::MlpGradients::zeros_like(model.params);
    for (std::size_t i = 0; i < q; ++i) {
      Matrix up = Eigen::Map<const Matrix>(grads[i].data(), static_cast<Eigen::Index>(grads[i].size()), 1);
      total += nn::backward(no_l2, model.params, mask, passes[i].cache, up);
    }
    if (model.config.l2_coeff > 0.0) {
      for (std::size_t l = 0; l < model.params.layers(); ++l) {
        Matrix reg = model.config.l2_coeff * model.params.weights[l];
        if (mask) reg = reg.cwiseProduct(mask->layers[l]);
        total.weights[l] += reg;
      }
    }
    passes.clear();
    nn::adam_step(state, model.params, total, schedule.finetune_lr, mask);

    if ((step + 1) % schedule.eval_every == 0) {
      const double v = val_ic();
      model.val_trace.push_back(v);
      if (v > best) {
        best = v;
        best_params = model.params;
        best_step = step + 1;
        stale = 0;
      } else if (++stale >= schedule.patience) {
        ++step;
        break;
      }
    }
  }
  model.metrics.finetune_steps_run = step;
  (void)best_step;
  model.params = std::move(best_params);
  ++model.params.version;
  return model;
}

/// Mean over stocks of |d output / d input|, as a (5, n) map.
inline nn::Tensor saliency(const FactorModel& model, const DayBatch& batch) {
  nn::MlpExtractor ex(model.config, model.params, model.mask.empty() ? nullptr : &model.mask);
  const Matrix g = ex.input_gradient(batch.flat_inputs());
  const std::size_t n = batch.window();
  nn::Tensor out({market::kInputSeriesCount, n});
  for (Eigen::Index c = 0; c < g.cols(); ++c) {
    out.data()[static_cast<std::size_t>(c)] =
        g.col(c).cwiseAbs().sum() / static_cast<double>(g.rows());
  }
  return out;
}

struct MiningOptions {
  MlpConfig mlp;
  TrainSchedule schedule;
  double prune_rate = 0.35;
  ic::RankKernelParams kernel;
  /// Parallel catalog entries; results do not depend on this.
  std::size_t workers = 1;
};

/// Cached segment batches shared by every model trained on a dataset.
struct SegmentBatches {
  std::vector<DayBatch> train, val, test;

  explicit SegmentBatches(const Dataset& data)
      : train(data.batches(Segment::Train)),
        val(data.batches(Segment::Validation)),
        test(data.batches(Segment::Test)) {}
};

/// pretrain -> prune -> finetune for one prior, with metrics after each stage.
inline FactorModel train_factor(const std::string& prior, const TargetFn& target,
                                const Dataset& data, const SegmentBatches& batches,
                                const MiningOptions& opt, std::uint64_t seed) {
  MlpConfig cfg = opt.mlp;
  cfg.input_size = market::kInputSeriesCount * data.window();
  cfg.output_size = 1;
  FactorModel model;
  model.config = cfg;
  model.provenance = {prior,
                      opt.prune_rate,
                      seed,
                      detail::range_label(data, data.ranges().train),
                      detail::range_label(data, data.ranges().val),
                      detail::range_label(data, data.ranges().test)};

  auto pre = pretrain(cfg, target, data, opt.schedule, derive_seed(seed, {10}));
  model.params = std::move(pre.params);
  model.metrics.pretrain_error_rate = pre.error_rate;
  model.mask = prune(model.params, opt.prune_rate);
  nn::apply_mask(model.params, model.mask);
  if (!batches.test.empty()) model.metrics.pretrain_test_ic = evaluate_ic(model, batches.test).mean;

  model = finetune(std::move(model), batches.train, batches.val, opt.schedule, opt.kernel,
                   derive_seed(seed, {11}));
  model.metrics.train_ic = evaluate_ic(model, batches.train).mean;
  model.metrics.val_ic = evaluate_ic(model, batches.val).mean;
  if (!batches.test.empty()) model.metrics.test_ic = evaluate_ic(model, batches.test).mean;
  return model;
}

struct MineFailure {
  std::string prior;
  std::string message;
};

struct MineResult {
  std::vector<FactorModel> models;
  std::vector<MineFailure> failures;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Runs an arbitrary list of (label, target) jobs with per-job seeds derived
/// from `seed` and the job index, so output is independent of `workers`.
inline MineResult mine_targets(const std::vector<std::pair<std::string, TargetFn>>& jobs,
                               const Dataset& data, const MiningOptions& opt, std::uint64_t seed,
                               const ProgressFn& progress = {}) {
  if (jobs.empty()) throw UserError("mine: nothing to train");
  SegmentBatches batches(data);
  std::vector<std::optional<FactorModel>> models(jobs.size());
  std::vector<std::string> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto work = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        models[i] = train_factor(jobs[i].first, jobs[i].second, data, batches, opt,
                                 derive_seed(seed, {i}));
        if (progress) {
          std::lock_guard lk(log_mu);
          progress(jobs[i].first);
        }
      } catch (const std::exception& e) {
        errors[i] = e.what();
        if (errors[i].empty()) errors[i] = "unknown error";
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(opt.workers, jobs.size()));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  MineResult out;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (models[i]) {
      out.models.push_back(std::move(*models[i]));
    } else {
      out.failures.push_back({jobs[i].first, errors[i]});
    }
  }
  return out;
}

/// One factor per catalog entry, each seeded by its own prior.
inline MineResult mine(const indicators::PriorCatalog& catalog, const Dataset& data,
                       const MiningOptions& opt, std::uint64_t seed,
                       const ProgressFn& progress = {}) {
  indicators::validate_catalog(catalog);
  std::vector<std::pair<std::string, TargetFn>> jobs;
  for (const auto& spec : catalog) jobs.emplace_back(spec.label(), indicator_target(spec, data));
  return mine_targets(jobs, data, opt, seed, progress);
}

}  // namespace adnn::discovery
