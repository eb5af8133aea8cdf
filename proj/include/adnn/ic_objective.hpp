#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "adnn/error.hpp"

namespace adnn::ic {

inline constexpr double kStdFloor = 1e-8;
/// Below this spread a kernel output vector counts as constant.
inline constexpr double kDegenerateSpread = 1e-12;

struct RankKernelParams {
  double steepness = 1.83;

  void validate() const {
    if (!(steepness > 0.0)) throw UserError("rank kernel steepness must be > 0");
  }
};

namespace detail {

struct Moments {
  double mean = 0.0;
  double std = 0.0;  // population
};

inline Moments moments(std::span<const double> v) {
  Moments m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  for (double x : v) m.std += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(m.std / static_cast<double>(v.size()));
  return m;
}

inline double logistic(double t) {
  return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

}  // namespace detail

/// Smooth rank surrogate: 1 / (1 + exp(-p * (x - mean) / (2 * std))), with
/// cross-sectional mean and population std (floored at 1e-8).
inline std::vector<double> rank_kernel(std::span<const double> values, const RankKernelParams& k = {}) {
  if (values.size() < 2) throw UserError("rank_kernel needs at least 2 values");
  const auto mo = detail::moments(values);
  const double s = std::max(mo.std, kStdFloor);
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = detail::logistic(k.steepness * (values[i] - mo.mean) / (2.0 * s));
  }
  return out;
}

/// Pearson correlation; `degenerate` is set (and 0 returned) when either
/// side has no spread.
struct Correlation {
  double value = 0.0;
  bool degenerate = false;
};

inline Correlation pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw UserError("correlation: length mismatch");
  if (a.size() < 2) throw UserError("correlation needs at least 2 points");
  const auto ma = detail::moments(a);
  const auto mb = detail::moments(b);
  if (ma.std < kDegenerateSpread || mb.std < kDegenerateSpread) return {0.0, true};
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma.mean;
    const double db = b[i] - mb.mean;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  return {cov / std::sqrt(va * vb), false};
}

/// Differentiable IC: Pearson correlation of g(x) and g(y).
inline Correlation ic(std::span<const double> x, std::span<const double> y,
                      const RankKernelParams& k = {}) {
  if (x.size() != y.size()) throw UserError("ic: length mismatch");
  const auto gx = rank_kernel(x, k);
  const auto gy = rank_kernel(y, k);
  return pearson(gx, gy);
}

/// One trading day: factor values x and realized returns y.
struct IcSample {
  std::vector<double> x;
  std::vector<double> y;
};

struct LossResult {
  double loss = 0.0;
  std::vector<double> ics;
  std::vector<bool> degenerate;
  std::size_t degenerate_count = 0;
};

/// Loss = -(1/q) * sum of per-day IC; degenerate days contribute 0.
inline LossResult loss(std::span<const IcSample> samples, const RankKernelParams& k = {}) {
  if (samples.empty()) throw UserError("ic loss needs at least one day (q = 0)");
  LossResult r;
  double sum = 0.0;
  for (const auto& s : samples) {
    const auto c = ic(s.x, s.y, k);
    r.ics.push_back(c.value);
    r.degenerate.push_back(c.degenerate);
    if (c.degenerate) ++r.degenerate_count;
    sum += c.value;
  }
  r.loss = -sum / static_cast<double>(samples.size());
  return r;
}

/// d(IC)/dx for one day, differentiating through the kernel's mean and std.
/// Returns zeros for a degenerate day.
inline std::vector<double> ic_grad(std::span<const double> x, std::span<const double> y,
                                   const RankKernelParams& k = {}) {
  const std::size_t m = x.size();
  if (y.size() != m) throw UserError("ic: length mismatch");
  const auto mo = detail::moments(x);
  const bool floored = mo.std < kStdFloor;
  const double s = floored ? kStdFloor : mo.std;
  const double c = k.steepness / 2.0;

  std::vector<double> u(m), g(m);
  for (std::size_t i = 0; i < m; ++i) {
    u[i] = (x[i] - mo.mean) / s;
    g[i] = detail::logistic(c * u[i]);
  }
  const auto h = rank_kernel(y, k);
  const auto mg = detail::moments(g);
  const auto mh = detail::moments(h);
  std::vector<double> out(m, 0.0);
  if (mg.std < kDegenerateSpread || mh.std < kDegenerateSpread) return out;

  double cov = 0.0, vg = 0.0, vh = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    cov += (g[i] - mg.mean) * (h[i] - mh.mean);
    vg += (g[i] - mg.mean) * (g[i] - mg.mean);
    vh += (h[i] - mh.mean) * (h[i] - mh.mean);
  }
  const double ng = std::sqrt(vg);
  const double nh = std::sqrt(vh);
  const double r = cov / (ng * nh);

  // dr/dg, then through the logistic to du.
  std::vector<double> du(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double dr_dg = (h[i] - mh.mean) / (ng * nh) - r * (g[i] - mg.mean) / vg;
    du[i] = dr_dg * c * g[i] * (1.0 - g[i]);
  }
  // u = (x - mean) / std  =>  dx_j = (du_j - mean(du) - u_j * mean(du * u)) / std
  double mean_du = 0.0, mean_duu = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    mean_du += du[i];
    mean_duu += du[i] * u[i];
  }
  mean_du /= static_cast<double>(m);
  mean_duu /= static_cast<double>(m);
  for (std::size_t j = 0; j < m; ++j) {
    out[j] = floored ? (du[j] - mean_du) / s : (du[j] - mean_du - u[j] * mean_duu) / s;
  }
  return out;
}

/// Per-day gradients of the loss with respect to each day's x.
inline std::vector<std::vector<double>> loss_grad(std::span<const IcSample> samples,
                                                  const RankKernelParams& k = {}) {
  if (samples.empty()) throw UserError("ic loss needs at least one day (q = 0)");
  const double scale = -1.0 / static_cast<double>(samples.size());
  std::vector<std::vector<double>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    auto g = ic_grad(s.x, s.y, k);
    for (double& v : g) v *= scale;
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace adnn::ic
