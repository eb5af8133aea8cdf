#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "adnn/error.hpp"
#include "adnn/factor.hpp"
#include "adnn/ic_objective.hpp"
#include "adnn/market_data.hpp"
#include "adnn/random.hpp"

namespace adnn::analysis {

using ic::Correlation;

/// Ranks 1..n, ties share their average rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Exact Spearman rank correlation.
inline Correlation spearman_ic(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw UserError("spearman: length mismatch");
  if (x.size() < 2) throw UserError("spearman needs at least 2 points");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return ic::pearson(rx, ry);
}

struct IcSummary {
  double mean = 0.0;
  double stdev = 0.0;
  std::size_t days = 0;
  std::size_t degenerate_days = 0;
  std::vector<double> daily;
};

/// Mean daily exact IC of a factor over pre-built batches. Degenerate days
/// are excluded from the mean and counted.
inline IcSummary evaluate_factor(const Factor& f, std::span<const market::DayBatch> batches) {
  if (batches.empty()) throw UserError("no eligible days to evaluate " + f.name);
  IcSummary s;
  for (const auto& b : batches) {
    const auto values = f.evaluate(b);
    const auto c = spearman_ic(values, b.forward_returns);
    if (c.degenerate) {
      ++s.degenerate_days;
      continue;
    }
    s.daily.push_back(c.value);
  }
  s.days = s.daily.size();
  if (s.days > 0) {
    s.mean = std::accumulate(s.daily.begin(), s.daily.end(), 0.0) / static_cast<double>(s.days);
    double ss = 0.0;
    for (double v : s.daily) ss += (v - s.mean) * (v - s.mean);
    s.stdev = std::sqrt(ss / static_cast<double>(s.days));
  }
  return s;
}

/// Softmax of the cross-sectionally z-scored vector.
inline std::vector<double> standardized_softmax(std::span<const double> f) {
  const auto mo = ic::detail::moments(f);
  const double sd = mo.std > ic::kStdFloor ? mo.std : 1.0;
  std::vector<double> z(f.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < f.size(); ++i) {
    z[i] = mo.std > ic::kStdFloor ? (f[i] - mo.mean) / sd : 0.0;
    mx = std::max(mx, z[i]);
  }
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : z) v /= sum;
  return z;
}

/// Cross-entropy of softmax(f2) under softmax(f1). Inputs are used as given;
/// use diversity_distance_standardized for the pipeline's z-score-first form.
inline double diversity_distance(std::span<const double> f1, std::span<const double> f2) {
  if (f1.size() != f2.size()) throw UserError("diversity_distance: length mismatch");
  if (f1.size() < 2) throw UserError("diversity_distance needs at least 2 stocks");
  auto log_softmax = [](std::span<const double> f) {
    const double mx = *std::max_element(f.begin(), f.end());
    double sum = 0.0;
    for (double v : f) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    std::vector<double> out(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) out[i] = f[i] - lse;
    return out;
  };
  const auto l1 = log_softmax(f1);
  const auto l2 = log_softmax(f2);
  double d = 0.0;
  for (std::size_t i = 0; i < f1.size(); ++i) d -= std::exp(l1[i]) * l2[i];
  return d;
}

inline double entropy_of_softmax(std::span<const double> f) { return diversity_distance(f, f); }

/// F x m factor values for one day, rows aligned to the same tickers.
struct FactorMatrix {
  std::string date;
  std::vector<std::vector<double>> rows;

  void validate() const {
    if (rows.empty()) throw UserError("factor matrix has no factors");
    const std::size_t m = rows.front().size();
    if (m < 2) throw UserError("factor matrix needs at least 2 stocks");
    for (const auto& r : rows) {
      if (r.size() != m) throw UserError("factor matrix rows have different lengths");
      for (double v : r) {
        if (!std::isfinite(v)) throw UserError("factor matrix has non-finite values");
      }
    }
  }
};

using DistanceMatrix = std::vector<std::vector<double>>;

/// Pairwise distances after per-factor cross-sectional z-scoring.
inline DistanceMatrix distance_matrix(const FactorMatrix& fm) {
  fm.validate();
  const std::size_t f = fm.rows.size();
  std::vector<std::vector<double>> z;
  z.reserve(f);
  for (const auto& r : fm.rows) {
    const auto mo = ic::detail::moments(r);
    std::vector<double> s(r.size(), 0.0);
    if (mo.std > ic::kStdFloor) {
      for (std::size_t i = 0; i < r.size(); ++i) s[i] = (r[i] - mo.mean) / mo.std;
    }
    z.push_back(std::move(s));
  }
  DistanceMatrix d(f, std::vector<double>(f));
  for (std::size_t a = 0; a < f; ++a) {
    for (std::size_t b = 0; b < f; ++b) d[a][b] = diversity_distance(z[a], z[b]);
  }
  return d;
}

struct KMeansResult {
  std::vector<std::size_t> assignments;
  std::vector<std::vector<double>> centers;
  /// Within-cluster sum of squares after each Lloyd iteration.
  std::vector<double> inertia;
};

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace detail

/// Lloyd's algorithm with k-means++ seeding. Empty clusters are reseeded
/// from the point farthest from its current center.
inline KMeansResult kmeans(const std::vector<std::vector<double>>& points, std::size_t k,
                           std::uint64_t seed, std::size_t max_iters = 100) {
  const std::size_t n = points.size();
  if (k == 0) throw UserError("kmeans: k must be >= 1");
  if (n < k) {
    throw UserError("kmeans: fewer points (" + std::to_string(n) + ") than clusters (" +
                    std::to_string(k) + ")");
  }
  Rng rng(seed);
  KMeansResult r;
  std::vector<bool> chosen(n, false);
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  std::size_t c0 = first(rng);
  r.centers.push_back(points[c0]);
  chosen[c0] = true;
  std::vector<double> d2(n);
  while (r.centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : r.centers) best = std::min(best, detail::sq_dist(points[i], c));
      d2[i] = chosen[i] ? 0.0 : best;
      total += d2[i];
    }
    std::size_t pick = n;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        pick = i;
        target -= d2[i];
        if (target <= 0.0) break;
      }
    }
    if (pick == n) {
      for (std::size_t i = 0; i < n; ++i) {
        if (!chosen[i]) {
          pick = i;
          break;
        }
      }
    }
    chosen[pick] = true;
    r.centers.push_back(points[pick]);
  }

  r.assignments.assign(n, 0);
  const std::size_t dims = points.front().size();
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    bool changed = iter == 0;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = detail::sq_dist(points[i], r.centers[c]);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      if (best != r.assignments[i]) changed = true;
      r.assignments[i] = best;
      inertia += bd;
    }
    r.inertia.push_back(inertia);
    if (!changed) break;

    std::vector<std::vector<double>> sums(k, std::vector<double>(dims, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[r.assignments[i]];
      for (std::size_t d = 0; d < dims; ++d) sums[r.assignments[i]][d] += points[i][d];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        std::size_t far = 0;
        double fd = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double d = detail::sq_dist(points[i], r.centers[r.assignments[i]]);
          if (d > fd) {
            fd = d;
            far = i;
          }
        }
        r.centers[c] = points[far];
        r.assignments[far] = c;
        continue;
      }
      for (std::size_t d = 0; d < dims; ++d) {
        r.centers[c][d] = sums[c][d] / static_cast<double>(counts[c]);
      }
    }
  }
  return r;
}

struct DiversityReport {
  DistanceMatrix distances;
  std::vector<std::size_t> assignments;
  std::vector<std::vector<double>> centers;
  double score = 0.0;
  std::size_t k = 3;
};

/// Clusters factors embedded as their distance-matrix rows and scores the
/// mean Euclidean distance between cluster centers.
inline DiversityReport diversity_score(const FactorMatrix& fm, std::size_t k = 3,
                                       std::uint64_t seed = 0) {
  fm.validate();
  if (fm.rows.size() < k) {
    throw UserError("diversity needs at least k = " + std::to_string(k) + " factors, got " +
                    std::to_string(fm.rows.size()));
  }
  DiversityReport rep;
  rep.k = k;
  rep.distances = distance_matrix(fm);
  auto km = kmeans(rep.distances, k, seed);
  rep.assignments = std::move(km.assignments);
  rep.centers = std::move(km.centers);
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a + 1; b < k; ++b) {
      sum += std::sqrt(detail::sq_dist(rep.centers[a], rep.centers[b]));
      ++pairs;
    }
  }
  rep.score = pairs > 0 ? sum / static_cast<double>(pairs) : 0.0;
  return rep;
}

/// Evaluates every factor of a pool on a batch.
inline FactorMatrix factor_matrix(const FactorPool& pool, const market::DayBatch& batch) {
  FactorMatrix fm;
  fm.date = batch.date;
  for (const auto& f : pool) fm.rows.push_back(f.evaluate(batch));
  return fm;
}

struct DailyDiversity {
  std::vector<std::string> dates;
  std::vector<double> scores;
  double mean = 0.0;
};

inline DailyDiversity diversity_over(const FactorPool& pool,
                                     std::span<const market::DayBatch> batches, std::size_t k,
                                     std::uint64_t seed) {
  if (batches.empty()) throw UserError("diversity: empty date range");
  DailyDiversity out;
  for (const auto& b : batches) {
    out.dates.push_back(b.date);
    out.scores.push_back(diversity_score(factor_matrix(pool, b), k, seed).score);
  }
  out.mean = std::accumulate(out.scores.begin(), out.scores.end(), 0.0) /
             static_cast<double>(out.scores.size());
  return out;
}

/// Planar layout of factors for plotting: classical multidimensional
/// scaling of the symmetrized dissimilarity D(a,b) + D(b,a) - D(a,a) - D(b,b).
inline std::vector<std::array<double, 2>> mds_layout(const DistanceMatrix& d) {
  const auto n = static_cast<Eigen::Index>(d.size());
  std::vector<std::array<double, 2>> out(d.size(), {0.0, 0.0});
  if (n < 2) return out;
  Eigen::MatrixXd sq(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < n; ++b) {
      const auto ua = static_cast<std::size_t>(a);
      const auto ub = static_cast<std::size_t>(b);
      const double delta = std::max(0.0, d[ua][ub] + d[ub][ua] - d[ua][ua] - d[ub][ub]);
      sq(a, b) = delta * delta;
    }
  }
  const Eigen::MatrixXd j =
      Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
  const Eigen::MatrixXd b = -0.5 * j * sq * j;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(b);
  for (int axis = 0; axis < 2 && axis < n; ++axis) {
    const Eigen::Index col = n - 1 - axis;
    const double lambda = std::max(0.0, es.eigenvalues()(col));
    Eigen::VectorXd v = es.eigenvectors().col(col);
    // Fix the sign so layouts are reproducible.
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    for (Eigen::Index i = 0; i < n; ++i) {
      out[static_cast<std::size_t>(i)][static_cast<std::size_t>(axis)] = v(i) * std::sqrt(lambda);
    }
  }
  return out;
}

struct SchemeRow {
  std::string pool;
  std::size_t factors = 0;
  double mean_ic = 0.0;
  double diversity = 0.0;
  std::size_t days = 0;
};

/// One row per pool: mean over factors of mean daily exact IC, and mean
/// daily diversity score, both over the given batches. k = 0 skips the
/// diversity column (NaN); otherwise every pool needs at least k factors.
inline std::vector<SchemeRow> scheme_report(const std::vector<NamedPool>& pools,
                                            std::span<const market::DayBatch> batches,
                                            std::size_t k = 3, std::uint64_t seed = 0) {
  if (batches.empty()) throw UserError("scheme report: empty date range");
  std::vector<SchemeRow> rows;
  for (const auto& p : pools) {
    if (p.factors.empty()) throw UserError("scheme report: pool '" + p.name + "' is empty");
    SchemeRow row;
    row.pool = p.name;
    row.factors = p.factors.size();
    row.days = batches.size();
    double sum = 0.0;
    for (const auto& f : p.factors) sum += evaluate_factor(f, batches).mean;
    row.mean_ic = sum / static_cast<double>(p.factors.size());
    row.diversity = k > 0 ? diversity_over(p.factors, batches, k, seed).mean
                          : std::numeric_limits<double>::quiet_NaN();
    rows.push_back(row);
  }
  return rows;
}

}  // namespace adnn::analysis
