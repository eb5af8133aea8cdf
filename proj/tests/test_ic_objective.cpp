#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "adnn/ic_objective.hpp"

using adnn::UserError;
using namespace adnn::ic;

namespace {

std::vector<double> gauss(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

double day_loss(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<IcSample> s = {{x, y}};
  return loss(s).loss;
}

}  // namespace

TEST(RankKernel, Examples) {
  const auto g = rank_kernel(std::vector<double>{-1.0, 0.0, 1.0});
  EXPECT_DOUBLE_EQ(g[1], 0.5);
  // mean 0, population std 1, so 2.0 sits at mean + 2 std
  const auto gv = rank_kernel(std::vector<double>{-2.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0});
  EXPECT_NEAR(gv[1], 1.0 / (1.0 + std::exp(-1.83)), 1e-15);
  const auto gw = rank_kernel(std::vector<double>{-1.0, -1.0, -1.0, 3.0}, {0.5});
  EXPECT_NEAR(gw[3], 1.0 / (1.0 + std::exp(-0.5 * 3.0 / (2.0 * std::sqrt(3.0)))), 1e-15);
}

TEST(RankKernel, NegationSymmetry) {
  const auto x = gauss(30, 1);
  auto nx = x;
  for (double& v : nx) v = -v;
  const auto g = rank_kernel(x);
  const auto gn = rank_kernel(nx);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(gn[i], 1.0 - g[i], 1e-14);
}

TEST(RankKernel, ConstantInputIsHalf) {
  for (double v : rank_kernel(std::vector<double>(5, 3.3))) EXPECT_EQ(v, 0.5);
  EXPECT_THROW(rank_kernel(std::vector<double>{1.0}), UserError);
  RankKernelParams bad{0.0};
  EXPECT_THROW(bad.validate(), UserError);
}

TEST(RankKernel, MonotoneAndBounded) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto x = gauss(40, seed);
    const auto g = rank_kernel(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
      EXPECT_GT(g[i], 0.0);
      EXPECT_LT(g[i], 1.0);
      for (std::size_t j = 0; j < x.size(); ++j) {
        if (x[i] < x[j]) EXPECT_LT(g[i], g[j]);
      }
    }
  }
}

TEST(Ic, Examples) {
  const auto x = gauss(25, 2);
  auto neg = x, aff = x;
  for (double& v : neg) v = -v;
  for (double& v : aff) v = 3.5 * v - 7.0;
  EXPECT_NEAR(ic(x, x).value, 1.0, 1e-12);
  EXPECT_NEAR(ic(x, neg).value, -1.0, 1e-12);
  EXPECT_NEAR(ic(x, aff).value, 1.0, 1e-12);
}

TEST(Ic, SymmetricAndAffineInvariant) {
  const auto x = gauss(25, 3), y = gauss(25, 4);
  auto x2 = x;
  for (double& v : x2) v = 0.01 * v + 100.0;
  EXPECT_NEAR(ic(x, y).value, ic(y, x).value, 1e-14);
  EXPECT_NEAR(ic(x, y).value, ic(x2, y).value, 1e-9);
}

TEST(Ic, DegenerateFlagged) {
  const auto c = ic(std::vector<double>(6, 1.0), gauss(6, 5));
  EXPECT_TRUE(c.degenerate);
  EXPECT_EQ(c.value, 0.0);
  EXPECT_THROW(ic(std::vector<double>{1.0, 2.0}, std::vector<double>{1.0}), UserError);
}

TEST(Ic, BoundedOnRandomInputs) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto x = gauss(2 + seed % 30, seed), y = gauss(2 + seed % 30, seed + 1000);
    EXPECT_LE(std::abs(ic(x, y).value), 1.0 + 1e-12);
  }
}

TEST(Loss, Examples) {
  const auto x = gauss(10, 6);
  auto neg = x;
  for (double& v : neg) v = -v;
  EXPECT_NEAR(day_loss(x, x), -1.0, 1e-12);

  std::vector<IcSample> two = {{x, x}, {x, neg}};
  EXPECT_NEAR(loss(two).loss, 0.0, 1e-12);

  std::vector<IcSample> flat = {{std::vector<double>(4, 1.0), gauss(4, 1)},
                                {std::vector<double>(4, 2.0), gauss(4, 2)}};
  const auto r = loss(flat);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.degenerate_count, 2u);

  EXPECT_THROW(loss(std::vector<IcSample>{}), UserError);
}

TEST(Loss, PermutationInvariant) {
  const auto x = gauss(30, 7), y = gauss(30, 8);
  std::vector<std::size_t> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(9);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> px, py;
  for (auto i : perm) {
    px.push_back(x[i]);
    py.push_back(y[i]);
  }
  EXPECT_NEAR(day_loss(x, y), day_loss(px, py), 1e-14);
}

TEST(LossGrad, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto x = gauss(20, seed), y = gauss(20, seed + 50);
    std::vector<IcSample> s = {{x, y}};
    const auto g = loss_grad(s).front();
    const double h = 1e-6;
    for (std::size_t i = 0; i < x.size(); ++i) {
      auto up = x, dn = x;
      up[i] += h;
      dn[i] -= h;
      const double fd = (day_loss(up, y) - day_loss(dn, y)) / (2 * h);
      EXPECT_LE(std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), 1e-6}), 1e-5)
          << "seed " << seed << " i " << i;
    }
  }
}

TEST(LossGrad, AveragesOverDays) {
  const auto x1 = gauss(12, 1), y1 = gauss(12, 2), x2 = gauss(12, 3), y2 = gauss(12, 4);
  std::vector<IcSample> s = {{x1, y1}, {x2, y2}};
  const auto g = loss_grad(s);
  const auto g1 = ic_grad(x1, y1);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(g[0][i], -0.5 * g1[i], 1e-15);
}

TEST(LossGrad, StationaryAtPerfectIc) {
  const auto x = gauss(20, 10);
  std::vector<IcSample> s = {{x, x}};
  const auto g = loss_grad(s);
  for (double v : g.front()) EXPECT_LE(std::abs(v), 1e-6);
}

TEST(LossGrad, DegenerateDayHasZeroGradient) {
  std::vector<IcSample> s = {{std::vector<double>(5, 1.0), gauss(5, 1)}};
  const auto g = loss_grad(s);
  for (double v : g.front()) EXPECT_EQ(v, 0.0);
}

TEST(LossGrad, ScaleLeavesIcUnchanged) {
  const auto x = gauss(20, 11), y = gauss(20, 12);
  auto x2 = x;
  for (double& v : x2) v *= 2.0;
  std::vector<IcSample> a = {{x, y}}, b = {{x2, y}};
  const auto ga = loss_grad(a).front(), gb = loss_grad(b).front();
  EXPECT_NEAR(loss(a).loss, loss(b).loss, 1e-14);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR(gb[i], 0.5 * ga[i], 1e-12);
    EXPECT_EQ(std::signbit(ga[i]), std::signbit(gb[i]));
  }
}

TEST(LossGrad, DescentReducesLoss) {
  auto x = gauss(30, 13);
  const auto y = gauss(30, 14);
  double prev = day_loss(x, y);
  int decreases = 0;
  for (int step = 0; step < 50; ++step) {
    std::vector<IcSample> s = {{x, y}};
    const auto g = loss_grad(s).front();
    for (std::size_t i = 0; i < x.size(); ++i) x[i] -= 1e-2 * g[i];
    const double now = day_loss(x, y);
    if (now < prev) ++decreases;
    prev = now;
  }
  EXPECT_GE(decreases, 45);
}
