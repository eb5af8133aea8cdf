#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "adnn/ic_objective.hpp"
#include "adnn/neural.hpp"

using namespace adnn;
using namespace adnn::nn;

namespace {

MlpConfig small_config(std::size_t in = 6, std::size_t layers = 3, std::size_t width = 5) {
  MlpConfig c;
  c.input_size = in;
  c.layer_count = layers;
  c.width = width;
  c.dropout_rate = 0.0;
  c.l2_coeff = 0.0;
  return c;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

// sum_i w_i * out_i, a generic scalar with known upstream sensitivities
double weighted_sum(const MlpConfig& c, const MlpParams& p, const PruneMask* mask, const Matrix& x,
                    const Matrix& w) {
  const auto out = forward(c, p, mask, x, false).output;
  return out.cwiseProduct(w).sum() + l2_penalty(c, p, mask);
}

}  // namespace

TEST(Forward, ZeroWeightsGiveZeroOutput) {
  const auto c = small_config();
  const auto out = forward(c, zero_params(c), nullptr, random_matrix(4, 6, 1), false).output;
  EXPECT_EQ(out.rows(), 4);
  EXPECT_EQ(out.cols(), 1);
  EXPECT_TRUE(out.isZero(0.0));
}

TEST(Forward, SingleLinearLayerIdentity) {
  auto c = small_config(1, 1);
  auto p = zero_params(c);
  p.weights[0](0, 0) = 1.0;
  const auto x = random_matrix(7, 1, 2);
  EXPECT_EQ(forward(c, p, nullptr, x, false).output, x);
}

TEST(Forward, MaskEqualsLiterallyZeroedWeights) {
  const auto c = small_config();
  const auto p = init_params(c, 3);
  auto mask = PruneMask::ones(p);
  std::mt19937_64 rng(4);
  for (auto& m : mask.layers) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng() % 3 == 0 ? 0.0 : 1.0;
  }
  auto zeroed = p;
  apply_mask(zeroed, mask);
  const auto x = random_matrix(9, 6, 5);
  EXPECT_EQ(forward(c, p, &mask, x, false).output, forward(c, zeroed, nullptr, x, false).output);
}

TEST(Forward, EvalModeIsDeterministic) {
  auto c = small_config();
  c.dropout_rate = 0.5;
  const auto p = init_params(c, 6);
  const auto x = random_matrix(5, 6, 7);
  EXPECT_EQ(forward(c, p, nullptr, x, false, 1).output, forward(c, p, nullptr, x, false, 2).output);
  EXPECT_NE(forward(c, p, nullptr, x, true, 1).output, forward(c, p, nullptr, x, false).output);
  EXPECT_EQ(forward(c, p, nullptr, x, true, 1).output, forward(c, p, nullptr, x, true, 1).output);
}

TEST(Forward, InvertedDropoutPreservesExpectation) {
  auto c = small_config(3, 2, 1);
  c.dropout_rate = 0.3;
  auto p = zero_params(c);
  p.biases[0](0) = 10.0;  // hidden unit tanh(10) ~ 1
  p.weights[1](0, 0) = 1.0;
  const Matrix x = Matrix::Zero(20000, 3);
  const double mean = forward(c, p, nullptr, x, true, 9).output.mean();
  EXPECT_NEAR(mean, std::tanh(10.0), 0.02);
}

TEST(Forward, ShapeMismatchThrows) {
  const auto c = small_config();
  EXPECT_THROW(forward(c, init_params(c, 1), nullptr, random_matrix(3, 5, 1), false), Error);
}

TEST(Init, DeterministicAndBounded) {
  MlpConfig c;
  c.input_size = 150;
  const auto a = init_params(c, 42);
  EXPECT_TRUE(a.same_values(init_params(c, 42)));
  EXPECT_FALSE(a.same_values(init_params(c, 43)));
  EXPECT_LE(a.weights[0].cwiseAbs().maxCoeff(), 1.0 / std::sqrt(150.0));
  EXPECT_EQ(a.weights.size(), 4u);
  EXPECT_EQ(a.weights[3].cols(), 1);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  const auto c = small_config();
  const auto p = init_params(c, 1);
  const auto r = forward(c, p, nullptr, random_matrix(4, 6, 2), false);
  const auto g = backward(c, p, nullptr, r.cache, Matrix::Zero(4, 1));
  for (std::size_t l = 0; l < p.layers(); ++l) {
    EXPECT_TRUE(g.weights[l].isZero(0.0));
    EXPECT_TRUE(g.biases[l].isZero(0.0));
  }
  EXPECT_TRUE(g.input.isZero(0.0));
}

TEST(Backward, StaleCacheRejected) {
  const auto c = small_config();
  auto p = init_params(c, 1);
  const auto r = forward(c, p, nullptr, random_matrix(4, 6, 2), false);
  auto s = AdamState::for_params(p);
  adam_step(s, p, MlpGradients::zeros_like(p), 0.1);
  EXPECT_THROW(backward(c, p, nullptr, r.cache, Matrix::Ones(4, 1)), Error);
}

TEST(Backward, MaskedGradientsAreZero) {
  auto c = small_config();
  c.l2_coeff = 0.1;
  const auto p = init_params(c, 1);
  auto mask = PruneMask::ones(p);
  mask.layers[1](2, 3) = 0.0;
  mask.layers[0](0, 0) = 0.0;
  const auto r = forward(c, p, &mask, random_matrix(4, 6, 2), false);
  const auto g = backward(c, p, &mask, r.cache, random_matrix(4, 1, 3));
  EXPECT_EQ(g.weights[1](2, 3), 0.0);
  EXPECT_EQ(g.weights[0](0, 0), 0.0);
}

TEST(Backward, GradientCheckWeightsTanhAndRelu) {
  for (auto act : {Activation::Tanh, Activation::Relu}) {
    auto c = small_config(8, 3, 7);
    c.activation = act;
    c.l2_coeff = 0.01;
    const auto p = init_params(c, 11);
    auto mask = PruneMask::ones(p);
    mask.layers[0](1, 1) = 0.0;
    const auto x = random_matrix(6, 8, 12);
    const auto w = random_matrix(6, 1, 13);
    const auto r = forward(c, p, &mask, x, false);
    const auto g = backward(c, p, &mask, r.cache, w);
    const double err = gradient_check(
        p, [&](const MlpParams& q) { return weighted_sum(c, q, &mask, x, w); }, g, 200);
    EXPECT_LE(err, 1e-4) << activation_name(act);
  }
}

TEST(Backward, InputGradientMatchesFiniteDifferences) {
  const auto c = small_config(10, 4, 6);
  const auto p = init_params(c, 21);
  Matrix x = random_matrix(5, 10, 22);
  const auto w = random_matrix(5, 1, 23);
  const auto r = forward(c, p, nullptr, x, false);
  const auto g = backward(c, p, nullptr, r.cache, w);
  const double err = check_coordinates(
      static_cast<std::size_t>(x.size()), [&](std::size_t i) -> double& { return x.data()[i]; },
      [&] { return forward(c, p, nullptr, x, false).output.cwiseProduct(w).sum(); },
      [&](std::size_t i) { return g.input.data()[i]; }, 50);
  EXPECT_LE(err, 1e-4);
}

TEST(GradientCheck, QuadraticLossIsExact) {
  auto c = small_config(3, 2, 4);
  const auto p = init_params(c, 1);
  auto half_sq = [](const MlpParams& q) {
    double s = 0;
    for (std::size_t l = 0; l < q.layers(); ++l) s += q.weights[l].squaredNorm() + q.biases[l].squaredNorm();
    return 0.5 * s;
  };
  MlpGradients g;
  g.weights = p.weights;
  g.biases = p.biases;
  EXPECT_LE(gradient_check(p, half_sq, g, 30), 1e-8);
  EXPECT_EQ(gradient_check(p, half_sq, g, 0), 0.0);
}

TEST(GradientCheck, FullIcLossPipeline) {
  MlpConfig c;
  c.input_size = 150;
  c.width = 32;
  c.dropout_rate = 0.0;
  c.l2_coeff = 0.0;
  const auto p = init_params(c, 31);
  const Matrix x = random_matrix(20, 150, 32);
  std::vector<double> y(20);
  {
    std::mt19937_64 rng(33);
    std::normal_distribution<double> gauss;
    for (double& v : y) v = gauss(rng);
  }
  auto loss_of = [&](const MlpParams& q) {
    const auto out = forward(c, q, nullptr, x, false).output;
    std::vector<ic::IcSample> s = {{std::vector<double>(out.data(), out.data() + out.size()), y}};
    return ic::loss(s).loss;
  };
  const auto r = forward(c, p, nullptr, x, false);
  std::vector<ic::IcSample> s = {{std::vector<double>(r.output.data(), r.output.data() + 20), y}};
  const auto dx = ic::loss_grad(s).front();
  const Matrix up = Eigen::Map<const Matrix>(dx.data(), 20, 1);
  const auto g = backward(c, p, nullptr, r.cache, up);
  EXPECT_LE(gradient_check(p, loss_of, g, 200), 1e-4);
}

TEST(Adam, ZeroGradientsLeaveParamsUnchanged) {
  const auto c = small_config();
  auto p = init_params(c, 1);
  const auto before = p;
  auto s = AdamState::for_params(p);
  for (int i = 0; i < 5; ++i) adam_step(s, p, MlpGradients::zeros_like(p), 0.1);
  EXPECT_TRUE(p.same_values(before));
}

TEST(Adam, FirstStepOnScalar) {
  auto c = small_config(1, 1);
  auto p = zero_params(c);
  p.weights[0](0, 0) = 1.0;
  auto s = AdamState::for_params(p);
  auto g = MlpGradients::zeros_like(p);
  g.weights[0](0, 0) = 1.0;
  adam_step(s, p, g, 0.1);
  // m_hat = 1, v_hat = 1, step = lr * 1 / (1 + 1e-8)
  EXPECT_NEAR(p.weights[0](0, 0), 1.0 - 0.1 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p.weights[0](0, 0), 0.9, 1e-8);
}

TEST(Adam, MaskedEntryStaysZero) {
  const auto c = small_config();
  auto p = init_params(c, 1);
  auto mask = PruneMask::ones(p);
  mask.layers[0](2, 1) = 0.0;
  apply_mask(p, mask);
  auto s = AdamState::for_params(p);
  for (int i = 0; i < 100; ++i) {
    auto g = MlpGradients::zeros_like(p);
    for (auto& w : g.weights) w.setConstant(0.5 + i);
    adam_step(s, p, g, 0.01, &mask);
  }
  EXPECT_EQ(p.weights[0](2, 1), 0.0);
  EXPECT_NE(p.weights[0](2, 0), 0.0);
}

TEST(Adam, NonFiniteGradientNamesLayer) {
  const auto c = small_config();
  auto p = init_params(c, 1);
  auto s = AdamState::for_params(p);
  auto g = MlpGradients::zeros_like(p);
  g.weights[2](0, 0) = std::nan("");
  try {
    adam_step(s, p, g, 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("layer 2"), std::string::npos);
  }
}

TEST(Config, Validation) {
  MlpConfig c;
  c.layer_count = 0;
  EXPECT_THROW(c.validate(), UserError);
  c = {};
  c.width = 0;
  EXPECT_THROW(c.validate(), UserError);
  c = {};
  c.dropout_rate = 1.0;
  EXPECT_THROW(c.validate(), UserError);
  EXPECT_THROW(parse_activation("sigmoid"), UserError);
  EXPECT_EQ(parse_activation("relu"), Activation::Relu);
}

TEST(Tensor, ShapeContract) {
  Tensor t({2, 3, 4}, 1.5);
  EXPECT_EQ(t.size(), 24u);
  t(1, 2, 3) = 9.0;
  EXPECT_EQ(t.data()[23], 9.0);
  EXPECT_EQ(t.as_matrix().rows(), 2);
  EXPECT_EQ(t.as_matrix().cols(), 12);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>(3)), Error);
  EXPECT_EQ(t.reshaped({6, 4})(5, 3), 9.0);
}
