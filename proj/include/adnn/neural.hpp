#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "adnn/error.hpp"
#include "adnn/random.hpp"
#include "adnn/tensor.hpp"

namespace adnn::nn {

enum class Activation { Tanh, Relu };

inline std::string activation_name(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw UserError("unknown activation '" + s + "'");
}

/// `layer_count` dense layers: layer_count - 1 hidden layers of `width`
/// units with `activation`, then a linear output layer.
struct MlpConfig {
  std::size_t layer_count = 4;
  std::size_t width = 128;
  Activation activation = Activation::Tanh;
  double dropout_rate = 0.1;
  double l2_coeff = 1e-4;
  std::size_t input_size = 150;
  std::size_t output_size = 1;

  void validate() const {
    if (layer_count < 1) throw UserError("mlp: layer_count must be >= 1");
    if (width < 1) throw UserError("mlp: width must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw UserError("mlp: dropout_rate in [0, 1)");
    if (!(l2_coeff >= 0.0)) throw UserError("mlp: l2_coeff must be >= 0");
    if (input_size < 1 || output_size < 1) throw UserError("mlp: sizes must be >= 1");
  }

  /// (fan_in, fan_out) per layer.
  std::vector<std::pair<std::size_t, std::size_t>> layer_shapes() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t in = input_size;
    for (std::size_t l = 0; l < layer_count; ++l) {
      const std::size_t o = l + 1 == layer_count ? output_size : width;
      out.emplace_back(in, o);
      in = o;
    }
    return out;
  }

  friend bool operator==(const MlpConfig&, const MlpConfig&) = default;
};

/// Layer l maps rows as h_l = act(h_{l-1} * W_l + b_l); W_l is (fan_in, fan_out).
struct MlpParams {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  /// Bumped by every in-place update; forward caches remember it.
  std::uint64_t version = 0;

  std::size_t layers() const { return weights.size(); }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
    return n;
  }
  bool same_values(const MlpParams& o) const {
    if (weights.size() != o.weights.size()) return false;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (weights[l].rows() != o.weights[l].rows() || weights[l].cols() != o.weights[l].cols()) {
        return false;
      }
      if (weights[l] != o.weights[l] || biases[l] != o.biases[l]) return false;
    }
    return true;
  }
};

/// Binary Hadamard mask over the weights; biases are never masked.
struct PruneMask {
  std::vector<Matrix> layers;

  bool empty() const { return layers.empty(); }

  static PruneMask ones(const MlpParams& p) {
    PruneMask m;
    for (const auto& w : p.weights) m.layers.push_back(Matrix::Ones(w.rows(), w.cols()));
    return m;
  }

  std::size_t zeros(std::size_t layer) const {
    return static_cast<std::size_t>((layers.at(layer).array() == 0.0).count());
  }
};

struct MlpGradients {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  /// d(objective)/d(input), same shape as the forward input.
  Matrix input;

  static MlpGradients zeros_like(const MlpParams& p) {
    MlpGradients g;
    for (std::size_t l = 0; l < p.layers(); ++l) {
      g.weights.push_back(Matrix::Zero(p.weights[l].rows(), p.weights[l].cols()));
      g.biases.push_back(Vector::Zero(p.biases[l].size()));
    }
    return g;
  }

  MlpGradients& operator+=(const MlpGradients& o) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      weights[l] += o.weights[l];
      biases[l] += o.biases[l];
    }
    return *this;
  }
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
inline MlpParams init_params(const MlpConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  MlpParams p;
  for (auto [in, out] : cfg.layer_shapes()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix w(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
    p.weights.push_back(std::move(w));
    p.biases.push_back(Vector::Zero(static_cast<Eigen::Index>(out)));
  }
  return p;
}

inline MlpParams zero_params(const MlpConfig& cfg) {
  MlpParams p;
  for (auto [in, out] : cfg.layer_shapes()) {
    p.weights.push_back(Matrix::Zero(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out)));
    p.biases.push_back(Vector::Zero(static_cast<Eigen::Index>(out)));
  }
  return p;
}

/// Everything backward needs from a forward pass.
struct ForwardCache {
  /// Input to each layer (layer 0: the batch input).
  std::vector<Matrix> layer_inputs;
  /// Pre-activation of each layer.
  std::vector<Matrix> pre;
  /// Inverted-dropout multipliers for hidden layers (empty when off).
  std::vector<Matrix> dropout;
  const MlpParams* params = nullptr;
  std::uint64_t version = 0;
};

struct ForwardResult {
  Matrix output;
  ForwardCache cache;
};

namespace detail {

inline void check_shapes(const MlpConfig& cfg, const MlpParams& p, const PruneMask* mask) {
  const auto shapes = cfg.layer_shapes();
  if (p.layers() != shapes.size() || p.biases.size() != shapes.size()) {
    throw Error("mlp: parameter layer count does not match config");
  }
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    if (static_cast<std::size_t>(p.weights[l].rows()) != shapes[l].first ||
        static_cast<std::size_t>(p.weights[l].cols()) != shapes[l].second ||
        static_cast<std::size_t>(p.biases[l].size()) != shapes[l].second) {
      throw Error("mlp: layer " + std::to_string(l) + " shape mismatch");
    }
    if (mask && !mask->empty()) {
      if (mask->layers.size() != shapes.size() || mask->layers[l].rows() != p.weights[l].rows() ||
          mask->layers[l].cols() != p.weights[l].cols()) {
        throw Error("mlp: mask shape mismatch at layer " + std::to_string(l));
      }
    }
  }
}

inline Matrix effective_weight(const MlpParams& p, const PruneMask* mask, std::size_t l) {
  if (mask && !mask->empty()) return p.weights[l].cwiseProduct(mask->layers[l]);
  return p.weights[l];
}

}  // namespace detail

/// Forward pass over a (m, input_size) batch. Dropout is applied to hidden
/// activations only when `train_mode` is set, with 1/(1-rate) scaling.
inline ForwardResult forward(const MlpConfig& cfg, const MlpParams& p, const PruneMask* mask,
                             const Matrix& input, bool train_mode, std::uint64_t rng_seed = 0) {
  detail::check_shapes(cfg, p, mask);
  if (static_cast<std::size_t>(input.cols()) != cfg.input_size) {
    throw Error("mlp: input has " + std::to_string(input.cols()) + " columns, expected " +
                std::to_string(cfg.input_size));
  }
  ForwardResult r;
  r.cache.params = &p;
  r.cache.version = p.version;
  const bool drop = train_mode && cfg.dropout_rate > 0.0;
  Rng rng(rng_seed);
  std::bernoulli_distribution keep(1.0 - cfg.dropout_rate);
  const double scale = drop ? 1.0 / (1.0 - cfg.dropout_rate) : 1.0;

  Matrix h = input;
  for (std::size_t l = 0; l < p.layers(); ++l) {
    r.cache.layer_inputs.push_back(h);
    Matrix z = h * detail::effective_weight(p, mask, l);
    z.rowwise() += p.biases[l].transpose();
    const bool last = l + 1 == p.layers();
    if (last) {
      h = z;
    } else if (cfg.activation == Activation::Tanh) {
      h = z.array().tanh().matrix();
    } else {
      h = z.cwiseMax(0.0);
    }
    if (!last && drop) {
      Matrix d(h.rows(), h.cols());
      for (Eigen::Index i = 0; i < d.size(); ++i) d.data()[i] = keep(rng) ? scale : 0.0;
      h = h.cwiseProduct(d);
      r.cache.dropout.push_back(std::move(d));
    }
    r.cache.pre.push_back(std::move(z));
  }
  r.output = std::move(h);
  return r;
}

/// Reverse pass for the scalar whose sensitivity to each output is
/// `upstream`. Adds the gradient of the penalty 0.5 * l2 * ||W||^2 and zeroes
/// gradients of masked weights.
inline MlpGradients backward(const MlpConfig& cfg, const MlpParams& p, const PruneMask* mask,
                             const ForwardCache& cache, const Matrix& upstream) {
  if (cache.params != &p || cache.version != p.version || cache.pre.size() != p.layers()) {
    throw Error("mlp: stale forward cache");
  }
  const Eigen::Index m = cache.layer_inputs.front().rows();
  if (upstream.rows() != m || static_cast<std::size_t>(upstream.cols()) != cfg.output_size) {
    throw Error("mlp: upstream gradient shape mismatch");
  }
  MlpGradients g;
  g.weights.resize(p.layers());
  g.biases.resize(p.layers());
  Matrix delta = upstream;
  const bool dropped = !cache.dropout.empty();
  for (std::size_t li = p.layers(); li-- > 0;) {
    const bool last = li + 1 == p.layers();
    if (!last) {
      if (dropped) delta = delta.cwiseProduct(cache.dropout[li]);
      const Matrix& z = cache.pre[li];
      if (cfg.activation == Activation::Tanh) {
        delta = delta.cwiseProduct((1.0 - z.array().tanh().square()).matrix());
      } else {
        delta = delta.cwiseProduct((z.array() > 0.0).cast<double>().matrix());
      }
    }
    Matrix gw = cache.layer_inputs[li].transpose() * delta;
    if (cfg.l2_coeff > 0.0) gw += cfg.l2_coeff * p.weights[li];
    if (mask && !mask->empty()) gw = gw.cwiseProduct(mask->layers[li]);
    g.weights[li] = std::move(gw);
    g.biases[li] = delta.colwise().sum().transpose();
    delta = delta * detail::effective_weight(p, mask, li).transpose();
  }
  g.input = std::move(delta);
  return g;
}

/// 0.5 * l2 * sum of squared (masked) weights; the term backward differentiates.
inline double l2_penalty(const MlpConfig& cfg, const MlpParams& p, const PruneMask* mask) {
  double s = 0.0;
  for (std::size_t l = 0; l < p.layers(); ++l) {
    s += detail::effective_weight(p, mask, l).squaredNorm();
  }
  return 0.5 * cfg.l2_coeff * s;
}

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Matrix> m_w, v_w;
  std::vector<Vector> m_b, v_b;
  std::uint64_t step = 0;

  static AdamState for_params(const MlpParams& p) {
    AdamState s;
    for (std::size_t l = 0; l < p.layers(); ++l) {
      s.m_w.push_back(Matrix::Zero(p.weights[l].rows(), p.weights[l].cols()));
      s.v_w.push_back(s.m_w.back());
      s.m_b.push_back(Vector::Zero(p.biases[l].size()));
      s.v_b.push_back(s.m_b.back());
    }
    return s;
  }
};

/// One bias-corrected Adam update. Masked weights are pinned at exactly 0.
inline void adam_step(AdamState& s, MlpParams& p, const MlpGradients& g, double lr,
                      const PruneMask* mask = nullptr, const AdamOptions& opt = {}) {
  if (g.weights.size() != p.layers() || s.m_w.size() != p.layers()) {
    throw Error("adam: layer count mismatch");
  }
  for (std::size_t l = 0; l < p.layers(); ++l) {
    if (!g.weights[l].allFinite() || !g.biases[l].allFinite()) {
      throw Error("adam: non-finite gradient in layer " + std::to_string(l));
    }
    if (g.weights[l].rows() != p.weights[l].rows() || g.weights[l].cols() != p.weights[l].cols()) {
      throw Error("adam: gradient shape mismatch in layer " + std::to_string(l));
    }
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(s.step));
  auto update = [&](auto& param, auto& m, auto& v, const auto& grad) {
    m = opt.beta1 * m + (1.0 - opt.beta1) * grad;
    v = opt.beta2 * v + (1.0 - opt.beta2) * grad.cwiseProduct(grad);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + opt.epsilon);
  };
  for (std::size_t l = 0; l < p.layers(); ++l) {
    update(p.weights[l], s.m_w[l], s.v_w[l], g.weights[l]);
    update(p.biases[l], s.m_b[l], s.v_b[l], g.biases[l]);
    if (mask && !mask->empty()) {
      const auto& mk = mask->layers[l];
      for (Eigen::Index i = 0; i < mk.size(); ++i) {
        if (mk.data()[i] == 0.0) p.weights[l].data()[i] = 0.0;
      }
    }
  }
  ++p.version;
}

/// Multiplies weights by the mask in place (masked entries become +0.0).
inline void apply_mask(MlpParams& p, const PruneMask& mask) {
  for (std::size_t l = 0; l < p.layers(); ++l) {
    for (Eigen::Index i = 0; i < mask.layers[l].size(); ++i) {
      if (mask.layers[l].data()[i] == 0.0) p.weights[l].data()[i] = 0.0;
    }
  }
  ++p.version;
}

/// Max relative error between analytic and central-difference derivatives
/// at `probes` random coordinates. `value(x)` evaluates the objective with
/// coordinate `x` perturbed in place through `coord`.
///
/// Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
/// coordinates with vanishing derivatives from dividing rounding noise by zero.
struct GradCheckOptions {
  double step = 1e-5;
  double floor = 1e-8;
  std::uint64_t seed = 1;
};

inline double check_coordinates(std::size_t coordinate_count,
                                const std::function<double&(std::size_t)>& coord,
                                const std::function<double()>& objective,
                                const std::function<double(std::size_t)>& analytic,
                                std::size_t probes, const GradCheckOptions& opt = {}) {
  if (probes == 0 || coordinate_count == 0) return 0.0;
  Rng rng(opt.seed);
  std::uniform_int_distribution<std::size_t> pick(0, coordinate_count - 1);
  double worst = 0.0;
  for (std::size_t k = 0; k < probes; ++k) {
    const std::size_t i = pick(rng);
    double& x = coord(i);
    const double saved = x;
    x = saved + opt.step;
    const double up = objective();
    x = saved - opt.step;
    const double down = objective();
    x = saved;
    const double numeric = (up - down) / (2.0 * opt.step);
    const double a = analytic(i);
    const double denom = std::max({std::abs(a), std::abs(numeric), opt.floor});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

/// Gradient check over all weights and biases of `params`.
inline double gradient_check(const MlpParams& params,
                             const std::function<double(const MlpParams&)>& loss,
                             const MlpGradients& analytic, std::size_t probes,
                             const GradCheckOptions& opt = {}) {
  MlpParams work = params;
  std::vector<std::pair<double*, double>> coords;
  for (std::size_t l = 0; l < work.layers(); ++l) {
    for (Eigen::Index i = 0; i < work.weights[l].size(); ++i) {
      coords.emplace_back(work.weights[l].data() + i, analytic.weights[l].data()[i]);
    }
    for (Eigen::Index i = 0; i < work.biases[l].size(); ++i) {
      coords.emplace_back(work.biases[l].data() + i, analytic.biases[l][i]);
    }
  }
  return check_coordinates(
      coords.size(), [&](std::size_t i) -> double& { return *coords[i].first; },
      [&] {
        ++work.version;
        return loss(work);
      },
      [&](std::size_t i) { return coords[i].second; }, probes, opt);
}

/// Feature-extractor interface: a differentiable map from a (m, 5n) batch to
/// (m, 1) factor values. The MLP is the only implementation.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual Matrix evaluate(const Matrix& inputs) const = 0;
  /// d(sum of outputs)/d(inputs), shape of `inputs`.
  virtual Matrix input_gradient(const Matrix& inputs) const = 0;
};

class MlpExtractor final : public FeatureExtractor {
 public:
  MlpExtractor(const MlpConfig& cfg, const MlpParams& params, const PruneMask* mask)
      : cfg_(cfg), params_(params), mask_(mask) {}

  Matrix evaluate(const Matrix& inputs) const override {
    return forward(cfg_, params_, mask_, inputs, false).output;
  }

  Matrix input_gradient(const Matrix& inputs) const override {
    auto r = forward(cfg_, params_, mask_, inputs, false);
    return backward(cfg_, params_, mask_, r.cache, Matrix::Ones(r.output.rows(), r.output.cols()))
        .input;
  }

 private:
  const MlpConfig& cfg_;
  const MlpParams& params_;
  const PruneMask* mask_;
};

}  // namespace adnn::nn
