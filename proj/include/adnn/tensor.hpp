#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "adnn/error.hpp"

namespace adnn::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Dense row-major double tensor. Used at module boundaries (batches,
/// saliency maps); the network internals work on Eigen matrices.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != element_count(shape_)) {
      throw Error("tensor data length " + std::to_string(data_.size()) +
                  " does not match shape product " +
                  std::to_string(element_count(shape_)));
    }
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  template <typename... Idx>
  double& operator()(Idx... idx) {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }
  template <typename... Idx>
  double operator()(Idx... idx) const {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }

  /// Same data, new shape; element counts must agree.
  Tensor reshaped(std::vector<std::size_t> shape) const {
    return Tensor(std::move(shape), data_);
  }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  /// Views the tensor as a (dim0, rest) matrix.
  Matrix as_matrix() const {
    if (shape_.empty()) return {};
    const std::size_t rows = shape_[0];
    const std::size_t cols = rows == 0 ? 0 : data_.size() / rows;
    return Eigen::Map<const Matrix>(data_.data(), static_cast<Eigen::Index>(rows),
                                    static_cast<Eigen::Index>(cols));
  }

  static Tensor from_matrix(const Matrix& m, std::vector<std::size_t> shape) {
    std::vector<double> data(m.data(), m.data() + m.size());
    return Tensor(std::move(shape), std::move(data));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    if (shape.empty()) return 0;
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }

  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

}  // namespace adnn::nn
