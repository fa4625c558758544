#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "teddy/error.hpp"

namespace teddy {

using Index = std::int64_t;
using Shape = std::vector<Index>;

using MatrixMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatrixMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

inline Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

inline std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense row-major double tensor. Deliberately minimal: the layers own all the
// interesting math and use Eigen maps over this storage.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(static_cast<std::size_t>(shape_numel(shape)), 0.0) {}
  Tensor(Shape s, double fill)
      : shape(std::move(s)), data(static_cast<std::size_t>(shape_numel(shape)), fill) {}

  Index numel() const { return static_cast<Index>(data.size()); }
  Index dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const { return shape.size(); }

  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }

  double& operator[](Index i) { return data[static_cast<std::size_t>(i)]; }
  double operator[](Index i) const { return data[static_cast<std::size_t>(i)]; }

  // [N, C, H, W] addressing for image batches.
  double& at4(Index n, Index c, Index h, Index w) {
    return data[static_cast<std::size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }
  double at4(Index n, Index c, Index h, Index w) const {
    return data[static_cast<std::size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }

  double& at2(Index r, Index c) { return data[static_cast<std::size_t>(r * shape[1] + c)]; }
  double at2(Index r, Index c) const { return data[static_cast<std::size_t>(r * shape[1] + c)]; }

  MatrixMap mat(Index rows, Index cols) { return MatrixMap(ptr(), rows, cols); }
  ConstMatrixMap mat(Index rows, Index cols) const { return ConstMatrixMap(ptr(), rows, cols); }
  // 2-D view using the tensor's own shape: leading dim x trailing product.
  MatrixMap mat2d() { return mat(shape[0], numel() / shape[0]); }
  ConstMatrixMap mat2d() const { return mat(shape[0], numel() / shape[0]); }
  VectorMap vec() { return VectorMap(ptr(), numel()); }
  ConstVectorMap vec() const { return ConstVectorMap(ptr(), numel()); }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline void check_shape(const Tensor& t, const Shape& expected, const std::string& what) {
  if (t.shape != expected)
    fail(ErrorCode::shape_mismatch,
         what + ": expected " + shape_to_string(expected) + ", given " + shape_to_string(t.shape));
}

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape && a.data == b.data;
}

inline double dot(const Tensor& a, const Tensor& b) { return a.vec().dot(b.vec()); }

inline double l2_norm(const Tensor& t) { return t.vec().norm(); }

}  // namespace teddy
