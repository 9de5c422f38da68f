#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <vector>

namespace higsfa {

/// Rows are samples, columns are features.
using DataMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

using Labels = std::vector<std::int32_t>;

/// Spatial layout of an image-like representation. Flattened storage is
/// row-major over (y, x, channel) with the channel index fastest.
struct Shape3 {
  int height = 0;
  int width = 0;
  int channels = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(height) * width * channels;
  }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

}  // namespace higsfa
