#pragma once

// Data-parallel kernels (OpenMP) and their serial reference versions.
// Parallel kernels split work into fixed-size blocks that do not depend on
// the thread count and merge partial results in block order, so their
// output is bit-identical for any number of threads.

#include "higsfa/types.hpp"

#include <span>
#include <vector>

namespace higsfa::kernels {

/// Streaming sufficient statistics for the class-clique graph, in
/// coordinates shifted by `shift` (keeps the second-moment subtraction well
/// conditioned). Class sizes N_c are declared up front, which lets the
/// graph moment be accumulated as one N_c-weighted second moment instead of
/// one matrix per class:
///
///   sum_c (N_c S_c - m_c m_c^T) = sum_n N_{c(n)} x_n x_n^T - sum_c m_c m_c^T
struct ClassMoments {
  Vector shift;
  std::vector<double> class_sizes;   // declared N_c
  std::vector<double> seen;          // rows added per class
  std::vector<Vector> class_sums;    // m_c = sum_{n in c} (x_n - shift)
  double weight_total = 0.0;         // sum v_n
  Vector weighted_sum;               // sum v_n (x_n - shift)
  Matrix weighted_second;            // sum v_n (x_n - shift)(x_n - shift)^T, lower
  Matrix pair_second;                // sum N_c(n) (x_n - shift)(x_n - shift)^T, lower

  ClassMoments() = default;
  ClassMoments(Vector shift, std::vector<double> class_sizes);

  std::size_t dim() const { return static_cast<std::size_t>(shift.size()); }
  std::size_t num_classes() const { return class_sizes.size(); }

  /// Adds `other` (same shift and classes) into *this.
  void merge(const ClassMoments& other);
  /// Same shift and classes, all sums zero.
  ClassMoments empty_like() const;
};

/// Rows per accumulation block.
inline constexpr Eigen::Index kMomentBlock = 2048;

/// Accumulates rows of `x` into `m`. `classes[i]` is the dense class index
/// of row i; `weights` is empty or one weight per row.
void accumulate_moments(ClassMoments& m, const DataMatrix& x,
                        std::span<const int> classes,
                        std::span<const double> weights = {});

/// Patch extraction over a batch of images with layout `shape`: one row per
/// (image, position), positions in row-major scan order, each row laid out
/// as (dy, dx, channel) with channel fastest.
DataMatrix extract_patches(const DataMatrix& images, const Shape3& shape,
                           int filter, int stride);

/// Row-wise affine projection (x - mean) * basis.
DataMatrix project(const DataMatrix& x, const Vector& mean,
                   const Matrix& basis);

/// For each probe row, index of the nearest target row in Euclidean
/// distance; ties go to the lowest index.
std::vector<std::size_t> nearest_neighbors(const DataMatrix& probe,
                                           const DataMatrix& target);

namespace serial {

void accumulate_moments(ClassMoments& m, const DataMatrix& x,
                        std::span<const int> classes,
                        std::span<const double> weights = {});

DataMatrix extract_patches(const DataMatrix& images, const Shape3& shape,
                           int filter, int stride);

DataMatrix project(const DataMatrix& x, const Vector& mean,
                   const Matrix& basis);

std::vector<std::size_t> nearest_neighbors(const DataMatrix& probe,
                                           const DataMatrix& target);

}  // namespace serial

/// Number of OpenMP threads the parallel kernels will use.
int max_threads();

}  // namespace higsfa::kernels
