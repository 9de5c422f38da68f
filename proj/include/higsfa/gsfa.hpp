#pragma once

// Graph-based slow feature analysis over a linear function space.
//
// Given node weights v(n) and edge weights g(n,n'), the solver finds
// projections y_j = (x - mean)^T w_j that minimize
//
//     delta_j = (1/R) sum_{n,n'} g(n,n') (y_j(n) - y_j(n'))^2
//
// subject to weighted zero mean, weighted unit variance and weighted
// decorrelation of the outputs (weights v, normalizer Q = sum v). Pairs are
// ordered and include n = n', so R = sum_c N_c^2 for the class-clique graph.

#include "higsfa/kernels.hpp"
#include "higsfa/types.hpp"

#include <span>
#include <string>
#include <vector>

namespace higsfa::gsfa {

/// Node weights plus a class-clique edge structure: g(n,n') = 1 iff the two
/// nodes share a class.
struct TrainingGraph {
  std::vector<double> node_weights;
  std::vector<int> node_class;        // dense class index per node
  std::vector<std::int32_t> class_labels;  // original label per dense index
  std::vector<std::size_t> class_sizes;
  double q = 0.0;
  double r = 0.0;

  std::size_t num_nodes() const { return node_class.size(); }
  std::size_t num_classes() const { return class_sizes.size(); }
  bool uniform_weights() const;

  /// Explicit edge weight, for oracles.
  double edge(std::size_t n, std::size_t m) const {
    return node_class[n] == node_class[m] ? 1.0 : 0.0;
  }
};

TrainingGraph class_graph(std::span<const std::int32_t> labels);

/// Same edges as class_graph with custom non-negative node weights.
TrainingGraph class_graph(std::span<const std::int32_t> labels,
                          std::vector<double> node_weights);

/// Sufficient statistics for the solver: weighted mean and covariance, and
/// the graph difference moment D = (1/R) sum g (x_n - x_n')(x_n - x_n')^T.
struct Moments {
  Vector mean;
  Matrix cov;
  Matrix diff;
  double q = 0.0;
  double r = 0.0;
  std::size_t samples = 0;
};

/// Reduces accumulated class moments to solver statistics. D uses the
/// per-class identity sum_c (2 N_c S_c - 2 m_c m_c^T) / R.
Moments finalize(const kernels::ClassMoments& acc);

Moments compute_moments(const DataMatrix& x, const TrainingGraph& g);

struct WeightedMoments {
  Vector mean;
  Matrix cov;
};

WeightedMoments weighted_moments(const DataMatrix& x, const TrainingGraph& g);

Matrix graph_diff_moment(const DataMatrix& x, const TrainingGraph& g);

/// Per-column delta values of an output matrix.
Vector delta_values(const DataMatrix& y, const TrainingGraph& g);

struct GsfaModel {
  Vector mean;
  Matrix basis;        // input_dim x output_dim
  Vector deltas;       // non-decreasing, non-negative
  std::size_t requested_dim = 0;
  std::vector<std::string> notes;

  std::size_t input_dim() const { return static_cast<std::size_t>(mean.size()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(basis.cols()); }
};

struct PcaModel {
  Vector mean;
  Matrix components;   // input_dim x K, orthonormal
  Vector variances;    // non-increasing
  std::vector<std::string> notes;

  std::size_t input_dim() const { return static_cast<std::size_t>(mean.size()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(components.cols()); }
};

inline constexpr double kDefaultRidge = 1e-7;
inline constexpr double kRelativeEigenFloor = 1e-9;

GsfaModel solve_gsfa(const Moments& moments, std::size_t output_dim,
                     double reg = kDefaultRidge);
GsfaModel solve_gsfa(const DataMatrix& x, const TrainingGraph& g,
                     std::size_t output_dim, double reg = kDefaultRidge);

/// PCA of a covariance matrix estimated from `samples` rows. K is capped
/// at min(samples - 1, dim) with a note.
PcaModel fit_pca(const Vector& mean, const Matrix& cov, std::size_t samples,
                 std::size_t k);
PcaModel fit_pca(const DataMatrix& x, std::size_t k);

DataMatrix apply_linear(const GsfaModel& model, const DataMatrix& x);
DataMatrix apply_linear(const PcaModel& model, const DataMatrix& x);

struct SymmetricEigen {
  Vector values;   // ascending
  Matrix vectors;  // columns, matching values
};

/// Symmetric eigendecomposition; `a` is symmetrized before solving.
SymmetricEigen symmetric_eigen(const Matrix& a);

/// Flips each column so its largest-magnitude entry is positive (first
/// index wins ties).
void canonicalize_signs(Matrix& columns);

}  // namespace higsfa::gsfa
