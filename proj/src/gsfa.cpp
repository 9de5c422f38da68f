#include "higsfa/gsfa.hpp"

#include "higsfa/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace higsfa::gsfa {

bool TrainingGraph::uniform_weights() const {
  return std::all_of(node_weights.begin(), node_weights.end(),
                     [](double v) { return v == 1.0; });
}

TrainingGraph class_graph(std::span<const std::int32_t> labels) {
  return class_graph(labels, std::vector<double>(labels.size(), 1.0));
}

TrainingGraph class_graph(std::span<const std::int32_t> labels,
                          std::vector<double> node_weights) {
  if (labels.empty()) fail(ErrorKind::Request, "training graph needs at least one node");
  if (node_weights.size() != labels.size()) {
    fail(ErrorKind::Dimension, "node weight count does not match label count");
  }
  TrainingGraph g;
  std::map<std::int32_t, int> dense;
  for (auto l : labels) dense.emplace(l, 0);
  for (auto& [label, index] : dense) {
    index = static_cast<int>(g.class_labels.size());
    g.class_labels.push_back(label);
  }
  g.class_sizes.assign(g.class_labels.size(), 0);
  g.node_class.reserve(labels.size());
  for (auto l : labels) {
    const int c = dense.at(l);
    g.node_class.push_back(c);
    ++g.class_sizes[static_cast<std::size_t>(c)];
  }
  for (double v : node_weights) {
    if (!(v >= 0.0)) fail(ErrorKind::Request, "node weights must be non-negative");
    g.q += v;
  }
  for (auto n : g.class_sizes) g.r += static_cast<double>(n) * static_cast<double>(n);
  g.node_weights = std::move(node_weights);
  return g;
}

namespace {

Matrix full_from_lower(const Matrix& lower) {
  Matrix out = lower.selfadjointView<Eigen::Lower>();
  return out;
}

}  // namespace

Moments finalize(const kernels::ClassMoments& acc) {
  for (std::size_t c = 0; c < acc.num_classes(); ++c) {
    if (acc.seen[c] != acc.class_sizes[c]) {
      fail(ErrorKind::Consistency,
           "class " + std::to_string(c) + " declared " +
               std::to_string(static_cast<long long>(acc.class_sizes[c])) +
               " nodes but received " +
               std::to_string(static_cast<long long>(acc.seen[c])));
    }
  }
  if (!(acc.weight_total > 0.0)) {
    fail(ErrorKind::DegenerateInput, "total node weight Q must be positive");
  }
  Moments m;
  m.q = acc.weight_total;
  double samples = 0.0;
  for (double n : acc.class_sizes) {
    m.r += n * n;
    samples += n;
  }
  m.samples = static_cast<std::size_t>(samples);

  const Vector centered_mean = acc.weighted_sum / m.q;
  m.mean = acc.shift + centered_mean;
  m.cov = full_from_lower(acc.weighted_second) / m.q -
          centered_mean * centered_mean.transpose();

  Matrix class_outer = Matrix::Zero(acc.dim(), acc.dim());
  for (const auto& s : acc.class_sums) {
    class_outer.selfadjointView<Eigen::Lower>().rankUpdate(s);
  }
  m.diff = (2.0 / m.r) * full_from_lower(acc.pair_second - class_outer);
  return m;
}

Moments compute_moments(const DataMatrix& x, const TrainingGraph& g) {
  if (static_cast<std::size_t>(x.rows()) != g.num_nodes()) {
    fail(ErrorKind::Dimension, "data has " + std::to_string(x.rows()) +
                                   " rows, graph has " + std::to_string(g.num_nodes()) +
                                   " nodes");
  }
  const Vector shift = x.colwise().mean().transpose();
  std::vector<double> sizes(g.class_sizes.begin(), g.class_sizes.end());
  kernels::ClassMoments acc(shift, std::move(sizes));
  if (g.uniform_weights()) {
    kernels::accumulate_moments(acc, x, g.node_class);
  } else {
    kernels::accumulate_moments(acc, x, g.node_class, g.node_weights);
  }
  return finalize(acc);
}

WeightedMoments weighted_moments(const DataMatrix& x, const TrainingGraph& g) {
  auto m = compute_moments(x, g);
  return {std::move(m.mean), std::move(m.cov)};
}

Matrix graph_diff_moment(const DataMatrix& x, const TrainingGraph& g) {
  return compute_moments(x, g).diff;
}

Vector delta_values(const DataMatrix& y, const TrainingGraph& g) {
  if (static_cast<std::size_t>(y.rows()) != g.num_nodes()) {
    fail(ErrorKind::Dimension, "feature rows do not match graph nodes");
  }
  const Eigen::Index cols = y.cols();
  const Eigen::RowVectorXd shift = y.colwise().mean();
  const std::size_t k = g.num_classes();
  Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(k), cols);
  Matrix squares = Matrix::Zero(static_cast<Eigen::Index>(k), cols);
  for (Eigen::Index n = 0; n < y.rows(); ++n) {
    const auto c = g.node_class[static_cast<std::size_t>(n)];
    const Eigen::RowVectorXd v = y.row(n) - shift;
    sums.row(c) += v;
    squares.row(c) += v.cwiseAbs2();
  }
  Vector delta = Vector::Zero(cols);
  for (std::size_t c = 0; c < k; ++c) {
    const double nc = static_cast<double>(g.class_sizes[c]);
    const auto ci = static_cast<Eigen::Index>(c);
    delta += (nc * squares.row(ci) - sums.row(ci).cwiseAbs2()).transpose();
  }
  return (2.0 / g.r) * delta;
}

SymmetricEigen symmetric_eigen(const Matrix& a) {
  const Matrix sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
  if (solver.info() != Eigen::Success) {
    fail(ErrorKind::DegenerateInput, "symmetric eigensolver did not converge");
  }
  return {solver.eigenvalues(), solver.eigenvectors()};
}

void canonicalize_signs(Matrix& columns) {
  for (Eigen::Index j = 0; j < columns.cols(); ++j) {
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index i = 0; i < columns.rows(); ++i) {
      const double a = std::abs(columns(i, j));
      if (a > best) {
        best = a;
        arg = i;
      }
    }
    if (columns.rows() > 0 && columns(arg, j) < 0.0) columns.col(j) *= -1.0;
  }
}

GsfaModel solve_gsfa(const Moments& moments, std::size_t output_dim, double reg) {
  const auto d = static_cast<std::size_t>(moments.mean.size());
  if (output_dim < 1 || output_dim > d) {
    fail(ErrorKind::Request, "requested " + std::to_string(output_dim) +
                                 " features from input dimension " + std::to_string(d));
  }
  if (moments.samples < 2) {
    fail(ErrorKind::Request, "GSFA needs at least 2 samples");
  }
  if (reg < 0.0) fail(ErrorKind::Request, "ridge coefficient must be >= 0");
  const double trace = moments.cov.trace();
  if (!(trace > 0.0)) {
    fail(ErrorKind::DegenerateInput, "input has zero variance in every dimension");
  }

  // The ridge shifts every eigenvalue by the same amount, so C and C' share
  // eigenvectors. Truncation looks at the unshifted spectrum: a null direction
  // kept alive only by the ridge has zero difference moment and would come out
  // as a spurious delta-0 feature that is constant on the training data.
  const double ridge = reg * trace / static_cast<double>(d);
  Matrix ridged = moments.cov;
  ridged.diagonal().array() += ridge;
  const auto cov_eig = symmetric_eigen(ridged);
  const Vector raw = cov_eig.values.array() - ridge;
  const double floor = kRelativeEigenFloor * raw.maxCoeff();

  std::vector<Eigen::Index> kept;
  for (Eigen::Index i = 0; i < cov_eig.values.size(); ++i) {
    if (raw(i) >= floor && cov_eig.values(i) > 0.0) kept.push_back(i);
  }
  Matrix whitening(d, static_cast<Eigen::Index>(kept.size()));
  for (std::size_t k = 0; k < kept.size(); ++k) {
    whitening.col(static_cast<Eigen::Index>(k)) =
        cov_eig.vectors.col(kept[k]) / std::sqrt(cov_eig.values(kept[k]));
  }

  const Matrix whitened_diff = whitening.transpose() * moments.diff * whitening;
  const auto slow_eig = symmetric_eigen(whitened_diff);

  GsfaModel model;
  model.requested_dim = output_dim;
  const auto out = std::min<std::size_t>(output_dim, kept.size());
  if (out < output_dim) {
    model.notes.push_back("output_dim reduced from " + std::to_string(output_dim) +
                          " to " + std::to_string(out) +
                          " (covariance rank after truncation)");
  }
  const auto j = static_cast<Eigen::Index>(out);
  model.mean = moments.mean;
  model.basis = whitening * slow_eig.vectors.leftCols(j);
  model.deltas = slow_eig.values.head(j).cwiseMax(0.0);
  canonicalize_signs(model.basis);
  return model;
}

GsfaModel solve_gsfa(const DataMatrix& x, const TrainingGraph& g,
                     std::size_t output_dim, double reg) {
  if (x.rows() < 2) fail(ErrorKind::Request, "GSFA needs at least 2 samples");
  return solve_gsfa(compute_moments(x, g), output_dim, reg);
}

PcaModel fit_pca(const Vector& mean, const Matrix& cov, std::size_t samples,
                 std::size_t k) {
  if (k == 0) fail(ErrorKind::Request, "PCA component count must be positive");
  const auto d = static_cast<std::size_t>(cov.rows());
  PcaModel model;
  model.mean = mean;
  const std::size_t cap = std::min(samples > 0 ? samples - 1 : 0, d);
  if (k > cap) {
    model.notes.push_back("components reduced from " + std::to_string(k) + " to " +
                          std::to_string(cap) + " (available rank)");
    k = cap;
  }
  const auto eig = symmetric_eigen(cov);
  const auto kk = static_cast<Eigen::Index>(k);
  model.components.resize(static_cast<Eigen::Index>(d), kk);
  model.variances.resize(kk);
  for (Eigen::Index i = 0; i < kk; ++i) {
    const Eigen::Index src = static_cast<Eigen::Index>(d) - 1 - i;
    model.components.col(i) = eig.vectors.col(src);
    model.variances(i) = std::max(0.0, eig.values(src));
  }
  canonicalize_signs(model.components);
  return model;
}

PcaModel fit_pca(const DataMatrix& x, std::size_t k) {
  const Vector mean = x.colwise().mean().transpose();
  const DataMatrix centered = x.rowwise() - mean.transpose();
  const Matrix cov = (centered.transpose() * centered) / static_cast<double>(x.rows());
  return fit_pca(mean, cov, static_cast<std::size_t>(x.rows()), k);
}

DataMatrix apply_linear(const GsfaModel& model, const DataMatrix& x) {
  return kernels::project(x, model.mean, model.basis);
}

DataMatrix apply_linear(const PcaModel& model, const DataMatrix& x) {
  return kernels::project(x, model.mean, model.components);
}

}  // namespace higsfa::gsfa
