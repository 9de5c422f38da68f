#include "higsfa/kernels.hpp"

#include "higsfa/error.hpp"

#include <algorithm>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace higsfa::kernels {

ClassMoments::ClassMoments(Vector s, std::vector<double> sizes)
    : shift(std::move(s)),
      class_sizes(std::move(sizes)),
      seen(class_sizes.size(), 0.0),
      class_sums(class_sizes.size(), Vector::Zero(shift.size())),
      weighted_sum(Vector::Zero(shift.size())),
      weighted_second(Matrix::Zero(shift.size(), shift.size())),
      pair_second(Matrix::Zero(shift.size(), shift.size())) {}

ClassMoments ClassMoments::empty_like() const {
  return ClassMoments(shift, class_sizes);
}

void ClassMoments::merge(const ClassMoments& other) {
  if (other.dim() != dim() || other.num_classes() != num_classes()) {
    fail(ErrorKind::Dimension, "cannot merge moments of different shape");
  }
  for (std::size_t c = 0; c < num_classes(); ++c) {
    seen[c] += other.seen[c];
    class_sums[c] += other.class_sums[c];
  }
  weight_total += other.weight_total;
  weighted_sum += other.weighted_sum;
  weighted_second += other.weighted_second;
  pair_second += other.pair_second;
}

namespace {

void check_inputs(const ClassMoments& m, const DataMatrix& x,
                  std::span<const int> classes, std::span<const double> weights) {
  if (static_cast<std::size_t>(x.cols()) != m.dim()) {
    fail(ErrorKind::Dimension, "moment input has " + std::to_string(x.cols()) +
                                   " columns, expected " + std::to_string(m.dim()));
  }
  if (classes.size() != static_cast<std::size_t>(x.rows()) ||
      (!weights.empty() && weights.size() != classes.size())) {
    fail(ErrorKind::Dimension, "class/weight count does not match rows");
  }
  for (int c : classes) {
    if (c < 0 || static_cast<std::size_t>(c) >= m.num_classes()) {
      fail(ErrorKind::Consistency, "class index " + std::to_string(c) + " out of range");
    }
  }
}

// Adds rows [begin, end) into `part` with two rank-k updates.
void accumulate_block(ClassMoments& part, const DataMatrix& x,
                      std::span<const int> classes, std::span<const double> weights,
                      Eigen::Index begin, Eigen::Index end) {
  const Eigen::Index n = end - begin;
  const Eigen::Index d = x.cols();
  Matrix centered(d, n);  // column per row of x
  Matrix scaled_w(d, n);
  Matrix scaled_p(d, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index r = begin + i;
    const int c = classes[static_cast<std::size_t>(r)];
    const double v = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(r)];
    centered.col(i) = x.row(r).transpose() - part.shift;
    scaled_w.col(i) = std::sqrt(v) * centered.col(i);
    scaled_p.col(i) = std::sqrt(part.class_sizes[static_cast<std::size_t>(c)]) *
                      centered.col(i);
    part.seen[static_cast<std::size_t>(c)] += 1.0;
    part.class_sums[static_cast<std::size_t>(c)] += centered.col(i);
    part.weight_total += v;
    part.weighted_sum += v * centered.col(i);
  }
  part.weighted_second.selfadjointView<Eigen::Lower>().rankUpdate(scaled_w);
  part.pair_second.selfadjointView<Eigen::Lower>().rankUpdate(scaled_p);
}

}  // namespace

void accumulate_moments(ClassMoments& m, const DataMatrix& x,
                        std::span<const int> classes,
                        std::span<const double> weights) {
  check_inputs(m, x, classes, weights);
  const Eigen::Index rows = x.rows();
  const Eigen::Index blocks = (rows + kMomentBlock - 1) / kMomentBlock;
  const int threads = max_threads();
  // Blocks are processed `threads` at a time; partials merge in block order.
  for (Eigen::Index group = 0; group < blocks; group += threads) {
    const Eigen::Index in_group = std::min<Eigen::Index>(threads, blocks - group);
    std::vector<ClassMoments> partials(static_cast<std::size_t>(in_group));
#pragma omp parallel for schedule(static, 1)
    for (Eigen::Index b = 0; b < in_group; ++b) {
      auto& part = partials[static_cast<std::size_t>(b)];
      part = m.empty_like();
      const Eigen::Index begin = (group + b) * kMomentBlock;
      const Eigen::Index end = std::min(rows, begin + kMomentBlock);
      accumulate_block(part, x, classes, weights, begin, end);
    }
    for (const auto& part : partials) m.merge(part);
  }
}

DataMatrix extract_patches(const DataMatrix& images, const Shape3& shape,
                           int filter, int stride) {
  const int gh = (shape.height - filter) / stride + 1;
  const int gw = (shape.width - filter) / stride + 1;
  const Eigen::Index per_image = static_cast<Eigen::Index>(gh) * gw;
  const Eigen::Index width = static_cast<Eigen::Index>(filter) * filter * shape.channels;
  const Eigen::Index n = images.rows();
  DataMatrix out(n * per_image, width);
  const std::size_t row_len = static_cast<std::size_t>(filter) * shape.channels;
#pragma omp parallel for schedule(static)
  for (Eigen::Index img = 0; img < n; ++img) {
    const double* src = images.row(img).data();
    for (int py = 0; py < gh; ++py) {
      for (int px = 0; px < gw; ++px) {
        double* dst = out.row(img * per_image + py * gw + px).data();
        for (int dy = 0; dy < filter; ++dy) {
          const std::size_t offset =
              (static_cast<std::size_t>(py * stride + dy) * shape.width + px * stride) *
              shape.channels;
          std::copy_n(src + offset, row_len, dst + dy * row_len);
        }
      }
    }
  }
  return out;
}

DataMatrix project(const DataMatrix& x, const Vector& mean, const Matrix& basis) {
  if (x.cols() != mean.size() || basis.rows() != mean.size()) {
    fail(ErrorKind::Dimension, "projection input has " + std::to_string(x.cols()) +
                                   " columns, model expects " +
                                   std::to_string(mean.size()));
  }
  // Row by row: a blocked GEMM rounds edge rows differently from interior
  // ones, which would make a sample's features depend on its batch position.
  DataMatrix out(x.rows(), basis.cols());
  const Eigen::RowVectorXd mean_row = mean.transpose();
  const Matrix basis_t = basis.transpose();
#pragma omp parallel
  {
    Eigen::VectorXd centered(x.cols());
#pragma omp for schedule(static)
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      centered = (x.row(r) - mean_row).transpose();
      out.row(r).noalias() = (basis_t * centered).transpose();
    }
  }
  return out;
}

namespace {

std::size_t nearest_of(const DataMatrix& probe, Eigen::Index p,
                       const DataMatrix& target) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t < target.rows(); ++t) {
    const double d = (probe.row(p) - target.row(t)).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::size_t>(t);
    }
  }
  return best;
}

void check_nn(const DataMatrix& probe, const DataMatrix& target) {
  if (target.rows() == 0) fail(ErrorKind::Request, "empty target set");
  if (probe.cols() != target.cols()) {
    fail(ErrorKind::Dimension, "probe width " + std::to_string(probe.cols()) +
                                   " != target width " + std::to_string(target.cols()));
  }
}

}  // namespace

std::vector<std::size_t> nearest_neighbors(const DataMatrix& probe,
                                           const DataMatrix& target) {
  check_nn(probe, target);
  std::vector<std::size_t> out(static_cast<std::size_t>(probe.rows()));
#pragma omp parallel for schedule(static)
  for (Eigen::Index p = 0; p < probe.rows(); ++p) {
    out[static_cast<std::size_t>(p)] = nearest_of(probe, p, target);
  }
  return out;
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

// ------------------------------------------------------------- reference

namespace serial {

void accumulate_moments(ClassMoments& m, const DataMatrix& x,
                        std::span<const int> classes,
                        std::span<const double> weights) {
  check_inputs(m, x, classes, weights);
  const Eigen::Index d = x.cols();
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const auto c = static_cast<std::size_t>(classes[static_cast<std::size_t>(r)]);
    const double v = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(r)];
    const double nc = m.class_sizes[c];
    m.seen[c] += 1.0;
    m.weight_total += v;
    for (Eigen::Index i = 0; i < d; ++i) {
      const double xi = x(r, i) - m.shift(i);
      m.class_sums[c](i) += xi;
      m.weighted_sum(i) += v * xi;
      for (Eigen::Index j = 0; j <= i; ++j) {
        const double xj = x(r, j) - m.shift(j);
        m.weighted_second(i, j) += v * xi * xj;
        m.pair_second(i, j) += nc * xi * xj;
      }
    }
  }
}

DataMatrix extract_patches(const DataMatrix& images, const Shape3& shape,
                           int filter, int stride) {
  const int gh = (shape.height - filter) / stride + 1;
  const int gw = (shape.width - filter) / stride + 1;
  const int c = shape.channels;
  DataMatrix out(images.rows() * gh * gw, static_cast<Eigen::Index>(filter) * filter * c);
  Eigen::Index row = 0;
  for (Eigen::Index img = 0; img < images.rows(); ++img) {
    for (int py = 0; py < gh; ++py) {
      for (int px = 0; px < gw; ++px, ++row) {
        Eigen::Index col = 0;
        for (int dy = 0; dy < filter; ++dy) {
          for (int dx = 0; dx < filter; ++dx) {
            for (int ch = 0; ch < c; ++ch, ++col) {
              const int y = py * stride + dy;
              const int xx = px * stride + dx;
              out(row, col) = images(img, (static_cast<Eigen::Index>(y) * shape.width + xx) * c + ch);
            }
          }
        }
      }
    }
  }
  return out;
}

DataMatrix project(const DataMatrix& x, const Vector& mean, const Matrix& basis) {
  if (x.cols() != mean.size() || basis.rows() != mean.size()) {
    fail(ErrorKind::Dimension, "projection dimension mismatch");
  }
  DataMatrix out = DataMatrix::Zero(x.rows(), basis.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index k = 0; k < basis.cols(); ++k) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < x.cols(); ++i) s += (x(r, i) - mean(i)) * basis(i, k);
      out(r, k) = s;
    }
  }
  return out;
}

std::vector<std::size_t> nearest_neighbors(const DataMatrix& probe,
                                           const DataMatrix& target) {
  check_nn(probe, target);
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(probe.rows()));
  for (Eigen::Index p = 0; p < probe.rows(); ++p) out.push_back(nearest_of(probe, p, target));
  return out;
}

}  // namespace serial

}  // namespace higsfa::kernels
