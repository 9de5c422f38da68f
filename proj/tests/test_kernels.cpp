#include "helpers.hpp"

#include "higsfa/kernels.hpp"

#include <doctest.h>
#include <omp.h>

using namespace higsfa;

namespace {

kernels::ClassMoments fresh(const DataMatrix& x, const std::vector<int>& classes, int k) {
  std::vector<double> sizes(static_cast<std::size_t>(k), 0.0);
  for (int c : classes) sizes[static_cast<std::size_t>(c)] += 1.0;
  return kernels::ClassMoments(x.colwise().mean().transpose(), sizes);
}

struct ThreadScope {
  int saved = omp_get_max_threads();
  explicit ThreadScope(int n) { omp_set_num_threads(n); }
  ~ThreadScope() { omp_set_num_threads(saved); }
};

}  // namespace

TEST_CASE("parallel moment accumulation matches the serial reference") {
  Rng rng(1);
  const Eigen::Index n = 3 * kernels::kMomentBlock + 17;
  const auto x = testing::random_matrix(rng, n, 7);
  std::vector<int> classes(static_cast<std::size_t>(n));
  std::vector<double> weights(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < classes.size(); ++i) {
    classes[i] = static_cast<int>(rng.below(5));
    weights[i] = 0.25 + rng.uniform();
  }
  auto par = fresh(x, classes, 5);
  auto ser = par.empty_like();
  kernels::accumulate_moments(par, x, classes, weights);
  kernels::serial::accumulate_moments(ser, x, classes, weights);
  const double scale = ser.pair_second.norm();
  CHECK((par.pair_second - ser.pair_second).norm() < 1e-12 * scale);
  CHECK((par.weighted_second - ser.weighted_second).norm() < 1e-12 * scale);
  CHECK(par.weight_total == doctest::Approx(ser.weight_total));
  CHECK(par.seen == ser.seen);
  for (std::size_t c = 0; c < 5; ++c) {
    CHECK((par.class_sums[c] - ser.class_sums[c]).norm() < 1e-9);
  }
}

TEST_CASE("parallel kernels are bit identical across thread counts") {
  Rng rng(2);
  const Eigen::Index n = 2 * kernels::kMomentBlock + 5;
  const auto x = testing::random_matrix(rng, n, 6);
  std::vector<int> classes(static_cast<std::size_t>(n));
  for (auto& c : classes) c = static_cast<int>(rng.below(3));
  const auto basis = Matrix(testing::random_matrix(rng, 6, 4));
  const Vector mean = Vector::Constant(6, 0.3);
  const auto probe = testing::random_matrix(rng, 50, 6);

  auto run = [&](int threads) {
    ThreadScope scope(threads);
    auto m = fresh(x, classes, 3);
    kernels::accumulate_moments(m, x, classes);
    return std::make_tuple(m.pair_second, kernels::project(x, mean, basis),
                           kernels::nearest_neighbors(probe, x));
  };
  const auto one = run(1);
  const auto four = run(4);
  CHECK(std::get<0>(one) == std::get<0>(four));
  CHECK(std::get<1>(one) == std::get<1>(four));
  CHECK(std::get<2>(one) == std::get<2>(four));
}

TEST_CASE("merging split accumulations equals one pass") {
  Rng rng(3);
  const auto x = testing::random_matrix(rng, 100, 4);
  std::vector<int> classes(100);
  for (auto& c : classes) c = static_cast<int>(rng.below(2));
  auto whole = fresh(x, classes, 2);
  auto a = whole.empty_like();
  auto b = whole.empty_like();
  kernels::serial::accumulate_moments(whole, x, classes);
  kernels::serial::accumulate_moments(a, x.topRows(40), std::span(classes).first(40));
  kernels::serial::accumulate_moments(b, x.bottomRows(60), std::span(classes).subspan(40));
  a.merge(b);
  CHECK((a.pair_second - whole.pair_second).norm() < 1e-10);
  CHECK(a.seen == whole.seen);
}

TEST_CASE("patch extraction matches the serial reference and the layout") {
  Rng rng(4);
  const Shape3 shape{9, 7, 3};
  const auto images = testing::random_matrix(rng, 5, static_cast<Eigen::Index>(shape.size()));
  const auto par = kernels::extract_patches(images, shape, 3, 2);
  const auto ser = kernels::serial::extract_patches(images, shape, 3, 2);
  CHECK(par == ser);
  // 4 x 3 positions; check one entry by hand: image 2, position (1, 2),
  // offset (dy=2, dx=1), channel 1.
  REQUIRE(par.rows() == 5 * 12);
  REQUIRE(par.cols() == 27);
  const auto row = 2 * 12 + 1 * 3 + 2;
  const auto col = (2 * 3 + 1) * 3 + 1;
  const auto y = 1 * 2 + 2, xx = 2 * 2 + 1;
  CHECK(par(row, col) == images(2, (y * 7 + xx) * 3 + 1));
}

TEST_CASE("projection matches the serial reference") {
  Rng rng(5);
  const auto x = testing::random_matrix(rng, 2500, 9);
  const Matrix basis = testing::random_matrix(rng, 9, 4);
  Vector mean(9);
  for (Eigen::Index i = 0; i < 9; ++i) mean(i) = rng.normal();
  const auto par = kernels::project(x, mean, basis);
  const auto ser = kernels::serial::project(x, mean, basis);
  CHECK((par - ser).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("nearest neighbours with ties and the serial reference") {
  DataMatrix probe(1, 1), target(2, 1);
  probe << 0;
  target << -1, 3;
  CHECK(kernels::nearest_neighbors(probe, target) == std::vector<std::size_t>{0});

  DataMatrix tie(3, 1);
  tie << 1, -1, 1;
  CHECK(kernels::nearest_neighbors(probe, tie) == std::vector<std::size_t>{0});

  Rng rng(6);
  const auto p = testing::random_matrix(rng, 40, 5);
  const auto t = testing::random_matrix(rng, 30, 5);
  CHECK(kernels::nearest_neighbors(p, t) == kernels::serial::nearest_neighbors(p, t));
}
