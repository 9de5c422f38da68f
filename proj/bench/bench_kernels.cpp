// Parallel kernels against their serial references, on layer-1 sized inputs
// (a batch of 28x28 images, 5x5 patches at stride 2).

#include "higsfa/kernels.hpp"
#include "higsfa/network.hpp"
#include "higsfa/rng.hpp"

#include <benchmark/benchmark.h>

using namespace higsfa;

namespace {

constexpr int kSide = 28;

DataMatrix random_rows(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  DataMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform();
  return m;
}

const DataMatrix& patches() {
  static const DataMatrix p = kernels::extract_patches(random_rows(64, kSide * kSide, 1),
                                                       {kSide, kSide, 1}, 5, 2);
  return p;
}

template <auto Fn>
void BM_Patches(benchmark::State& state) {
  const auto images = random_rows(state.range(0), kSide * kSide, 2);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(images, Shape3{kSide, kSide, 1}, 5, 2));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <auto Fn>
void BM_Moments(benchmark::State& state) {
  const auto& x = patches();
  std::vector<int> classes(static_cast<std::size_t>(x.rows()));
  for (std::size_t i = 0; i < classes.size(); ++i) classes[i] = static_cast<int>(i % 10);
  const std::vector<double> sizes(10, static_cast<double>(x.rows()) / 10);
  for (auto _ : state) {
    kernels::ClassMoments m(Vector::Zero(x.cols()), sizes);
    Fn(m, x, classes, {});
    benchmark::DoNotOptimize(m.pair_second.data());
  }
  state.SetItemsProcessed(state.iterations() * x.rows());
}

template <auto Fn>
void BM_Project(benchmark::State& state) {
  const auto& x = patches();
  const Vector mean = Vector::Zero(x.cols());
  const Matrix basis = random_rows(x.cols(), 25, 3);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(x, mean, basis));
  state.SetItemsProcessed(state.iterations() * x.rows());
}

template <auto Fn>
void BM_Nearest(benchmark::State& state) {
  const auto probe = random_rows(state.range(0), 784, 4);
  const auto target = random_rows(state.range(0), 784, 5);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(probe, target));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_Forward(benchmark::State& state, bool parallel) {
  const auto images = random_rows(200, kSide * kSide, 6);
  Labels labels(200);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::int32_t>(i % 10);
  static const auto model =
      net::train_network(images, labels, {kSide, kSide, 1}, net::default_specs());
  for (auto _ : state) {
    benchmark::DoNotOptimize(parallel ? net::forward(model, images)
                                      : net::serial::forward(model, images));
  }
  state.SetItemsProcessed(state.iterations() * images.rows());
}

using ExtractFn = DataMatrix (*)(const DataMatrix&, const Shape3&, int, int);
using MomentsFn = void (*)(kernels::ClassMoments&, const DataMatrix&, std::span<const int>,
                           std::span<const double>);
using ProjectFn = DataMatrix (*)(const DataMatrix&, const Vector&, const Matrix&);
using NearestFn = std::vector<std::size_t> (*)(const DataMatrix&, const DataMatrix&);

BENCHMARK(BM_Patches<static_cast<ExtractFn>(kernels::extract_patches)>)->Name("patches/parallel")->Arg(256);
BENCHMARK(BM_Patches<static_cast<ExtractFn>(kernels::serial::extract_patches)>)->Name("patches/serial")->Arg(256);
BENCHMARK(BM_Moments<static_cast<MomentsFn>(kernels::accumulate_moments)>)->Name("moments/parallel");
BENCHMARK(BM_Moments<static_cast<MomentsFn>(kernels::serial::accumulate_moments)>)->Name("moments/serial");
BENCHMARK(BM_Project<static_cast<ProjectFn>(kernels::project)>)->Name("project/parallel");
BENCHMARK(BM_Project<static_cast<ProjectFn>(kernels::serial::project)>)->Name("project/serial");
BENCHMARK(BM_Nearest<static_cast<NearestFn>(kernels::nearest_neighbors)>)->Name("nearest/parallel")->Arg(512);
BENCHMARK(BM_Nearest<static_cast<NearestFn>(kernels::serial::nearest_neighbors)>)->Name("nearest/serial")->Arg(512);
BENCHMARK_CAPTURE(BM_Forward, parallel, true)->Name("forward/parallel");
BENCHMARK_CAPTURE(BM_Forward, serial, false)->Name("forward/serial");

}  // namespace

BENCHMARK_MAIN();
