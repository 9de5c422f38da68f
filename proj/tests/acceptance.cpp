// Acceptance checks. Prints one line per criterion:
//
//   criterion <id> <PASS|FAIL|SKIP>: <title> (<detail>)
//
// Usage: acceptance [--cache DIR] [--runs DIR] [--fresh] [criterion ...]
// Criteria ids: 1 2 3 4 5 6 7 8a 8b 8c 9 10 (default: all).
// Exit status: 0 when nothing failed and something passed, 77 when every
// requested criterion was skipped, 1 otherwise.

#include "oracles.hpp"

#include "higsfa/error.hpp"
#include "higsfa/harness.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

using namespace higsfa;
namespace fs = std::filesystem;

namespace {

enum class Status { Pass, Fail, Skip };

struct Outcome {
  Status status;
  std::string detail;
};

Outcome pass_if(bool ok, std::string detail) {
  return {ok ? Status::Pass : Status::Fail, std::move(detail)};
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Context {
  fs::path cache;
  fs::path runs;
  std::optional<fs::path> omniglot_cache;

  bool has_mnist() const { return fs::exists(cache / "mnist_train.dat") && fs::exists(cache / "mnist_test.dat"); }
};

// ------------------------------------------------------------------ MNIST

harness::ExperimentConfig mnist_config(const Context& ctx, const std::string& name,
                                       std::vector<int> sizes, std::size_t trials) {
  harness::ExperimentConfig cfg;
  cfg.task = "mnist-curve";
  cfg.cache_dir = ctx.cache;
  cfg.out_dir = ctx.runs / name;
  cfg.sizes = std::move(sizes);
  cfg.trials = trials;
  cfg.seed = 20190101;
  return cfg;
}

/// Results for the 50 and 200 per-class points (10 trials each).
harness::RunRecord main_curve(const Context& ctx) {
  return harness::run_mnist_curve(mnist_config(ctx, "mnist_main", {50, 200}, 10));
}

harness::RunRecord small_and_large(const Context& ctx) {
  return harness::run_mnist_curve(mnist_config(ctx, "mnist_curve", {5, 10, 500}, 5));
}

const eval::CurvePoint* point(const std::vector<eval::CurvePoint>& pts, int size) {
  for (const auto& p : pts) {
    if (p.coords.samples_per_class == size) return &p;
  }
  return nullptr;
}

Outcome mnist_target(const Context& ctx, int size, double target) {
  if (!ctx.has_mnist()) return {Status::Skip, "no MNIST cache in " + ctx.cache.string()};
  const auto rec = main_curve(ctx);
  const auto* p = point(rec.summary, size);
  if (!p) return {Status::Fail, "no results"};
  const double mean = 100.0 * p->mean;
  return pass_if(p->n >= 10 && std::abs(mean - target) <= 1.5,
                 fmt("mean %.3f%% +/- %.3f over %zu trials, target %.2f +/- 1.5", mean,
                     100.0 * p->sem, p->n, target));
}

Outcome c1(const Context& ctx) { return mnist_target(ctx, 50, 92.97); }
Outcome c2(const Context& ctx) { return mnist_target(ctx, 200, 96.25); }

Outcome c3(const Context& ctx) {
  if (!ctx.has_mnist()) return {Status::Skip, "no MNIST cache in " + ctx.cache.string()};
  const auto main = main_curve(ctx).summary;
  const auto rest = small_and_large(ctx).summary;
  std::vector<const eval::CurvePoint*> curve;
  for (int size : {5, 10, 50, 200, 500}) {
    const auto* p = point(size == 50 || size == 200 ? main : rest, size);
    if (!p) return {Status::Fail, fmt("missing size %d", size)};
    curve.push_back(p);
  }
  int inversions = 0;
  bool tolerated = true;
  std::string trace;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    trace += fmt("%s%d:%.2f", i ? " " : "", curve[i]->coords.samples_per_class,
                 100.0 * curve[i]->mean);
    if (i == 0 || curve[i]->mean >= curve[i - 1]->mean) continue;
    ++inversions;
    const double sem = std::max(curve[i]->sem, curve[i - 1]->sem);
    tolerated = tolerated && curve[i - 1]->mean - curve[i]->mean <= 2.0 * sem;
  }
  return pass_if(inversions == 0 || (inversions == 1 && tolerated),
                 trace + fmt("; %d inversion(s)", inversions));
}

// ------------------------------------------------------------ architecture

/// MNIST 50/class when available, otherwise smooth random blobs.
std::pair<DataMatrix, Labels> training_images(const Context& ctx, int side) {
  DataMatrix images;
  Labels labels;
  if (ctx.has_mnist()) {
    const auto pool = dataio::load_dataset_cache(ctx.cache / "mnist_train");
    const auto split = dataio::sample_split(pool, {50, 0, 7});
    images = DataMatrix::Zero(split.train.data.rows(), side * side);
    const int off = (side - 28) / 2;
    for (Eigen::Index r = 0; r < images.rows(); ++r)
      for (int y = 0; y < 28; ++y)
        for (int x = 0; x < 28; ++x)
          images(r, (y + off) * side + x + off) = split.train.data(r, y * 28 + x);
    return {images, split.train.labels};
  }
  Rng rng(7);
  images.resize(200, side * side);
  for (Eigen::Index r = 0; r < 200; ++r) {
    labels.push_back(static_cast<std::int32_t>(r % 10));
    for (Eigen::Index p = 0; p < images.cols(); ++p) {
      images(r, p) = std::sin(0.3 * (p % side) * (1 + r % 10)) + 0.2 * rng.normal();
    }
  }
  return {images, labels};
}

Outcome c4(const Context& ctx) {
  const auto specs = net::default_specs();
  std::string detail;
  bool ok = true;
  for (int side : {28, 35}) {
    const auto [images, labels] = training_images(ctx, side);
    const auto network = net::train_network(images, labels, {side, side, 1}, specs);
    const auto out = net::forward(network, images.topRows(8));
    const auto plan = net::infer_shapes({side, side, 1}, specs);
    const std::size_t want = side == 28 ? 400 : 784;
    const auto params = network.parameter_count();
    ok = ok && static_cast<std::size_t>(out.cols()) == want && plan.output_dim == want &&
         params >= 12500 && params <= 14500;
    detail += fmt("%s%dx%d -> %td features, %zu parameters", detail.empty() ? "" : "; ",
                  side, side, out.cols(), params);
  }
  const eval::SoftmaxModel head(400, 10);
  ok = ok && head.parameter_count() == 4010;
  return pass_if(ok, detail + fmt("; softmax head %zu parameters", head.parameter_count()));
}

// --------------------------------------------------------------------- gsfa

DataMatrix gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  DataMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

Labels labels_for(Rng& rng, std::size_t n, int classes) {
  Labels l(n);
  for (auto& v : l) v = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(classes)));
  return l;
}

Outcome c5(const Context&) {
  Rng rng(5);
  double worst = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    const auto n = static_cast<Eigen::Index>(2 + rng.below(29));
    const auto d = static_cast<Eigen::Index>(1 + rng.below(6));
    const DataMatrix x = gaussian(rng, n, d).array() + 10.0 * rng.normal();
    // Fewer classes than samples, so some pair differs and D is not zero.
    const int classes = 1 + static_cast<int>(rng.below(std::min<std::uint64_t>(5, n - 1)));
    const auto l = labels_for(rng, static_cast<std::size_t>(n), classes);
    const auto g = gsfa::class_graph(l);
    worst = std::max(worst, oracle::rel_err(gsfa::graph_diff_moment(x, g),
                                            oracle::pairwise_diff_moment(x, l)));
    worst = std::max(worst, oracle::rel_err(gsfa::delta_values(x, g),
                                            oracle::pairwise_deltas(x, l)));
  }
  return pass_if(worst <= 1e-10, fmt("50 instances, worst relative error %.2e", worst));
}

Outcome c6(const Context&) {
  Rng rng(6);
  double mean_err = 0, var_err = 0, corr_err = 0, delta_err = 0;
  bool ordered = true;
  for (int rep = 0; rep < 30; ++rep) {
    const auto n = static_cast<Eigen::Index>(100 + rng.below(200));
    const auto d = static_cast<Eigen::Index>(2 + rng.below(10));
    const auto l = labels_for(rng, static_cast<std::size_t>(n), 2 + static_cast<int>(rng.below(4)));
    std::vector<double> w(static_cast<std::size_t>(n));
    for (auto& v : w) v = 0.5 + rng.uniform();
    DataMatrix x = gaussian(rng, n, d);
    for (Eigen::Index i = 0; i < n; ++i) x(i, 0) += 2.0 * l[static_cast<std::size_t>(i)];
    const auto g = gsfa::class_graph(l, w);
    const auto model = gsfa::solve_gsfa(x, g, static_cast<std::size_t>(d), 0.0);
    const auto y = gsfa::apply_linear(model, x);
    Vector m = Vector::Zero(y.cols());
    Matrix c = Matrix::Zero(y.cols(), y.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vector row = y.row(i).transpose();
      m += w[static_cast<std::size_t>(i)] * row;
      c += w[static_cast<std::size_t>(i)] * row * row.transpose();
    }
    m /= g.q;
    c /= g.q;
    mean_err = std::max(mean_err, m.cwiseAbs().maxCoeff());
    var_err = std::max(var_err, (c.diagonal().array() - 1.0).abs().maxCoeff());
    Matrix off = c;
    off.diagonal().setZero();
    corr_err = std::max(corr_err, off.cwiseAbs().maxCoeff());
    delta_err = std::max(delta_err, (gsfa::delta_values(y, g) - model.deltas).cwiseAbs().maxCoeff());
    for (Eigen::Index j = 1; j < model.deltas.size(); ++j) {
      ordered = ordered && model.deltas(j) >= model.deltas(j - 1);
    }
  }
  return pass_if(mean_err < 1e-8 && var_err < 1e-6 && corr_err < 1e-6 && delta_err < 1e-8 && ordered,
                 fmt("mean %.1e, variance %.1e, correlation %.1e, delta %.1e, ordered %s",
                     mean_err, var_err, corr_err, delta_err, ordered ? "yes" : "no"));
}

Outcome c7(const Context&) {
  Rng rng(7);
  double lo = 1e9, hi = -1e9;
  for (std::size_t n : {1000, 5000}) {
    for (int classes : {2, 10}) {
      DataMatrix y = gaussian(rng, static_cast<Eigen::Index>(n), 4);
      y = (y.rowwise() - y.colwise().mean()).eval();
      y = y.array().rowwise() / y.array().square().colwise().mean().sqrt();
      const auto delta = gsfa::delta_values(y, gsfa::class_graph(labels_for(rng, n, classes)));
      lo = std::min(lo, delta.minCoeff());
      hi = std::max(hi, delta.maxCoeff());
    }
  }
  return pass_if(lo >= 1.9 && hi <= 2.1, fmt("deltas in [%.4f, %.4f]", lo, hi));
}

// ----------------------------------------------------------------- omniglot

dataio::OmniglotCorpus noise_corpus(Rng& rng, int alphabets, int chars) {
  dataio::OmniglotCorpus c;
  for (int a = 0; a < alphabets; ++a) {
    dataio::OmniglotAlphabet alpha{"a" + std::to_string(a), {}};
    for (int k = 0; k < chars; ++k) {
      dataio::OmniglotCharacter ch{"c" + std::to_string(k), {}};
      for (int s = 0; s < 20; ++s) {
        dataio::GrayImage img(8, 8);
        for (auto& p : img.pixels) p = rng.normal();
        ch.samples.push_back(std::move(img));
      }
      alpha.characters.push_back(std::move(ch));
    }
    c.alphabets.push_back(std::move(alpha));
  }
  return c;
}

Outcome c8a(const Context&) {
  Rng rng(8);
  const auto bg = noise_corpus(rng, 8, 8);
  const auto ev = noise_corpus(rng, 4, 10);
  const eval::CorpusPartitions parts{&bg, &ev};
  eval::TrainingRegistry reg;
  for (int a = 0; a < 8; ++a) {
    reg.alphabets.push_back(a);
    for (int k = 0; k < 8; ++k) reg.used_samples[{0, a, k}] = {0, 1, 2, 3};
  }
  const eval::FeatureFn identity = [](const DataMatrix& x) { return x; };
  const std::size_t episodes = 1000;
  const double p = 1.0 / 16, probes = 16.0 * episodes;
  const double half = 2.5758 * std::sqrt(p * (1 - p) / probes);
  bool ok = true;
  std::string detail;
  for (int ch : {0, 1, 2}) {
    const auto r = eval::run_challenge(identity, parts, ch, reg, episodes, rng);
    ok = ok && std::abs(r.accuracy - p) <= half;
    detail += fmt("%schallenge %d: %.4f", ch ? ", " : "", ch, r.accuracy);
  }
  return pass_if(ok, detail + fmt(" (99%% band %.4f..%.4f)", p - half, p + half));
}

std::optional<harness::RunRecord> omniglot_grid(const Context& ctx) {
  if (!ctx.omniglot_cache) return std::nullopt;
  harness::ExperimentConfig cfg;
  cfg.task = "omniglot";
  cfg.cache_dir = *ctx.omniglot_cache;
  cfg.out_dir = ctx.runs / "omniglot";
  cfg.alphabets = {8};
  cfg.chars = {8};
  cfg.samples = {4, 16};
  cfg.challenges = {0};
  cfg.trials = 20;
  cfg.episodes = 200;
  cfg.seed = 20190101;
  return harness::run_omniglot(cfg);
}

Outcome c8b(const Context& ctx) {
  const auto rec = omniglot_grid(ctx);
  if (!rec) return {Status::Skip, "no Omniglot cache (set HIGSFA_OMNIGLOT_CACHE)"};
  for (const auto& p : rec->summary) {
    if (p.coords.samples_per_class == 16) {
      return pass_if(p.mean >= 0.19, fmt("A=8 C=8 S=16 challenge 0: %.4f +/- %.4f over %zu trials",
                                         p.mean, p.sem, p.n));
    }
  }
  return {Status::Fail, "no results"};
}

Outcome c8c(const Context& ctx) {
  const auto rec = omniglot_grid(ctx);
  if (!rec) return {Status::Skip, "no Omniglot cache (set HIGSFA_OMNIGLOT_CACHE)"};
  const eval::CurvePoint *s4 = nullptr, *s16 = nullptr;
  for (const auto& p : rec->summary) {
    (p.coords.samples_per_class == 4 ? s4 : s16) = &p;
  }
  if (!s4 || !s16) return {Status::Fail, "no results"};
  return pass_if(s4->n >= 20 && s16->n >= 20 && s16->mean < s4->mean,
                 fmt("S=4: %.4f, S=16: %.4f (n=%zu/%zu)", s4->mean, s16->mean, s4->n, s16->n));
}

// -------------------------------------------------------------- determinism

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Outcome c9(const Context& ctx) {
  if (!ctx.has_mnist()) return {Status::Skip, "no MNIST cache in " + ctx.cache.string()};
  std::string csv[2];
  for (int run = 0; run < 2; ++run) {
    auto cfg = mnist_config(ctx, "determinism_" + std::to_string(run), {5, 10}, 2);
    cfg.val_per_class = 100;
    fs::remove_all(cfg.out_dir);
    harness::run_mnist_curve(cfg);
    csv[run] = slurp(cfg.out_dir / "summary.csv");
  }
  return pass_if(!csv[0].empty() && csv[0] == csv[1],
                 fmt("two runs, %zu-byte summary.csv, identical: %s", csv[0].size(),
                     csv[0] == csv[1] ? "yes" : "no"));
}

Outcome c10(const Context&) {
  eval::IncreaseCounter counter(4);
  std::size_t stop = 0;
  for (int epoch = 1; epoch <= 20 && stop == 0; ++epoch) {
    if (counter.observe(epoch % 2 ? 0.5 : 0.6)) stop = counter.epochs();
  }
  // Through the trainer as well: a validation set the model cannot fit
  // stops only after four increases.
  Rng rng(10);
  const auto x = gaussian(rng, 64, 3);
  const auto xv = gaussian(rng, 64, 3);
  const auto l = labels_for(rng, 64, 4), lv = labels_for(rng, 64, 4);
  eval::SoftmaxTrainLog log;
  eval::train_softmax(x, l, xv, lv, 4, {}, &log);
  std::size_t rises = 0;
  for (std::size_t i = 1; i < log.val_errors.size(); ++i) rises += log.val_errors[i] > log.val_errors[i - 1];
  const bool trainer_ok = log.epochs == 500 ? rises < 4 : (log.early_stopped && rises == 4);
  return pass_if(stop == 8 && trainer_ok,
                 fmt("sequence stops at epoch %zu; trainer stopped at epoch %zu after %zu increases",
                     stop, log.epochs, rises));
}

struct Criterion {
  std::string id;
  std::string title;
  Outcome (*run)(const Context&);
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all{
      {"1", "MNIST 50/class accuracy", c1},
      {"2", "MNIST 200/class accuracy", c2},
      {"3", "MNIST learning-curve monotonicity", c3},
      {"4", "architecture shapes and parameter counts", c4},
      {"5", "GSFA streaming vs ordered-pair oracle", c5},
      {"6", "GSFA constraint suite", c6},
      {"7", "noise delta calibration", c7},
      {"8a", "Omniglot chance level with random features", c8a},
      {"8b", "Omniglot challenge 0 above 3x chance", c8b},
      {"8c", "Omniglot challenge 0 lower with S=16 than S=4", c8c},
      {"9", "run determinism", c9},
      {"10", "early-stopping semantics", c10},
  };
  return all;
}

std::optional<fs::path> find_omniglot_cache(const fs::path& cache) {
  if (const char* env = std::getenv("HIGSFA_OMNIGLOT_CACHE")) return fs::path(env);
  if (fs::exists(cache / "omniglot_background.dat") && fs::exists(cache / "omniglot_evaluation.dat")) {
    return cache;
  }
  return std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  Context ctx;
  ctx.cache = std::getenv("HIGSFA_CACHE") ? std::getenv("HIGSFA_CACHE") : HIGSFA_DEFAULT_CACHE;
  ctx.runs = fs::temp_directory_path() / "higsfa_acceptance";
  bool fresh = false;
  std::vector<std::string> wanted;
  app.add_option("--cache", ctx.cache, "Prepared cache directory");
  app.add_option("--runs", ctx.runs, "Working directory for experiment runs");
  app.add_flag("--fresh", fresh, "Discard earlier runs before starting");
  app.add_option("criteria", wanted, "Criterion ids (default: all)");
  CLI11_PARSE(app, argc, argv);

  if (fresh) fs::remove_all(ctx.runs);
  fs::create_directories(ctx.runs);
  ctx.omniglot_cache = find_omniglot_cache(ctx.cache);

  int passed = 0, failed = 0, skipped = 0;
  for (const auto& c : criteria()) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
    Outcome o{Status::Fail, ""};
    try {
      o = c.run(ctx);
    } catch (const std::exception& e) {
      o = {Status::Fail, std::string("error: ") + e.what()};
    }
    const char* word = o.status == Status::Pass ? "PASS" : o.status == Status::Fail ? "FAIL" : "SKIP";
    std::cout << "criterion " << c.id << ' ' << word << ": " << c.title << " (" << o.detail
              << ")" << std::endl;
    (o.status == Status::Pass ? passed : o.status == Status::Fail ? failed : skipped)++;
  }
  if (passed + failed + skipped == 0) {
    std::cerr << "no matching criteria\n";
    return 1;
  }
  if (failed > 0) return 1;
  return passed == 0 ? 77 : 0;
}
