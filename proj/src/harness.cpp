#include "higsfa/harness.hpp"

#include "higsfa/error.hpp"
#include "higsfa/matrix_io.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

namespace higsfa::harness {

using nlohmann::json;
using eval::TrialResult;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

bool strictly_increasing(const std::vector<int>& v) {
  return std::adjacent_find(v.begin(), v.end(), std::greater_equal<>()) == v.end();
}

bool all_positive(const std::vector<int>& v) {
  return std::all_of(v.begin(), v.end(), [](int x) { return x >= 1; });
}

}  // namespace

void ExperimentConfig::validate() const {
  if (task != "mnist-curve" && task != "omniglot") {
    fail(ErrorKind::Config, "unknown task '" + task + "'");
  }
  if (trials < 1) fail(ErrorKind::Config, "trials must be >= 1");
  if (workers < 1) fail(ErrorKind::Config, "workers must be >= 1");
  if (task == "mnist-curve") {
    if (sizes.empty() || !all_positive(sizes) || !strictly_increasing(sizes)) {
      fail(ErrorKind::Config, "sizes must be positive and strictly increasing");
    }
  } else {
    if (alphabets.empty() || chars.empty() || samples.empty() || challenges.empty()) {
      fail(ErrorKind::Config, "omniglot grid lists must be non-empty");
    }
    if (!all_positive(alphabets) || !all_positive(chars) || !all_positive(samples)) {
      fail(ErrorKind::Config, "omniglot grid values must be >= 1");
    }
    for (int c : challenges) {
      if (c < 0 || c > 2) fail(ErrorKind::Config, "challenge must be 0, 1 or 2");
    }
    if (episodes < 1) fail(ErrorKind::Config, "episodes must be >= 1");
  }
  if (architecture.empty()) fail(ErrorKind::Config, "architecture has no layers");
  for (const auto& s : architecture) s.validate();
  regime.validate();
}

json to_json(const ExperimentConfig& c) {
  json arch = json::array();
  for (const auto& s : c.architecture) arch.push_back(net::spec_to_json(s));
  return {{"task", c.task},
          {"cache_dir", c.cache_dir.string()},
          {"out_dir", c.out_dir.string()},
          {"seed", c.seed},
          {"trials", c.trials},
          {"workers", c.workers},
          {"sizes", c.sizes},
          {"val_per_class", c.val_per_class},
          {"alphabets", c.alphabets},
          {"chars", c.chars},
          {"samples", c.samples},
          {"challenges", c.challenges},
          {"episodes", c.episodes},
          {"features", c.features ? json(c.features->string()) : json(nullptr)},
          {"architecture", arch},
          {"regime",
           {{"step_size", c.regime.step_size},
            {"decay1", c.regime.decay1},
            {"decay2", c.regime.decay2},
            {"eps", c.regime.eps},
            {"batch_size", c.regime.batch_size},
            {"max_epochs", c.regime.max_epochs},
            {"patience_total", c.regime.patience_total}}}};
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  try {
    c.task = j.at("task").get<std::string>();
    c.cache_dir = j.at("cache_dir").get<std::string>();
    c.out_dir = j.at("out_dir").get<std::string>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.trials = j.at("trials").get<std::size_t>();
    c.workers = j.at("workers").get<std::size_t>();
    c.sizes = j.at("sizes").get<std::vector<int>>();
    c.val_per_class = j.at("val_per_class").get<std::size_t>();
    c.alphabets = j.at("alphabets").get<std::vector<int>>();
    c.chars = j.at("chars").get<std::vector<int>>();
    c.samples = j.at("samples").get<std::vector<int>>();
    c.challenges = j.at("challenges").get<std::vector<int>>();
    c.episodes = j.at("episodes").get<std::size_t>();
    if (!j.at("features").is_null()) c.features = j.at("features").get<std::string>();
    c.architecture.clear();
    for (const auto& s : j.at("architecture")) c.architecture.push_back(net::spec_from_json(s));
    const auto& r = j.at("regime");
    c.regime.step_size = r.at("step_size").get<double>();
    c.regime.decay1 = r.at("decay1").get<double>();
    c.regime.decay2 = r.at("decay2").get<double>();
    c.regime.eps = r.at("eps").get<double>();
    c.regime.batch_size = r.at("batch_size").get<std::size_t>();
    c.regime.max_epochs = r.at("max_epochs").get<std::size_t>();
    c.regime.patience_total = r.at("patience_total").get<std::size_t>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("malformed config: ") + e.what());
  }
  return c;
}

json to_json(const TrialResult& r) {
  return {{"task", r.task},
          {"challenge", r.challenge},
          {"alphabets", r.alphabets},
          {"chars", r.chars},
          {"samples_per_class", r.samples_per_class},
          {"trial", r.trial},
          {"seed", r.seed},
          {"accuracy", r.accuracy},
          {"timings", r.timings},
          {"metadata", r.metadata}};
}

TrialResult trial_from_json(const json& j) {
  TrialResult r;
  r.task = j.at("task").get<std::string>();
  r.challenge = j.at("challenge").get<int>();
  r.alphabets = j.at("alphabets").get<int>();
  r.chars = j.at("chars").get<int>();
  r.samples_per_class = j.at("samples_per_class").get<int>();
  r.trial = j.at("trial").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.accuracy = j.at("accuracy").get<double>();
  if (j.contains("timings")) r.timings = j.at("timings").get<std::map<std::string, double>>();
  if (j.contains("metadata")) r.metadata = j.at("metadata").get<std::vector<std::string>>();
  return r;
}

std::uint64_t trial_seed(std::uint64_t base_seed, const std::string& grid_key,
                         std::size_t trial) {
  return splitmix64(splitmix64(base_seed ^ fnv1a(grid_key)) ^ splitmix64(trial));
}

std::vector<TrialResult> read_trials(const fs::path& jsonl) {
  std::vector<TrialResult> out;
  std::ifstream in(jsonl);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(trial_from_json(json::parse(line)));
    } catch (const json::exception&) {
      // A torn final line from an interrupted run; the trial is redone.
      continue;
    }
  }
  return out;
}

// ----------------------------------------------------------- grid runner

namespace {

struct Job {
  TrialResult coords;  // without challenge for omniglot (challenge = -1)
  std::vector<int> challenges;
};

using TrialFn = std::function<std::vector<TrialResult>(const Job&)>;

std::string completion_key(const TrialResult& r) {
  return r.grid_key() + "#" + std::to_string(r.trial);
}

RunRecord run_grid(const ExperimentConfig& cfg, const std::vector<Job>& jobs,
                   const TrialFn& fn) {
  const auto t0 = Clock::now();
  fs::create_directories(cfg.out_dir);
  {
    std::ofstream snap(cfg.out_dir / "config.json", std::ios::trunc);
    snap << to_json(cfg).dump(2) << '\n';
  }
  const auto jsonl = cfg.out_dir / "trials.jsonl";

  std::set<std::string> wanted;
  std::set<std::string> done;
  for (const auto& job : jobs) {
    for (int ch : job.challenges) {
      TrialResult r = job.coords;
      r.challenge = ch;
      wanted.insert(completion_key(r));
    }
  }
  for (const auto& r : read_trials(jsonl)) done.insert(completion_key(r));

  RunRecord record;
  record.config = cfg;
  std::vector<const Job*> pending;
  for (const auto& job : jobs) {
    bool complete = true;
    for (int ch : job.challenges) {
      TrialResult r = job.coords;
      r.challenge = ch;
      complete = complete && done.count(completion_key(r)) > 0;
    }
    if (complete) {
      record.skipped += job.challenges.size();
    } else {
      pending.push_back(&job);
    }
  }

  std::ofstream out(jsonl, std::ios::app);
  if (!out) fail(ErrorKind::Persistence, "cannot append to " + jsonl.string());
  std::exception_ptr error;
  const auto workers = static_cast<int>(cfg.workers);
#pragma omp parallel for schedule(dynamic, 1) num_threads(workers) if (workers > 1)
  for (std::size_t i = 0; i < pending.size(); ++i) {
    try {
      auto results = fn(*pending[i]);
#pragma omp critical(higsfa_trials_append)
      {
        for (const auto& r : results) {
          if (done.count(completion_key(r))) continue;
          out << to_json(r).dump() << '\n';
        }
        out.flush();
      }
    } catch (...) {
#pragma omp critical(higsfa_trials_error)
      if (!error) error = std::current_exception();
    }
  }
  out.close();
  if (error) std::rethrow_exception(error);

  for (auto& r : read_trials(jsonl)) {
    if (wanted.count(completion_key(r))) record.trials.push_back(std::move(r));
  }
  // Duplicate lines for the same coordinate (e.g. two interrupted runs
  // writing concurrently) are counted once.
  std::set<std::string> unique;
  std::erase_if(record.trials,
                [&](const TrialResult& r) { return !unique.insert(completion_key(r)).second; });
  record.summary = eval::summarize(record.trials);
  write_summary_csv(cfg.out_dir / "summary.csv", record.summary);
  record.wall_seconds = seconds_since(t0);
  return record;
}

Shape3 square_shape(Eigen::Index cols) {
  const auto side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(cols))));
  if (static_cast<Eigen::Index>(side) * side != cols) {
    fail(ErrorKind::Dimension, "images with " + std::to_string(cols) +
                                   " pixels are not square");
  }
  return {side, side, 1};
}

dataio::LabeledDataset load_cache_or_hint(const fs::path& stem, const std::string& hint) {
  auto dat = stem;
  dat += ".dat";
  if (!fs::exists(dat)) {
    fail(ErrorKind::Preparation, "missing cache " + dat.string() + "; run `higsfa prepare " +
                                     hint + " --cache-dir " + stem.parent_path().string() +
                                     "` first");
  }
  return dataio::load_dataset_cache(stem);
}

}  // namespace

TrialResult run_mnist_trial(const dataio::LabeledDataset& train_pool,
                            const dataio::LabeledDataset& test, int per_class,
                            std::size_t val_per_class,
                            const std::vector<net::LayerSpec>& specs,
                            const eval::TrainRegime& regime, std::uint64_t seed) {
  TrialResult r;
  r.task = "mnist-curve";
  r.samples_per_class = per_class;
  r.seed = seed;

  auto t0 = Clock::now();
  const auto split = dataio::sample_split(
      train_pool, {static_cast<std::size_t>(per_class), val_per_class, seed});
  std::size_t shortfall = 0;
  for (auto s : split.val_shortfall) shortfall += s;
  if (shortfall > 0) {
    r.metadata.push_back("validation shortfall " + std::to_string(shortfall) +
                         " samples (classes exhausted)");
  }

  const Shape3 shape = square_shape(train_pool.data.cols());
  t0 = Clock::now();
  const auto network = net::train_network(split.train.data, split.train.labels, shape, specs);
  r.timings["train_network"] = seconds_since(t0);
  for (std::size_t i = 0; i < network.layers.size(); ++i) {
    const auto& l = network.layers[i];
    r.metadata.push_back("layer" + std::to_string(i) + " slow=" +
                         std::to_string(l.slow_channels()) + " pca=" +
                         std::to_string(l.pca_channels()));
    for (const auto& note : l.notes) r.metadata.push_back("layer" + std::to_string(i) + ": " + note);
  }

  t0 = Clock::now();
  const DataMatrix f_train = net::forward(network, split.train.data);
  const DataMatrix f_val = net::forward(network, split.val.data);
  const DataMatrix f_test = net::forward(network, test.data);
  r.timings["forward"] = seconds_since(t0);

  t0 = Clock::now();
  auto head_regime = regime;
  head_regime.seed = splitmix64(seed ^ 0x5eedULL);
  eval::SoftmaxTrainLog log;
  const auto head = eval::train_softmax(f_train, split.train.labels, f_val,
                                        split.val.labels, train_pool.num_classes(),
                                        head_regime, &log);
  r.timings["train_softmax"] = seconds_since(t0);
  r.metadata.push_back("softmax epochs=" + std::to_string(log.epochs) +
                       " best_epoch=" + std::to_string(log.best_epoch));
  for (const auto& w : log.warnings) r.metadata.push_back(w);
  r.accuracy = eval::predict_accuracy(head, f_test, test.labels);
  return r;
}

RunRecord run_mnist_curve(const ExperimentConfig& cfg_in) {
  ExperimentConfig cfg = cfg_in;
  cfg.task = "mnist-curve";
  cfg.validate();
  const auto train = load_cache_or_hint(cfg.cache_dir / "mnist_train", "--mnist-dir DIR");
  const auto test = load_cache_or_hint(cfg.cache_dir / "mnist_test", "--mnist-dir DIR");

  std::vector<Job> jobs;
  for (int size : cfg.sizes) {
    for (std::size_t t = 0; t < cfg.trials; ++t) {
      Job job;
      job.coords.task = "mnist-curve";
      job.coords.samples_per_class = size;
      job.coords.trial = static_cast<int>(t);
      job.challenges = {-1};
      jobs.push_back(job);
    }
  }
  return run_grid(cfg, jobs, [&](const Job& job) {
    const auto seed = trial_seed(cfg.seed, job.coords.grid_key(),
                                 static_cast<std::size_t>(job.coords.trial));
    auto r = run_mnist_trial(train, test, job.coords.samples_per_class, cfg.val_per_class,
                             cfg.architecture, cfg.regime, seed);
    r.trial = job.coords.trial;
    return std::vector<TrialResult>{r};
  });
}

// -------------------------------------------------------------- omniglot

OmniglotTrainingSet sample_omniglot_training(const dataio::OmniglotCorpus& background,
                                             int alphabets, int chars, int samples,
                                             Rng& rng) {
  std::vector<int> eligible;
  for (std::size_t a = 0; a < background.alphabets.size(); ++a) {
    const auto& chs = background.alphabets[a].characters;
    const auto ok = std::count_if(chs.begin(), chs.end(), [&](const auto& c) {
      return static_cast<int>(c.samples.size()) >= samples;
    });
    if (ok >= chars) eligible.push_back(static_cast<int>(a));
  }
  if (static_cast<int>(eligible.size()) < alphabets) {
    fail(ErrorKind::Config, "only " + std::to_string(eligible.size()) +
                                " background alphabets have " + std::to_string(chars) +
                                " characters with " + std::to_string(samples) +
                                " samples; " + std::to_string(alphabets) + " requested");
  }
  OmniglotTrainingSet set;
  std::vector<const dataio::GrayImage*> images;
  int label = 0;
  for (auto ai : rng.choose(eligible.size(), static_cast<std::size_t>(alphabets))) {
    const int a = eligible[ai];
    set.registry.alphabets.push_back(a);
    const auto& chs = background.alphabets[static_cast<std::size_t>(a)].characters;
    std::vector<int> usable;
    for (std::size_t c = 0; c < chs.size(); ++c) {
      if (static_cast<int>(chs[c].samples.size()) >= samples) usable.push_back(static_cast<int>(c));
    }
    for (auto ci : rng.choose(usable.size(), static_cast<std::size_t>(chars))) {
      const int c = usable[ci];
      const auto& ch = chs[static_cast<std::size_t>(c)];
      auto& used = set.registry.used_samples[{0, a, c}];
      for (auto s : rng.choose(ch.samples.size(), static_cast<std::size_t>(samples))) {
        used.push_back(static_cast<int>(s));
        images.push_back(&ch.samples[s]);
        set.labels.push_back(label);
      }
      std::sort(used.begin(), used.end());
      ++label;
    }
  }
  const auto dim = static_cast<Eigen::Index>(images.front()->pixels.size());
  set.images.resize(static_cast<Eigen::Index>(images.size()), dim);
  for (std::size_t i = 0; i < images.size(); ++i) {
    set.images.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(images[i]->pixels.data(), dim);
  }
  return set;
}

namespace {

void check_omniglot_capacity(const ExperimentConfig& cfg,
                             const dataio::OmniglotCorpus& background,
                             const dataio::OmniglotCorpus& evaluation) {
  for (int a : cfg.alphabets) {
    for (int c : cfg.chars) {
      for (int s : cfg.samples) {
        const std::string point = "(alphabets=" + std::to_string(a) + ", chars=" +
                                  std::to_string(c) + ", samples=" + std::to_string(s) + ")";
        int eligible = 0;
        int min_samples = 1 << 30;
        for (const auto& alpha : background.alphabets) {
          int ok = 0;
          for (const auto& ch : alpha.characters) {
            if (static_cast<int>(ch.samples.size()) >= s) {
              ++ok;
              min_samples = std::min(min_samples, static_cast<int>(ch.samples.size()));
            }
          }
          eligible += ok >= c;
        }
        if (eligible < a) {
          fail(ErrorKind::Config, "grid point " + point + " exceeds corpus: only " +
                                      std::to_string(eligible) + " alphabets qualify");
        }
        for (int ch : cfg.challenges) {
          if ((ch == 0 || ch == 1) && a * c < eval::kWay) {
            fail(ErrorKind::Config, "grid point " + point + " trains " +
                                        std::to_string(a * c) + " characters; challenge " +
                                        std::to_string(ch) + " needs " +
                                        std::to_string(eval::kWay));
          }
          if (ch == 0 && s < 2) {
            fail(ErrorKind::Config, "challenge 0 needs >= 2 samples per character at " + point);
          }
          if (ch == 1 && min_samples - s < 2) {
            fail(ErrorKind::Config, "challenge 1 needs >= 2 unused samples per character at " +
                                        point);
          }
          if (ch == 2 && evaluation.num_characters() < static_cast<std::size_t>(eval::kWay)) {
            fail(ErrorKind::Config, "challenge 2 needs " + std::to_string(eval::kWay) +
                                        " held-out characters");
          }
        }
      }
    }
  }
}

/// Looks rows of an external feature file up by exact image content.
class FeatureTable {
 public:
  FeatureTable(const dataio::LabeledDataset& bg, const dataio::LabeledDataset& ev,
               DataMatrix feats)
      : feats_(std::move(feats)) {
    if (feats_.rows() != bg.data.rows() + ev.data.rows()) {
      fail(ErrorKind::Dimension, "feature file has " + std::to_string(feats_.rows()) +
                                     " rows; caches hold " +
                                     std::to_string(bg.data.rows() + ev.data.rows()));
    }
    Eigen::Index row = 0;
    for (const auto* ds : {&bg, &ev}) {
      for (Eigen::Index r = 0; r < ds->data.rows(); ++r, ++row) {
        index_.try_emplace(key(ds->data.row(r)), row);
      }
    }
  }

  DataMatrix operator()(const DataMatrix& images) const {
    DataMatrix out(images.rows(), feats_.cols());
    for (Eigen::Index r = 0; r < images.rows(); ++r) {
      const auto it = index_.find(key(images.row(r)));
      if (it == index_.end()) fail(ErrorKind::Dimension, "image not present in feature table");
      out.row(r) = feats_.row(it->second);
    }
    return out;
  }

 private:
  static std::string key(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
    std::string k(static_cast<std::size_t>(row.size()) * sizeof(float), '\0');
    for (Eigen::Index i = 0; i < row.size(); ++i) {
      const float v = static_cast<float>(row(i));
      std::memcpy(k.data() + static_cast<std::size_t>(i) * sizeof(float), &v, sizeof v);
    }
    return k;
  }

  DataMatrix feats_;
  std::unordered_map<std::string, Eigen::Index> index_;
};

}  // namespace

RunRecord run_omniglot(const ExperimentConfig& cfg_in) {
  ExperimentConfig cfg = cfg_in;
  cfg.task = "omniglot";
  cfg.validate();
  const auto bg_ds = load_cache_or_hint(cfg.cache_dir / "omniglot_background",
                                        "--omniglot-dir DIR");
  const auto ev_ds = load_cache_or_hint(cfg.cache_dir / "omniglot_evaluation",
                                        "--omniglot-dir DIR");
  const Shape3 shape = square_shape(bg_ds.data.cols());
  const auto background = dataio::dataset_to_corpus(bg_ds, shape.width, shape.height);
  const auto evaluation = dataio::dataset_to_corpus(ev_ds, shape.width, shape.height);
  check_omniglot_capacity(cfg, background, evaluation);

  std::optional<FeatureTable> table;
  if (cfg.features) {
    table.emplace(bg_ds, ev_ds, load_matrix_file(*cfg.features, kFeatureMagic));
  }

  std::vector<Job> jobs;
  for (int a : cfg.alphabets) {
    for (int c : cfg.chars) {
      for (int s : cfg.samples) {
        for (std::size_t t = 0; t < cfg.trials; ++t) {
          Job job;
          job.coords.task = "omniglot";
          job.coords.challenge = -1;
          job.coords.alphabets = a;
          job.coords.chars = c;
          job.coords.samples_per_class = s;
          job.coords.trial = static_cast<int>(t);
          job.challenges = cfg.challenges;
          jobs.push_back(job);
        }
      }
    }
  }

  const eval::CorpusPartitions parts{&background, &evaluation};
  return run_grid(cfg, jobs, [&](const Job& job) {
    const auto& k = job.coords;
    const auto seed = trial_seed(cfg.seed, k.grid_key(), static_cast<std::size_t>(k.trial));
    Rng rng(seed);
    auto t0 = Clock::now();
    const auto set = sample_omniglot_training(background, k.alphabets, k.chars,
                                              k.samples_per_class, rng);
    eval::FeatureFn feature_fn;
    std::optional<net::NetworkModel> network;
    double train_time = 0.0;
    std::vector<std::string> meta;
    if (table) {
      feature_fn = [&](const DataMatrix& images) { return (*table)(images); };
      meta.push_back("external features");
    } else {
      network = net::train_network(set.images, set.labels, shape, cfg.architecture);
      train_time = seconds_since(t0);
      for (std::size_t i = 0; i < network->layers.size(); ++i) {
        meta.push_back("layer" + std::to_string(i) + " slow=" +
                       std::to_string(network->layers[i].slow_channels()) + " pca=" +
                       std::to_string(network->layers[i].pca_channels()));
      }
      feature_fn = [&](const DataMatrix& images) { return net::forward(*network, images); };
    }
    std::vector<TrialResult> out;
    for (int ch : job.challenges) {
      Rng episode_rng(splitmix64(seed ^ (0xC0FFEEULL + static_cast<std::uint64_t>(ch))));
      t0 = Clock::now();
      auto r = eval::run_challenge(feature_fn, parts, ch, set.registry, cfg.episodes,
                                   episode_rng);
      r.alphabets = k.alphabets;
      r.chars = k.chars;
      r.samples_per_class = k.samples_per_class;
      r.trial = k.trial;
      r.seed = seed;
      r.timings["train_network"] = train_time;
      r.timings["episodes"] = seconds_since(t0);
      r.metadata = meta;
      out.push_back(std::move(r));
    }
    return out;
  });
}

// -------------------------------------------------------------- features

void export_features(const fs::path& net_path, const fs::path& input_cache,
                     const fs::path& out_path) {
  const auto network = net::load_network(net_path);
  const DataMatrix images = load_matrix_file(input_cache, kCacheMagic);
  if (static_cast<std::size_t>(images.cols()) != network.input_shape.size()) {
    fail(ErrorKind::Dimension, "input cache has " + std::to_string(images.cols()) +
                                   " columns, network expects " +
                                   std::to_string(network.input_shape.size()));
  }
  save_matrix_file(out_path, kFeatureMagic, net::forward(network, images));
}

// --------------------------------------------------------------- reports

namespace {

std::string fmt_double(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string summary_csv(const std::vector<eval::CurvePoint>& points) {
  std::ostringstream os;
  os << "task,challenge,alphabets,chars,samples_per_class,n,mean_acc,sem\n";
  for (const auto& p : points) {
    const auto& c = p.coords;
    const bool omni = c.task == "omniglot";
    os << c.task << ',' << (omni ? std::to_string(c.challenge) : "") << ','
       << (omni ? std::to_string(c.alphabets) : "") << ','
       << (omni ? std::to_string(c.chars) : "") << ',' << c.samples_per_class << ','
       << p.n << ',' << fmt_double(p.mean, 8) << ',' << fmt_double(p.sem, 8) << '\n';
  }
  return os.str();
}

std::string summary_markdown(const std::vector<eval::CurvePoint>& points) {
  std::ostringstream os;
  std::vector<const eval::CurvePoint*> mnist, omni;
  for (const auto& p : points) (p.coords.task == "omniglot" ? omni : mnist).push_back(&p);
  auto note = [](const eval::CurvePoint& p) { return p.single_trial ? " (n=1)" : ""; };
  if (!mnist.empty()) {
    os << "| Samples | Acc. | SEM | n |\n|---:|---:|---:|---:|\n";
    for (const auto* p : mnist) {
      os << "| " << p->coords.samples_per_class << " | " << fmt_double(100.0 * p->mean, 3)
         << " | ± " << fmt_double(100.0 * p->sem, 3) << note(*p) << " | " << p->n << " |\n";
    }
  }
  if (!omni.empty()) {
    if (!mnist.empty()) os << '\n';
    os << "| Challenge | Alphabets | Chars | Samples | Acc. | SEM | n |\n"
          "|---:|---:|---:|---:|---:|---:|---:|\n";
    for (const auto* p : omni) {
      const auto& c = p->coords;
      os << "| " << c.challenge << " | " << c.alphabets << " | " << c.chars << " | "
         << c.samples_per_class << " | " << fmt_double(100.0 * p->mean, 3) << " | ± "
         << fmt_double(100.0 * p->sem, 3) << note(*p) << " | " << p->n << " |\n";
    }
  }
  return os.str();
}

void write_summary_csv(const fs::path& path, const std::vector<eval::CurvePoint>& points) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Persistence, "cannot write " + path.string());
  out << summary_csv(points);
}

fs::path report(const fs::path& results_dir, ReportFormat format) {
  if (!fs::is_directory(results_dir)) {
    fail(ErrorKind::Report, "results directory " + results_dir.string() + " does not exist");
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(results_dir)) {
    if (e.is_regular_file() && e.path().filename() == "trials.jsonl") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<TrialResult> all;
  for (const auto& f : files) {
    auto t = read_trials(f);
    all.insert(all.end(), t.begin(), t.end());
  }
  if (all.empty()) {
    fail(ErrorKind::Report, "no trial records under " + results_dir.string());
  }
  const auto points = eval::summarize(all);
  const auto path = results_dir / (format == ReportFormat::Csv ? "report.csv" : "report.md");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Report, "cannot write " + path.string());
  out << (format == ReportFormat::Csv ? summary_csv(points) : summary_markdown(points));
  return path;
}

// --------------------------------------------------------------- prepare

std::vector<std::string> prepare(const PrepareOptions& opts) {
  std::vector<std::string> log;
  if (!opts.mnist_dir && !opts.omniglot_dir) {
    fail(ErrorKind::Preparation, "nothing to prepare: pass --mnist-dir and/or --omniglot-dir");
  }
  fs::create_directories(opts.cache_dir);
  if (opts.mnist_dir) {
    const auto& d = *opts.mnist_dir;
    for (auto [part, prefix] : {std::pair{"train", "train"}, std::pair{"test", "t10k"}}) {
      const auto images = d / (std::string(prefix) + "-images-idx3-ubyte");
      const auto labels = d / (std::string(prefix) + "-labels-idx1-ubyte");
      if (!fs::exists(images) || !fs::exists(labels)) {
        fail(ErrorKind::Preparation, "expected uncompressed IDX files " + images.string() +
                                         " and " + labels.string());
      }
      const auto ds = dataio::load_mnist_idx(images, labels);
      dataio::save_dataset_cache(opts.cache_dir / ("mnist_" + std::string(part)), ds);
      log.push_back("mnist_" + std::string(part) + ": " + std::to_string(ds.size()) + " rows");
    }
  }
  if (opts.omniglot_dir) {
    const auto& d = *opts.omniglot_dir;
    for (auto [part, names] :
         {std::pair{"background", std::vector<std::string>{"images_background", "background"}},
          std::pair{"evaluation", std::vector<std::string>{"images_evaluation", "evaluation"}}}) {
      std::optional<fs::path> root;
      for (const auto& n : names) {
        if (fs::is_directory(d / n)) {
          root = d / n;
          break;
        }
      }
      if (!root) {
        fail(ErrorKind::Preparation, "no images_" + std::string(part) + "/ directory under " +
                                         d.string());
      }
      auto corpus = dataio::load_omniglot(*root);
      for (auto& a : corpus.alphabets) {
        for (auto& c : a.characters) {
          for (auto& s : c.samples) {
            const int factor = s.width % 35 == 0 && s.width / 35 >= 1 ? s.width / 35 : 1;
            s = dataio::downsample_block_mean(s, factor);
          }
        }
      }
      const auto ds = dataio::corpus_to_dataset(corpus);
      dataio::save_dataset_cache(opts.cache_dir / ("omniglot_" + std::string(part)), ds);
      log.push_back("omniglot_" + std::string(part) + ": " +
                    std::to_string(corpus.alphabets.size()) + " alphabets, " +
                    std::to_string(ds.size()) + " images");
      for (const auto& w : corpus.warnings) log.push_back("warning: " + w);
    }
  }
  return log;
}

}  // namespace higsfa::harness
