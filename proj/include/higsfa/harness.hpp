#pragma once

#include "higsfa/eval.hpp"
#include "higsfa/network.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace higsfa::harness {

namespace fs = std::filesystem;

struct ExperimentConfig {
  std::string task = "mnist-curve";  // or "omniglot"
  fs::path cache_dir = "cache";
  fs::path out_dir = "results";
  std::uint64_t seed = 0;
  std::size_t trials = 100;
  std::size_t workers = 1;

  // mnist-curve
  std::vector<int> sizes{5, 10, 50, 200, 500, 2000, 6000};
  std::size_t val_per_class = 1000;

  // omniglot
  std::vector<int> alphabets{8};
  std::vector<int> chars{4, 6, 8, 10, 12};
  std::vector<int> samples{4, 16};
  std::vector<int> challenges{0, 1, 2};
  std::size_t episodes = 200;
  /// External features for background rows followed by evaluation rows.
  std::optional<fs::path> features;

  std::vector<net::LayerSpec> architecture = net::default_specs();
  eval::TrainRegime regime{};

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const eval::TrialResult& r);
eval::TrialResult trial_from_json(const nlohmann::json& j);

struct RunRecord {
  ExperimentConfig config;
  std::vector<eval::TrialResult> trials;
  std::vector<eval::CurvePoint> summary;
  double wall_seconds = 0.0;
  std::size_t skipped = 0;  // already present in trials.jsonl
};

/// Per-trial seed: splitmix of the base seed, grid key hash and trial index.
std::uint64_t trial_seed(std::uint64_t base_seed, const std::string& grid_key,
                         std::size_t trial);

/// Omniglot training sample for one trial: alphabets drawn from the
/// background split, characters per alphabet, samples per character.
struct OmniglotTrainingSet {
  eval::TrainingRegistry registry;
  DataMatrix images;
  Labels labels;
};

OmniglotTrainingSet sample_omniglot_training(const dataio::OmniglotCorpus& background,
                                             int alphabets, int chars,
                                             int samples, Rng& rng);

/// One MNIST learning-curve trial (split, network, softmax head, test).
eval::TrialResult run_mnist_trial(const dataio::LabeledDataset& train_pool,
                                  const dataio::LabeledDataset& test,
                                  int per_class, std::size_t val_per_class,
                                  const std::vector<net::LayerSpec>& specs,
                                  const eval::TrainRegime& regime,
                                  std::uint64_t seed);

RunRecord run_mnist_curve(const ExperimentConfig& cfg);
RunRecord run_omniglot(const ExperimentConfig& cfg);

void export_features(const fs::path& net_path, const fs::path& input_cache,
                     const fs::path& out_path);

enum class ReportFormat { Csv, Markdown };

/// Writes `report.csv` or `report.md` into `results_dir`; returns the path.
fs::path report(const fs::path& results_dir, ReportFormat format);

void write_summary_csv(const fs::path& path,
                       const std::vector<eval::CurvePoint>& points);
std::string summary_csv(const std::vector<eval::CurvePoint>& points);
std::string summary_markdown(const std::vector<eval::CurvePoint>& points);

std::vector<eval::TrialResult> read_trials(const fs::path& jsonl);

/// Converts IDX files and Omniglot image trees into the cache directory.
struct PrepareOptions {
  std::optional<fs::path> mnist_dir;
  std::optional<fs::path> omniglot_dir;
  fs::path cache_dir = "cache";
};

std::vector<std::string> prepare(const PrepareOptions& opts);

}  // namespace higsfa::harness
