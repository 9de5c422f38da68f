#pragma once

#include "higsfa/dataio.hpp"
#include "higsfa/rng.hpp"
#include "higsfa/types.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace higsfa::eval {

struct SoftmaxModel {
  Matrix weights;  // feature_dim x classes
  Vector biases;

  SoftmaxModel() = default;
  SoftmaxModel(std::size_t features, std::size_t classes);

  std::size_t parameter_count() const {
    return static_cast<std::size_t>(weights.size() + biases.size());
  }
  /// Row-wise class probabilities.
  DataMatrix probabilities(const DataMatrix& feats) const;
  std::vector<int> predict(const DataMatrix& feats) const;
};

/// Adaptive-moment optimizer settings plus the early-stopping budget.
struct TrainRegime {
  double step_size = 0.001;
  double decay1 = 0.9;
  double decay2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 500;
  std::size_t patience_total = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Counts epochs whose validation error rose above the previous epoch's
/// (total, not consecutive) and tracks the best epoch seen.
class IncreaseCounter {
 public:
  explicit IncreaseCounter(std::size_t patience_total)
      : patience_(patience_total) {}

  /// Records one epoch; returns true when training must stop.
  bool observe(double error);

  std::size_t epochs() const { return epochs_; }
  std::size_t increases() const { return increases_; }
  std::size_t best_epoch() const { return best_epoch_; }  // 1-based
  double best_error() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t epochs_ = 0;
  std::size_t increases_ = 0;
  std::size_t best_epoch_ = 0;
  double best_ = 0.0;
  double previous_ = 0.0;
};

struct SoftmaxTrainLog {
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  double best_val_error = 0.0;
  bool early_stopped = false;
  std::vector<double> val_errors;
  std::vector<std::string> warnings;
};

SoftmaxModel train_softmax(const DataMatrix& train_feats, const Labels& train_labels,
                           const DataMatrix& val_feats, const Labels& val_labels,
                           std::size_t num_classes, const TrainRegime& regime,
                           SoftmaxTrainLog* log = nullptr);

double predict_accuracy(const SoftmaxModel& model, const DataMatrix& feats,
                        const Labels& labels);

std::vector<std::size_t> one_nn_match(const DataMatrix& probe_feats,
                                      const DataMatrix& target_feats);

// ---------------------------------------------------------------- episodes

/// A character identified by (split, alphabet, character) indices into the
/// corpus partitions, and a sample index within that character.
struct CharacterId {
  int split = 0;  // 0 = training pool (background), 1 = held-out alphabets
  int alphabet = 0;
  int character = 0;
  friend auto operator<=>(const CharacterId&, const CharacterId&) = default;
};

struct SampleRef {
  CharacterId character;
  int sample = 0;
  friend auto operator<=>(const SampleRef&, const SampleRef&) = default;
};

struct CorpusPartitions {
  const dataio::OmniglotCorpus* background = nullptr;
  const dataio::OmniglotCorpus* evaluation = nullptr;
};

/// Characters and sample indices a model was trained on.
struct TrainingRegistry {
  std::map<CharacterId, std::vector<int>> used_samples;
  std::vector<int> alphabets;  // background alphabet indices used

  std::size_t num_characters() const { return used_samples.size(); }
};

struct EpisodeSpec {
  int way = 16;
  int challenge = 0;
  std::vector<SampleRef> probe;
  std::vector<SampleRef> target;

  /// Throws Episode when the structural invariants do not hold.
  void validate() const;
};

inline constexpr int kWay = 16;

EpisodeSpec make_episode(const CorpusPartitions& corpus, int challenge,
                         const TrainingRegistry& registry, Rng& rng,
                         int way = kWay);

using FeatureFn = std::function<DataMatrix(const DataMatrix& images)>;

struct TrialResult {
  std::string task;        // "mnist-curve" | "omniglot"
  int challenge = -1;
  int alphabets = 0;
  int chars = 0;
  int samples_per_class = 0;
  int trial = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  std::map<std::string, double> timings;
  std::vector<std::string> metadata;

  /// Grid-point key without the trial index.
  std::string grid_key() const;
};

/// Fetches an image (flattened, row-major) for a sample reference.
DataMatrix gather_images(const CorpusPartitions& corpus,
                         const std::vector<SampleRef>& refs);

TrialResult run_challenge(const FeatureFn& feature_fn,
                          const CorpusPartitions& corpus, int challenge,
                          const TrainingRegistry& registry,
                          std::size_t n_episodes, Rng& rng);

/// Fraction of probes whose nearest target is the same character; the
/// probe and target lists are aligned by character.
double episode_accuracy(const DataMatrix& probe_feats,
                        const DataMatrix& target_feats);

struct CurvePoint {
  std::string key;
  TrialResult coords;  // representative coordinates, accuracy unused
  std::size_t n = 0;
  double mean = 0.0;
  double sem = 0.0;
  bool single_trial = false;
};

/// Mean and SEM (sample std / sqrt n) per grid point, ordered
/// lexicographically by grid coordinates.
std::vector<CurvePoint> summarize(const std::vector<TrialResult>& results);

}  // namespace higsfa::eval
