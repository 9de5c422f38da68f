#include "higsfa/eval.hpp"

#include "higsfa/error.hpp"
#include "higsfa/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <tuple>

namespace higsfa::eval {

SoftmaxModel::SoftmaxModel(std::size_t features, std::size_t classes)
    : weights(Matrix::Zero(static_cast<Eigen::Index>(features),
                           static_cast<Eigen::Index>(classes))),
      biases(Vector::Zero(static_cast<Eigen::Index>(classes))) {}

namespace {

DataMatrix logits_of(const SoftmaxModel& m, const DataMatrix& x) {
  if (x.cols() != m.weights.rows()) {
    fail(ErrorKind::Dimension, "feature width " + std::to_string(x.cols()) +
                                   " != model input " + std::to_string(m.weights.rows()));
  }
  DataMatrix z = x * m.weights;
  z.rowwise() += m.biases.transpose();
  return z;
}

void softmax_rows(DataMatrix& z) {
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double top = z.row(r).maxCoeff();
    z.row(r) = (z.row(r).array() - top).exp();
    z.row(r) /= z.row(r).sum();
  }
}

std::vector<int> argmax_rows(const DataMatrix& z) {
  std::vector<int> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < z.cols(); ++c) {
      if (z(r, c) > z(r, best)) best = c;
    }
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

double error_rate(const SoftmaxModel& m, const DataMatrix& x, const Labels& y) {
  const auto pred = argmax_rows(logits_of(m, x));
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i] != y[i];
  return static_cast<double>(wrong) / static_cast<double>(pred.size());
}

}  // namespace

DataMatrix SoftmaxModel::probabilities(const DataMatrix& feats) const {
  DataMatrix z = logits_of(*this, feats);
  softmax_rows(z);
  return z;
}

std::vector<int> SoftmaxModel::predict(const DataMatrix& feats) const {
  return argmax_rows(logits_of(*this, feats));
}

void TrainRegime::validate() const {
  auto open_unit = [](double v) { return v > 0.0 && v < 1.0; };
  if (!open_unit(decay1) || !open_unit(decay2)) {
    fail(ErrorKind::Request, "decay rates must lie in (0, 1)");
  }
  if (!(step_size > 0.0) || !(eps > 0.0)) {
    fail(ErrorKind::Request, "step size and eps must be positive");
  }
  if (batch_size < 1 || max_epochs < 1 || patience_total < 1) {
    fail(ErrorKind::Request, "batch size, max epochs and patience must be >= 1");
  }
}

bool IncreaseCounter::observe(double error) {
  ++epochs_;
  if (epochs_ == 1) {
    best_ = error;
    best_epoch_ = 1;
  } else {
    if (error > previous_) ++increases_;
    if (error < best_) {
      best_ = error;
      best_epoch_ = epochs_;
    }
  }
  previous_ = error;
  return increases_ >= patience_;
}

SoftmaxModel train_softmax(const DataMatrix& train_feats, const Labels& train_labels,
                           const DataMatrix& val_feats, const Labels& val_labels,
                           std::size_t num_classes, const TrainRegime& regime,
                           SoftmaxTrainLog* log) {
  regime.validate();
  if (train_feats.rows() == 0 ||
      static_cast<std::size_t>(train_feats.rows()) != train_labels.size()) {
    fail(ErrorKind::Dimension, "training features and labels disagree or are empty");
  }
  if (static_cast<std::size_t>(val_feats.rows()) != val_labels.size() ||
      (val_feats.rows() > 0 && val_feats.cols() != train_feats.cols())) {
    fail(ErrorKind::Dimension, "validation features do not match");
  }
  for (auto l : train_labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      fail(ErrorKind::Request, "label " + std::to_string(l) + " out of range");
    }
  }

  SoftmaxTrainLog local;
  SoftmaxTrainLog& out = log ? *log : local;
  out = {};
  const bool has_val = val_feats.rows() > 0;
  if (!has_val) {
    out.warnings.push_back("empty validation set; training for max_epochs without early stopping");
  }

  const auto features = static_cast<Eigen::Index>(train_feats.cols());
  const auto classes = static_cast<Eigen::Index>(num_classes);
  SoftmaxModel model(static_cast<std::size_t>(features), num_classes);
  SoftmaxModel best = model;
  Matrix m_w = Matrix::Zero(features, classes), v_w = m_w;
  Vector m_b = Vector::Zero(classes), v_b = m_b;

  const auto n = static_cast<std::size_t>(train_feats.rows());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(regime.seed);
  IncreaseCounter counter(regime.patience_total);
  double b1_pow = 1.0, b2_pow = 1.0;

  DataMatrix batch;
  for (std::size_t epoch = 1; epoch <= regime.max_epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < n; start += regime.batch_size) {
      const std::size_t len = std::min(regime.batch_size, n - start);
      batch.resize(static_cast<Eigen::Index>(len), features);
      for (std::size_t i = 0; i < len; ++i) {
        batch.row(static_cast<Eigen::Index>(i)) =
            train_feats.row(static_cast<Eigen::Index>(order[start + i]));
      }
      DataMatrix grad = logits_of(model, batch);
      softmax_rows(grad);
      for (std::size_t i = 0; i < len; ++i) {
        grad(static_cast<Eigen::Index>(i), train_labels[order[start + i]]) -= 1.0;
      }
      grad /= static_cast<double>(len);
      const Matrix g_w = batch.transpose() * grad;
      const Vector g_b = grad.colwise().sum().transpose();

      b1_pow *= regime.decay1;
      b2_pow *= regime.decay2;
      m_w = regime.decay1 * m_w + (1.0 - regime.decay1) * g_w;
      v_w = regime.decay2 * v_w + (1.0 - regime.decay2) * g_w.cwiseAbs2();
      m_b = regime.decay1 * m_b + (1.0 - regime.decay1) * g_b;
      v_b = regime.decay2 * v_b + (1.0 - regime.decay2) * g_b.cwiseAbs2();
      const double c1 = 1.0 / (1.0 - b1_pow);
      const double c2 = 1.0 / (1.0 - b2_pow);
      model.weights.array() -= regime.step_size * (m_w.array() * c1) /
                               ((v_w.array() * c2).sqrt() + regime.eps);
      model.biases.array() -= regime.step_size * (m_b.array() * c1) /
                              ((v_b.array() * c2).sqrt() + regime.eps);
    }
    out.epochs = epoch;
    if (!has_val) continue;

    const double err = error_rate(model, val_feats, val_labels);
    out.val_errors.push_back(err);
    const bool stop = counter.observe(err);
    if (counter.best_epoch() == epoch) best = model;
    if (stop) {
      out.early_stopped = true;
      break;
    }
  }
  if (!has_val) return model;
  out.best_epoch = counter.best_epoch();
  out.best_val_error = counter.best_error();
  return best;
}

double predict_accuracy(const SoftmaxModel& model, const DataMatrix& feats,
                        const Labels& labels) {
  if (static_cast<std::size_t>(feats.rows()) != labels.size() || labels.empty()) {
    fail(ErrorKind::Dimension, "accuracy needs matching, non-empty features and labels");
  }
  return 1.0 - error_rate(model, feats, labels);
}

std::vector<std::size_t> one_nn_match(const DataMatrix& probe_feats,
                                      const DataMatrix& target_feats) {
  return kernels::nearest_neighbors(probe_feats, target_feats);
}

// ---------------------------------------------------------------- episodes

void EpisodeSpec::validate() const {
  if (probe.size() != static_cast<std::size_t>(way) ||
      target.size() != static_cast<std::size_t>(way)) {
    fail(ErrorKind::Episode, "probe and target must each hold " + std::to_string(way) +
                                 " entries");
  }
  std::set<CharacterId> seen;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    if (probe[i].character != target[i].character) {
      fail(ErrorKind::Episode, "probe/target entry " + std::to_string(i) +
                                   " refer to different characters");
    }
    if (probe[i].sample == target[i].sample) {
      fail(ErrorKind::Episode, "probe and target share a sample");
    }
    if (!seen.insert(probe[i].character).second) {
      fail(ErrorKind::Episode, "character repeated within an episode");
    }
  }
}

namespace {

const dataio::OmniglotCharacter& character_at(const CorpusPartitions& corpus,
                                              const CharacterId& id) {
  const auto* split = id.split == 0 ? corpus.background : corpus.evaluation;
  if (!split) fail(ErrorKind::Episode, "corpus split " + std::to_string(id.split) + " missing");
  return split->alphabets.at(static_cast<std::size_t>(id.alphabet))
      .characters.at(static_cast<std::size_t>(id.character));
}

struct Candidate {
  CharacterId id;
  std::vector<int> samples;
};

}  // namespace

EpisodeSpec make_episode(const CorpusPartitions& corpus, int challenge,
                         const TrainingRegistry& registry, Rng& rng, int way) {
  std::vector<Candidate> pool;
  switch (challenge) {
    case 0:
      for (const auto& [id, used] : registry.used_samples) {
        if (used.size() >= 2) pool.push_back({id, used});
      }
      break;
    case 1:
      for (const auto& [id, used] : registry.used_samples) {
        const auto& ch = character_at(corpus, id);
        std::vector<int> unused;
        for (int s = 0; s < static_cast<int>(ch.samples.size()); ++s) {
          if (std::find(used.begin(), used.end(), s) == used.end()) unused.push_back(s);
        }
        if (unused.size() >= 2) pool.push_back({id, std::move(unused)});
      }
      break;
    case 2: {
      if (!corpus.evaluation) fail(ErrorKind::Episode, "challenge 2 needs held-out alphabets");
      const auto& alphabets = corpus.evaluation->alphabets;
      for (std::size_t a = 0; a < alphabets.size(); ++a) {
        for (std::size_t c = 0; c < alphabets[a].characters.size(); ++c) {
          const int n = static_cast<int>(alphabets[a].characters[c].samples.size());
          if (n < 2) continue;
          Candidate cand{{1, static_cast<int>(a), static_cast<int>(c)}, {}};
          cand.samples.resize(static_cast<std::size_t>(n));
          std::iota(cand.samples.begin(), cand.samples.end(), 0);
          pool.push_back(std::move(cand));
        }
      }
      break;
    }
    default:
      fail(ErrorKind::Request, "unknown challenge " + std::to_string(challenge));
  }
  if (pool.size() < static_cast<std::size_t>(way)) {
    fail(ErrorKind::Episode, "challenge " + std::to_string(challenge) + " needs " +
                                 std::to_string(way) + " eligible characters, found " +
                                 std::to_string(pool.size()));
  }
  EpisodeSpec ep;
  ep.way = way;
  ep.challenge = challenge;
  for (auto pick : rng.choose(pool.size(), static_cast<std::size_t>(way))) {
    const auto& cand = pool[pick];
    const auto two = rng.choose(cand.samples.size(), 2);
    ep.probe.push_back({cand.id, cand.samples[two[0]]});
    ep.target.push_back({cand.id, cand.samples[two[1]]});
  }
  return ep;
}

DataMatrix gather_images(const CorpusPartitions& corpus,
                         const std::vector<SampleRef>& refs) {
  DataMatrix out;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& img = character_at(corpus, refs[i].character)
                          .samples.at(static_cast<std::size_t>(refs[i].sample));
    if (i == 0) out.resize(static_cast<Eigen::Index>(refs.size()),
                           static_cast<Eigen::Index>(img.pixels.size()));
    out.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(img.pixels.data(),
                                             static_cast<Eigen::Index>(img.pixels.size()));
  }
  return out;
}

double episode_accuracy(const DataMatrix& probe_feats, const DataMatrix& target_feats) {
  const auto match = one_nn_match(probe_feats, target_feats);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < match.size(); ++i) hits += match[i] == i;
  return static_cast<double>(hits) / static_cast<double>(match.size());
}

TrialResult run_challenge(const FeatureFn& feature_fn, const CorpusPartitions& corpus,
                          int challenge, const TrainingRegistry& registry,
                          std::size_t n_episodes, Rng& rng) {
  if (n_episodes < 1) fail(ErrorKind::Request, "need at least one episode");
  TrialResult result;
  result.task = "omniglot";
  result.challenge = challenge;
  double total = 0.0;
  for (std::size_t e = 0; e < n_episodes; ++e) {
    const auto ep = make_episode(corpus, challenge, registry, rng);
    ep.validate();
    std::vector<SampleRef> refs = ep.probe;
    refs.insert(refs.end(), ep.target.begin(), ep.target.end());
    const DataMatrix feats = feature_fn(gather_images(corpus, refs));
    const auto way = static_cast<Eigen::Index>(ep.way);
    if (feats.rows() != 2 * way) {
      fail(ErrorKind::Dimension, "feature function returned " +
                                     std::to_string(feats.rows()) + " rows for " +
                                     std::to_string(2 * way) + " images");
    }
    total += episode_accuracy(feats.topRows(way), feats.bottomRows(way));
  }
  result.accuracy = total / static_cast<double>(n_episodes);
  return result;
}

// ------------------------------------------------------------- summaries

std::string TrialResult::grid_key() const {
  return task + "|" + std::to_string(challenge) + "|" + std::to_string(alphabets) + "|" +
         std::to_string(chars) + "|" + std::to_string(samples_per_class);
}

std::vector<CurvePoint> summarize(const std::vector<TrialResult>& results) {
  auto coords = [](const TrialResult& r) {
    return std::tuple(r.task, r.challenge, r.alphabets, r.chars, r.samples_per_class);
  };
  std::vector<const TrialResult*> sorted;
  for (const auto& r : results) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(), [&](auto* a, auto* b) {
    return std::tuple(coords(*a), a->trial) < std::tuple(coords(*b), b->trial);
  });

  std::vector<CurvePoint> out;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && coords(*sorted[j]) == coords(*sorted[i])) ++j;
    CurvePoint p;
    p.key = sorted[i]->grid_key();
    p.coords = *sorted[i];
    p.coords.accuracy = 0.0;
    p.coords.trial = 0;
    p.coords.timings.clear();
    p.coords.metadata.clear();
    p.n = j - i;
    double sum = 0.0;
    for (std::size_t k = i; k < j; ++k) sum += sorted[k]->accuracy;
    p.mean = sum / static_cast<double>(p.n);
    if (p.n > 1) {
      double ss = 0.0;
      for (std::size_t k = i; k < j; ++k) {
        const double d = sorted[k]->accuracy - p.mean;
        ss += d * d;
      }
      p.sem = std::sqrt(ss / static_cast<double>(p.n - 1)) / std::sqrt(static_cast<double>(p.n));
    } else {
      p.single_trial = true;
    }
    out.push_back(std::move(p));
    i = j;
  }
  return out;
}

}  // namespace higsfa::eval
