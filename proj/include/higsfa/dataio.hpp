#pragma once

#include "higsfa/types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace higsfa::dataio {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;  // row-major, each in [0,1]

  GrayImage() = default;
  GrayImage(int w, int h);
  GrayImage(int w, int h, std::vector<double> px);

  double& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

struct LabeledDataset {
  DataMatrix data;
  Labels labels;
  std::vector<std::string> class_names;

  std::size_t size() const { return labels.size(); }
  std::size_t num_classes() const { return class_names.size(); }

  /// Throws Consistency when the type invariants do not hold.
  void validate() const;

  /// Rows in the given order. Class vocabulary is kept even when a class
  /// ends up empty.
  LabeledDataset subset(const std::vector<std::size_t>& rows) const;
};

struct OmniglotCharacter {
  std::string name;
  std::vector<GrayImage> samples;
};

struct OmniglotAlphabet {
  std::string name;
  std::vector<OmniglotCharacter> characters;
};

struct OmniglotCorpus {
  std::vector<OmniglotAlphabet> alphabets;
  std::vector<std::string> warnings;

  std::size_t num_characters() const;
};

struct SplitSpec {
  std::size_t per_class_train = 1;
  std::size_t per_class_val = 0;
  std::uint64_t seed = 0;
};

struct Split {
  LabeledDataset train;
  LabeledDataset val;
  LabeledDataset rest;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> val_rows;
  std::vector<std::size_t> rest_rows;
  /// Per class, how many validation samples were requested but unavailable.
  std::vector<std::size_t> val_shortfall;
};

LabeledDataset load_mnist_idx(const std::filesystem::path& images_path,
                              const std::filesystem::path& labels_path);

/// Walks `<root>/<alphabet>/<character>/<sample>.png` (or binary .pgm),
/// converts to luminance and inverts so strokes are near 1. Entries are
/// sorted by name at every level.
OmniglotCorpus load_omniglot(const std::filesystem::path& root_dir);

GrayImage downsample_block_mean(const GrayImage& img, int factor);

Split sample_split(const LabeledDataset& ds, const SplitSpec& spec);

/// `<stem>.dat` (SBDM matrix) + `<stem>.json` (labels, class names, extra).
void save_dataset_cache(const std::filesystem::path& stem,
                        const LabeledDataset& ds);
LabeledDataset load_dataset_cache(const std::filesystem::path& stem);

/// Omniglot corpora are cached as a LabeledDataset whose classes are
/// characters named "<alphabet>/<character>", in corpus order.
LabeledDataset corpus_to_dataset(const OmniglotCorpus& corpus);
OmniglotCorpus dataset_to_corpus(const LabeledDataset& ds, int width,
                                 int height);

}  // namespace higsfa::dataio
