#pragma once

// Hierarchical GSFA network: layers of patch-wise GSFA nodes with shared
// parameters, delta-threshold PCA replacement, and an optional |x|^p
// expansion after a layer.

#include "higsfa/gsfa.hpp"
#include "higsfa/types.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace higsfa::net {

enum class PcaMode { None, Threshold, Fixed };

/// Which covariance the replacement PCA channels are fitted on.
enum class PcaSource { Residual, Raw };

/// Edges of the patch training graph. Position: same class and same patch
/// position. Pooled: same class at any position.
enum class PatchGraph { Position, Pooled };

struct LayerSpec {
  int filter = 1;
  int stride = 1;
  int features = 1;
  bool expansion_after = false;
  double expansion_exponent = 0.8;
  PcaMode pca_mode = PcaMode::Threshold;
  double delta_max = 1.99;          // Threshold mode
  int fixed_pca = 0;                // Fixed mode
  PcaSource pca_source = PcaSource::Residual;
  double reg = gsfa::kDefaultRidge;
  PatchGraph graph = PatchGraph::Position;

  void validate() const;
};

/// 5x5/2 with 25 features and expansion, then 4x4/2 with 16 features.
std::vector<LayerSpec> default_specs();

struct ShapePlan {
  std::vector<Shape3> layer_inputs;
  std::vector<Shape3> layer_outputs;   // before expansion
  std::vector<Shape3> layer_emitted;   // after expansion (next input)
  std::size_t output_dim = 0;
};

ShapePlan infer_shapes(const Shape3& input, const std::vector<LayerSpec>& specs);

struct LayerModel {
  LayerSpec spec;
  Shape3 in_shape;
  Shape3 out_shape;                 // channels == spec.features
  gsfa::GsfaModel slow;             // kept slow channels only
  std::optional<gsfa::PcaModel> pca;
  Matrix recon;                     // patch_dim x slow channels
  Vector all_deltas;                // deltas of every solved slow feature
  Vector pca_scale;                 // unit-variance rescale per PCA channel
  // Effective affine map applied at inference: (patch - mean) * basis.
  Vector mean;
  Matrix basis;
  bool pure_pca = false;
  std::vector<std::string> notes;

  std::size_t slow_channels() const { return slow.output_dim(); }
  std::size_t pca_channels() const {
    return static_cast<std::size_t>(basis.cols()) - slow_channels();
  }
  std::size_t patch_dim() const { return static_cast<std::size_t>(mean.size()); }
  std::size_t parameter_count() const {
    return static_cast<std::size_t>(mean.size() + basis.size());
  }
  Shape3 emitted_shape() const {
    Shape3 s = out_shape;
    if (spec.expansion_after) s.channels *= 2;
    return s;
  }
};

struct NetworkModel {
  Shape3 input_shape;
  std::vector<LayerModel> layers;
  std::size_t output_dim = 0;

  std::size_t parameter_count() const;
};

struct PatchBatch {
  DataMatrix patches;
  int grid_rows = 0;
  int grid_cols = 0;
};

PatchBatch extract_patches(const DataMatrix& images, const Shape3& shape,
                           int filter, int stride);

/// Original columns followed by |x|^exponent columns.
DataMatrix expand_abs_pow(const DataMatrix& y, double exponent = 0.8);

LayerModel train_layer(const DataMatrix& patches, const Labels& patch_labels,
                       const LayerSpec& spec);
LayerModel train_layer(const gsfa::Moments& moments, const LayerSpec& spec);

/// Applies one trained layer (and its expansion) to a batch of images in
/// the layer's input layout.
DataMatrix apply_layer(const LayerModel& layer, const DataMatrix& images);

struct TrainOptions {
  Eigen::Index chunk_images = 256;
};

NetworkModel train_network(const DataMatrix& images, const Labels& labels,
                           const Shape3& input_shape,
                           const std::vector<LayerSpec>& specs,
                           const TrainOptions& options = {});

/// Greedy training of a single layer on top of fixed lower layers.
LayerModel train_next_layer(const NetworkModel& lower, const DataMatrix& images,
                            const Labels& labels, const LayerSpec& spec,
                            const TrainOptions& options = {});

DataMatrix forward(const NetworkModel& net, const DataMatrix& images);

namespace serial {
DataMatrix forward(const NetworkModel& net, const DataMatrix& images);
}

inline constexpr std::uint32_t kNetworkFormatVersion = 1;

nlohmann::json spec_to_json(const LayerSpec& spec);
LayerSpec spec_from_json(const nlohmann::json& j);

void save_network(const NetworkModel& net, const std::filesystem::path& path);
NetworkModel load_network(const std::filesystem::path& path);

}  // namespace higsfa::net
