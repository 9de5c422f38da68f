#include "higsfa/network.hpp"

#include "higsfa/error.hpp"
#include "higsfa/kernels.hpp"
#include "higsfa/matrix_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace higsfa::net {

using nlohmann::json;

void LayerSpec::validate() const {
  if (filter < 1 || stride < 1 || features < 1) {
    fail(ErrorKind::Architecture, "filter, stride and features must be >= 1");
  }
  if (pca_mode == PcaMode::Threshold && !(delta_max > 0.0)) {
    fail(ErrorKind::Architecture, "delta threshold must be positive");
  }
  if (pca_mode == PcaMode::Fixed && (fixed_pca < 0 || fixed_pca > features)) {
    fail(ErrorKind::Architecture, "fixed PCA channel count must lie in [0, features]");
  }
  if (reg < 0.0) fail(ErrorKind::Architecture, "ridge coefficient must be >= 0");
}

std::vector<LayerSpec> default_specs() {
  LayerSpec first;
  first.filter = 5;
  first.stride = 2;
  first.features = 25;
  first.expansion_after = true;
  LayerSpec second;
  second.filter = 4;
  second.stride = 2;
  second.features = 16;
  return {first, second};
}

ShapePlan infer_shapes(const Shape3& input, const std::vector<LayerSpec>& specs) {
  if (input.height < 1 || input.width < 1 || input.channels < 1) {
    fail(ErrorKind::Architecture, "input shape must be positive");
  }
  ShapePlan plan;
  Shape3 current = input;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    s.validate();
    if (s.filter > current.height || s.filter > current.width) {
      fail(ErrorKind::Architecture,
           "layer " + std::to_string(i) + ": filter " + std::to_string(s.filter) +
               " exceeds spatial extent " + std::to_string(current.height) + "x" +
               std::to_string(current.width));
    }
    plan.layer_inputs.push_back(current);
    Shape3 out{(current.height - s.filter) / s.stride + 1,
               (current.width - s.filter) / s.stride + 1, s.features};
    plan.layer_outputs.push_back(out);
    if (s.expansion_after) out.channels *= 2;
    plan.layer_emitted.push_back(out);
    current = out;
  }
  plan.output_dim = current.size();
  return plan;
}

std::size_t NetworkModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.parameter_count();
  return n;
}

PatchBatch extract_patches(const DataMatrix& images, const Shape3& shape,
                           int filter, int stride) {
  if (static_cast<std::size_t>(images.cols()) != shape.size()) {
    fail(ErrorKind::Dimension, "image width " + std::to_string(images.cols()) +
                                   " does not match shape size " +
                                   std::to_string(shape.size()));
  }
  if (filter < 1 || stride < 1 || filter > shape.height || filter > shape.width) {
    fail(ErrorKind::Architecture, "filter " + std::to_string(filter) +
                                      " does not fit " + std::to_string(shape.height) +
                                      "x" + std::to_string(shape.width));
  }
  PatchBatch b;
  b.grid_rows = (shape.height - filter) / stride + 1;
  b.grid_cols = (shape.width - filter) / stride + 1;
  b.patches = kernels::extract_patches(images, shape, filter, stride);
  return b;
}

DataMatrix expand_abs_pow(const DataMatrix& y, double exponent) {
  DataMatrix out(y.rows(), 2 * y.cols());
  out.leftCols(y.cols()) = y;
  out.rightCols(y.cols()) = y.array().abs().pow(exponent);
  return out;
}

// ------------------------------------------------------------- training

namespace {

void quantize(LayerModel& layer) {
  round_to_float(layer.mean);
  round_to_float(layer.basis);
  round_to_float(layer.slow.mean);
  round_to_float(layer.slow.basis);
  round_to_float(layer.slow.deltas);
  round_to_float(layer.all_deltas);
  round_to_float(layer.pca_scale);
  round_to_float(layer.recon);
  if (layer.pca) {
    round_to_float(layer.pca->mean);
    round_to_float(layer.pca->components);
    round_to_float(layer.pca->variances);
  }
}

constexpr double kPcaVarianceFloor = 1e-12;

}  // namespace

LayerModel train_layer(const gsfa::Moments& moments, const LayerSpec& spec) {
  spec.validate();
  const auto d = static_cast<Eigen::Index>(moments.mean.size());
  const auto features = static_cast<std::size_t>(spec.features);

  LayerModel layer;
  layer.spec = spec;
  const auto solved = gsfa::solve_gsfa(moments, features, spec.reg);
  layer.all_deltas = solved.deltas;
  layer.notes = solved.notes;

  std::size_t kept = solved.output_dim();
  switch (spec.pca_mode) {
    case PcaMode::Threshold:
      kept = static_cast<std::size_t>(
          std::count_if(solved.deltas.begin(), solved.deltas.end(),
                        [&](double v) { return v <= spec.delta_max; }));
      break;
    case PcaMode::Fixed:
      kept = std::min(kept, features - static_cast<std::size_t>(spec.fixed_pca));
      break;
    case PcaMode::None:
      break;
  }
  const auto n_slow = static_cast<Eigen::Index>(kept);
  const auto n_pca = static_cast<Eigen::Index>(features - kept);

  layer.slow.mean = solved.mean;
  layer.slow.basis = solved.basis.leftCols(n_slow);
  layer.slow.deltas = solved.deltas.head(n_slow);
  layer.slow.requested_dim = kept;
  if (spec.pca_mode == PcaMode::Threshold && kept == 0) {
    layer.pure_pca = true;
    layer.notes.push_back("all " + std::to_string(solved.output_dim()) +
                          " slow features exceed delta threshold; layer is pure PCA");
  }
  if (spec.pca_mode == PcaMode::None && n_pca > 0) {
    layer.notes.push_back("covariance rank short of feature count; " +
                          std::to_string(n_pca) + " channels filled by PCA");
  }

  // Least-squares reconstruction of centered inputs from kept slow features,
  // and the projector onto what they leave unexplained.
  const Matrix& cov = moments.cov;
  Matrix residual_map = Matrix::Identity(d, d);
  layer.recon.resize(d, n_slow);
  if (n_slow > 0) {
    const Matrix& w = layer.slow.basis;
    const Matrix cw = cov * w;
    const Matrix feature_cov = w.transpose() * cw;
    layer.recon = feature_cov.ldlt().solve(cw.transpose()).transpose();
    residual_map -= w * layer.recon.transpose();
  }

  layer.mean = moments.mean;
  layer.basis.resize(d, static_cast<Eigen::Index>(features));
  layer.basis.leftCols(n_slow) = layer.slow.basis;
  layer.pca_scale.resize(0);
  if (n_pca > 0) {
    const bool residual = spec.pca_source == PcaSource::Residual;
    const Matrix source_cov =
        residual ? Matrix(residual_map.transpose() * cov * residual_map) : cov;
    const Vector source_mean = residual ? Vector::Zero(d) : Vector(moments.mean);
    layer.pca = gsfa::fit_pca(source_mean, source_cov, moments.samples,
                              static_cast<std::size_t>(n_pca));
    const auto& pca = *layer.pca;
    const auto got = static_cast<Eigen::Index>(pca.output_dim());
    layer.pca_scale = pca.variances.array().max(kPcaVarianceFloor).rsqrt().matrix();
    Matrix scaled = pca.components * layer.pca_scale.asDiagonal();
    if (residual) scaled = residual_map * scaled;
    layer.basis.middleCols(n_slow, got) = scaled;
    if (got < n_pca) {
      layer.basis.rightCols(n_pca - got).setZero();
      layer.notes.push_back(std::to_string(n_pca - got) +
                            " PCA channels unavailable (rank); emitted as zeros");
    }
  }
  quantize(layer);
  return layer;
}

LayerModel train_layer(const DataMatrix& patches, const Labels& patch_labels,
                       const LayerSpec& spec) {
  if (patch_labels.size() != static_cast<std::size_t>(patches.rows())) {
    fail(ErrorKind::Dimension, "patch label count does not match patch rows");
  }
  const auto g = gsfa::class_graph(patch_labels);
  return train_layer(gsfa::compute_moments(patches, g), spec);
}

DataMatrix apply_layer(const LayerModel& layer, const DataMatrix& images) {
  const auto patches = kernels::extract_patches(images, layer.in_shape,
                                                layer.spec.filter, layer.spec.stride);
  DataMatrix y = kernels::project(patches, layer.mean, layer.basis);
  if (layer.spec.expansion_after) y = expand_abs_pow(y, layer.spec.expansion_exponent);
  const Eigen::Index width = y.size() / std::max<Eigen::Index>(images.rows(), 1);
  return Eigen::Map<const DataMatrix>(y.data(), images.rows(), width);
}

namespace {

DataMatrix apply_layers(const std::vector<LayerModel>& layers, std::size_t count,
                        DataMatrix images) {
  for (std::size_t i = 0; i < count; ++i) images = apply_layer(layers[i], images);
  return images;
}

LayerModel train_on_top(const std::vector<LayerModel>& lower, const Shape3& in_shape,
                        const DataMatrix& images, const Labels& labels,
                        const LayerSpec& spec, const TrainOptions& options) {
  if (labels.size() != static_cast<std::size_t>(images.rows())) {
    fail(ErrorKind::Dimension, "label count does not match image rows");
  }
  if (images.rows() < 1) fail(ErrorKind::Request, "no training images");
  const auto plan = infer_shapes(in_shape, {spec});
  const auto positions = static_cast<std::size_t>(plan.layer_outputs[0].height) *
                         plan.layer_outputs[0].width;
  const auto graph = gsfa::class_graph(labels);

  std::vector<double> sizes;
  const bool pos = spec.graph == PatchGraph::Position;
  if (pos) {
    for (auto n : graph.class_sizes)
      for (std::size_t p = 0; p < positions; ++p) sizes.push_back(static_cast<double>(n));
  } else {
    for (auto n : graph.class_sizes) sizes.push_back(static_cast<double>(n * positions));
  }

  kernels::ClassMoments acc;
  const Eigen::Index chunk = std::max<Eigen::Index>(options.chunk_images, 1);
  for (Eigen::Index begin = 0; begin < images.rows(); begin += chunk) {
    const Eigen::Index len = std::min(chunk, images.rows() - begin);
    const DataMatrix rep = apply_layers(lower, lower.size(), images.middleRows(begin, len));
    const DataMatrix patches =
        kernels::extract_patches(rep, in_shape, spec.filter, spec.stride);
    std::vector<int> classes;
    classes.reserve(static_cast<std::size_t>(patches.rows()));
    for (Eigen::Index i = 0; i < len; ++i) {
      const int c = graph.node_class[static_cast<std::size_t>(begin + i)];
      if (pos) {
        for (std::size_t p = 0; p < positions; ++p)
          classes.push_back(c * static_cast<int>(positions) + static_cast<int>(p));
      } else {
        classes.insert(classes.end(), positions, c);
      }
    }
    if (begin == 0) {
      acc = kernels::ClassMoments(patches.colwise().mean().transpose(), sizes);
    }
    kernels::accumulate_moments(acc, patches, classes);
  }
  auto layer = train_layer(gsfa::finalize(acc), spec);
  layer.in_shape = in_shape;
  layer.out_shape = plan.layer_outputs[0];
  return layer;
}

}  // namespace

NetworkModel train_network(const DataMatrix& images, const Labels& labels,
                           const Shape3& input_shape,
                           const std::vector<LayerSpec>& specs,
                           const TrainOptions& options) {
  if (static_cast<std::size_t>(images.cols()) != input_shape.size()) {
    fail(ErrorKind::Dimension, "images have " + std::to_string(images.cols()) +
                                   " columns, input shape needs " +
                                   std::to_string(input_shape.size()));
  }
  const auto plan = infer_shapes(input_shape, specs);
  NetworkModel net;
  net.input_shape = input_shape;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    net.layers.push_back(train_on_top(net.layers, plan.layer_inputs[i], images, labels,
                                      specs[i], options));
  }
  net.output_dim = plan.output_dim;
  return net;
}

LayerModel train_next_layer(const NetworkModel& lower, const DataMatrix& images,
                            const Labels& labels, const LayerSpec& spec,
                            const TrainOptions& options) {
  const Shape3 in_shape =
      lower.layers.empty() ? lower.input_shape : lower.layers.back().emitted_shape();
  return train_on_top(lower.layers, in_shape, images, labels, spec, options);
}

DataMatrix forward(const NetworkModel& net, const DataMatrix& images) {
  if (static_cast<std::size_t>(images.cols()) != net.input_shape.size()) {
    fail(ErrorKind::Dimension, "input has " + std::to_string(images.cols()) +
                                   " columns, network expects " +
                                   std::to_string(net.input_shape.size()));
  }
  constexpr Eigen::Index kChunk = 64;
  DataMatrix out(images.rows(), static_cast<Eigen::Index>(net.output_dim));
  for (Eigen::Index begin = 0; begin < images.rows(); begin += kChunk) {
    const Eigen::Index len = std::min(kChunk, images.rows() - begin);
    out.middleRows(begin, len) =
        apply_layers(net.layers, net.layers.size(), images.middleRows(begin, len));
  }
  return out;
}

namespace serial {

DataMatrix forward(const NetworkModel& net, const DataMatrix& images) {
  if (static_cast<std::size_t>(images.cols()) != net.input_shape.size()) {
    fail(ErrorKind::Dimension, "input shape mismatch");
  }
  DataMatrix out(images.rows(), static_cast<Eigen::Index>(net.output_dim));
  for (Eigen::Index r = 0; r < images.rows(); ++r) {
    DataMatrix rep = images.row(r);
    for (const auto& layer : net.layers) {
      const auto patches = kernels::serial::extract_patches(
          rep, layer.in_shape, layer.spec.filter, layer.spec.stride);
      DataMatrix y = kernels::serial::project(patches, layer.mean, layer.basis);
      if (layer.spec.expansion_after) {
        y = expand_abs_pow(y, layer.spec.expansion_exponent);
      }
      rep = Eigen::Map<const DataMatrix>(y.data(), 1, y.size());
    }
    out.row(r) = rep;
  }
  return out;
}

}  // namespace serial

// ----------------------------------------------------------- persistence

namespace {

constexpr Magic kNetworkMagic{'H', 'G', 'S', 'N'};

json shape_json(const Shape3& s) { return json::array({s.height, s.width, s.channels}); }

Shape3 shape_from(const json& j) {
  return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>()};
}

std::string mode_name(PcaMode m) {
  switch (m) {
    case PcaMode::None: return "none";
    case PcaMode::Threshold: return "threshold";
    case PcaMode::Fixed: return "fixed";
  }
  return "none";
}

PcaMode mode_from(const std::string& s) {
  if (s == "threshold") return PcaMode::Threshold;
  if (s == "fixed") return PcaMode::Fixed;
  if (s == "none") return PcaMode::None;
  fail(ErrorKind::Persistence, "unknown pca mode '" + s + "'");
}

json spec_json(const LayerSpec& s) {
  return {{"filter", s.filter},
          {"stride", s.stride},
          {"features", s.features},
          {"expansion_after", s.expansion_after},
          {"expansion_exponent", s.expansion_exponent},
          {"pca_mode", mode_name(s.pca_mode)},
          {"delta_max", s.delta_max},
          {"fixed_pca", s.fixed_pca},
          {"pca_source", s.pca_source == PcaSource::Residual ? "residual" : "raw"},
          {"reg", s.reg},
          {"graph", s.graph == PatchGraph::Position ? "position" : "pooled"}};
}

LayerSpec spec_from(const json& j) {
  LayerSpec s;
  s.filter = j.at("filter").get<int>();
  s.stride = j.at("stride").get<int>();
  s.features = j.at("features").get<int>();
  s.expansion_after = j.at("expansion_after").get<bool>();
  s.expansion_exponent = j.at("expansion_exponent").get<double>();
  s.pca_mode = mode_from(j.at("pca_mode").get<std::string>());
  s.delta_max = j.at("delta_max").get<double>();
  s.fixed_pca = j.at("fixed_pca").get<int>();
  s.pca_source = j.at("pca_source").get<std::string>() == "raw" ? PcaSource::Raw
                                                                : PcaSource::Residual;
  s.reg = j.at("reg").get<double>();
  s.graph = j.at("graph").get<std::string>() == "pooled" ? PatchGraph::Pooled
                                                         : PatchGraph::Position;
  return s;
}

DataMatrix as_row(const Vector& v) { return v.transpose(); }
DataMatrix as_matrix(const Matrix& m) { return m; }

}  // namespace

json spec_to_json(const LayerSpec& s) { return spec_json(s); }
LayerSpec spec_from_json(const json& j) { return spec_from(j); }

void save_network(const NetworkModel& net, const std::filesystem::path& path) {
  json meta;
  meta["input_shape"] = shape_json(net.input_shape);
  meta["output_dim"] = net.output_dim;
  meta["layers"] = json::array();
  for (const auto& l : net.layers) {
    meta["layers"].push_back({{"spec", spec_json(l.spec)},
                              {"in_shape", shape_json(l.in_shape)},
                              {"out_shape", shape_json(l.out_shape)},
                              {"has_pca", l.pca.has_value()},
                              {"pure_pca", l.pure_pca},
                              {"notes", l.notes},
                              {"slow_requested", l.slow.requested_dim},
                              {"slow_notes", l.slow.notes},
                              {"pca_notes", l.pca ? l.pca->notes : std::vector<std::string>{}}});
  }
  const std::string text = meta.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Persistence, "cannot write " + path.string());
  out.write(kNetworkMagic.data(), 4);
  write_u32(out, kNetworkFormatVersion);
  write_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& l : net.layers) {
    write_matrix_body(out, as_row(l.mean));
    write_matrix_body(out, as_matrix(l.basis));
    write_matrix_body(out, as_row(l.slow.mean));
    write_matrix_body(out, as_matrix(l.slow.basis));
    write_matrix_body(out, as_row(l.slow.deltas));
    write_matrix_body(out, as_row(l.all_deltas));
    write_matrix_body(out, as_row(l.pca_scale));
    write_matrix_body(out, as_matrix(l.recon));
    if (l.pca) {
      write_matrix_body(out, as_row(l.pca->mean));
      write_matrix_body(out, as_matrix(l.pca->components));
      write_matrix_body(out, as_row(l.pca->variances));
    }
  }
  if (!out) fail(ErrorKind::Persistence, "write failed for " + path.string());
}

NetworkModel load_network(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Persistence, "cannot open " + path.string());
  const std::string src = path.string();
  Magic magic{};
  if (!in.read(magic.data(), 4)) fail(ErrorKind::Persistence, "truncated header in " + src);
  if (magic != kNetworkMagic) {
    fail(ErrorKind::Persistence, src + " is not a network file");
  }
  const auto version = read_u32(in, src);
  if (version != kNetworkFormatVersion) {
    fail(ErrorKind::Persistence, "network format version " + std::to_string(version) +
                                     " in " + src + " is not supported (supported: " +
                                     std::to_string(kNetworkFormatVersion) + ")");
  }
  const auto len = read_u32(in, src);
  std::string text(len, '\0');
  if (!in.read(text.data(), len)) fail(ErrorKind::Persistence, "truncated metadata in " + src);

  auto row = [&](Vector& v) {
    const DataMatrix m = read_matrix_body(in, src);
    if (m.rows() > 1) fail(ErrorKind::Persistence, "expected a vector in " + src);
    v = m.rows() == 0 ? Vector() : Vector(m.row(0).transpose());
  };
  auto mat = [&](Matrix& m) { m = read_matrix_body(in, src); };

  NetworkModel net;
  try {
    const json meta = json::parse(text);
    net.input_shape = shape_from(meta.at("input_shape"));
    net.output_dim = meta.at("output_dim").get<std::size_t>();
    for (const auto& lj : meta.at("layers")) {
      LayerModel l;
      l.spec = spec_from(lj.at("spec"));
      l.in_shape = shape_from(lj.at("in_shape"));
      l.out_shape = shape_from(lj.at("out_shape"));
      l.pure_pca = lj.at("pure_pca").get<bool>();
      l.notes = lj.at("notes").get<std::vector<std::string>>();
      l.slow.requested_dim = lj.at("slow_requested").get<std::size_t>();
      l.slow.notes = lj.at("slow_notes").get<std::vector<std::string>>();
      row(l.mean);
      mat(l.basis);
      row(l.slow.mean);
      mat(l.slow.basis);
      row(l.slow.deltas);
      row(l.all_deltas);
      row(l.pca_scale);
      mat(l.recon);
      if (lj.at("has_pca").get<bool>()) {
        gsfa::PcaModel p;
        p.notes = lj.at("pca_notes").get<std::vector<std::string>>();
        row(p.mean);
        mat(p.components);
        row(p.variances);
        l.pca = std::move(p);
      }
      net.layers.push_back(std::move(l));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Persistence, "malformed network metadata in " + src + ": " + e.what());
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    fail(ErrorKind::Persistence, "trailing bytes in " + src);
  }
  // Re-derive the chain so corrupted shapes fail here rather than in forward.
  std::vector<LayerSpec> specs;
  for (const auto& l : net.layers) specs.push_back(l.spec);
  const auto plan = infer_shapes(net.input_shape, specs);
  if (plan.output_dim != net.output_dim) {
    fail(ErrorKind::Persistence, "inconsistent output_dim in " + src);
  }
  return net;
}

}  // namespace higsfa::net
