#include "higsfa/dataio.hpp"

#include "higsfa/error.hpp"
#include "higsfa/matrix_io.hpp"
#include "higsfa/rng.hpp"

#include <nlohmann/json.hpp>
#include <png.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

namespace higsfa::dataio {

namespace fs = std::filesystem;

GrayImage::GrayImage(int w, int h)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, 0.0) {}

GrayImage::GrayImage(int w, int h, std::vector<double> px)
    : width(w), height(h), pixels(std::move(px)) {
  if (pixels.size() != static_cast<std::size_t>(w) * h) {
    fail(ErrorKind::Dimension, "pixel count " + std::to_string(pixels.size()) +
                                   " does not match " + std::to_string(w) + "x" +
                                   std::to_string(h));
  }
}

void LabeledDataset::validate() const {
  if (labels.size() != static_cast<std::size_t>(data.rows())) {
    fail(ErrorKind::Consistency,
         "label count " + std::to_string(labels.size()) + " != row count " +
             std::to_string(data.rows()));
  }
  std::vector<bool> seen(class_names.size(), false);
  for (auto l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= class_names.size()) {
      fail(ErrorKind::Consistency, "label " + std::to_string(l) +
                                       " outside vocabulary of " +
                                       std::to_string(class_names.size()));
    }
    seen[static_cast<std::size_t>(l)] = true;
  }
  for (std::size_t c = 0; c < seen.size(); ++c) {
    if (!seen[c]) {
      fail(ErrorKind::Consistency, "class '" + class_names[c] + "' has no samples");
    }
  }
}

LabeledDataset LabeledDataset::subset(const std::vector<std::size_t>& rows) const {
  LabeledDataset out;
  out.class_names = class_names;
  out.data.resize(static_cast<Eigen::Index>(rows.size()), data.cols());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.data.row(static_cast<Eigen::Index>(i)) =
        data.row(static_cast<Eigen::Index>(rows[i]));
    out.labels.push_back(labels[rows[i]]);
  }
  return out;
}

std::size_t OmniglotCorpus::num_characters() const {
  std::size_t n = 0;
  for (const auto& a : alphabets) n += a.characters.size();
  return n;
}

// ------------------------------------------------------------------- IDX

namespace {

std::uint32_t read_be32(std::istream& in, const fs::path& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    fail(ErrorKind::Format, "truncated IDX header in " + path.string());
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
         (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

std::ifstream open_binary(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Format, "cannot open " + path.string());
  return in;
}

}  // namespace

LabeledDataset load_mnist_idx(const fs::path& images_path,
                              const fs::path& labels_path) {
  constexpr std::uint32_t kImagesMagic = 0x00000803;
  constexpr std::uint32_t kLabelsMagic = 0x00000801;

  auto img = open_binary(images_path);
  if (auto magic = read_be32(img, images_path); magic != kImagesMagic) {
    fail(ErrorKind::Format, "bad IDX image magic " + hex32(magic) + " in " +
                                images_path.string() + " (expected " +
                                hex32(kImagesMagic) + ")");
  }
  const std::uint32_t n = read_be32(img, images_path);
  const std::uint32_t rows = read_be32(img, images_path);
  const std::uint32_t cols = read_be32(img, images_path);

  auto lab = open_binary(labels_path);
  if (auto magic = read_be32(lab, labels_path); magic != kLabelsMagic) {
    fail(ErrorKind::Format, "bad IDX label magic " + hex32(magic) + " in " +
                                labels_path.string() + " (expected " +
                                hex32(kLabelsMagic) + ")");
  }
  const std::uint32_t n_labels = read_be32(lab, labels_path);
  if (n_labels != n) {
    fail(ErrorKind::Consistency, "image count " + std::to_string(n) +
                                     " != label count " + std::to_string(n_labels));
  }

  const std::size_t dim = static_cast<std::size_t>(rows) * cols;
  LabeledDataset ds;
  ds.data.resize(n, static_cast<Eigen::Index>(dim));
  std::vector<unsigned char> buf(dim);
  for (std::uint32_t i = 0; i < n; ++i) {
    if (!img.read(reinterpret_cast<char*>(buf.data()),
                  static_cast<std::streamsize>(dim))) {
      fail(ErrorKind::Format, "truncated IDX image payload in " + images_path.string());
    }
    for (std::size_t j = 0; j < dim; ++j) {
      ds.data(i, static_cast<Eigen::Index>(j)) = buf[j] / 255.0;
    }
  }
  std::vector<unsigned char> raw(n);
  if (!lab.read(reinterpret_cast<char*>(raw.data()), n)) {
    fail(ErrorKind::Format, "truncated IDX label payload in " + labels_path.string());
  }
  int max_label = -1;
  ds.labels.reserve(n);
  for (auto v : raw) {
    ds.labels.push_back(v);
    max_label = std::max(max_label, int{v});
  }
  for (int c = 0; c <= max_label; ++c) ds.class_names.push_back(std::to_string(c));
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------- images

namespace {

struct PngFile {
  FILE* fp = nullptr;
  ~PngFile() {
    if (fp) std::fclose(fp);
  }
};

void png_error_to_buffer(png_structp png, png_const_charp msg) {
  auto* reason = static_cast<char*>(png_get_error_ptr(png));
  std::snprintf(reason, 256, "%s", msg);
  png_longjmp(png, 1);
}

void png_ignore_warning(png_structp, png_const_charp) {}

/// Decodes to 8-bit luminance using libpng's transforms.
GrayImage read_png_gray(const fs::path& path) {
  PngFile file;
  file.fp = std::fopen(path.c_str(), "rb");
  if (!file.fp) fail(ErrorKind::Ingestion, "cannot open image " + path.string());

  char reason[256] = "unknown error";
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, reason,
                                           png_error_to_buffer, png_ignore_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::Ingestion, "libpng init failed for " + path.string());
  }
  std::vector<png_bytep> row_ptrs;
  std::vector<png_byte> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::Ingestion, "corrupt PNG " + path.string() + ": " + reason);
  }
  png_init_io(png, file.fp);
  png_read_info(png, info);

  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (depth == 16) png_set_strip_16(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
      color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  png_read_update_info(png, info);

  const auto width = static_cast<int>(png_get_image_width(png, info));
  const auto height = static_cast<int>(png_get_image_height(png, info));
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  if (rowbytes != static_cast<std::size_t>(width)) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::Ingestion, "unsupported PNG layout in " + path.string());
  }
  buffer.resize(rowbytes * static_cast<std::size_t>(height));
  row_ptrs.resize(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) row_ptrs[y] = buffer.data() + rowbytes * y;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  GrayImage out(width, height);
  for (std::size_t i = 0; i < buffer.size(); ++i) out.pixels[i] = buffer[i] / 255.0;
  return out;
}

/// Binary PGM (P5, maxval <= 255).
GrayImage read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Ingestion, "cannot open image " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  in.get();
  if (magic != "P5" || w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
    fail(ErrorKind::Ingestion, "unsupported PGM header in " + path.string());
  }
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h);
  if (!in.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size()))) {
    fail(ErrorKind::Ingestion, "truncated PGM " + path.string());
  }
  GrayImage out(w, h);
  for (std::size_t i = 0; i < buf.size(); ++i) out.pixels[i] = double(buf[i]) / maxval;
  return out;
}

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (directories ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

OmniglotCorpus load_omniglot(const fs::path& root_dir) {
  OmniglotCorpus corpus;
  if (!fs::is_directory(root_dir)) {
    fail(ErrorKind::Ingestion, "not a directory: " + root_dir.string());
  }
  for (const auto& alpha_dir : sorted_entries(root_dir, true)) {
    OmniglotAlphabet alphabet;
    alphabet.name = alpha_dir.filename().string();
    for (const auto& char_dir : sorted_entries(alpha_dir, true)) {
      OmniglotCharacter character;
      character.name = char_dir.filename().string();
      for (const auto& file : sorted_entries(char_dir, false)) {
        const auto ext = file.extension().string();
        GrayImage img;
        if (ext == ".png" || ext == ".PNG") {
          img = read_png_gray(file);
        } else if (ext == ".pgm") {
          img = read_pgm(file);
        } else {
          continue;
        }
        // Source strokes are dark on light; store strokes as high values.
        for (auto& p : img.pixels) p = 1.0 - p;
        character.samples.push_back(std::move(img));
      }
      if (character.samples.size() != 20) {
        corpus.warnings.push_back(alphabet.name + "/" + character.name + " has " +
                                  std::to_string(character.samples.size()) +
                                  " samples (expected 20)");
      }
      alphabet.characters.push_back(std::move(character));
    }
    corpus.alphabets.push_back(std::move(alphabet));
  }
  return corpus;
}

GrayImage downsample_block_mean(const GrayImage& img, int factor) {
  if (factor < 1 || img.width % factor != 0 || img.height % factor != 0) {
    fail(ErrorKind::Dimension, "factor " + std::to_string(factor) +
                                   " does not divide " + std::to_string(img.width) +
                                   "x" + std::to_string(img.height));
  }
  if (factor == 1) return img;
  GrayImage out(img.width / factor, img.height / factor);
  const double inv = 1.0 / (static_cast<double>(factor) * factor);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      double s = 0.0;
      for (int dy = 0; dy < factor; ++dy) {
        for (int dx = 0; dx < factor; ++dx) s += img.at(y * factor + dy, x * factor + dx);
      }
      out.at(y, x) = s * inv;
    }
  }
  return out;
}

// ----------------------------------------------------------------- split

Split sample_split(const LabeledDataset& ds, const SplitSpec& spec) {
  if (spec.per_class_train < 1) {
    fail(ErrorKind::Request, "per_class_train must be >= 1");
  }
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes());
  for (std::size_t i = 0; i < ds.labels.size(); ++i) {
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  }
  Split split;
  split.val_shortfall.assign(ds.num_classes(), 0);
  Rng rng(spec.seed);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    const auto& rows = by_class[c];
    if (rows.size() < spec.per_class_train) {
      fail(ErrorKind::InsufficientData,
           "class '" + ds.class_names[c] + "' has " + std::to_string(rows.size()) +
               " samples, " + std::to_string(spec.per_class_train) + " requested");
    }
    const auto order = rng.choose(rows.size(), rows.size());
    const std::size_t n_train = spec.per_class_train;
    const std::size_t n_val =
        std::min(spec.per_class_val, rows.size() - n_train);
    split.val_shortfall[c] = spec.per_class_val - n_val;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const std::size_t row = rows[order[k]];
      if (k < n_train) {
        split.train_rows.push_back(row);
      } else if (k < n_train + n_val) {
        split.val_rows.push_back(row);
      } else {
        split.rest_rows.push_back(row);
      }
    }
  }
  std::sort(split.train_rows.begin(), split.train_rows.end());
  std::sort(split.val_rows.begin(), split.val_rows.end());
  std::sort(split.rest_rows.begin(), split.rest_rows.end());
  split.train = ds.subset(split.train_rows);
  split.val = ds.subset(split.val_rows);
  split.rest = ds.subset(split.rest_rows);
  return split;
}

// ----------------------------------------------------------------- cache

void save_dataset_cache(const fs::path& stem, const LabeledDataset& ds) {
  ds.validate();
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  auto dat = stem;
  dat += ".dat";
  auto side = stem;
  side += ".json";
  save_matrix_file(dat, kCacheMagic, ds.data);
  nlohmann::json j;
  j["rows"] = ds.data.rows();
  j["cols"] = ds.data.cols();
  j["labels"] = ds.labels;
  j["class_names"] = ds.class_names;
  std::ofstream out(side, std::ios::trunc);
  if (!out) fail(ErrorKind::Persistence, "cannot write " + side.string());
  out << j.dump() << '\n';
}

LabeledDataset load_dataset_cache(const fs::path& stem) {
  auto dat = stem;
  dat += ".dat";
  auto side = stem;
  side += ".json";
  LabeledDataset ds;
  ds.data = load_matrix_file(dat, kCacheMagic);
  std::ifstream in(side);
  if (!in) fail(ErrorKind::Persistence, "cannot open " + side.string());
  nlohmann::json j;
  try {
    in >> j;
    ds.labels = j.at("labels").get<Labels>();
    ds.class_names = j.at("class_names").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Persistence, "malformed sidecar " + side.string() + ": " + e.what());
  }
  ds.validate();
  return ds;
}

LabeledDataset corpus_to_dataset(const OmniglotCorpus& corpus) {
  LabeledDataset ds;
  std::size_t rows = 0;
  int dim = -1;
  for (const auto& a : corpus.alphabets) {
    for (const auto& c : a.characters) {
      rows += c.samples.size();
      for (const auto& s : c.samples) {
        const int d = s.width * s.height;
        if (dim >= 0 && d != dim) {
          fail(ErrorKind::Dimension, "mixed image sizes in corpus");
        }
        dim = d;
      }
    }
  }
  ds.data.resize(static_cast<Eigen::Index>(rows), std::max(dim, 0));
  Eigen::Index r = 0;
  for (const auto& a : corpus.alphabets) {
    for (const auto& c : a.characters) {
      const auto label = static_cast<std::int32_t>(ds.class_names.size());
      ds.class_names.push_back(a.name + "/" + c.name);
      for (const auto& s : c.samples) {
        for (std::size_t k = 0; k < s.pixels.size(); ++k) {
          ds.data(r, static_cast<Eigen::Index>(k)) = s.pixels[k];
        }
        ds.labels.push_back(label);
        ++r;
      }
    }
  }
  return ds;
}

OmniglotCorpus dataset_to_corpus(const LabeledDataset& ds, int width, int height) {
  if (static_cast<Eigen::Index>(width) * height != ds.data.cols()) {
    fail(ErrorKind::Dimension, "image size " + std::to_string(width) + "x" +
                                   std::to_string(height) + " does not match " +
                                   std::to_string(ds.data.cols()) + " columns");
  }
  OmniglotCorpus corpus;
  std::map<std::string, std::size_t> alpha_index;
  std::vector<std::pair<std::size_t, std::size_t>> class_slot(ds.num_classes());
  for (std::size_t c = 0; c < ds.num_classes(); ++c) {
    const auto& name = ds.class_names[c];
    const auto slash = name.find('/');
    const std::string alpha = slash == std::string::npos ? name : name.substr(0, slash);
    const std::string chr = slash == std::string::npos ? name : name.substr(slash + 1);
    auto [it, inserted] = alpha_index.try_emplace(alpha, corpus.alphabets.size());
    if (inserted) corpus.alphabets.push_back({alpha, {}});
    auto& a = corpus.alphabets[it->second];
    class_slot[c] = {it->second, a.characters.size()};
    a.characters.push_back({chr, {}});
  }
  for (Eigen::Index r = 0; r < ds.data.rows(); ++r) {
    const auto [ai, ci] = class_slot[static_cast<std::size_t>(ds.labels[r])];
    std::vector<double> px(ds.data.row(r).begin(), ds.data.row(r).end());
    corpus.alphabets[ai].characters[ci].samples.emplace_back(width, height, std::move(px));
  }
  return corpus;
}

}  // namespace higsfa::dataio
