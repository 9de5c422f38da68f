#include "helpers.hpp"

#include "higsfa/dataio.hpp"
#include "higsfa/error.hpp"
#include "higsfa/matrix_io.hpp"

#include <doctest.h>
#include <png.h>

#include <cstdio>
#include <fstream>
#include <set>

using namespace higsfa;
namespace fs = std::filesystem;

namespace {

void put_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_idx(const fs::path& images, const fs::path& labels,
               const std::vector<std::uint8_t>& pixels,
               const std::vector<std::uint8_t>& label_bytes, std::uint32_t rows,
               std::uint32_t cols, std::uint32_t image_magic = 0x803) {
  const auto n = static_cast<std::uint32_t>(label_bytes.size());
  std::ofstream im(images, std::ios::binary);
  put_be32(im, image_magic);
  put_be32(im, n);
  put_be32(im, rows);
  put_be32(im, cols);
  im.write(reinterpret_cast<const char*>(pixels.data()),
           static_cast<std::streamsize>(pixels.size()));
  std::ofstream lb(labels, std::ios::binary);
  put_be32(lb, 0x801);
  put_be32(lb, n);
  lb.write(reinterpret_cast<const char*>(label_bytes.data()),
           static_cast<std::streamsize>(label_bytes.size()));
}

void write_pgm(const fs::path& path, int w, int h, const std::vector<std::uint8_t>& px) {
  std::ofstream out(path, std::ios::binary);
  out << "P5\n" << w << ' ' << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

/// 8-bit RGB or 1-bit gray PNG through libpng's writer.
void write_png(const fs::path& path, int w, int h, const std::vector<std::uint8_t>& gray,
               bool one_bit) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  REQUIRE(fp != nullptr);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h),
               one_bit ? 1 : 8, one_bit ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row;
  for (int y = 0; y < h; ++y) {
    if (one_bit) {
      row.assign(static_cast<std::size_t>((w + 7) / 8), 0);
      for (int x = 0; x < w; ++x) {
        if (gray[static_cast<std::size_t>(y * w + x)] > 127) {
          row[static_cast<std::size_t>(x / 8)] |= static_cast<png_byte>(0x80 >> (x % 8));
        }
      }
    } else {
      row.clear();
      for (int x = 0; x < w; ++x) {
        const auto v = gray[static_cast<std::size_t>(y * w + x)];
        row.insert(row.end(), {v, v, v});
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

dataio::LabeledDataset toy(std::vector<std::size_t> per_class, Eigen::Index cols = 3) {
  dataio::LabeledDataset ds;
  std::size_t total = 0;
  for (auto n : per_class) total += n;
  ds.data.resize(static_cast<Eigen::Index>(total), cols);
  std::size_t row = 0;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    ds.class_names.push_back("c" + std::to_string(c));
    for (std::size_t i = 0; i < per_class[c]; ++i, ++row) {
      ds.labels.push_back(static_cast<std::int32_t>(c));
      ds.data.row(static_cast<Eigen::Index>(row)).setConstant(static_cast<double>(row));
    }
  }
  return ds;
}

}  // namespace

TEST_CASE("IDX loading scales pixels and checks headers") {
  const auto dir = testing::temp_dir("idx");
  std::vector<std::uint8_t> px{0, 255, 51, 102, 7, 8, 9, 10};
  px.resize(40, 200);
  const std::vector<std::uint8_t> lab{3, 1, 0, 2, 4, 5, 6, 7, 8, 9};
  write_idx(dir / "img", dir / "lab", px, lab, 2, 2);
  const auto ds = dataio::load_mnist_idx(dir / "img", dir / "lab");
  REQUIRE(ds.size() == 10);
  CHECK(ds.data.cols() == 4);
  CHECK(ds.data(0, 1) == 1.0);
  CHECK(ds.data(0, 2) == doctest::Approx(0.2));
  CHECK(ds.labels == Labels{3, 1, 0, 2, 4, 5, 6, 7, 8, 9});
  CHECK(ds.num_classes() == 10);

  write_idx(dir / "bad", dir / "lab2", px, lab, 2, 2, 0);
  try {
    dataio::load_mnist_idx(dir / "bad", dir / "lab2");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Format);
    CHECK(std::string(e.what()).find("0x00000000") != std::string::npos);
  }

  write_idx(dir / "img3", dir / "lab3", px, lab, 2, 2);
  {
    std::ofstream lb(dir / "lab3", std::ios::binary | std::ios::trunc);
    put_be32(lb, 0x801);
    put_be32(lb, 3);
    const char b[3] = {1, 2, 3};
    lb.write(b, 3);
  }
  try {
    dataio::load_mnist_idx(dir / "img3", dir / "lab3");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Consistency);
  }
}

TEST_CASE("random IDX payloads load into the unit interval") {
  const auto dir = testing::temp_dir("idx_fuzz");
  Rng rng(17);
  for (int rep = 0; rep < 20; ++rep) {
    const auto n = 10 + rng.below(6);
    const auto side = static_cast<std::uint32_t>(1 + rng.below(5));
    std::vector<std::uint8_t> px(n * side * side), lab(n);
    for (auto& p : px) p = static_cast<std::uint8_t>(rng.below(256));
    for (std::size_t i = 0; i < n; ++i) lab[i] = static_cast<std::uint8_t>(i < 10 ? i : rng.below(10));
    write_idx(dir / "i", dir / "l", px, lab, side, side);
    const auto ds = dataio::load_mnist_idx(dir / "i", dir / "l");
    CHECK(ds.data.minCoeff() >= 0.0);
    CHECK(ds.data.maxCoeff() <= 1.0);
  }
}

TEST_CASE("Omniglot tree loading") {
  const auto root = testing::temp_dir("omni");
  const int w = 6, h = 3;
  std::vector<std::uint8_t> px(w * h, 255);
  px[4] = 0;
  fs::create_directories(root / "b_alpha" / "char1");
  fs::create_directories(root / "a_alpha" / "char2");
  fs::create_directories(root / "a_alpha" / "char1");
  for (int s = 0; s < 20; ++s) {
    write_png(root / "a_alpha" / "char1" / ("s" + std::to_string(s) + ".png"), w, h, px, true);
  }
  write_png(root / "a_alpha" / "char2" / "x.png", w, h, px, false);
  write_pgm(root / "b_alpha" / "char1" / "x.pgm", w, h, px);
  { std::ofstream(root / "b_alpha" / "char1" / "notes.txt") << "skip me"; }

  const auto corpus = dataio::load_omniglot(root);
  REQUIRE(corpus.alphabets.size() == 2);
  CHECK(corpus.alphabets[0].name == "a_alpha");
  CHECK(corpus.alphabets[0].characters[0].name == "char1");
  CHECK(corpus.alphabets[0].characters[0].samples.size() == 20);
  CHECK(corpus.num_characters() == 3);
  CHECK(corpus.warnings.size() == 2);
  for (const auto& alpha : corpus.alphabets) {
    for (const auto& ch : alpha.characters) {
      const auto& img = ch.samples.front();
      CHECK(img.width == w);
      CHECK(img.height == h);
      CHECK(img.pixels[4] == doctest::Approx(1.0));
      CHECK(img.pixels[0] == doctest::Approx(0.0));
    }
  }

  const auto empty = testing::temp_dir("omni_empty");
  CHECK(dataio::load_omniglot(empty).alphabets.empty());

  { std::ofstream(root / "a_alpha" / "char2" / "broken.png") << "not a png"; }
  try {
    dataio::load_omniglot(root);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Ingestion);
    CHECK(std::string(e.what()).find("broken.png") != std::string::npos);
  }
}

TEST_CASE("block-mean downsampling") {
  dataio::GrayImage two(2, 2, {0, 0, 1, 1});
  const auto one = dataio::downsample_block_mean(two, 2);
  CHECK(one.width == 1);
  CHECK(one.pixels[0] == doctest::Approx(0.5));

  Rng rng(9);
  dataio::GrayImage big(105, 105);
  for (auto& p : big.pixels) p = rng.uniform();
  const auto small = dataio::downsample_block_mean(big, 3);
  CHECK(small.width == 35);
  CHECK(small.height == 35);
  double in = 0, out = 0;
  for (double p : big.pixels) in += p;
  for (double p : small.pixels) out += p;
  CHECK(out * 9 == doctest::Approx(in).epsilon(1e-12));
  CHECK(dataio::downsample_block_mean(big, 1).pixels == big.pixels);

  try {
    dataio::downsample_block_mean(big, 2);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Dimension);
  }
}

TEST_CASE("split sampling") {
  const auto ds = toy({5, 8, 6});
  const auto a = dataio::sample_split(ds, {5, 0, 42});
  const auto b = dataio::sample_split(ds, {5, 0, 42});
  CHECK(a.train_rows == b.train_rows);
  CHECK(a.train.size() == 15);
  CHECK(a.val.size() == 0);
  // Only the surplus of the larger classes remains.
  CHECK(a.rest.size() == 4);
  for (auto l : a.rest.labels) CHECK(l != 0);
  std::set<std::size_t> all(a.train_rows.begin(), a.train_rows.end());
  all.insert(a.rest_rows.begin(), a.rest_rows.end());
  CHECK(all.size() == ds.size());

  const auto c = dataio::sample_split(ds, {2, 4, 1});
  CHECK(c.train.size() == 6);
  CHECK(c.val.size() == 3 + 4 + 4);
  CHECK(c.val_shortfall == std::vector<std::size_t>{1, 0, 0});
  for (std::size_t i = 0; i < c.train_rows.size(); ++i) {
    CHECK(c.train.data(static_cast<Eigen::Index>(i), 0) ==
          static_cast<double>(c.train_rows[i]));
  }
  CHECK(dataio::sample_split(ds, {2, 4, 2}).train_rows != c.train_rows);

  try {
    dataio::sample_split(ds, {6, 0, 1});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InsufficientData);
    CHECK(std::string(e.what()).find("c0") != std::string::npos);
  }
}

TEST_CASE("dataset cache round trip") {
  const auto dir = testing::temp_dir("cache");
  Rng rng(3);
  auto ds = toy({3, 2}, 5);
  ds.data = testing::random_matrix(rng, 5, 5);
  round_to_float(ds.data);
  dataio::save_dataset_cache(dir / "set", ds);
  const auto back = dataio::load_dataset_cache(dir / "set");
  CHECK(back.data == ds.data);
  CHECK(back.labels == ds.labels);
  CHECK(back.class_names == ds.class_names);

  { std::ofstream(dir / "set.dat", std::ios::binary | std::ios::app) << 'x'; }
  CHECK_THROWS_AS(dataio::load_dataset_cache(dir / "set"), Error);

  save_matrix_file(dir / "m.dat", kFeatureMagic, ds.data);
  try {
    load_matrix_file(dir / "m.dat", kCacheMagic);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Format);
  }
  fs::resize_file(dir / "m.dat", fs::file_size(dir / "m.dat") - 3);
  try {
    load_matrix_file(dir / "m.dat", kFeatureMagic);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Persistence);
  }
}

TEST_CASE("corpus and dataset conversions are inverse") {
  dataio::OmniglotCorpus corpus;
  for (int a = 0; a < 2; ++a) {
    dataio::OmniglotAlphabet alpha{"alpha" + std::to_string(a), {}};
    for (int c = 0; c < 3; ++c) {
      dataio::OmniglotCharacter ch{"char" + std::to_string(c), {}};
      for (int s = 0; s < 2; ++s) {
        ch.samples.emplace_back(2, 2, std::vector<double>{0.5 * a, 0.25 * c, 0.125 * s, 1.0});
      }
      alpha.characters.push_back(ch);
    }
    corpus.alphabets.push_back(alpha);
  }
  const auto ds = dataio::corpus_to_dataset(corpus);
  CHECK(ds.size() == 12);
  CHECK(ds.class_names[4] == "alpha1/char1");
  const auto back = dataio::dataset_to_corpus(ds, 2, 2);
  REQUIRE(back.alphabets.size() == 2);
  CHECK(back.alphabets[1].characters[2].name == "char2");
  CHECK(back.alphabets[1].characters[2].samples[1].pixels ==
        corpus.alphabets[1].characters[2].samples[1].pixels);
}

TEST_CASE("dataset validation") {
  auto ds = toy({2, 2});
  CHECK_NOTHROW(ds.validate());
  ds.labels[0] = 5;
  CHECK_THROWS_AS(ds.validate(), Error);
}
