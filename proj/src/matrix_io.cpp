#include "higsfa/matrix_io.hpp"

#include "higsfa/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace higsfa {

namespace {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms are not supported");

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return __builtin_bswap32(v);
  }
  return v;
}

}  // namespace

void write_u32(std::ostream& out, std::uint32_t v) {
  const std::uint32_t le = to_le(v);
  out.write(reinterpret_cast<const char*>(&le), sizeof le);
}

std::uint32_t read_u32(std::istream& in, const std::string& source) {
  std::uint32_t le = 0;
  if (!in.read(reinterpret_cast<char*>(&le), sizeof le)) {
    fail(ErrorKind::Persistence, "truncated header in " + source);
  }
  return to_le(le);
}

void write_matrix_body(std::ostream& out, const DataMatrix& m) {
  write_u32(out, static_cast<std::uint32_t>(m.rows()));
  write_u32(out, static_cast<std::uint32_t>(m.cols()));
  std::vector<std::uint32_t> buf(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      buf[c] = to_le(std::bit_cast<std::uint32_t>(static_cast<float>(m(r, c))));
    }
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(std::uint32_t)));
  }
}

DataMatrix read_matrix_body(std::istream& in, const std::string& source) {
  const std::uint32_t rows = read_u32(in, source);
  const std::uint32_t cols = read_u32(in, source);
  DataMatrix m(rows, cols);
  std::vector<std::uint32_t> buf(cols);
  for (std::uint32_t r = 0; r < rows; ++r) {
    if (!in.read(reinterpret_cast<char*>(buf.data()),
                 static_cast<std::streamsize>(buf.size() * sizeof(std::uint32_t)))) {
      fail(ErrorKind::Persistence, "truncated matrix payload in " + source);
    }
    for (std::uint32_t c = 0; c < cols; ++c) {
      m(r, c) = std::bit_cast<float>(to_le(buf[c]));
    }
  }
  return m;
}

void save_matrix_file(const std::filesystem::path& path, const Magic& magic,
                      const DataMatrix& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Persistence, "cannot write " + path.string());
  out.write(magic.data(), 4);
  write_matrix_body(out, m);
  if (!out) fail(ErrorKind::Persistence, "write failed for " + path.string());
}

DataMatrix load_matrix_file(const std::filesystem::path& path,
                            const Magic& magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Persistence, "cannot open " + path.string());
  Magic got{};
  if (!in.read(got.data(), 4)) {
    fail(ErrorKind::Persistence, "truncated header in " + path.string());
  }
  if (got != magic) {
    fail(ErrorKind::Format, "bad magic '" + std::string(got.data(), 4) +
                                "' in " + path.string() + ", expected '" +
                                std::string(magic.data(), 4) + "'");
  }
  DataMatrix m = read_matrix_body(in, path.string());
  if (in.peek() != std::char_traits<char>::eof()) {
    fail(ErrorKind::Persistence, "trailing bytes in " + path.string());
  }
  return m;
}

void round_to_float(DataMatrix& m) {
  m = m.cast<float>().cast<double>();
}
void round_to_float(Matrix& m) { m = m.cast<float>().cast<double>(); }
void round_to_float(Vector& v) { v = v.cast<float>().cast<double>(); }

}  // namespace higsfa
