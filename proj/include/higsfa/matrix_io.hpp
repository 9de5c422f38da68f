#pragma once

#include "higsfa/types.hpp"

#include <array>
#include <filesystem>
#include <iosfwd>

namespace higsfa {

using Magic = std::array<char, 4>;

inline constexpr Magic kCacheMagic{'S', 'B', 'D', 'M'};
inline constexpr Magic kFeatureMagic{'F', 'E', 'A', 'T'};

/// Writes `u32 rows, u32 cols, f32[rows*cols]`, little-endian, row-major.
/// Values are narrowed to float.
void write_matrix_body(std::ostream& out, const DataMatrix& m);
DataMatrix read_matrix_body(std::istream& in, const std::string& source);

void write_u32(std::ostream& out, std::uint32_t v);
std::uint32_t read_u32(std::istream& in, const std::string& source);

/// Magic-tagged single-matrix file (dataset caches and feature files).
void save_matrix_file(const std::filesystem::path& path, const Magic& magic,
                      const DataMatrix& m);
DataMatrix load_matrix_file(const std::filesystem::path& path,
                            const Magic& magic);

/// Rounds every entry to the nearest float, so the matrix survives a
/// write/read cycle bit-identically.
void round_to_float(DataMatrix& m);
void round_to_float(Matrix& m);
void round_to_float(Vector& v);

}  // namespace higsfa
