#pragma once

#include "higsfa/rng.hpp"
#include "higsfa/types.hpp"

#include <filesystem>
#include <string>

namespace testing {

inline higsfa::DataMatrix random_matrix(higsfa::Rng& rng, Eigen::Index rows,
                                        Eigen::Index cols) {
  higsfa::DataMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

inline higsfa::Labels random_labels(higsfa::Rng& rng, std::size_t n, int classes) {
  higsfa::Labels out(n);
  for (auto& l : out) l = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(classes)));
  return out;
}

inline higsfa::Matrix random_orthogonal(higsfa::Rng& rng, Eigen::Index d) {
  const higsfa::Matrix a = random_matrix(rng, d, d);
  Eigen::HouseholderQR<higsfa::Matrix> qr(a);
  return qr.householderQ() * higsfa::Matrix::Identity(d, d);
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("higsfa_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
