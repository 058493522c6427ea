#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "wr/common.hpp"
#include "wr/page.hpp"
#include "wr/rng.hpp"

namespace wr::test {

inline Matrix random_matrix(Index rows, Index cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

inline Vector random_vector(Index n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return v;
}

inline Vector vec(std::initializer_list<double> values) {
  Vector v(static_cast<Index>(values.size()));
  Index i = 0;
  for (double x : values) v[i++] = x;
  return v;
}

inline std::string page_name(Index i) {
  std::string s = std::to_string(i);
  return "p" + std::string(3 - std::min<std::size_t>(3, s.size()), '0') + s;
}

/// n unit-norm pages, writer = i % writers.
inline PageSet random_pages(Index n, Index dim, Index writers, Rng& rng) {
  PageSet pages;
  for (Index i = 0; i < n; ++i) {
    pages.push_back({page_name(i), "w" + std::to_string(i % writers), l2_normalized(random_vector(dim, rng))});
  }
  return pages;
}

/// Fresh empty directory below the system temp folder.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("wr_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace wr::test
