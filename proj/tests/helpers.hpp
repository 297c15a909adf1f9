#pragma once

#include "avsl/common.hpp"

#include <filesystem>
#include <string>

namespace avsl::test {

/// Fresh scratch directory under the build tree, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("avsl_test_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline Grid<double> random_grid(Rng& rng, int h, int w, double lo = -1.0, double hi = 1.0) {
  Grid<double> g(h, w);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.uniform(lo, hi);
  return g;
}

inline Frame random_frame(Rng& rng, int h, int w) {
  Frame f(h, w);
  for (Eigen::Index i = 0; i < f.rgb.size(); ++i) f.rgb.data()[i] = static_cast<float>(rng.uniform());
  return f;
}

}  // namespace avsl::test
