#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace avsl {

// Error taxonomy shared by every module.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct RangeError : std::out_of_range {
  using std::out_of_range::out_of_range;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EvaluationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SupervisionLeak : std::logic_error {
  using std::logic_error::logic_error;
};

/// h x w map, row-major so that the flat index is y * w + x.
template <typename Scalar>
using Grid = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// c x (pixels) feature block; column p holds the feature vector of pixel p.
template <typename Scalar>
using Features = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Spectrogram, frequency rows by time columns (the single channel is implicit).
using Spectrogram = Grid<float>;

/// RGB frame with values in [0,1]; column y * width + x holds one pixel.
struct Frame {
  int height = 0;
  int width = 0;
  Eigen::Matrix<float, 3, Eigen::Dynamic> rgb;

  Frame() = default;
  Frame(int h, int w) : height(h), width(w), rgb(3, static_cast<Eigen::Index>(h) * w) {
    rgb.setZero();
  }
  float& at(int y, int x, int c) { return rgb(c, static_cast<Eigen::Index>(y) * width + x); }
  float at(int y, int x, int c) const { return rgb(c, static_cast<Eigen::Index>(y) * width + x); }
};

/// Stream-splittable generator. Every random draw in the project comes from an
/// Rng derived from (seed, stream ids), so results never depend on call order
/// across samples.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix(seed)) {}
  Rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0)
      : engine_(mix(mix(mix(mix(seed) ^ a) ^ (b * 0x9E3779B97F4A7C15ULL)) ^ (c + 0x632BE59BD9B4E019ULL))) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  bool bernoulli(double p) { return uniform() < p; }
  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(engine_() % span);
  }
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::string state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }
  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
  }

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace avsl
