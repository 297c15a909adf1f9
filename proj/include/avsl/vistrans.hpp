#pragma once

#include "avsl/common.hpp"

#include "json.hpp"

#include <array>
#include <cmath>
#include <vector>

namespace avsl {

// ---------------------------------------------------------------------------
// Appearance transforms: jitter -> grayscale -> blur.

struct AppearanceConfig {
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;
  double jitter_probability = 0.8;
  double grayscale_probability = 0.2;
  double blur_probability = 0.5;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;

  void validate() const;
};

struct AppearanceParams {
  bool apply_jitter = false;
  double brightness = 1.0;  // multiplicative factor
  double contrast = 1.0;    // blend factor against mean luma
  double saturation = 1.0;  // blend factor against per-pixel luma
  double hue = 0.0;         // shift in turns, wraps
  bool apply_grayscale = false;
  bool apply_blur = false;
  double blur_sigma = 0.1;
};

AppearanceParams sample_appearance(Rng& rng, const AppearanceConfig& config);
Frame apply_appearance(const Frame& frame, const AppearanceParams& params);

// ---------------------------------------------------------------------------
// Geometric transforms: crop/resize -> rotate -> flip.
//
// Everything is defined on normalized coordinates u in [0,1]^2 with pixel
// centers at (x + 0.5) / width, so one parameter record drives the same warp
// at any grid resolution.

struct GeometricConfig {
  double crop_probability = 0.5;
  double min_crop_scale = 0.5;  // linear side ratio; area ratio >= min_crop_scale^2
  double max_rotation_deg = 30.0;
  double flip_probability = 0.5;

  void validate() const;
};

struct GeometricParams {
  std::array<double, 4> crop_rect{0.5, 0.5, 1.0, 1.0};  // (cx, cy, w, h)
  double rotation_deg = 0.0;
  bool hflip = false;

  static GeometricParams identity() { return {}; }
  bool is_identity() const {
    return crop_rect == std::array<double, 4>{0.5, 0.5, 1.0, 1.0} && rotation_deg == 0.0 && !hflip;
  }
  /// Throws ConfigError when the record violates the crop/rotation invariants.
  void validate(double max_rotation_deg = 30.0) const;

  /// Output normalized coordinate -> source normalized coordinate.
  std::array<double, 2> source_of(double u, double v) const {
    if (hflip) u = 1.0 - u;
    const double theta = rotation_deg * 3.14159265358979323846 / 180.0;
    const double c = std::cos(theta), s = std::sin(theta);
    const double du = u - 0.5, dv = v - 0.5;
    // Inverse of the content rotation q -> c + R(q - c), R = [[c, s], [-s, c]].
    const double qu = 0.5 + c * du - s * dv;
    const double qv = 0.5 + s * du + c * dv;
    const double x0 = crop_rect[0] - crop_rect[2] / 2.0;
    const double y0 = crop_rect[1] - crop_rect[3] / 2.0;
    return {x0 + qu * crop_rect[2], y0 + qv * crop_rect[3]};
  }

  /// Inverse of source_of().
  std::array<double, 2> output_of(double sx, double sy) const {
    const double qu = (sx - (crop_rect[0] - crop_rect[2] / 2.0)) / crop_rect[2];
    const double qv = (sy - (crop_rect[1] - crop_rect[3] / 2.0)) / crop_rect[3];
    const double theta = rotation_deg * 3.14159265358979323846 / 180.0;
    const double c = std::cos(theta), s = std::sin(theta);
    const double du = qu - 0.5, dv = qv - 0.5;
    double u = 0.5 + c * du + s * dv;
    const double v = 0.5 - s * du + c * dv;
    if (hflip) u = 1.0 - u;
    return {u, v};
  }
};

GeometricParams sample_geometric(Rng& rng, const GeometricConfig& config);

/// Bilinear sampling taps of one warp evaluated on an h x w grid.
class WarpPlan {
 public:
  struct Tap {
    int count = 0;
    std::array<int, 4> index{};
    std::array<double, 4> weight{};
    bool valid = false;  // source point inside the grid
  };

  WarpPlan(int height, int width, const GeometricParams& params);

  int height() const { return height_; }
  int width() const { return width_; }
  const Tap& tap(int p) const { return taps_[static_cast<std::size_t>(p)]; }

  /// Zero-filled bilinear resampling of a flat row-major grid.
  template <typename Derived>
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> apply(const Eigen::DenseBase<Derived>& flat) const {
    using Scalar = typename Derived::Scalar;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(static_cast<Eigen::Index>(taps_.size()));
    for (std::size_t p = 0; p < taps_.size(); ++p) {
      const Tap& t = taps_[p];
      Scalar acc(0);
      for (int k = 0; k < t.count; ++k) acc += static_cast<Scalar>(t.weight[k]) * flat(t.index[k]);
      out(static_cast<Eigen::Index>(p)) = acc;
    }
    return out;
  }

  /// Adjoint of apply(): scatters output gradients back to the source grid.
  template <typename Derived>
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> apply_transpose(
      const Eigen::DenseBase<Derived>& out_grad) const {
    using Scalar = typename Derived::Scalar;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> src =
        Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(static_cast<Eigen::Index>(taps_.size()));
    for (std::size_t p = 0; p < taps_.size(); ++p) {
      const Tap& t = taps_[p];
      for (int k = 0; k < t.count; ++k) src(t.index[k]) += static_cast<Scalar>(t.weight[k]) * out_grad(static_cast<Eigen::Index>(p));
    }
    return src;
  }

  Mask validity() const;

 private:
  int height_;
  int width_;
  std::vector<Tap> taps_;
};

template <typename Scalar>
struct WarpResult {
  Grid<Scalar> warped;
  Mask validity;
};

template <typename Scalar>
WarpResult<Scalar> warp_map(const Grid<Scalar>& map, const GeometricParams& params) {
  const WarpPlan plan(static_cast<int>(map.rows()), static_cast<int>(map.cols()), params);
  WarpResult<Scalar> result;
  const Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> flat(map.data(), map.size());
  const auto warped = plan.apply(flat);
  result.warped = Eigen::Map<const Grid<Scalar>>(warped.data(), map.rows(), map.cols());
  result.validity = plan.validity();
  return result;
}

Frame apply_geometric_image(const Frame& frame, const GeometricParams& params);

/// Maps a pixel box through the warp; returns the tight box of its warped
/// corners clipped to the frame, or an empty box when nothing survives.
std::array<double, 4> warp_box(const std::array<double, 4>& box, int height, int width, const GeometricParams& params);

void to_json(nlohmann::json& j, const AppearanceParams& p);
void from_json(const nlohmann::json& j, AppearanceParams& p);
void to_json(nlohmann::json& j, const GeometricParams& p);
void from_json(const nlohmann::json& j, GeometricParams& p);
void to_json(nlohmann::json& j, const AppearanceConfig& c);
void from_json(const nlohmann::json& j, AppearanceConfig& c);
void to_json(nlohmann::json& j, const GeometricConfig& c);
void from_json(const nlohmann::json& j, GeometricConfig& c);

}  // namespace avsl
