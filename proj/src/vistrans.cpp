#include "avsl/vistrans.hpp"

#include "avsl/color.hpp"

#include <algorithm>
#include <limits>

namespace avsl {

using nlohmann::json;

namespace {

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must be a probability");
}

}  // namespace

void AppearanceConfig::validate() const {
  check_probability(jitter_probability, "jitter_probability");
  check_probability(grayscale_probability, "grayscale_probability");
  check_probability(blur_probability, "blur_probability");
  if (brightness < 0 || contrast < 0 || saturation < 0) throw ConfigError("jitter strengths must be >= 0");
  if (hue < 0 || hue > 0.5) throw ConfigError("hue strength must be in [0, 0.5]");
  if (!(blur_sigma_min > 0 && blur_sigma_min <= blur_sigma_max)) throw ConfigError("invalid blur sigma range");
}

void GeometricConfig::validate() const {
  check_probability(crop_probability, "crop_probability");
  check_probability(flip_probability, "flip_probability");
  if (!(min_crop_scale > 0 && min_crop_scale <= 1)) throw ConfigError("min_crop_scale must be in (0, 1]");
  if (max_rotation_deg < 0 || max_rotation_deg > 180) throw ConfigError("max_rotation_deg must be in [0, 180]");
}

void GeometricParams::validate(double max_rotation) const {
  const auto [cx, cy, w, h] = crop_rect;
  constexpr double kSlack = 1e-12;
  if (!(w > 0 && h > 0 && cx - w / 2 >= -kSlack && cx + w / 2 <= 1 + kSlack && cy - h / 2 >= -kSlack &&
        cy + h / 2 <= 1 + kSlack)) {
    throw ConfigError("crop_rect must lie within the unit square");
  }
  if (std::abs(rotation_deg) > max_rotation) throw ConfigError("rotation_deg out of range");
}

// ---------------------------------------------------------------------------

AppearanceParams sample_appearance(Rng& rng, const AppearanceConfig& config) {
  AppearanceParams p;
  // Every draw is consumed regardless of flags so the stream layout is stable.
  p.apply_jitter = rng.bernoulli(config.jitter_probability);
  const double b = rng.uniform(std::max(0.0, 1.0 - config.brightness), 1.0 + config.brightness);
  const double c = rng.uniform(std::max(0.0, 1.0 - config.contrast), 1.0 + config.contrast);
  const double s = rng.uniform(std::max(0.0, 1.0 - config.saturation), 1.0 + config.saturation);
  const double h = rng.uniform(-config.hue, config.hue);
  if (p.apply_jitter) {
    p.brightness = b;
    p.contrast = c;
    p.saturation = s;
    p.hue = h;
  }
  p.apply_grayscale = rng.bernoulli(config.grayscale_probability);
  p.apply_blur = rng.bernoulli(config.blur_probability);
  const double sigma = rng.uniform(config.blur_sigma_min, config.blur_sigma_max);
  if (p.apply_blur) p.blur_sigma = sigma;
  return p;
}

namespace {

void clamp01(Frame& f) { f.rgb = f.rgb.cwiseMax(0.0f).cwiseMin(1.0f); }

Eigen::RowVectorXf luma_of(const Frame& f) {
  return 0.299f * f.rgb.row(0) + 0.587f * f.rgb.row(1) + 0.114f * f.rgb.row(2);
}

std::vector<float> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * i * i / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = static_cast<float>(v);
    total += v;
  }
  for (auto& v : k) v = static_cast<float>(v / total);
  return k;
}

Frame blur(const Frame& in, double sigma) {
  const auto kernel = gaussian_kernel(sigma);
  const int radius = static_cast<int>(kernel.size() / 2);
  Frame tmp(in.height, in.width), out(in.height, in.width);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      Eigen::Vector3f acc = Eigen::Vector3f::Zero();
      for (int k = -radius; k <= radius; ++k) {
        const int xx = std::clamp(x + k, 0, in.width - 1);
        acc += kernel[static_cast<std::size_t>(k + radius)] * in.rgb.col(static_cast<Eigen::Index>(y) * in.width + xx);
      }
      tmp.rgb.col(static_cast<Eigen::Index>(y) * in.width + x) = acc;
    }
  }
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      Eigen::Vector3f acc = Eigen::Vector3f::Zero();
      for (int k = -radius; k <= radius; ++k) {
        const int yy = std::clamp(y + k, 0, in.height - 1);
        acc += kernel[static_cast<std::size_t>(k + radius)] * tmp.rgb.col(static_cast<Eigen::Index>(yy) * in.width + x);
      }
      out.rgb.col(static_cast<Eigen::Index>(y) * in.width + x) = acc;
    }
  }
  return out;
}

}  // namespace

Frame apply_appearance(const Frame& frame, const AppearanceParams& params) {
  Frame out = frame;
  if (params.apply_jitter) {
    out.rgb *= static_cast<float>(params.brightness);
    clamp01(out);
    if (params.contrast != 1.0) {
      const float mean = luma_of(out).mean();
      out.rgb = ((out.rgb.array() - mean) * static_cast<float>(params.contrast) + mean).matrix();
      clamp01(out);
    }
    if (params.saturation != 1.0) {
      const Eigen::RowVectorXf gray = luma_of(out);
      for (int c = 0; c < 3; ++c) {
        out.rgb.row(c) = gray + static_cast<float>(params.saturation) * (out.rgb.row(c) - gray);
      }
      clamp01(out);
    }
    if (params.hue != 0.0) {
      for (Eigen::Index p = 0; p < out.rgb.cols(); ++p) {
        auto hsv = color::rgb_to_hsv(out.rgb(0, p), out.rgb(1, p), out.rgb(2, p));
        const auto rgb = color::hsv_to_rgb(hsv[0] + static_cast<float>(params.hue), hsv[1], hsv[2]);
        for (int c = 0; c < 3; ++c) out.rgb(c, p) = rgb[c];
      }
      clamp01(out);
    }
  }
  if (params.apply_grayscale) {
    const Eigen::RowVectorXf gray = luma_of(out);
    for (int c = 0; c < 3; ++c) out.rgb.row(c) = gray;
    clamp01(out);
  }
  if (params.apply_blur) {
    out = blur(out, params.blur_sigma);
    clamp01(out);
  }
  return out;
}

// ---------------------------------------------------------------------------

GeometricParams sample_geometric(Rng& rng, const GeometricConfig& config) {
  GeometricParams p;
  const bool crop = rng.bernoulli(config.crop_probability);
  const double scale = rng.uniform(config.min_crop_scale, 1.0);
  const double cx = rng.uniform(scale / 2.0, 1.0 - scale / 2.0);
  const double cy = rng.uniform(scale / 2.0, 1.0 - scale / 2.0);
  if (crop) p.crop_rect = {cx, cy, scale, scale};
  const double rotation = rng.uniform(-config.max_rotation_deg, config.max_rotation_deg);
  if (config.max_rotation_deg > 0) p.rotation_deg = rotation;
  p.hflip = rng.bernoulli(config.flip_probability);
  return p;
}

WarpPlan::WarpPlan(int height, int width, const GeometricParams& params)
    : height_(height), width_(width), taps_(static_cast<std::size_t>(height) * width) {
  constexpr double kSnap = 1e-9;
  auto snap = [](double v) {
    const double r = std::round(v);
    return std::abs(v - r) < kSnap ? r : v;
  };
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const auto [su, sv] = params.source_of((x + 0.5) / width, (y + 0.5) / height);
      const double sx = snap(su * width - 0.5);
      const double sy = snap(sv * height - 0.5);
      Tap& t = taps_[static_cast<std::size_t>(y) * width + x];
      t.valid = sx >= 0.0 && sx <= width - 1.0 && sy >= 0.0 && sy <= height - 1.0;
      const double fx0 = std::floor(sx), fy0 = std::floor(sy);
      if (fx0 < -1.0 || fy0 < -1.0 || fx0 > width - 1.0 || fy0 > height - 1.0) continue;
      const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
      const double fx = sx - x0, fy = sy - y0;
      const std::array<int, 4> xs{x0, x0 + 1, x0, x0 + 1};
      const std::array<int, 4> ys{y0, y0, y0 + 1, y0 + 1};
      const std::array<double, 4> ws{(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
      for (int k = 0; k < 4; ++k) {
        if (ws[k] == 0.0 || xs[k] < 0 || ys[k] < 0 || xs[k] >= width || ys[k] >= height) continue;
        t.index[t.count] = ys[k] * width + xs[k];
        t.weight[t.count] = ws[k];
        ++t.count;
      }
    }
  }
}

Mask WarpPlan::validity() const {
  Mask m(height_, width_);
  for (int p = 0; p < height_ * width_; ++p) m.data()[p] = taps_[static_cast<std::size_t>(p)].valid;
  return m;
}

Frame apply_geometric_image(const Frame& frame, const GeometricParams& params) {
  const WarpPlan plan(frame.height, frame.width, params);
  Frame out(frame.height, frame.width);
  for (int c = 0; c < 3; ++c) {
    const Eigen::VectorXf channel = frame.rgb.row(c).transpose();
    out.rgb.row(c) = plan.apply(channel).transpose();
  }
  return out;
}

std::array<double, 4> warp_box(const std::array<double, 4>& box, int height, int width, const GeometricParams& params) {
  double x0 = std::numeric_limits<double>::max(), y0 = x0, x1 = -x0, y1 = -x0;
  for (double bx : {box[0], box[2]}) {
    for (double by : {box[1], box[3]}) {
      const auto [u, v] = params.output_of(bx / width, by / height);
      x0 = std::min(x0, u * width);
      x1 = std::max(x1, u * width);
      y0 = std::min(y0, v * height);
      y1 = std::max(y1, v * height);
    }
  }
  x0 = std::clamp(x0, 0.0, static_cast<double>(width));
  x1 = std::clamp(x1, 0.0, static_cast<double>(width));
  y0 = std::clamp(y0, 0.0, static_cast<double>(height));
  y1 = std::clamp(y1, 0.0, static_cast<double>(height));
  if (x1 <= x0 || y1 <= y0) return {0, 0, 0, 0};
  return {x0, y0, x1, y1};
}

// ---------------------------------------------------------------------------

void to_json(json& j, const AppearanceParams& p) {
  j = json{{"apply_jitter", p.apply_jitter}, {"brightness", p.brightness},         {"contrast", p.contrast},
           {"saturation", p.saturation},     {"hue", p.hue},                       {"apply_grayscale", p.apply_grayscale},
           {"apply_blur", p.apply_blur},     {"blur_sigma", p.blur_sigma}};
}

void from_json(const json& j, AppearanceParams& p) {
  j.at("apply_jitter").get_to(p.apply_jitter);
  j.at("brightness").get_to(p.brightness);
  j.at("contrast").get_to(p.contrast);
  j.at("saturation").get_to(p.saturation);
  j.at("hue").get_to(p.hue);
  j.at("apply_grayscale").get_to(p.apply_grayscale);
  j.at("apply_blur").get_to(p.apply_blur);
  j.at("blur_sigma").get_to(p.blur_sigma);
}

void to_json(json& j, const GeometricParams& p) {
  j = json{{"crop_rect", p.crop_rect}, {"rotation_deg", p.rotation_deg}, {"hflip", p.hflip}};
}

void from_json(const json& j, GeometricParams& p) {
  j.at("crop_rect").get_to(p.crop_rect);
  j.at("rotation_deg").get_to(p.rotation_deg);
  j.at("hflip").get_to(p.hflip);
}

void to_json(json& j, const AppearanceConfig& c) {
  j = json{{"brightness", c.brightness},
           {"contrast", c.contrast},
           {"saturation", c.saturation},
           {"hue", c.hue},
           {"jitter_probability", c.jitter_probability},
           {"grayscale_probability", c.grayscale_probability},
           {"blur_probability", c.blur_probability},
           {"blur_sigma_min", c.blur_sigma_min},
           {"blur_sigma_max", c.blur_sigma_max}};
}

void from_json(const json& j, AppearanceConfig& c) {
  c.brightness = j.value("brightness", c.brightness);
  c.contrast = j.value("contrast", c.contrast);
  c.saturation = j.value("saturation", c.saturation);
  c.hue = j.value("hue", c.hue);
  c.jitter_probability = j.value("jitter_probability", c.jitter_probability);
  c.grayscale_probability = j.value("grayscale_probability", c.grayscale_probability);
  c.blur_probability = j.value("blur_probability", c.blur_probability);
  c.blur_sigma_min = j.value("blur_sigma_min", c.blur_sigma_min);
  c.blur_sigma_max = j.value("blur_sigma_max", c.blur_sigma_max);
}

void to_json(json& j, const GeometricConfig& c) {
  j = json{{"crop_probability", c.crop_probability},
           {"min_crop_scale", c.min_crop_scale},
           {"max_rotation_deg", c.max_rotation_deg},
           {"flip_probability", c.flip_probability}};
}

void from_json(const json& j, GeometricConfig& c) {
  c.crop_probability = j.value("crop_probability", c.crop_probability);
  c.min_crop_scale = j.value("min_crop_scale", c.min_crop_scale);
  c.max_rotation_deg = j.value("max_rotation_deg", c.max_rotation_deg);
  c.flip_probability = j.value("flip_probability", c.flip_probability);
}

}  // namespace avsl
