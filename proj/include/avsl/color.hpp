#pragma once

#include <algorithm>
#include <array>
#include <cmath>

namespace avsl::color {

/// h, s, v in [0,1]; h wraps.
inline std::array<float, 3> hsv_to_rgb(float h, float s, float v) {
  h = h - std::floor(h);
  const float scaled = h * 6.0f;
  const int sector = static_cast<int>(scaled) % 6;
  const float f = scaled - std::floor(scaled);
  const float p = v * (1.0f - s);
  const float q = v * (1.0f - s * f);
  const float t = v * (1.0f - s * (1.0f - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

inline std::array<float, 3> rgb_to_hsv(float r, float g, float b) {
  const float maxc = std::max({r, g, b});
  const float minc = std::min({r, g, b});
  const float delta = maxc - minc;
  const float v = maxc;
  const float s = maxc > 0.0f ? delta / maxc : 0.0f;
  float h = 0.0f;
  if (delta > 0.0f) {
    if (maxc == r) {
      h = (g - b) / delta;
    } else if (maxc == g) {
      h = 2.0f + (b - r) / delta;
    } else {
      h = 4.0f + (r - g) / delta;
    }
    h /= 6.0f;
    if (h < 0.0f) h += 1.0f;
  }
  return {h, s, v};
}

inline float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

}  // namespace avsl::color
