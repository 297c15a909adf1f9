#include "avsl/color.hpp"
#include "avsl/vistrans.hpp"

#include "helpers.hpp"

#include "doctest.h"

using namespace avsl;
using doctest::Approx;

TEST_CASE("appearance sampling: degenerate and forced configs") {
  Rng rng(1);
  AppearanceConfig off;
  off.jitter_probability = off.grayscale_probability = off.blur_probability = 0.0;
  const auto p = sample_appearance(rng, off);
  CHECK_FALSE(p.apply_jitter);
  CHECK_FALSE(p.apply_grayscale);
  CHECK_FALSE(p.apply_blur);

  AppearanceConfig on;
  on.jitter_probability = on.grayscale_probability = on.blur_probability = 1.0;
  for (int i = 0; i < 200; ++i) {
    const auto q = sample_appearance(rng, on);
    CHECK(q.apply_jitter);
    CHECK(q.apply_grayscale);
    CHECK(q.apply_blur);
    CHECK(q.brightness >= 0.6);
    CHECK(q.brightness <= 1.4);
    CHECK(std::abs(q.hue) <= 0.1);
    CHECK(q.blur_sigma >= 0.1);
    CHECK(q.blur_sigma <= 2.0);
  }
}

TEST_CASE("appearance sampling frequencies") {
  Rng rng(2);
  int jitter = 0;
  for (int i = 0; i < 10000; ++i) jitter += sample_appearance(rng, {}).apply_jitter;
  CHECK(std::abs(jitter / 10000.0 - 0.8) <= 0.02);
}

TEST_CASE("apply_appearance") {
  Rng rng(4);
  const Frame f = test::random_frame(rng, 9, 11);
  SUBCASE("all flags off is the identity") {
    const Frame g = apply_appearance(f, AppearanceParams{});
    CHECK(g.rgb == f.rgb);
  }
  SUBCASE("grayscale equalizes channels") {
    AppearanceParams p;
    p.apply_grayscale = true;
    const Frame g = apply_appearance(f, p);
    CHECK((g.rgb.row(0) - g.rgb.row(1)).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((g.rgb.row(0) - g.rgb.row(2)).cwiseAbs().maxCoeff() == 0.0f);
  }
  SUBCASE("brightness on a constant frame") {
    for (const double v : {0.2, 0.5, 0.9}) {
      for (const double b : {0.6, 1.0, 1.4}) {
        Frame c(4, 4);
        c.rgb.setConstant(static_cast<float>(v));
        AppearanceParams p;
        p.apply_jitter = true;
        p.brightness = b;
        const Frame g = apply_appearance(c, p);
        const float expected = static_cast<float>(std::clamp(v * b, 0.0, 1.0));
        CHECK(g.rgb.minCoeff() == Approx(expected).epsilon(1e-6));
        CHECK(g.rgb.maxCoeff() == Approx(expected).epsilon(1e-6));
      }
    }
  }
  SUBCASE("blur preserves a constant frame") {
    Frame c(6, 6);
    c.rgb.setConstant(0.3f);
    AppearanceParams p;
    p.apply_blur = true;
    p.blur_sigma = 1.7;
    CHECK((apply_appearance(c, p).rgb.array() - 0.3f).abs().maxCoeff() < 1e-6f);
  }
}

TEST_CASE("hsv round trip") {
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    const std::array<float, 3> rgb{static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()),
                                   static_cast<float>(rng.uniform())};
    const auto hsv = color::rgb_to_hsv(rgb[0], rgb[1], rgb[2]);
    const auto back = color::hsv_to_rgb(hsv[0], hsv[1], hsv[2]);
    for (int c = 0; c < 3; ++c) CHECK(back[static_cast<std::size_t>(c)] == Approx(rgb[static_cast<std::size_t>(c)]).epsilon(1e-5));
  }
}

TEST_CASE("geometric sampling") {
  Rng rng(6);
  GeometricConfig off;
  off.crop_probability = 0.0;
  off.max_rotation_deg = 0.0;
  off.flip_probability = 0.0;
  CHECK(sample_geometric(rng, off).is_identity());

  int flips = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto p = sample_geometric(rng, {});
    flips += p.hflip;
    CHECK(std::abs(p.rotation_deg) <= 30.0);
    CHECK_NOTHROW(p.validate());
  }
  CHECK(std::abs(flips / 10000.0 - 0.5) <= 0.02);
}

TEST_CASE("coordinate maps are mutually inverse") {
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const auto p = sample_geometric(rng, {});
    const double u = rng.uniform(), v = rng.uniform();
    const auto s = p.source_of(u, v);
    const auto o = p.output_of(s[0], s[1]);
    CHECK(o[0] == Approx(u).epsilon(1e-12));
    CHECK(o[1] == Approx(v).epsilon(1e-12));
  }
}

TEST_CASE("image warp special cases") {
  Rng rng(8);
  const Frame f = test::random_frame(rng, 10, 13);
  SUBCASE("identity") {
    CHECK((apply_geometric_image(f, GeometricParams::identity()).rgb - f.rgb).cwiseAbs().maxCoeff() <= 1e-6f);
  }
  SUBCASE("hflip reverses columns exactly") {
    GeometricParams p;
    p.hflip = true;
    const Frame g = apply_geometric_image(f, p);
    for (int y = 0; y < f.height; ++y) {
      for (int x = 0; x < f.width; ++x) {
        for (int c = 0; c < 3; ++c) CHECK(g.at(y, x, c) == f.at(y, f.width - 1 - x, c));
      }
    }
  }
  SUBCASE("90 degree rotation moves a hot pixel") {
    // Square grid so the rotation maps pixel centers onto pixel centers.
    constexpr int n = 9;
    GeometricParams p;
    p.rotation_deg = 90.0;
    p.validate(90.0);
    for (int i = 0; i < 20; ++i) {
      const int hy = rng.uniform_int(0, n - 1), hx = rng.uniform_int(0, n - 1);
      Frame hot(n, n);
      hot.at(hy, hx, 0) = 1.0f;
      const Frame g = apply_geometric_image(hot, p);
      // Oracle: output_of maps a source pixel center to its output position.
      const auto o = p.output_of((hx + 0.5) / n, (hy + 0.5) / n);
      const int ox = static_cast<int>(std::lround(o[0] * n - 0.5));
      const int oy = static_cast<int>(std::lround(o[1] * n - 0.5));
      CHECK(g.at(oy, ox, 0) == Approx(1.0).epsilon(1e-6));
      CHECK(g.rgb.row(0).sum() == Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("map warp") {
  Rng rng(9);
  const Grid<double> m = test::random_grid(rng, 6, 7);
  SUBCASE("identity") {
    const auto r = warp_map(m, GeometricParams::identity());
    CHECK((r.warped - m).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(r.validity.all());
  }
  SUBCASE("hflip") {
    GeometricParams p;
    p.hflip = true;
    const auto r = warp_map(m, p);
    CHECK(r.warped == m.rowwise().reverse());
    CHECK(r.validity.all());
  }
  SUBCASE("transpose is the adjoint") {
    for (int i = 0; i < 20; ++i) {
      const auto p = sample_geometric(rng, {});
      const WarpPlan plan(6, 7, p);
      const Eigen::VectorXd x = Eigen::VectorXd::Random(42), y = Eigen::VectorXd::Random(42);
      CHECK(plan.apply(x).dot(y) == Approx(x.dot(plan.apply_transpose(y))).epsilon(1e-12));
    }
  }
}

TEST_CASE("warping commutes with resolution on smooth maps") {
  // Oracle: warp a 64x64 rendering of a smooth field, then box-downsample to
  // 8x8, against warping the 8x8 bilinear sample directly.
  Rng rng(10);
  const auto field = [](double u, double v, double a, double b) {
    return std::sin(2.0 * u + a) * std::cos(1.5 * v + b);
  };
  double total = 0.0;
  int count = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const double a = rng.uniform(0, 3), b = rng.uniform(0, 3);
    const auto p = sample_geometric(rng, {});
    const auto render = [&](int n) {
      Grid<double> g(n, n);
      for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) g(y, x) = field((x + 0.5) / n, (y + 0.5) / n, a, b);
      }
      return g;
    };
    const auto low = warp_map(render(8), p);
    const auto high = warp_map(render(64), p);
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 8; ++x) {
        if (!low.validity(y, x)) continue;
        const auto block = high.warped.block(8 * y, 8 * x, 8, 8);
        const auto valid = high.validity.block(8 * y, 8 * x, 8, 8);
        if (!valid.all()) continue;
        total += std::abs(block.mean() - low.warped(y, x));
        ++count;
      }
    }
  }
  REQUIRE(count > 100);
  CHECK(total / count <= 0.05);
}

TEST_CASE("warp_box follows the flip") {
  GeometricParams p;
  p.hflip = true;
  const auto b = warp_box({10, 20, 30, 40}, 100, 100, p);
  CHECK(b[0] == Approx(70));
  CHECK(b[1] == Approx(20));
  CHECK(b[2] == Approx(90));
  CHECK(b[3] == Approx(40));
}
