#include "avsl/objectives.hpp"

#include "helpers.hpp"
#include "oracles.hpp"

#include "doctest.h"

using namespace avsl;
using doctest::Approx;

namespace {

ResponseMatrix<double> from_values(int b, int side, const std::function<double(int, int, int)>& value) {
  ResponseMatrix<double> r;
  r.height = r.width = side;
  r.values.resize(b, b * side * side);
  for (int j = 0; j < b; ++j) {
    for (int i = 0; i < b; ++i) {
      for (int p = 0; p < side * side; ++p) r.values(j, i * side * side + p) = value(j, i, p);
    }
  }
  return r;
}

}  // namespace

TEST_CASE("response map") {
  Rng rng(1);
  Features<double> v(4, 6);
  for (Eigen::Index k = 0; k < v.size(); ++k) v.data()[k] = rng.normal();
  const ImageFeatureMap<double> fmap{2, 3, v};

  SUBCASE("identical vectors") {
    ImageFeatureMap<double> same{2, 3, v.col(2).replicate(1, 6)};
    const Vector<double> a = v.col(2);
    CHECK((response_map(a, same).array() - 1.0).abs().maxCoeff() < 1e-12);
    const Vector<double> scaled = 3.0 * a;
    CHECK((response_map(scaled, same).array() - 1.0).abs().maxCoeff() < 1e-12);
  }
  SUBCASE("orthogonal") {
    Features<double> w = Features<double>::Zero(4, 6);
    w.row(0).setRandom();
    const Vector<double> a = (Vector<double>(4) << 0, 1, 0, 0).finished();
    CHECK(response_map(a, ImageFeatureMap<double>{2, 3, w}).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("range and layout") {
    const Vector<double> a = Vector<double>::Random(4);
    const Grid<double> s = response_map(a, fmap);
    CHECK(s.maxCoeff() <= 1.0);
    CHECK(s.minCoeff() >= -1.0);
    CHECK(s(1, 2) == Approx(a.dot(v.col(5)) / (a.norm() * v.col(5).norm())));
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(response_map(Vector<double>(Vector<double>::Ones(3)), fmap), ShapeError);
  }
}

TEST_CASE("pseudo mask") {
  const ContrastiveConfig c;
  Grid<double> s(1, 3);
  s << c.epsilon, c.epsilon + c.tau, 0.0;
  const Grid<double> m = pseudo_mask(s, c);
  CHECK(m(0, 0) == 0.5);
  CHECK(m(0, 1) == Approx(0.7310585786300049).epsilon(1e-12));

  const ContrastiveConfig sharp{0.65, 0.001};
  Grid<double> t(1, 2);
  t << 0.75, 0.55;
  const Grid<double> ms = pseudo_mask(t, sharp);
  CHECK(std::abs(ms(0, 0) - 1.0) < 1e-9);
  CHECK(ms(0, 1) < 1e-9);
}

TEST_CASE("contrastive loss hand cases") {
  SUBCASE("single pixel") {
    const auto r = from_values(1, 1, [](int, int, int) { return 1.0; });
    for (const ContrastiveConfig c : {ContrastiveConfig{}, ContrastiveConfig{0.1, 0.5}, ContrastiveConfig{-0.5, 0.01}}) {
      const auto res = contrastive_loss(r, c);
      CHECK(res.positive(0) == Approx(1.0).epsilon(1e-12));
      CHECK(res.negative(0) == Approx(1.0).epsilon(1e-12));
      CHECK(std::abs(res.loss - std::log(2.0)) <= 1e-9);
    }
  }
  SUBCASE("saturated positives") {
    const auto r = from_values(2, 3, [](int j, int i, int) { return i == j ? 1.0 : -1.0; });
    const auto res = contrastive_loss(r, ContrastiveConfig{});
    for (int i = 0; i < 2; ++i) {
      CHECK(res.positive(i) == Approx(1.0).epsilon(1e-9));
      CHECK(std::abs(res.negative(i)) < 1e-6);
    }
    CHECK(std::abs(res.loss - oracle::contrastive_loss(oracle::unpack(r), 0.65, 0.03)) <= 1e-6);
  }
}

TEST_CASE("contrastive loss matches the triple-loop oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int b = rng.uniform_int(1, 5), side = rng.uniform_int(1, 4);
    const auto r = from_values(b, side, [&](int, int, int) { return rng.uniform(-1.0, 1.0); });
    const ContrastiveConfig c{rng.uniform(-0.2, 0.8), rng.uniform(0.01, 0.3)};
    CHECK(std::abs(contrastive_loss(r, c).loss - oracle::contrastive_loss(oracle::unpack(r), c.epsilon, c.tau)) <= 1e-6);
    const ContrastiveConfig as_set{c.epsilon, c.tau, NegativeMode::set, rng.uniform(0.05, 1.0)};
    CHECK(std::abs(contrastive_loss(r, as_set).loss -
                   oracle::contrastive_loss(oracle::unpack(r), c.epsilon, c.tau, true, as_set.temperature)) <= 1e-6);
    for (const auto mode : {NegativeMode::sum, NegativeMode::set}) {
      const ContrastiveConfig masked{c.epsilon, c.tau, mode, as_set.temperature, UnpairedPooling::masked};
      CHECK(std::abs(contrastive_loss(r, masked).loss -
                     oracle::contrastive_loss(oracle::unpack(r), c.epsilon, c.tau, mode == NegativeMode::set,
                                              masked.temperature, true)) <= 1e-6);
    }
  }
}

TEST_CASE("masked unpaired pooling sees through an audio-independent hot spot") {
  // Every audio lights up the same pixel of every image: mean pooling ranks
  // the pair far above its negatives, masked pooling scores them alike.
  const auto r = from_values(3, 3, [](int, int, int p) { return p == 4 ? 0.9 : -0.5; });
  ContrastiveConfig mean_config, masked_config;
  mean_config.negatives = masked_config.negatives = NegativeMode::set;
  masked_config.unpaired = UnpairedPooling::masked;
  const auto by_mean = contrastive_loss(r, mean_config);
  const auto by_mask = contrastive_loss(r, masked_config);
  CHECK(by_mask.loss > by_mean.loss);
  CHECK(by_mask.negative(0) >= by_mask.positive(0));
}

TEST_CASE("set mode with a single negative agrees with sum mode") {
  Rng rng(31);
  const auto r = from_values(1, 3, [&](int, int, int) { return rng.uniform(-1.0, 1.0); });
  ContrastiveConfig set_config;
  set_config.negatives = NegativeMode::set;
  CHECK(contrastive_loss(r, set_config).loss == Approx(contrastive_loss(r, ContrastiveConfig{}).loss).epsilon(1e-12));
}

TEST_CASE("contrastive loss bounds and scale invariance") {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const int b = rng.uniform_int(1, 6);
    const auto r = from_values(b, 2, [&](int, int, int) { return rng.uniform(-1.0, 1.0); });
    const auto res = contrastive_loss(r, ContrastiveConfig{});
    CHECK(res.loss >= 0.0);
    CHECK(res.loss <= std::log1p(std::exp(2.0 * b + 1.0)));
    CHECK(res.positive.maxCoeff() <= b);
    CHECK(res.negative.maxCoeff() <= b + 1);
    CHECK(res.negative.minCoeff() >= -b);
  }
  Features<double> a = Features<double>::Random(8, 3), v = Features<double>::Random(8, 3 * 4);
  const double l1 = contrastive_loss(response_matrix<double>(a, v, 2, 2), ContrastiveConfig{0.3, 0.1}).loss;
  const double l2 = contrastive_loss(response_matrix<double>(10.0 * a, 10.0 * v, 2, 2), ContrastiveConfig{0.3, 0.1}).loss;
  CHECK(l1 == Approx(l2).epsilon(1e-12));
}

TEST_CASE("contrastive and equivariance gradients match central differences") {
  Rng rng(5);
  for (const int b : {1, 2, 4}) {
    for (const int side : {2, 4}) {
      CHECK(oracle::contrastive_gradient_error(rng, b, side, 8) <= 1e-3);
      CHECK(oracle::contrastive_gradient_error(rng, b, side, 8, NegativeMode::set, 0.5) <= 1e-3);
      CHECK(oracle::contrastive_gradient_error(rng, b, side, 8, NegativeMode::set, 0.5, UnpairedPooling::masked) <= 1e-3);
      CHECK(oracle::contrastive_gradient_error(rng, b, side, 8, NegativeMode::sum, 1.0, UnpairedPooling::masked) <= 1e-3);
    }
  }
  for (int trial = 0; trial < 6; ++trial) {
    const auto geo = sample_geometric(rng, {});
    CHECK(oracle::equivariance_gradient_error(rng, 4, 8, geo) <= 1e-3);
  }
}

TEST_CASE("equivariance loss") {
  Rng rng(6);
  const Grid<double> s = test::random_grid(rng, 5, 5);
  SUBCASE("identity") { CHECK(equivariance_loss(s, s, GeometricParams::identity()) == 0.0); }
  SUBCASE("flip") {
    GeometricParams p;
    p.hflip = true;
    const Grid<double> flipped = s.rowwise().reverse();
    CHECK(equivariance_loss(s, flipped, p) == 0.0);
  }
  SUBCASE("constant residual") {
    for (int i = 0; i < 10; ++i) {
      const auto geo = sample_geometric(rng, {});
      const auto w = warp_map(s, geo);
      Grid<double> s2 = w.warped;
      for (Eigen::Index k = 0; k < s2.size(); ++k) {
        if (w.validity.data()[k]) s2.data()[k] += 0.1;
      }
      if (!w.validity.any()) continue;
      CHECK(equivariance_loss(s, s2, geo) == Approx(0.1).epsilon(1e-9));
    }
  }
  SUBCASE("null on exact warps") {
    for (int i = 0; i < 100; ++i) {
      const auto geo = sample_geometric(rng, {});
      CHECK(equivariance_loss(s, warp_map(s, geo).warped, geo) <= 1e-6);
    }
  }
  SUBCASE("shape mismatch") { CHECK_THROWS_AS(equivariance_loss(s, Grid<double>(Grid<double>::Zero(4, 5)), GeometricParams{}), ShapeError); }
}

TEST_CASE("total loss") {
  const auto t = total_loss(0.5, 0.7, 0.1, 2.0);
  CHECK(t.l_total == Approx(1.4).epsilon(1e-12));
  CHECK(total_loss(0.3, 0.4, 0.9, 0.0).l_total == 0.3 + 0.4);
  CHECK(total_loss(0.3, 0.4, 0.0, 5.0).l_total == 0.3 + 0.4);
  for (const double l : {0.1, 0.37, 2.5}) CHECK(total_loss(0.25, 0.5, l).l_total == 0.25 + 0.5 + 2.0 * l);
  CHECK_THROWS_AS(total_loss(std::nan(""), 0.1, 0.1), NumericError);
  CHECK_THROWS_AS(total_loss(0.1, 0.1, 0.1, -1.0), ConfigError);
}
