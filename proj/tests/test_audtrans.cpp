#include "avsl/audtrans.hpp"

#include "doctest.h"

using namespace avsl;
using doctest::Approx;

TEST_CASE("masking disabled is the identity") {
  Rng rng(1);
  MaskConfig c;
  c.p_time = c.p_freq = 0.0;
  Spectrogram s = Spectrogram::Random(16, 20);
  CHECK(mask_spectrogram(s, rng, c) == s);
}

TEST_CASE("forced masking zeroes a full row and a full column") {
  Rng rng(2);
  MaskConfig c{1.0, 1.0, 1.0, 1.0};
  const Spectrogram ones = Spectrogram::Ones(12, 15);
  for (int i = 0; i < 50; ++i) {
    const Spectrogram m = mask_spectrogram(ones, rng, c);
    CHECK((m.rowwise().maxCoeff().array() == 0.0f).any());
    CHECK((m.colwise().maxCoeff().array() == 0.0f).any());
  }
}

TEST_CASE("mask frequencies and widths at defaults") {
  Rng rng(3);
  const Spectrogram s = Spectrogram::Ones(64, 64);
  int applied = 0;
  for (int i = 0; i < 10000; ++i) {
    MaskRecord r;
    mask_spectrogram(s, rng, {}, &r);
    applied += r.time_width > 0;
    CHECK(r.time_width <= static_cast<int>(0.2 * 64));
    CHECK(r.freq_width <= static_cast<int>(0.2 * 64));
  }
  CHECK(std::abs(applied / 10000.0 - 0.8) <= 0.02);
}

TEST_CASE("mixing schedule") {
  const MixingSchedule d;
  CHECK(mixing_coefficient(0, d) == 0.0);
  CHECK(mixing_coefficient(79, d) == 0.65);
  CHECK(mixing_coefficient(40, d) == Approx(0.65 * 40 / 79).epsilon(1e-12));
  CHECK(mixing_coefficient(0, {0.65, 1}) == 0.0);
  CHECK_THROWS_AS(mixing_coefficient(80, d), RangeError);
  CHECK_THROWS_AS(mixing_coefficient(-1, d), RangeError);
  for (int e = 1; e < 80; ++e) CHECK(mixing_coefficient(e, d) > mixing_coefficient(e - 1, d));
}

TEST_CASE("neighbor index") {
  SUBCASE("two samples") {
    Eigen::MatrixXf e(2, 3);
    e << 1, 2, 3, -1, 0, 2;
    const auto n = build_neighbor_index(e);
    CHECK(n.nearest == std::vector<std::size_t>{1, 0});
  }
  SUBCASE("exhaustive cosine") {
    Eigen::MatrixXf e(3, 2);
    e << 1, 0, 0.9f, 0.1f, 0, 1;
    CHECK(build_neighbor_index(e).nearest[2] == 1);
  }
  SUBCASE("exact duplicate wins") {
    Eigen::MatrixXf e = Eigen::MatrixXf::Random(10, 4);
    e.row(7) = e.row(2);
    CHECK(build_neighbor_index(e).nearest[2] == 7);
    CHECK(build_neighbor_index(e).nearest[7] == 2);
  }
  SUBCASE("never self") {
    const Eigen::MatrixXf e = Eigen::MatrixXf::Random(30, 5);
    const auto n = build_neighbor_index(e);
    for (std::size_t i = 0; i < 30; ++i) CHECK(n.nearest[i] != i);
  }
}

TEST_CASE("mix_audio") {
  const Spectrogram a = Spectrogram::Random(5, 6), b = Spectrogram::Random(5, 6);
  CHECK(mix_audio(a, b, 0.0) == a);
  CHECK(mix_audio(a, a, 0.37) == a);
  CHECK(mix_audio(Spectrogram::Ones(3, 3), Spectrogram::Constant(3, 3, 3.0f), 0.5) == Spectrogram::Constant(3, 3, 2.0f));
  CHECK_THROWS_AS(mix_audio(a, Spectrogram::Ones(4, 6), 0.5), ShapeError);
  CHECK_THROWS_AS(mix_audio(a, b, 1.5), RangeError);
}
