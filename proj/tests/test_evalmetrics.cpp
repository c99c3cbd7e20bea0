#include <doctest.h>

#include <cmath>

#include "corrseg/evalmetrics.hpp"
#include "corrseg/flow_init.hpp"
#include "support.hpp"

using namespace corrseg;

TEST_CASE("endpoint error") {
  FlowField gt(6, 4);
  for (std::size_t i = 0; i < gt.pixel_count(); ++i) gt.u_data()[i] = 0.1f * i;
  CHECK(aepe(gt, gt) == 0.0);
  FlowField off = gt;
  for (float& v : off.u_data()) v += 3.0f;
  for (float& v : off.v_data()) v += 4.0f;
  CHECK(aepe(off, gt) == doctest::Approx(5.0).epsilon(1e-6));
  FlowField half = gt;
  for (std::size_t i = 0; i < half.pixel_count() / 2; ++i) half.u_data()[i] += 1.0f;
  CHECK(aepe(half, gt) == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("endpoint error over a valid set") {
  FlowField a(2, 1), b(2, 1);
  a.u(1, 0) = 10.0f;
  Mask valid(2, 1);
  valid.at(0, 0) = 1;
  CHECK(aepe(a, b, &valid) == 0.0);
  const Mask none(2, 1);
  CHECK_THROWS_AS(aepe(a, b, &none), ContractError);
  CHECK_THROWS_AS(aepe(a, FlowField(3, 1)), ContractError);
}

TEST_CASE("angular error") {
  const FlowField zero(4, 4);
  CHECK(aae(zero, zero) == 0.0);
  const FlowField gt(4, 4, 1.3f, -0.2f);
  CHECK(aae(gt, gt) == 0.0);
  CHECK(aae(FlowField(4, 4, 1.0f, 0.0f), FlowField(4, 4, 0.0f, 1.0f)) ==
        doctest::Approx(60.0).epsilon(1e-8));
}

TEST_CASE("intersection over union") {
  Mask a(10, 6), full(10, 6, 1);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 5; ++x) a.at(x, y) = 1;
  }
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, full) == 0.5);
  Mask b(10, 6);
  for (int y = 0; y < 6; ++y) {
    for (int x = 5; x < 10; ++x) b.at(x, y) = 1;
  }
  CHECK(iou(a, b) == 0.0);
  CHECK(iou(Mask(3, 3), Mask(3, 3)) == 1.0);
}

TEST_CASE("still scene renders identical frames") {
  SyntheticSpec s;
  s.width = 40;
  s.height = 30;
  s.background_shift = {0, 0};
  s.foreground_shift = {0, 0};
  s.foreground_rects = {{5, 5, 20, 20}};
  const SyntheticPair p = synthetic_pair(s);
  const Image l1 = luminance(p.i1);
  for (std::size_t i = 0; i < l1.data().size(); ++i) CHECK(p.i2.data()[i] == l1.data()[i]);
  for (float v : p.gt_flow.u_data()) CHECK(v == 0.0f);
  for (float v : p.gt_flow.v_data()) CHECK(v == 0.0f);
}

TEST_CASE("full-frame foreground marks every pixel") {
  SyntheticSpec s;
  s.width = 40;
  s.height = 32;
  s.foreground_rects = {{0, 0, 40, 32}};
  CHECK(synthetic_pair(s).gt_mask.count() == 1280u);
}

TEST_CASE("spectral shift round trip") {
  const auto t = band_limited_texture(32, 24, 0.2, 3, 0.1);
  const auto back = spectral_shift(spectral_shift(t, 32, 24, 2.5, 0.0), 32, 24, -2.5, 0.0);
  double worst = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) worst = std::max(worst, std::abs(t[i] - back[i]));
  CHECK(worst < 1e-6);
}

TEST_CASE("integer spectral shift is a circular roll") {
  const auto t = band_limited_texture(16, 8, 0.2, 4, 0.1);
  const auto s = spectral_shift(t, 16, 8, 3.0, 1.0);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 16; ++x) {
      const int sx = (x - 3 + 16) % 16, sy = (y - 1 + 8) % 8;
      CHECK(s[y * 16 + x] == doctest::Approx(t[sy * 16 + sx]).epsilon(1e-9));
    }
  }
}

TEST_CASE("texture has zero mean and the requested spread") {
  const auto t = band_limited_texture(64, 64, 0.2, 5, 0.12);
  double mean = 0.0, sq = 0.0;
  for (double v : t) mean += v;
  mean /= t.size();
  for (double v : t) sq += (v - mean) * (v - mean);
  CHECK(std::abs(mean) < 1e-9);
  CHECK(std::sqrt(sq / t.size()) == doctest::Approx(0.12).epsilon(1e-6));
}

TEST_CASE("ground truth warps the second frame onto the first") {
  SyntheticSpec s;
  s.width = 64;
  s.height = 48;
  s.foreground_rects = {{20, 12, 40, 36}};
  const SyntheticPair p = synthetic_pair(s);
  const Image warped = warp_image(p.i2, p.gt_flow);
  const Image l1 = luminance(p.i1);
  double sq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < l1.pixel_count(); ++i) {
    if (!p.valid[i]) continue;
    const double d = warped.data()[i] - l1.data()[i];
    sq += d * d;
    ++n;
  }
  REQUIRE(n > 0);
  CHECK(std::sqrt(sq / n) < 1e-3);
}

TEST_CASE("scene text round trip") {
  SyntheticSpec s;
  s.foreground_rects = {{1, 2, 30, 40}};
  s.foreground_ellipses = {{50, 60, 10, 12}};
  s.textureless_band = Rect{2, 3, 20, 10};
  s.noise_sigma = 0.01;
  const SyntheticSpec back = SyntheticSpec::from_text(s.to_text());
  CHECK(back.to_text() == s.to_text());
  SyntheticSpec t;
  CHECK_FALSE(t.set("no_such_key", "1"));
}

TEST_CASE("perturbed score stays near the mask") {
  Mask gt(40, 40);
  for (int y = 10; y < 30; ++y) {
    for (int x = 10; x < 30; ++x) gt.at(x, y) = 1;
  }
  const ScoreMap s = perturbed_score(gt, 0.1, 3, 5.0, 4);
  CHECK(s.at(20, 20) > 0.5f);
  CHECK(s.at(1, 1) < 0.5f);
  CHECK(perturbed_score(gt, 0.1, 3, 5.0, 4).data()[123] == s.data()[123]);
}
