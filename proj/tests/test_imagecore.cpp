#include <doctest.h>

#include <cmath>
#include <cstring>

#include "corrseg/image.hpp"
#include "support.hpp"

using namespace corrseg;

namespace {

std::string le_float(float f) {
  std::string s(4, '\0');
  std::memcpy(s.data(), &f, 4);
  return s;
}

std::string le_int(std::int32_t i) {
  std::string s(4, '\0');
  std::memcpy(s.data(), &i, 4);
  return s;
}

}  // namespace

TEST_CASE("8-bit grayscale endpoints scale to 0 and 1") {
  testing::TempDir dir("img");
  std::string pgm = "P5\n2 1\n255\n";
  pgm += '\x00';
  pgm += '\xff';
  testing::write_bytes(dir / "a.pgm", pgm);
  const Image img = load_image(dir / "a.pgm");
  CHECK(img.width() == 2);
  CHECK(img.height() == 1);
  CHECK(img.channels() == 1);
  CHECK(img.at(0, 0) == 0.0f);
  CHECK(img.at(1, 0) == 1.0f);
}

TEST_CASE("save then load stays within one quantization step") {
  testing::TempDir dir("img");
  for (int ch : {1, 3}) {
    const Image img = testing::random_image(7, 5, ch, 11 + ch);
    save_image(dir / "r.png", img);
    const Image back = load_image(dir / "r.png");
    REQUIRE(back.channels() == ch);
    REQUIRE(back.width() == 7);
    double worst = 0.0;
    for (std::size_t i = 0; i < img.data().size(); ++i) {
      worst = std::max(worst, std::abs(static_cast<double>(img.data()[i]) - back.data()[i]));
    }
    CHECK(worst <= 1.0 / 255.0 + 1e-7);
  }
}

TEST_CASE("16-bit output keeps finer steps") {
  testing::TempDir dir("img");
  const Image img = testing::random_image(6, 4, 3, 5);
  save_image(dir / "r16.png", img, 16);
  const Image back = load_image(dir / "r16.png");
  for (std::size_t i = 0; i < img.data().size(); ++i) {
    CHECK(std::abs(img.data()[i] - back.data()[i]) <= 1.0 / 65535.0 + 1e-7);
  }
}

TEST_CASE("four channels are rejected") {
  testing::TempDir dir("img");
  std::string pam = "P7\nWIDTH 1\nHEIGHT 1\nDEPTH 4\nMAXVAL 255\nTUPLTYPE RGB_ALPHA\nENDHDR\n";
  pam += std::string("\x10\x20\x30\xff", 4);
  testing::write_bytes(dir / "a.pam", pam);
  CHECK_THROWS_AS(load_image(dir / "a.pam"), FormatError);
}

TEST_CASE("missing image is an I/O error") {
  CHECK_THROWS_AS(load_image("/nonexistent/definitely_not_here.png"), IoError);
}

TEST_CASE(".flo write then read") {
  testing::TempDir dir("flo");
  FlowField f(3, 2, 1.5f, -2.0f);
  write_flo(dir / "c.flo", f);
  CHECK(std::filesystem::file_size(dir / "c.flo") == 12u + 3u * 2u * 8u);
  CHECK(read_flo(dir / "c.flo") == f);

  // Byte layout: magic, width, height, interleaved u v.
  const std::string bytes = testing::read_bytes(dir / "c.flo");
  CHECK(bytes.substr(0, 4) == le_float(202021.25f));
  CHECK(bytes.substr(4, 4) == le_int(3));
  CHECK(bytes.substr(8, 4) == le_int(2));
  CHECK(bytes.substr(12, 4) == le_float(1.5f));
  CHECK(bytes.substr(16, 4) == le_float(-2.0f));
}

TEST_CASE(".flo round trip is bit exact for arbitrary floats") {
  testing::TempDir dir("flo");
  FlowField f(5, 4);
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> d(-100.0f, 100.0f);
  for (float& v : f.u_data()) v = d(rng);
  for (float& v : f.v_data()) v = d(rng);
  f.u(0, 0) = -0.0f;
  write_flo(dir / "r.flo", f);
  const FlowField g = read_flo(dir / "r.flo");
  REQUIRE(g.pixel_count() == f.pixel_count());
  CHECK(std::memcmp(g.u_data().data(), f.u_data().data(), f.pixel_count() * 4) == 0);
  CHECK(std::memcmp(g.v_data().data(), f.v_data().data(), f.pixel_count() * 4) == 0);
}

TEST_CASE("hand-built 1x1 .flo reads as zero flow") {
  testing::TempDir dir("flo");
  testing::write_bytes(dir / "z.flo",
                       le_float(202021.25f) + le_int(1) + le_int(1) + le_float(0) + le_float(0));
  CHECK(read_flo(dir / "z.flo") == FlowField(1, 1));
}

TEST_CASE(".flo contract errors") {
  testing::TempDir dir("flo");
  testing::write_bytes(dir / "m.flo", le_float(0.0f) + le_int(1) + le_int(1) + le_float(0) + le_float(0));
  CHECK_THROWS_AS(read_flo(dir / "m.flo"), FormatError);
  testing::write_bytes(dir / "t.flo", le_float(202021.25f) + le_int(2) + le_int(2) + le_float(0));
  CHECK_THROWS_AS(read_flo(dir / "t.flo"), FormatError);
}

TEST_CASE("score maps are clamped on read") {
  testing::TempDir dir("score");
  // Little-endian PFM, 3x1: 0.5, 0.0, 1.0.
  std::string pfm = "Pf\n3 1\n-1.0\n";
  pfm += le_float(0.5f) + le_float(0.0f) + le_float(1.0f);
  testing::write_bytes(dir / "s.pfm", pfm);
  const ScoreMap s = read_score_map(dir / "s.pfm");
  REQUIRE(s.width() == 3);
  CHECK(s.at(0, 0) == doctest::Approx(0.5));
  CHECK(s.at(1, 0) == doctest::Approx(1e-6).epsilon(1e-3));
  CHECK(s.at(2, 0) == doctest::Approx(1.0 - 1e-6).epsilon(1e-7));
  CHECK(std::isfinite(std::log(s.at(1, 0))));
  CHECK(s.at(2, 0) < 1.0f);
}

TEST_CASE("constant 0.5 score survives a write and read") {
  testing::TempDir dir("score");
  write_score_map(dir / "h.pfm", ScoreMap(4, 3, 0.5f));
  const ScoreMap s = read_score_map(dir / "h.pfm");
  for (float v : s.data()) CHECK(v == 0.5f);
}

TEST_CASE("masks store 0 and 255") {
  testing::TempDir dir("mask");
  Mask m(4, 2);
  m.at(1, 0) = 1;
  m.at(3, 1) = 1;
  save_mask(dir / "m.png", m);
  CHECK(load_mask(dir / "m.png") == m);
}

TEST_CASE("luminance and thresholds") {
  Image rgb(1, 1, 3);
  rgb.at(0, 0, 0) = 1.0f;
  CHECK(luminance(rgb).at(0, 0) == doctest::Approx(0.299).epsilon(1e-6));
  ScoreMap s(2, 1);
  s.at(0, 0) = 0.5f;
  s.at(1, 0) = 0.51f;
  const Mask m = threshold_score(s);
  CHECK(m.at(0, 0) == 0);
  CHECK(m.at(1, 0) == 1);
}

TEST_CASE("blur of a constant image is constant") {
  const Image img(9, 7, 3, 0.4f);
  const Image b = gaussian_blur(img, 2.0);
  for (float v : b.data()) CHECK(v == doctest::Approx(0.4f).epsilon(1e-6));
}

TEST_CASE("bilinear sampling interpolates") {
  Image img(2, 1, 1);
  img.at(1, 0) = 1.0f;
  CHECK(sample_bilinear(img, 0.25, 0.0) == doctest::Approx(0.25));
  CHECK(sample_bilinear(img, 5.0, 0.0) == doctest::Approx(1.0));
}

TEST_CASE("size checks name the offender") {
  const Image a(2, 2, 1), b(3, 2, 1);
  CHECK_THROWS_WITH_AS(require_same_size(a, b, "probe"), doctest::Contains("probe"), ContractError);
}
