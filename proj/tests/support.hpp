#pragma once

#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "corrseg/evalmetrics.hpp"
#include "corrseg/image.hpp"

namespace testing {

// Fresh scratch directory under the system temp dir, removed on exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("corrseg_" + tag + "_" + std::to_string(static_cast<long>(::getpid())) + "_" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline corrseg::Image random_image(int w, int h, int channels, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  corrseg::Image img(w, h, channels);
  for (float& v : img.data()) v = u(rng);
  return img;
}

// Band-limited texture in three channels around a base color.
inline corrseg::Image textured_image(int w, int h, std::uint64_t seed, double amplitude = 0.15) {
  corrseg::Image img(w, h, 3);
  for (int c = 0; c < 3; ++c) {
    const auto t = corrseg::band_limited_texture(w, h, 0.15, seed * 3 + c, amplitude);
    for (int i = 0; i < w * h; ++i) img.data()[i * 3 + c] = static_cast<float>(0.5 + t[i]);
  }
  return img;
}

}  // namespace testing
