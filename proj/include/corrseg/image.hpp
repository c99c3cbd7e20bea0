#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace corrseg {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Violated precondition (dimension mismatch, empty support, ...).
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Pixel coordinate, x to the right, y down.
struct Pixel {
  int x = 0;
  int y = 0;
};

/// Row-major raster with 1 or 3 interleaved channels in [0,1].
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, float fill = 0.0f);
  Image(int width, int height, int channels, std::vector<float> data);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
  bool empty() const { return data_.empty(); }

  float& at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
  float at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }

  /// Value at (x, y) with coordinates clamped into the frame.
  float at_clamped(int x, int y, int c = 0) const;

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

/// Per-pixel displacement: pixel p in the reference maps to p + (u, v).
class FlowField {
 public:
  FlowField() = default;
  FlowField(int width, int height, float u = 0.0f, float v = 0.0f);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const { return u_.size(); }

  float& u(int x, int y) { return u_[static_cast<std::size_t>(y) * width_ + x]; }
  float& v(int x, int y) { return v_[static_cast<std::size_t>(y) * width_ + x]; }
  float u(int x, int y) const { return u_[static_cast<std::size_t>(y) * width_ + x]; }
  float v(int x, int y) const { return v_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<float> u_data() { return u_; }
  std::span<float> v_data() { return v_; }
  std::span<const float> u_data() const { return u_; }
  std::span<const float> v_data() const { return v_; }

  friend bool operator==(const FlowField&, const FlowField&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> u_;
  std::vector<float> v_;
};

/// Binary label raster; 1 marks the person (foreground).
class Mask {
 public:
  Mask() = default;
  Mask(int width, int height, std::uint8_t fill = 0);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const { return labels_.size(); }

  std::uint8_t& at(int x, int y) { return labels_[static_cast<std::size_t>(y) * width_ + x]; }
  std::uint8_t at(int x, int y) const { return labels_[static_cast<std::size_t>(y) * width_ + x]; }
  std::uint8_t& operator[](std::size_t i) { return labels_[i]; }
  std::uint8_t operator[](std::size_t i) const { return labels_[i]; }

  std::size_t count() const;
  std::span<const std::uint8_t> labels() const { return labels_; }

  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> labels_;
};

/// Foreground probability per pixel.
class ScoreMap {
 public:
  ScoreMap() = default;
  ScoreMap(int width, int height, float fill = 0.5f);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const { return prob_fg_.size(); }

  float& at(int x, int y) { return prob_fg_[static_cast<std::size_t>(y) * width_ + x]; }
  float at(int x, int y) const { return prob_fg_[static_cast<std::size_t>(y) * width_ + x]; }
  float operator[](std::size_t i) const { return prob_fg_[i]; }
  float& operator[](std::size_t i) { return prob_fg_[i]; }

  /// Probability of label m (1 = foreground).
  float prob(std::size_t i, int m) const { return m ? prob_fg_[i] : 1.0f - prob_fg_[i]; }

  std::span<const float> data() const { return prob_fg_; }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> prob_fg_;
};

inline constexpr float kProbEpsilon = 1e-6f;
inline constexpr float kFloMagic = 202021.25f;

template <typename A, typename B>
bool same_size(const A& a, const B& b) {
  return a.width() == b.width() && a.height() == b.height();
}

/// Throws ContractError naming `what` when the rasters differ in size.
template <typename A, typename B>
void require_same_size(const A& a, const B& b, const char* what) {
  if (!same_size(a, b)) {
    throw ContractError(std::string(what) + ": dimension mismatch (" + std::to_string(a.width()) +
                        "x" + std::to_string(a.height()) + " vs " + std::to_string(b.width()) +
                        "x" + std::to_string(b.height()) + ")");
  }
}

// Raster I/O. 8- and 16-bit lossless formats (PNG, PGM/PPM) are supported.
Image load_image(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const Image& image, int bit_depth = 8);

FlowField read_flo(const std::filesystem::path& path);
void write_flo(const std::filesystem::path& path, const FlowField& flow);

/// Mask files hold 0/255; any nonzero value reads as 1.
Mask load_mask(const std::filesystem::path& path);
void save_mask(const std::filesystem::path& path, const Mask& mask);

/// Reads a single-channel raster or portable float map; values are clamped
/// to [kProbEpsilon, 1 - kProbEpsilon].
ScoreMap read_score_map(const std::filesystem::path& path);
/// Writes a portable float map (.pfm) or a 16-bit raster, chosen by extension.
void write_score_map(const std::filesystem::path& path, const ScoreMap& score);

// Raster helpers shared across modules.

/// Rec. 601 luminance; grayscale input is copied.
Image luminance(const Image& image);

/// Separable Gaussian blur with replicate padding, applied per channel.
Image gaussian_blur(const Image& image, double sigma);

/// Central-difference gradients with replicate padding.
void central_gradient(const Image& gray, Image& gx, Image& gy);

/// Bilinear sample of channel c with coordinates clamped into the frame.
float sample_bilinear(const Image& image, double x, double y, int c = 0);

ScoreMap clamp_score(ScoreMap score);

/// Blurs a 0/1 mask and clamps it into a valid score map.
ScoreMap score_from_mask(const Mask& mask, double sigma);

/// Thresholds a score map at 0.5 (ties go to background).
Mask threshold_score(const ScoreMap& score);

}  // namespace corrseg
