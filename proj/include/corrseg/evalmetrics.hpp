#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "corrseg/image.hpp"

namespace corrseg {

/// Mean endpoint error over `valid` pixels (all pixels when absent).
double aepe(const FlowField& flow, const FlowField& gt, const Mask* valid = nullptr);

/// Mean angle in degrees between (u, v, 1) and (u_gt, v_gt, 1).
double aae(const FlowField& flow, const FlowField& gt, const Mask* valid = nullptr);

/// Foreground intersection-over-union; 1 when both masks are empty.
double iou(const Mask& mask, const Mask& gt);

struct Vec2 {
  double u = 0.0;
  double v = 0.0;
};

/// Axis-aligned rectangle [x0, x1) x [y0, y1) in reference coordinates.
struct Rect {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  bool contains(double x, double y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

struct Ellipse {
  double cx = 0.0;
  double cy = 0.0;
  double rx = 1.0;
  double ry = 1.0;

  bool contains(double x, double y) const {
    const double dx = (x - cx) / rx;
    const double dy = (y - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
  }
};

/// Two-layer scene: a textured background and a textured foreground made of
/// a union of rectangles and ellipses, each layer translating rigidly.
struct SyntheticSpec {
  int width = 128;
  int height = 128;
  Vec2 background_shift{-2.0, 0.0};
  Vec2 foreground_shift{6.0, 0.0};
  std::vector<Rect> foreground_rects;
  std::vector<Ellipse> foreground_ellipses;
  std::uint64_t texture_seed = 1;
  /// Radial cutoff of the texture spectrum in cycles per pixel (< 0.5).
  double texture_cutoff = 0.2;
  double texture_amplitude = 0.12;
  /// Foreground-layer area whose texture amplitude is zero; moves with the
  /// foreground.
  std::optional<Rect> textureless_band;
  /// Flat color of the band; the foreground color when absent.
  std::optional<std::array<double, 3>> band_color;
  std::array<double, 3> background_color{0.25, 0.30, 0.40};
  std::array<double, 3> foreground_color{0.80, 0.62, 0.50};
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 7;

  bool in_foreground(double x, double y) const;
  void validate() const;

  /// Plain-text key=value serialization.
  std::string to_text() const;
  static SyntheticSpec from_text(const std::string& text);
  /// Applies one key=value pair; returns false for unknown keys.
  bool set(const std::string& key, const std::string& value);
};

struct SyntheticPair {
  Image i1;  ///< color reference
  Image i2;  ///< grayscale input
  FlowField gt_flow;
  Mask gt_mask;
  /// Pixels with defined ground truth: target inside the frame and not
  /// occluded by the other layer.
  Mask valid;
};

SyntheticPair synthetic_pair(const SyntheticSpec& spec);

/// Band-limited zero-mean periodic noise (normalized to unit standard
/// deviation before scaling by `amplitude`).
std::vector<double> band_limited_texture(int width, int height, double cutoff,
                                         std::uint64_t seed, double amplitude);

/// Circular sub-pixel translation by spectral phase shift:
/// out(x, y) = in(x - dx, y - dy) for a periodic band-limited field.
std::vector<double> spectral_shift(const std::vector<double>& field, int width, int height,
                                   double dx, double dy);

/// Ground-truth mask with a fraction of pixels near its boundary flipped,
/// then blurred into a score map. Mirrors an imperfect segmentation network.
ScoreMap perturbed_score(const Mask& gt, double flip_fraction, int border_width, double sigma,
                         std::uint64_t seed);

}  // namespace corrseg
