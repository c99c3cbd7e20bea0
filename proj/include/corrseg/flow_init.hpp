#pragma once

#include "corrseg/image.hpp"

namespace corrseg {

/// Coarse-to-fine Horn-Schunck settings.
///
/// `smoothness_alpha` weights the quadratic smoothness term against the
/// linearized data term with intensities expressed in 8-bit units (0..255).
/// `pyramid_levels` = 0 selects as many 0.5-scale levels as keep the
/// coarsest side >= 16 pixels.
struct HsParams {
  double smoothness_alpha = 15.0;
  int pyramid_levels = 0;
  int warp_iters_per_level = 3;
  int solver_iters = 100;
  double solver_tolerance = 1e-4;

  void validate() const;
};

struct WmfParams {
  int radius = 7;
  double sigma_spatial = 7.0;
  double sigma_range = 0.1;

  void validate() const;
};

/// Number of levels used when `pyramid_levels` is 0.
int default_pyramid_levels(int width, int height);

/// Dense flow from I1 to I2. Both images are reduced to luminance first.
FlowField horn_schunck(const Image& i1, const Image& i2, const HsParams& params = {});

/// Edge-aware weighted median of each flow component. Weights follow the
/// bilateral kernel exp(-d^2/sigma_spatial^2 - r^2/sigma_range^2) with r the
/// guide color distance; windows use replicate padding.
FlowField weighted_median_refine(const FlowField& flow, const Image& guide,
                                 const WmfParams& params = {});

/// Weighted median of `values`: the smallest value whose cumulative weight
/// reaches half the total. Exposed for tests.
float weighted_median(std::span<const float> values, std::span<const double> weights);

/// Plain square-window median with replicate padding, per component.
FlowField median_filter(const FlowField& flow, int radius);

/// Backward warp: out(p) = image(p + w_p), bilinear, replicate border.
Image warp_image(const Image& image, const FlowField& flow);

}  // namespace corrseg
