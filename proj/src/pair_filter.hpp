#pragma once

// Dense pairwise sums out_p = sum_{q != p} k(p, q) in_q with the bilateral
// kernel k = exp(-|p - q|^2 / sigma_s^2 - |I(p) - I(q)|^2 / sigma_r^2).
// Channels are interleaved per pixel.

#include <memory>
#include <vector>

#include "corrseg/image.hpp"

namespace corrseg::detail {

class PairFilter {
 public:
  virtual ~PairFilter() = default;
  virtual void apply(const std::vector<double>& in, int channels, std::vector<double>& out) const = 0;
};

/// Brute-force O(n^2) sums, color distance over all channels.
class ExactPairFilter final : public PairFilter {
 public:
  ExactPairFilter(const Image& image, double sigma_s, double sigma_r);
  void apply(const std::vector<double>& in, int channels, std::vector<double>& out) const override;
  double weight(std::size_t p, std::size_t q) const;

 private:
  Image image_;
  double inv_s2_;
  double inv_r2_;
};

/// Bilateral grid over (x, y, luminance) with trilinear splat and slice.
/// The blur taps are narrowed so that tent interpolation plus blur matches
/// the target kernel's mass and variance; the self term is removed exactly.
class GridPairFilter final : public PairFilter {
 public:
  GridPairFilter(const Image& image, double sigma_s, double sigma_r, double cells_per_sigma);
  void apply(const std::vector<double>& in, int channels, std::vector<double>& out) const override;

 private:
  struct Axis {
    int n = 0;
    std::vector<double> taps;  ///< taps[k] for |offset| = k
    std::vector<int> base;     ///< per pixel
    std::vector<double> frac;  ///< per pixel
  };
  void blur_axis(std::vector<double>& grid, int channels, int axis) const;

  std::size_t pixels_;
  Axis axes_[3];
  std::vector<double> self_;
};

std::unique_ptr<PairFilter> make_pair_filter(bool exact, const Image& image, double sigma_s,
                                             double sigma_r, double cells_per_sigma);

}  // namespace corrseg::detail
