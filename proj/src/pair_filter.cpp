#include "pair_filter.hpp"

#include <algorithm>
#include <cmath>

#include "plane.hpp"

namespace corrseg::detail {

ExactPairFilter::ExactPairFilter(const Image& image, double sigma_s, double sigma_r)
    : image_(image), inv_s2_(1.0 / (sigma_s * sigma_s)), inv_r2_(1.0 / (sigma_r * sigma_r)) {}

double ExactPairFilter::weight(std::size_t p, std::size_t q) const {
  const int w = image_.width();
  const double dx = static_cast<double>(p % w) - static_cast<double>(q % w);
  const double dy = static_cast<double>(p / w) - static_cast<double>(q / w);
  const int ch = image_.channels();
  const auto data = image_.data();
  double di = 0.0;
  for (int c = 0; c < ch; ++c) {
    const double d = data[p * ch + c] - data[q * ch + c];
    di += d * d;
  }
  return std::exp(-(dx * dx + dy * dy) * inv_s2_ - di * inv_r2_);
}

void ExactPairFilter::apply(const std::vector<double>& in, int channels,
                            std::vector<double>& out) const {
  const std::size_t n = image_.pixel_count();
  out.assign(n * channels, 0.0);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = p + 1; q < n; ++q) {
      const double g = weight(p, q);
      for (int c = 0; c < channels; ++c) {
        out[p * channels + c] += g * in[q * channels + c];
        out[q * channels + c] += g * in[p * channels + c];
      }
    }
  }
}

GridPairFilter::GridPairFilter(const Image& image, double sigma_s, double sigma_r,
                               double cells_per_sigma)
    : pixels_(image.pixel_count()) {
  if (!(cells_per_sigma >= 1.0)) throw ContractError("grid resolution must be >= 1 cell per sigma");
  const Plane lum = luminance_plane(image);
  const auto lo = std::min_element(lum.data.begin(), lum.data.end());
  const double sigmas[3] = {sigma_s, sigma_s, sigma_r};
  for (int a = 0; a < 3; ++a) {
    Axis& axis = axes_[a];
    const double cell = sigmas[a] / cells_per_sigma;
    // Splat and slice tents compose to a cubic B-spline; prefilter the
    // sampled Gaussian so that the spline interpolates it at cell centres.
    const double scale = cell / sigmas[a];
    const int radius = static_cast<int>(std::ceil(4.0 / scale)) + 2;
    const int len = 2 * radius + 1;
    std::vector<double> diag(len, 2.0 / 3.0), rhs(len);
    for (int j = 0; j < len; ++j) {
      const double e = (j - radius) * scale;
      rhs[j] = std::exp(-e * e);
    }
    // Thomas algorithm, off-diagonals 1/6.
    for (int j = 1; j < len; ++j) {
      const double r = (1.0 / 6.0) / diag[j - 1];
      diag[j] -= r / 6.0;
      rhs[j] -= r * rhs[j - 1];
    }
    std::vector<double> sol(len);
    sol[len - 1] = rhs[len - 1] / diag[len - 1];
    for (int j = len - 2; j >= 0; --j) sol[j] = (rhs[j] - sol[j + 1] / 6.0) / diag[j];
    axis.taps.assign(sol.begin() + radius, sol.end());

    axis.base.resize(pixels_);
    axis.frac.resize(pixels_);
    double extent = 0.0;
    for (std::size_t i = 0; i < pixels_; ++i) {
      double coord = 0.0;
      if (a == 0) coord = static_cast<double>(i % image.width());
      if (a == 1) coord = static_cast<double>(i / image.width());
      if (a == 2) coord = lum.data[i] - *lo;
      const double g = coord / cell;
      axis.base[i] = static_cast<int>(std::floor(g));
      axis.frac[i] = g - axis.base[i];
      extent = std::max(extent, g);
    }
    axis.n = static_cast<int>(std::floor(extent)) + 2;
  }

  // Response of the splat-blur-slice chain to a pixel's own value.
  self_.resize(pixels_);
  for (std::size_t i = 0; i < pixels_; ++i) {
    double s = 1.0;
    for (const Axis& axis : axes_) {
      const double f = axis.frac[i];
      const double t1 = axis.taps.size() > 1 ? axis.taps[1] : 0.0;
      s *= ((1 - f) * (1 - f) + f * f) * axis.taps[0] + 2.0 * f * (1 - f) * t1;
    }
    self_[i] = s;
  }
}

void GridPairFilter::blur_axis(std::vector<double>& grid, int channels, int axis) const {
  const int nx = axes_[0].n, ny = axes_[1].n, nz = axes_[2].n;
  const int dims[3] = {nx, ny, nz};
  const std::size_t strides[3] = {static_cast<std::size_t>(channels),
                                  static_cast<std::size_t>(channels) * nx,
                                  static_cast<std::size_t>(channels) * nx * ny};
  const std::vector<double>& taps = axes_[axis].taps;
  const int radius = static_cast<int>(taps.size()) - 1;
  const int len = dims[axis];
  const std::size_t stride = strides[axis];
  std::vector<double> line(static_cast<std::size_t>(len) * channels);
  // Iterate over every line parallel to `axis`.
  const int o1 = axis == 0 ? 1 : 0;
  const int o2 = axis == 2 ? 1 : 2;
  for (int j = 0; j < dims[o2]; ++j) {
    for (int i = 0; i < dims[o1]; ++i) {
      const std::size_t start = i * strides[o1] + j * strides[o2];
      for (int k = 0; k < len; ++k) {
        for (int c = 0; c < channels; ++c) line[k * channels + c] = grid[start + k * stride + c];
      }
      for (int k = 0; k < len; ++k) {
        double* dst = &grid[start + k * stride];
        for (int c = 0; c < channels; ++c) dst[c] = 0.0;
        const int lo = std::max(0, k - radius), hi = std::min(len - 1, k + radius);
        for (int s = lo; s <= hi; ++s) {
          const double t = taps[std::abs(s - k)];
          const double* src = &line[s * channels];
          for (int c = 0; c < channels; ++c) dst[c] += t * src[c];
        }
      }
    }
  }
}

void GridPairFilter::apply(const std::vector<double>& in, int channels,
                           std::vector<double>& out) const {
  const std::size_t nx = axes_[0].n, ny = axes_[1].n, nz = axes_[2].n;
  std::vector<double> grid(nx * ny * nz * channels, 0.0);
  auto corners = [&](std::size_t i, auto&& visit) {
    for (int dz = 0; dz < 2; ++dz) {
      const double wz = dz ? axes_[2].frac[i] : 1.0 - axes_[2].frac[i];
      const std::size_t z = axes_[2].base[i] + dz;
      for (int dy = 0; dy < 2; ++dy) {
        const double wy = dy ? axes_[1].frac[i] : 1.0 - axes_[1].frac[i];
        const std::size_t y = axes_[1].base[i] + dy;
        for (int dx = 0; dx < 2; ++dx) {
          const double wx = dx ? axes_[0].frac[i] : 1.0 - axes_[0].frac[i];
          const std::size_t x = axes_[0].base[i] + dx;
          visit(((z * ny + y) * nx + x) * channels, wx * wy * wz);
        }
      }
    }
  };
  for (std::size_t i = 0; i < pixels_; ++i) {
    const double* src = &in[i * channels];
    corners(i, [&](std::size_t cell, double w) {
      if (w == 0.0) return;
      for (int c = 0; c < channels; ++c) grid[cell + c] += w * src[c];
    });
  }
  for (int a = 0; a < 3; ++a) blur_axis(grid, channels, a);
  out.assign(pixels_ * channels, 0.0);
  for (std::size_t i = 0; i < pixels_; ++i) {
    double* dst = &out[i * channels];
    corners(i, [&](std::size_t cell, double w) {
      if (w == 0.0) return;
      for (int c = 0; c < channels; ++c) dst[c] += w * grid[cell + c];
    });
    for (int c = 0; c < channels; ++c) dst[c] -= self_[i] * in[i * channels + c];
  }
}

std::unique_ptr<PairFilter> make_pair_filter(bool exact, const Image& image, double sigma_s,
                                             double sigma_r, double cells_per_sigma) {
  if (exact) return std::make_unique<ExactPairFilter>(image, sigma_s, sigma_r);
  return std::make_unique<GridPairFilter>(image, sigma_s, sigma_r, cells_per_sigma);
}

}  // namespace corrseg::detail
