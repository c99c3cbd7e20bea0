#pragma once

// Double-precision single-channel raster used inside the solvers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "corrseg/image.hpp"

namespace corrseg::detail {

struct Plane {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Plane() = default;
  Plane(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  std::size_t size() const { return data.size(); }
  double& operator()(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  double operator()(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  double clamped(int x, int y) const {
    return (*this)(std::clamp(x, 0, width - 1), std::clamp(y, 0, height - 1));
  }

  double bilinear(double x, double y) const {
    x = std::clamp(x, 0.0, static_cast<double>(width - 1));
    y = std::clamp(y, 0.0, static_cast<double>(height - 1));
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0;
    const double fy = y - y0;
    return (1 - fy) * ((1 - fx) * clamped(x0, y0) + fx * clamped(x0 + 1, y0)) +
           fy * ((1 - fx) * clamped(x0, y0 + 1) + fx * clamped(x0 + 1, y0 + 1));
  }
};

inline Plane plane_from(const Image& image, int channel = 0) {
  Plane p(image.width(), image.height());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) p(x, y) = image.at(x, y, channel);
  }
  return p;
}

inline Plane luminance_plane(const Image& image) {
  if (image.channels() == 1) return plane_from(image);
  Plane p(image.width(), image.height());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      p(x, y) = 0.299 * image.at(x, y, 0) + 0.587 * image.at(x, y, 1) + 0.114 * image.at(x, y, 2);
    }
  }
  return p;
}

Plane blur(const Plane& in, double sigma);
/// Bilinear resize mapping pixel centers onto pixel centers.
Plane resize(const Plane& in, int width, int height);
void gradient(const Plane& in, Plane& gx, Plane& gy);
/// out(p) = in(p + (u_p, v_p)).
Plane warp(const Plane& in, const Plane& u, const Plane& v);
Plane median(const Plane& in, int radius);

inline Plane u_plane(const FlowField& f) {
  Plane p(f.width(), f.height());
  for (std::size_t i = 0; i < p.size(); ++i) p.data[i] = f.u_data()[i];
  return p;
}

inline Plane v_plane(const FlowField& f) {
  Plane p(f.width(), f.height());
  for (std::size_t i = 0; i < p.size(); ++i) p.data[i] = f.v_data()[i];
  return p;
}

inline FlowField to_flow(const Plane& u, const Plane& v) {
  FlowField f(u.width, u.height);
  for (std::size_t i = 0; i < u.size(); ++i) {
    f.u_data()[i] = static_cast<float>(u.data[i]);
    f.v_data()[i] = static_cast<float>(v.data[i]);
  }
  return f;
}

}  // namespace corrseg::detail
