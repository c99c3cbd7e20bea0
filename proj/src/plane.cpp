#include "plane.hpp"

#include <algorithm>
#include <cmath>

namespace corrseg::detail {

Plane blur(const Plane& in, double sigma) {
  if (sigma <= 0.0) return in;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> taps(2 * radius + 1);
  double sum = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    taps[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    sum += taps[k + radius];
  }
  for (double& t : taps) t /= sum;

  Plane tmp(in.width, in.height);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += taps[k + radius] * in.clamped(x + k, y);
      tmp(x, y) = acc;
    }
  }
  Plane out(in.width, in.height);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += taps[k + radius] * tmp.clamped(x, y + k);
      out(x, y) = acc;
    }
  }
  return out;
}

Plane resize(const Plane& in, int width, int height) {
  Plane out(width, height);
  const double sx = static_cast<double>(in.width) / width;
  const double sy = static_cast<double>(in.height) / height;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      out(x, y) = in.bilinear((x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5);
    }
  }
  return out;
}

void gradient(const Plane& in, Plane& gx, Plane& gy) {
  gx = Plane(in.width, in.height);
  gy = Plane(in.width, in.height);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      gx(x, y) = 0.5 * (in.clamped(x + 1, y) - in.clamped(x - 1, y));
      gy(x, y) = 0.5 * (in.clamped(x, y + 1) - in.clamped(x, y - 1));
    }
  }
}

Plane warp(const Plane& in, const Plane& u, const Plane& v) {
  Plane out(in.width, in.height);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) out(x, y) = in.bilinear(x + u(x, y), y + v(x, y));
  }
  return out;
}

Plane median(const Plane& in, int radius) {
  Plane out(in.width, in.height);
  std::vector<double> window;
  window.reserve(static_cast<std::size_t>(2 * radius + 1) * (2 * radius + 1));
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      window.clear();
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) window.push_back(in.clamped(x + dx, y + dy));
      }
      auto mid = window.begin() + static_cast<std::ptrdiff_t>(window.size() / 2);
      std::nth_element(window.begin(), mid, window.end());
      out(x, y) = *mid;
    }
  }
  return out;
}

}  // namespace corrseg::detail
