#include "corrseg/flow_init.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "plane.hpp"

namespace corrseg {

using detail::Plane;

void HsParams::validate() const {
  if (!(smoothness_alpha > 0.0)) throw ContractError("smoothness_alpha must be positive");
  if (pyramid_levels < 0) throw ContractError("pyramid_levels must be >= 1 (or 0 for auto)");
  if (warp_iters_per_level < 1 || solver_iters < 1) {
    throw ContractError("Horn-Schunck iteration counts must be >= 1");
  }
  if (!(solver_tolerance > 0.0)) throw ContractError("solver_tolerance must be positive");
}

void WmfParams::validate() const {
  if (radius < 1) throw ContractError("weighted median radius must be >= 1");
  if (!(sigma_spatial > 0.0) || !(sigma_range > 0.0)) {
    throw ContractError("weighted median sigmas must be positive");
  }
}

int default_pyramid_levels(int width, int height) {
  int levels = 1;
  int side = std::min(width, height);
  while (side / 2 >= 16) {
    side /= 2;
    ++levels;
  }
  return levels;
}

namespace {

// 8-bit intensity units for the data term.
constexpr double kIntensityScale = 255.0;

// Solves the linearized Horn-Schunck system for the increment (du, dv) by
// block SOR. The smoothness acts on the full flow u + du.
void solve_increment(const Plane& ix, const Plane& iy, const Plane& it, const Plane& u,
                     const Plane& v, Plane& du, Plane& dv, const HsParams& params) {
  const int w = u.width;
  const int h = u.height;
  const double lambda = params.smoothness_alpha;
  constexpr double omega = 1.9;

  auto neighbour_sums = [&](int x, int y, double& su, double& sv, int& n) {
    su = sv = 0.0;
    n = 0;
    auto add = [&](int qx, int qy) {
      su += u(qx, qy) + du(qx, qy);
      sv += v(qx, qy) + dv(qx, qy);
      ++n;
    };
    if (x > 0) add(x - 1, y);
    if (x + 1 < w) add(x + 1, y);
    if (y > 0) add(x, y - 1);
    if (y + 1 < h) add(x, y + 1);
  };

  auto residual_norm = [&]() {
    double acc = 0.0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double su, sv;
        int n;
        neighbour_sums(x, y, su, sv, n);
        const double gx = ix(x, y), gy = iy(x, y), gt = it(x, y);
        const double r1 = -gx * gt + lambda * (su - n * u(x, y)) -
                          ((gx * gx + lambda * n) * du(x, y) + gx * gy * dv(x, y));
        const double r2 = -gy * gt + lambda * (sv - n * v(x, y)) -
                          (gx * gy * du(x, y) + (gy * gy + lambda * n) * dv(x, y));
        acc += r1 * r1 + r2 * r2;
      }
    }
    return std::sqrt(acc);
  };

  const double initial = residual_norm();
  if (initial == 0.0) return;
  for (int iter = 1; iter <= params.solver_iters; ++iter) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double su, sv;
        int n;
        neighbour_sums(x, y, su, sv, n);
        const double gx = ix(x, y), gy = iy(x, y), gt = it(x, y);
        const double a11 = gx * gx + lambda * n;
        const double a12 = gx * gy;
        const double a22 = gy * gy + lambda * n;
        const double b1 = -gx * gt + lambda * (su - n * u(x, y));
        const double b2 = -gy * gt + lambda * (sv - n * v(x, y));
        const double det = a11 * a22 - a12 * a12;
        const double du_star = (a22 * b1 - a12 * b2) / det;
        const double dv_star = (a11 * b2 - a12 * b1) / det;
        du(x, y) += omega * (du_star - du(x, y));
        dv(x, y) += omega * (dv_star - dv(x, y));
      }
    }
    if (iter % 5 == 0 && residual_norm() <= params.solver_tolerance * initial) break;
  }
}

}  // namespace

FlowField horn_schunck(const Image& i1, const Image& i2, const HsParams& params) {
  require_same_size(i1, i2, "horn_schunck");
  params.validate();
  const int levels = params.pyramid_levels > 0 ? params.pyramid_levels
                                               : default_pyramid_levels(i1.width(), i1.height());

  std::vector<Plane> pyr1{detail::luminance_plane(i1)};
  std::vector<Plane> pyr2{detail::luminance_plane(i2)};
  for (auto* pyr : {&pyr1, &pyr2}) {
    for (double& value : (*pyr)[0].data) value *= kIntensityScale;
  }
  for (int l = 1; l < levels; ++l) {
    const Plane& f1 = pyr1.back();
    const int w = std::max(1, (f1.width + 1) / 2);
    const int h = std::max(1, (f1.height + 1) / 2);
    pyr1.push_back(detail::resize(detail::blur(pyr1.back(), 1.0), w, h));
    pyr2.push_back(detail::resize(detail::blur(pyr2.back(), 1.0), w, h));
  }

  Plane u(pyr1.back().width, pyr1.back().height);
  Plane v(u.width, u.height);
  for (int l = levels - 1; l >= 0; --l) {
    const Plane& a = pyr1[l];
    const Plane& b = pyr2[l];
    if (u.width != a.width || u.height != a.height) {
      const double sx = static_cast<double>(a.width) / u.width;
      const double sy = static_cast<double>(a.height) / u.height;
      u = detail::resize(u, a.width, a.height);
      v = detail::resize(v, a.width, a.height);
      for (double& value : u.data) value *= sx;
      for (double& value : v.data) value *= sy;
    }
    Plane ax, ay;
    detail::gradient(a, ax, ay);
    for (int warp = 0; warp < params.warp_iters_per_level; ++warp) {
      const Plane bw = detail::warp(b, u, v);
      Plane bx, by;
      detail::gradient(bw, bx, by);
      Plane ix(a.width, a.height), iy(a.width, a.height), it(a.width, a.height);
      for (std::size_t i = 0; i < a.size(); ++i) {
        ix.data[i] = 0.5 * (ax.data[i] + bx.data[i]);
        iy.data[i] = 0.5 * (ay.data[i] + by.data[i]);
        it.data[i] = bw.data[i] - a.data[i];
      }
      Plane du(a.width, a.height), dv(a.width, a.height);
      solve_increment(ix, iy, it, u, v, du, dv, params);
      for (std::size_t i = 0; i < u.size(); ++i) {
        u.data[i] += du.data[i];
        v.data[i] += dv.data[i];
      }
      u = detail::median(u, 2);
      v = detail::median(v, 2);
    }
  }
  return detail::to_flow(u, v);
}

float weighted_median(std::span<const float> values, std::span<const double> weights) {
  if (values.size() != weights.size() || values.empty()) {
    throw ContractError("weighted_median: values and weights must be non-empty and equal length");
  }
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  const double half = 0.5 * total;
  double cumulative = 0.0;
  for (std::size_t idx : order) {
    cumulative += weights[idx];
    if (cumulative >= half) return values[idx];
  }
  return values[order.back()];
}

FlowField weighted_median_refine(const FlowField& flow, const Image& guide,
                                 const WmfParams& params) {
  require_same_size(flow, guide, "weighted_median_refine");
  params.validate();
  const int w = flow.width();
  const int h = flow.height();
  const int r = params.radius;
  const int ch = guide.channels();
  const double inv_s2 = 1.0 / (params.sigma_spatial * params.sigma_spatial);
  const double inv_r2 = 1.0 / (params.sigma_range * params.sigma_range);

  const std::size_t window = static_cast<std::size_t>(2 * r + 1) * (2 * r + 1);
  std::vector<double> spatial(window);
  for (int dy = -r, k = 0; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx, ++k) spatial[k] = std::exp(-(dx * dx + dy * dy) * inv_s2);
  }

  FlowField out(w, h);
  std::vector<float> us(window), vs(window);
  std::vector<double> weights(window);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::size_t k = 0;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx, ++k) {
          const int qx = std::clamp(x + dx, 0, w - 1);
          const int qy = std::clamp(y + dy, 0, h - 1);
          double d2 = 0.0;
          for (int c = 0; c < ch; ++c) {
            const double d = guide.at(x, y, c) - guide.at(qx, qy, c);
            d2 += d * d;
          }
          weights[k] = spatial[k] * std::exp(-d2 * inv_r2);
          us[k] = flow.u(qx, qy);
          vs[k] = flow.v(qx, qy);
        }
      }
      out.u(x, y) = weighted_median(us, weights);
      out.v(x, y) = weighted_median(vs, weights);
    }
  }
  return out;
}

FlowField median_filter(const FlowField& flow, int radius) {
  const Plane u = detail::median(detail::u_plane(flow), radius);
  const Plane v = detail::median(detail::v_plane(flow), radius);
  return detail::to_flow(u, v);
}

Image warp_image(const Image& image, const FlowField& flow) {
  require_same_size(image, flow, "warp_image");
  Image out(image.width(), image.height(), image.channels());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < image.channels(); ++c) {
        out.at(x, y, c) = sample_bilinear(image, x + flow.u(x, y), y + flow.v(x, y), c);
      }
    }
  }
  return out;
}

}  // namespace corrseg
