#include "corrseg/regional.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <set>

#include "corrseg/potentials.hpp"
#include "plane.hpp"

namespace corrseg {

using detail::Plane;

Mask RegionMap::mask_of(int id) const {
  Mask mask(width, height);
  for (std::size_t i = 0; i < ids.size(); ++i) mask[i] = ids[i] == id ? 1 : 0;
  return mask;
}

std::vector<std::size_t> RegionMap::areas() const {
  std::vector<std::size_t> out(static_cast<std::size_t>(region_count) + 1, 0);
  for (int id : ids) ++out[static_cast<std::size_t>(id)];
  return out;
}

void RegionalParams::validate() const {
  if (n_max < 1) throw ContractError("n_max must be >= 1");
  if (!(boundary_threshold > 0.0) || !(merge_threshold > 0.0) || !(outlier_factor > 0.0)) {
    throw ContractError("regional thresholds must be positive");
  }
  if (!(min_region_area >= 0.0 && min_region_area < 1.0)) {
    throw ContractError("min_region_area must be a fraction of the frame");
  }
  if (flat_margin < 0 || !(consistency_factor >= 0.0)) {
    throw ContractError("flat_margin and consistency_factor must be nonnegative");
  }
}

namespace {

// Region adjacency graph over labels 1..K. Regions separated only by
// unowned pixels count as neighbours (ownership is grown geodesically).
class RegionGraph {
 public:
  RegionGraph(const std::vector<int>& ids, int width, int height, int count, const FlowField& flow)
      : ids_(ids), width_(width), height_(height), parent_(count + 1), area_(count + 1, 0),
        sum_u_(count + 1, 0.0), sum_v_(count + 1, 0.0), neighbours_(count + 1) {
    std::iota(parent_.begin(), parent_.end(), 0);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const int id = ids[i];
      if (id <= 0) continue;
      ++area_[id];
      sum_u_[id] += flow.u_data()[i];
      sum_v_[id] += flow.v_data()[i];
    }
    const std::vector<int> owner = grow_ownership(ids, width, height);
    auto link = [&](int a, int b) {
      if (a > 0 && b > 0 && a != b) {
        neighbours_[a].insert(b);
        neighbours_[b].insert(a);
      }
    };
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * width + x;
        if (x + 1 < width) link(owner[i], owner[i + 1]);
        if (y + 1 < height) link(owner[i], owner[i + width]);
      }
    }
    for (int id = 1; id <= count; ++id) {
      if (area_[id] > 0) alive_.insert(id);
    }
  }

  const std::set<int>& alive() const { return alive_; }
  const std::set<int>& neighbours(int id) const { return neighbours_[id]; }
  std::size_t area(int id) const { return area_[id]; }

  double distance(int a, int b) const {
    const double du = sum_u_[a] / area_[a] - sum_u_[b] / area_[b];
    const double dv = sum_v_[a] / area_[a] - sum_v_[b] / area_[b];
    return std::hypot(du, dv);
  }

  /// Neighbour with the closest mean flow (ties to the smaller id), or 0.
  int nearest_neighbour(int id) const {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int n : neighbours_[id]) {
      const double d = distance(id, n);
      if (d < best_d) {
        best_d = d;
        best = n;
      }
    }
    return best;
  }

  int nearest_any(int id) const {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int n : alive_) {
      if (n == id) continue;
      const double d = distance(id, n);
      if (d < best_d) {
        best_d = d;
        best = n;
      }
    }
    return best;
  }

  /// `keep` absorbs `gone`.
  void merge(int keep, int gone) {
    parent_[gone] = keep;
    area_[keep] += area_[gone];
    sum_u_[keep] += sum_u_[gone];
    sum_v_[keep] += sum_v_[gone];
    for (int n : neighbours_[gone]) {
      neighbours_[n].erase(gone);
      if (n != keep) {
        neighbours_[n].insert(keep);
        neighbours_[keep].insert(n);
      }
    }
    neighbours_[keep].erase(gone);
    neighbours_[gone].clear();
    alive_.erase(gone);
  }

  void discard(int id) {
    parent_[id] = 0;
    for (int n : neighbours_[id]) neighbours_[n].erase(id);
    neighbours_[id].clear();
    alive_.erase(id);
  }

  int find(int id) const {
    while (id != 0 && parent_[id] != id) id = parent_[id];
    return id;
  }

  /// Final map with surviving regions renumbered 1..K in scan order.
  RegionMap relabel() const {
    RegionMap out(width_, height_);
    std::vector<int> renumber(parent_.size(), 0);
    int next = 0;
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      const int root = ids_[i] > 0 ? find(ids_[i]) : 0;
      if (root == 0) continue;
      if (renumber[root] == 0) renumber[root] = ++next;
      out.ids[i] = renumber[root];
    }
    out.region_count = next;
    return out;
  }

 private:
  static std::vector<int> grow_ownership(const std::vector<int>& ids, int width, int height) {
    std::vector<int> owner = ids;
    std::deque<std::size_t> queue;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] > 0) queue.push_back(i);
    }
    while (!queue.empty()) {
      const std::size_t i = queue.front();
      queue.pop_front();
      const int x = static_cast<int>(i % width);
      const int y = static_cast<int>(i / width);
      auto visit = [&](int qx, int qy) {
        if (qx < 0 || qy < 0 || qx >= width || qy >= height) return;
        const std::size_t q = static_cast<std::size_t>(qy) * width + qx;
        if (owner[q] == 0) {
          owner[q] = owner[i];
          queue.push_back(q);
        }
      };
      visit(x - 1, y);
      visit(x + 1, y);
      visit(x, y - 1);
      visit(x, y + 1);
    }
    return owner;
  }

  std::vector<int> ids_;
  int width_;
  int height_;
  std::vector<int> parent_;
  std::vector<std::size_t> area_;
  std::vector<double> sum_u_;
  std::vector<double> sum_v_;
  std::vector<std::set<int>> neighbours_;
  std::set<int> alive_;
};

// 4-connected components of `eligible`, numbered in scan order.
RegionMap connected_components(const std::vector<std::uint8_t>& eligible, int width, int height) {
  RegionMap map(width, height);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < eligible.size(); ++start) {
    if (!eligible[start] || map.ids[start] != 0) continue;
    const int id = ++map.region_count;
    map.ids[start] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const int x = static_cast<int>(i % width);
      const int y = static_cast<int>(i / width);
      auto visit = [&](int qx, int qy) {
        if (qx < 0 || qy < 0 || qx >= width || qy >= height) return;
        const std::size_t q = static_cast<std::size_t>(qy) * width + qx;
        if (eligible[q] && map.ids[q] == 0) {
          map.ids[q] = id;
          stack.push_back(q);
        }
      };
      visit(x - 1, y);
      visit(x + 1, y);
      visit(x, y - 1);
      visit(x, y + 1);
    }
  }
  return map;
}

Mask without(const Mask& a, const Mask& b) {
  Mask out = a;
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    if (b[i]) out[i] = 0;
  }
  return out;
}

double median_of(std::vector<double> values) {
  if (values.empty()) return 0.0;
  const auto mid = values.begin() + values.size() / 2;
  std::nth_element(values.begin(), mid, values.end());
  return *mid;
}

}  // namespace

double otsu_threshold(std::span<const double> values) {
  if (values.empty()) return 0.0;
  const double max_v = *std::max_element(values.begin(), values.end());
  if (!(max_v > 0.0)) return 0.0;
  constexpr int kBins = 256;
  std::vector<double> hist(kBins, 0.0);
  for (double v : values) {
    const int b = std::clamp(static_cast<int>(v / max_v * (kBins - 1)), 0, kBins - 1);
    hist[b] += 1.0;
  }
  const double total = static_cast<double>(values.size());
  double sum_all = 0.0;
  for (int b = 0; b < kBins; ++b) sum_all += b * hist[b];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_bin = 0;
  for (int b = 0; b < kBins; ++b) {
    w0 += hist[b];
    sum0 += b * hist[b];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0;
    const double m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_bin = b;
    }
  }
  return (best_bin + 0.5) / (kBins - 1) * max_v;
}

Mask textureless_pixels(const Image& guide, double threshold) {
  const Plane lum = detail::luminance_plane(guide);
  Plane gx, gy;
  detail::gradient(lum, gx, gy);
  Mask flat(lum.width, lum.height);
  std::size_t flat_count = 0;
  for (std::size_t i = 0; i < lum.size(); ++i) {
    if (std::hypot(gx.data[i], gy.data[i]) < threshold) {
      flat[i] = 1;
      ++flat_count;
    }
  }
  if (flat_count == flat.pixel_count()) return Mask(lum.width, lum.height);
  return flat;
}

Mask near_flat_area(const Mask& textureless, int margin) {
  const int w = textureless.width(), h = textureless.height();
  Mask core(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      bool flat = true;
      for (int dy = -1; dy <= 1 && flat; ++dy) {
        for (int dx = -1; dx <= 1 && flat; ++dx) {
          flat = textureless.at(std::clamp(x + dx, 0, w - 1), std::clamp(y + dy, 0, h - 1));
        }
      }
      core.at(x, y) = flat;
    }
  }
  // Dilating the core by margin + 1 restores the flat area itself.
  const int r = margin + 1;
  Mask rows(w, h), out(w, h);
  for (int y = 0; y < h; ++y) {
    int last = -r - 1;
    for (int x = 0; x < w + r; ++x) {
      if (x < w && core.at(x, y)) last = x;
      const int cx = x - r;
      if (cx >= 0 && cx < w) rows.at(cx, y) = 0;
      if (cx >= 0 && x - last <= 2 * r) rows.at(cx, y) = 1;
    }
  }
  for (int x = 0; x < w; ++x) {
    int last = -r - 1;
    for (int y = 0; y < h + r; ++y) {
      if (y < h && rows.at(x, y)) last = y;
      const int cy = y - r;
      if (cy >= 0 && y - last <= 2 * r) out.at(x, cy) = 1;
    }
  }
  return out;
}

RegionMap partition_regions(const FlowField& flow, const Image& guide,
                            const RegionalParams& params) {
  require_same_size(flow, guide, "partition_regions");
  params.validate();
  const int w = flow.width();
  const int h = flow.height();
  const Plane u = detail::u_plane(flow);
  const Plane v = detail::v_plane(flow);
  Plane ux, uy, vx, vy;
  detail::gradient(u, ux, uy);
  detail::gradient(v, vx, vy);

  const Plane lum = detail::luminance_plane(guide);
  Plane gx, gy;
  detail::gradient(lum, gx, gy);
  std::vector<double> guide_mag(lum.size());
  for (std::size_t i = 0; i < lum.size(); ++i) guide_mag[i] = std::hypot(gx.data[i], gy.data[i]);
  const double edge_threshold = otsu_threshold(guide_mag);

  const Mask flat = textureless_pixels(guide, params.texture_threshold);
  const double t = params.boundary_threshold;
  std::vector<std::uint8_t> eligible(lum.size(), 0);
  for (std::size_t i = 0; i < lum.size(); ++i) {
    const double jac = std::sqrt(ux.data[i] * ux.data[i] + uy.data[i] * uy.data[i] +
                                 vx.data[i] * vx.data[i] + vy.data[i] * vy.data[i]);
    const bool boundary = jac > t || (jac > 0.5 * t && guide_mag[i] > edge_threshold);
    eligible[i] = !boundary && !flat[i];
  }

  RegionMap components = connected_components(eligible, w, h);
  if (components.region_count == 0) {
    // Boundaries everywhere: fall back to a single region.
    std::fill(components.ids.begin(), components.ids.end(), 1);
    components.region_count = 1;
    return components;
  }

  const double min_area = params.min_region_area * static_cast<double>(w) * h;
  RegionGraph graph(components.ids, w, h, components.region_count, flow);
  std::vector<int> order(graph.alive().begin(), graph.alive().end());
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return graph.area(a) < graph.area(b); });
  for (int id : order) {
    if (graph.alive().size() <= 1) break;
    if (!graph.alive().contains(id) || static_cast<double>(graph.area(id)) >= min_area) continue;
    const int target = graph.nearest_neighbour(id);
    if (target != 0) graph.merge(target, id);
  }
  return graph.relabel();
}

RegionMap merge_and_filter(const RegionMap& regions, const FlowField& flow,
                           const RegionalParams& params) {
  if (regions.width != flow.width() || regions.height != flow.height()) {
    throw ContractError("merge_and_filter: dimension mismatch");
  }
  params.validate();
  RegionGraph graph(regions.ids, regions.width, regions.height, regions.region_count, flow);

  // Closest adjacent pair first until no pair is within merge_threshold.
  for (;;) {
    int best_a = 0, best_b = 0;
    double best_d = params.merge_threshold;
    for (int a : graph.alive()) {
      for (int b : graph.neighbours(a)) {
        if (b <= a) continue;
        const double d = graph.distance(a, b);
        if (d < best_d) {
          best_d = d;
          best_a = a;
          best_b = b;
        }
      }
    }
    if (best_a == 0) break;
    graph.merge(best_a, best_b);
  }

  const double frame = static_cast<double>(regions.width) * regions.height;
  const double outlier_area = params.min_region_area * 4.0 * frame;
  const double outlier_distance = params.outlier_factor * params.merge_threshold;
  std::vector<int> outliers;
  for (int id : graph.alive()) {
    const auto& nbs = graph.neighbours(id);
    if (nbs.empty() || static_cast<double>(graph.area(id)) >= outlier_area) continue;
    const bool isolated = std::all_of(nbs.begin(), nbs.end(),
                                      [&](int n) { return graph.distance(id, n) > outlier_distance; });
    if (isolated) outliers.push_back(id);
  }
  for (int id : outliers) {
    if (graph.alive().size() > 1) graph.discard(id);
  }

  const std::size_t cap = static_cast<std::size_t>(std::max(1, params.n_max - 1));
  while (graph.alive().size() > cap) {
    int smallest = 0;
    for (int id : graph.alive()) {
      if (smallest == 0 || graph.area(id) <= graph.area(smallest)) smallest = id;
    }
    int target = graph.nearest_neighbour(smallest);
    if (target == 0) target = graph.nearest_any(smallest);
    graph.merge(target, smallest);
  }
  return graph.relabel();
}

FlowField propagate_region(const FlowField& flow, const Mask& support) {
  require_same_size(flow, support, "propagate_region");
  if (support.count() == 0) throw ContractError("propagate_region: empty support");

  struct Level {
    Plane u, v, m;
  };
  std::vector<Level> pyramid;
  {
    Level base{Plane(flow.width(), flow.height()), Plane(flow.width(), flow.height()),
               Plane(flow.width(), flow.height())};
    for (std::size_t i = 0; i < support.pixel_count(); ++i) {
      const double m = support[i] ? 1.0 : 0.0;
      base.u.data[i] = flow.u_data()[i] * m;
      base.v.data[i] = flow.v_data()[i] * m;
      base.m.data[i] = m;
    }
    pyramid.push_back(std::move(base));
  }
  // Pull: vertex-centred halving, coarse pixel X sits on fine pixel 2X and
  // averages its neighbours with 1/4 1/2 1/4 tent weights.
  while (pyramid.back().m.width > 2 || pyramid.back().m.height > 2) {
    const Level& fine = pyramid.back();
    const int fw = fine.m.width, fh = fine.m.height;
    const int w = fw > 2 ? fw / 2 + 1 : fw;
    const int h = fh > 2 ? fh / 2 + 1 : fh;
    Level coarse{Plane(w, h), Plane(w, h), Plane(w, h)};
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double su = 0, sv = 0, sm = 0, sw = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          const int fy = h == fh ? y : 2 * y + dy;
          if ((h == fh && dy != 0) || fy < 0 || fy >= fh) continue;
          const double wy = h == fh ? 1.0 : (dy == 0 ? 0.5 : 0.25);
          for (int dx = -1; dx <= 1; ++dx) {
            const int fx = w == fw ? x : 2 * x + dx;
            if ((w == fw && dx != 0) || fx < 0 || fx >= fw) continue;
            const double wt = wy * (w == fw ? 1.0 : (dx == 0 ? 0.5 : 0.25));
            su += wt * fine.u(fx, fy);
            sv += wt * fine.v(fx, fy);
            sm += wt * fine.m(fx, fy);
            sw += wt;
          }
        }
        coarse.u(x, y) = su / sw;
        coarse.v(x, y) = sv / sw;
        coarse.m(x, y) = sm / sw;
      }
    }
    pyramid.push_back(std::move(coarse));
  }
  // Normalize to flow values; holes are filled on the way back up.
  for (Level& level : pyramid) {
    for (std::size_t i = 0; i < level.m.size(); ++i) {
      if (level.m.data[i] > 0.0) {
        level.u.data[i] /= level.m.data[i];
        level.v.data[i] /= level.m.data[i];
      }
    }
  }
  // The top level (at most 2x2) takes the support mean in its holes.
  {
    Level& top = pyramid.back();
    double su = 0, sv = 0, sm = 0;
    for (std::size_t i = 0; i < top.m.size(); ++i) {
      su += top.u.data[i] * top.m.data[i];
      sv += top.v.data[i] * top.m.data[i];
      sm += top.m.data[i];
    }
    for (std::size_t i = 0; i < top.m.size(); ++i) {
      if (top.m.data[i] > 0.0) continue;
      top.u.data[i] = su / sm;
      top.v.data[i] = sv / sm;
    }
  }
  // Push: linear interpolation of the coarser level into holes only.
  for (int l = static_cast<int>(pyramid.size()) - 2; l >= 0; --l) {
    Level& fine = pyramid[l];
    const Level& coarse = pyramid[l + 1];
    const bool sx = coarse.m.width != fine.m.width, sy = coarse.m.height != fine.m.height;
    for (int y = 0; y < fine.m.height; ++y) {
      for (int x = 0; x < fine.m.width; ++x) {
        if (fine.m(x, y) > 0.0) continue;
        const double cx = sx ? x / 2.0 : x;
        const double cy = sy ? y / 2.0 : y;
        fine.u(x, y) = coarse.u.bilinear(cx, cy);
        fine.v(x, y) = coarse.v.bilinear(cx, cy);
      }
    }
  }
  // One 3x3 normalized smoothing pass over the filled pixels.
  const Level& base = pyramid.front();
  FlowField out(flow.width(), flow.height());
  for (int y = 0; y < flow.height(); ++y) {
    for (int x = 0; x < flow.width(); ++x) {
      if (support.at(x, y)) {
        out.u(x, y) = flow.u(x, y);
        out.v(x, y) = flow.v(x, y);
        continue;
      }
      double su = 0, sv = 0;
      int n = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int qx = x + dx, qy = y + dy;
          if (qx < 0 || qy < 0 || qx >= flow.width() || qy >= flow.height()) continue;
          su += base.u(qx, qy);
          sv += base.v(qx, qy);
          ++n;
        }
      }
      out.u(x, y) = static_cast<float>(su / n);
      out.v(x, y) = static_cast<float>(sv / n);
    }
  }
  return out;
}

FlowField refine_subpixel(const FlowField& w, const Image& i1, const Image& i2,
                          const RefineParams& params) {
  require_same_size(w, i1, "refine_subpixel");
  require_same_size(i1, i2, "refine_subpixel");
  constexpr double eps = 1e-6;
  const int width = w.width();
  const int height = w.height();

  const Plane l1 = detail::luminance_plane(i1);
  const Plane l2 = detail::luminance_plane(i2);
  Plane l1x, l1y, l2x, l2y, l2xx, l2xy, l2yx, l2yy;
  detail::gradient(l1, l1x, l1y);
  detail::gradient(l2, l2x, l2y);
  detail::gradient(l2x, l2xx, l2xy);
  detail::gradient(l2y, l2yx, l2yy);

  const Plane u0 = detail::u_plane(w);
  const Plane v0 = detail::v_plane(w);
  const Plane iz_w = detail::warp(l2, u0, v0);
  const Plane ix = detail::warp(l2x, u0, v0);
  const Plane iy = detail::warp(l2y, u0, v0);
  const Plane ixx = detail::warp(l2xx, u0, v0);
  const Plane ixy = detail::warp(l2xy, u0, v0);
  const Plane iyy = detail::warp(l2yy, u0, v0);
  Plane iz(width, height), ixz(width, height), iyz(width, height);
  for (std::size_t i = 0; i < iz.size(); ++i) {
    iz.data[i] = iz_w.data[i] - l1.data[i];
    ixz.data[i] = ix.data[i] - l1x.data[i];
    iyz.data[i] = iy.data[i] - l1y.data[i];
  }

  Plane du(width, height), dv(width, height);
  Plane psi_d(width, height), psi_g(width, height), psi_s(width, height);
  constexpr double omega = 1.8;
  for (int outer = 0; outer < params.outer_iters; ++outer) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double r = iz(x, y) + ix(x, y) * du(x, y) + iy(x, y) * dv(x, y);
        const double rx = ixz(x, y) + ixx(x, y) * du(x, y) + ixy(x, y) * dv(x, y);
        const double ry = iyz(x, y) + ixy(x, y) * du(x, y) + iyy(x, y) * dv(x, y);
        psi_d(x, y) = 0.5 / std::sqrt(r * r + eps);
        psi_g(x, y) = params.gradient_weight * 0.5 / std::sqrt(rx * rx + ry * ry + eps);
        const double dux = du.clamped(x + 1, y) - du(x, y);
        const double duy = du.clamped(x, y + 1) - du(x, y);
        const double dvx = dv.clamped(x + 1, y) - dv(x, y);
        const double dvy = dv.clamped(x, y + 1) - dv(x, y);
        psi_s(x, y) =
            params.smoothness * 0.5 / std::sqrt(dux * dux + duy * duy + dvx * dvx + dvy * dvy + eps);
      }
    }
    for (int inner = 0; inner < params.inner_iters; ++inner) {
      for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
          double ws_sum = 0.0, nu = 0.0, nv = 0.0;
          auto add = [&](int qx, int qy) {
            if (qx < 0 || qy < 0 || qx >= width || qy >= height) return;
            const double ws = 0.5 * (psi_s(x, y) + psi_s(qx, qy));
            ws_sum += ws;
            nu += ws * du(qx, qy);
            nv += ws * dv(qx, qy);
          };
          add(x - 1, y);
          add(x + 1, y);
          add(x, y - 1);
          add(x, y + 1);
          const double pd = psi_d(x, y), pg = psi_g(x, y);
          const double gx = ix(x, y), gy = iy(x, y);
          const double hxx = ixx(x, y), hxy = ixy(x, y), hyy = iyy(x, y);
          const double a11 = pd * gx * gx + pg * (hxx * hxx + hxy * hxy) + ws_sum;
          const double a12 = pd * gx * gy + pg * (hxx * hxy + hxy * hyy);
          const double a22 = pd * gy * gy + pg * (hxy * hxy + hyy * hyy) + ws_sum;
          const double b1 = -pd * gx * iz(x, y) - pg * (hxx * ixz(x, y) + hxy * iyz(x, y)) + nu;
          const double b2 = -pd * gy * iz(x, y) - pg * (hxy * ixz(x, y) + hyy * iyz(x, y)) + nv;
          const double det = a11 * a22 - a12 * a12;
          if (!(std::abs(det) > 1e-300)) continue;
          const double su = (a22 * b1 - a12 * b2) / det;
          const double sv = (a11 * b2 - a12 * b1) / det;
          du(x, y) += omega * (su - du(x, y));
          dv(x, y) += omega * (sv - dv(x, y));
        }
      }
    }
    for (std::size_t i = 0; i < du.size(); ++i) {
      const double mag = std::hypot(du.data[i], dv.data[i]);
      if (mag > params.max_increment) {
        du.data[i] *= params.max_increment / mag;
        dv.data[i] *= params.max_increment / mag;
      }
    }
  }

  FlowField out(width, height);
  for (std::size_t i = 0; i < du.size(); ++i) {
    out.u_data()[i] = static_cast<float>(u0.data[i] + du.data[i]);
    out.v_data()[i] = static_cast<float>(v0.data[i] + dv.data[i]);
  }
  return out;
}

RegionalCorrespondenceSet build_regional_set_from_flow(const FlowField& initial_flow,
                                                       const Image& i1, const Image& i2,
                                                       const RegionalParams& params) {
  require_same_size(initial_flow, i1, "build_regional_set");
  require_same_size(i1, i2, "build_regional_set");
  params.validate();
  const RegionMap partition = partition_regions(initial_flow, i1, params);
  const RegionMap regions = merge_and_filter(partition, initial_flow, params);

  RegionalCorrespondenceSet set;
  if (regions.region_count == 0) {
    set.maps.push_back(initial_flow);
    set.supports.push_back(Mask(i1.width(), i1.height(), 1));
    if (params.refine_subpixel) set.maps[0] = refine_subpixel(initial_flow, i1, i2);
    return set;
  }
  const Mask near_flat =
      near_flat_area(textureless_pixels(i1, params.texture_threshold), params.flat_margin);
  const MatchingCost cost(i1, i2);
  const std::size_t n = i1.pixel_count();
  const int width = i1.width();
  std::vector<Mask> supports;
  std::vector<FlowField> maps;
  for (int id = 1; id <= regions.region_count; ++id) {
    const Mask region = regions.mask_of(id);
    Mask support = without(region, near_flat);
    if (support.count() == 0) support = region;
    FlowField w = propagate_region(initial_flow, support);
    if (params.refine_subpixel) w = refine_subpixel(w, i1, i2);
    supports.push_back(std::move(support));
    maps.push_back(std::move(w));
  }
  if (!params.refine_subpixel || params.consistency_factor <= 0.0) {
    set.maps = std::move(maps);
    set.supports = std::move(supports);
    return set;
  }

  // Matching cost of every support pixel under its own refined map; the
  // frame-wide median sets the noise level a consistent pixel must meet.
  std::vector<double> costs(n, 0.0);
  std::vector<double> all;
  for (std::size_t r = 0; r < supports.size(); ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!supports[r][i]) continue;
      const int x = static_cast<int>(i % width), y = static_cast<int>(i / width);
      costs[i] = cost(x, y, maps[r].u(x, y), maps[r].v(x, y));
      all.push_back(costs[i]);
    }
  }
  const double limit = params.consistency_factor * median_of(std::move(all));
  std::size_t best = 0;
  double best_fraction = -1.0;
  for (std::size_t r = 0; r < supports.size(); ++r) {
    Mask kept = supports[r];
    for (std::size_t i = 0; i < n; ++i) {
      if (kept[i] && costs[i] > limit) kept[i] = 0;
    }
    const double fraction =
        static_cast<double>(kept.count()) / static_cast<double>(supports[r].count());
    if (fraction > best_fraction) {
      best_fraction = fraction;
      best = r;
    }
    // A region whose own flow explains less than half of it is dropped.
    if (fraction < 0.5) continue;
    set.maps.push_back(propagate_region(maps[r], kept));
    set.supports.push_back(std::move(kept));
  }
  if (set.maps.empty()) {
    set.maps.push_back(propagate_region(maps[best], supports[best]));
    set.supports.push_back(supports[best]);
  }
  return set;
}

RegionalCorrespondenceSet build_regional_set(const Image& i1, const Image& i2,
                                             const RegionalParams& params, const HsParams& hs,
                                             const WmfParams& wmf) {
  const FlowField raw = horn_schunck(i1, i2, hs);
  const FlowField filtered = weighted_median_refine(raw, i1, wmf);
  return build_regional_set_from_flow(filtered, i1, i2, params);
}

}  // namespace corrseg
