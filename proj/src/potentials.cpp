#include "corrseg/potentials.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "binary_io.hpp"

namespace corrseg {

namespace {

constexpr double kLikelihoodFloor = 1e-12;
constexpr double kLog2Pi = 1.8378770664093453;
// Larger classes are subsampled on a fixed stride before EM.
constexpr std::size_t kMaxGmmSamples = 65536;

int axis_bin(double value, double origin, double bin_px, int bins) {
  if (value < origin) return 0;
  const double t = (value - origin) / bin_px;
  if (t >= bins) return value <= origin + bins * bin_px ? bins : bins + 1;
  return 1 + static_cast<int>(std::floor(t));
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void include(FlowRange& r, double u, double v) {
  r.u_min = std::min(r.u_min, u);
  r.u_max = std::max(r.u_max, u);
  r.v_min = std::min(r.v_min, v);
  r.v_max = std::max(r.v_max, v);
}

FlowRange empty_range() {
  constexpr double inf = std::numeric_limits<double>::infinity();
  return {inf, -inf, inf, -inf};
}

Image with_channels(const Image& image, int channels) {
  return image.channels() == channels ? image : luminance(image);
}

// Per-channel central differences with replicate padding.
void channel_gradients(const Image& in, Image& gx, Image& gy) {
  gx = Image(in.width(), in.height(), in.channels());
  gy = Image(in.width(), in.height(), in.channels());
  for (int y = 0; y < in.height(); ++y) {
    for (int x = 0; x < in.width(); ++x) {
      for (int c = 0; c < in.channels(); ++c) {
        gx.at(x, y, c) = 0.5f * (in.at_clamped(x + 1, y, c) - in.at_clamped(x - 1, y, c));
        gy.at(x, y, c) = 0.5f * (in.at_clamped(x, y + 1, c) - in.at_clamped(x, y - 1, c));
      }
    }
  }
}

std::vector<double> pixel_color(const Image& image, int x, int y) {
  std::vector<double> color(image.channels());
  for (int c = 0; c < image.channels(); ++c) color[c] = image.at(x, y, c);
  return color;
}

}  // namespace

FlowRange flow_range(const FlowField& flow) {
  FlowRange r = empty_range();
  for (std::size_t i = 0; i < flow.pixel_count(); ++i) include(r, flow.u_data()[i], flow.v_data()[i]);
  return r;
}

FlowRange flow_range(const RegionalCorrespondenceSet& set) {
  if (set.maps.empty()) throw ContractError("flow_range: empty correspondence set");
  FlowRange r = empty_range();
  for (const FlowField& map : set.maps) {
    const FlowRange m = flow_range(map);
    include(r, m.u_min, m.v_min);
    include(r, m.u_max, m.v_max);
  }
  return r;
}

std::size_t JointHistogram::flow_bin(double u, double v) const {
  const int bu = axis_bin(u, u_origin, bin_px, bins_u);
  const int bv = axis_bin(v, v_origin, bin_px, bins_v);
  return static_cast<std::size_t>(bu) * axis_bins_v() + bv;
}

JointHistogram build_joint_histogram(const FlowField& init_flow, const Mask& init_mask,
                                     double bin_px, double epsilon, const FlowRange* range) {
  require_same_size(init_flow, init_mask, "build_joint_histogram");
  if (!(bin_px > 0.0)) throw ContractError("histogram bin width must be positive");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ContractError("histogram epsilon must be in (0,1)");
  const FlowRange r = range ? *range : flow_range(init_flow);

  JointHistogram h;
  h.bin_px = bin_px;
  h.epsilon = epsilon;
  h.u_origin = r.u_min;
  h.v_origin = r.v_min;
  h.bins_u = std::max(1, static_cast<int>(std::ceil((r.u_max - r.u_min) / bin_px)));
  h.bins_v = std::max(1, static_cast<int>(std::ceil((r.v_max - r.v_min) / bin_px)));
  const std::size_t cells = h.flow_bin_count() * 2;
  std::vector<double> counts(cells, 0.0);
  for (std::size_t i = 0; i < init_flow.pixel_count(); ++i) {
    counts[h.flow_bin(init_flow.u_data()[i], init_flow.v_data()[i]) * 2 + init_mask[i]] += 1.0;
  }
  const double total = static_cast<double>(init_flow.pixel_count());
  h.mass.resize(cells);
  for (std::size_t i = 0; i < cells; ++i) {
    h.mass[i] = (1.0 - epsilon) * counts[i] / total + epsilon / static_cast<double>(cells);
  }
  return h;
}

MatchingCost::MatchingCost(const Image& i1, const Image& i2)
    : width_(i1.width()), height_(i1.height()) {
  require_same_size(i1, i2, "matching_cost");
  channels_ = i1.channels() == i2.channels() ? i1.channels() : 1;
  a_.resize(3);
  b_.resize(3);
  a_[0] = with_channels(i1, channels_);
  b_[0] = with_channels(i2, channels_);
  channel_gradients(a_[0], a_[1], a_[2]);
  channel_gradients(b_[0], b_[1], b_[2]);
}

double MatchingCost::operator()(int x, int y, double u, double v) const {
  const double tx = x + u;
  const double ty = y + v;
  if (!(tx >= 0.0 && ty >= 0.0 && tx <= width_ - 1 && ty <= height_ - 1)) return kOcclusionCost;
  double cost = 0.0;
  for (int k = 0; k < 3; ++k) {
    for (int c = 0; c < channels_; ++c) {
      cost += std::abs(static_cast<double>(a_[k].at(x, y, c)) - sample_bilinear(b_[k], tx, ty, c));
    }
  }
  return cost;
}

double matching_cost(const Image& i1, const Image& i2, const FlowField& w, Pixel p) {
  require_same_size(i1, w, "matching_cost");
  const MatchingCost cost(i1, i2);
  return cost(p.x, p.y, w.u(p.x, p.y), w.v(p.x, p.y));
}

double unary_correspondence(double mu, double sigma_c) {
  if (!(mu >= 0.0)) throw ContractError("matching cost must be nonnegative");
  return 1.0 - std::exp(-mu / (sigma_c * sigma_c));
}

double Gmm::log_density(std::span<const double> x) const {
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(weights.size(), best);
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (weights[k] <= 0.0) continue;
    double acc = std::log(weights[k]) - 0.5 * dims * kLog2Pi;
    for (int d = 0; d < dims; ++d) {
      const double var = variances[k * dims + d];
      const double diff = x[d] - means[k * dims + d];
      acc -= 0.5 * (std::log(var) + diff * diff / var);
    }
    terms[k] = acc;
    best = std::max(best, acc);
  }
  if (!std::isfinite(best)) return best;
  double sum = 0.0;
  for (double t : terms) sum += std::exp(t - best);
  return best + std::log(sum);
}

double Gmm::density(std::span<const double> x) const { return std::exp(log_density(x)); }

Gmm fit_gmm(std::span<const double> samples, int dims, int k, std::uint64_t seed,
            const GmmFitOptions& options) {
  if (dims < 1 || samples.size() % dims != 0) throw ContractError("fit_gmm: bad sample layout");
  const std::size_t n = samples.size() / dims;
  if (n == 0) throw ContractError("fit_gmm: no samples");
  if (k < 1) throw ContractError("fit_gmm: K must be >= 1");
  k = static_cast<int>(std::min<std::size_t>(k, n));
  auto sample = [&](std::size_t i) { return samples.subspan(i * dims, dims); };
  auto dist2 = [&](std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (int d = 0; d < dims; ++d) acc += (a[d] - b[d]) * (a[d] - b[d]);
    return acc;
  };

  // k-means++ seeding.
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> centers{static_cast<std::size_t>(uniform01(rng) * n)};
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], dist2(sample(i), sample(centers.back())));
      total += nearest[i];
    }
    std::size_t pick = centers.front();
    if (total > 0.0) {
      const double target = uniform01(rng) * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += nearest[i];
        if (acc > target) {
          pick = i;
          break;
        }
      }
    }
    centers.push_back(pick);
  }

  std::vector<double> global_mean(dims, 0.0), global_var(dims, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (int d = 0; d < dims; ++d) global_mean[d] += sample(i)[d];
  }
  for (double& m : global_mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int d = 0; d < dims; ++d) {
      const double diff = sample(i)[d] - global_mean[d];
      global_var[d] += diff * diff;
    }
  }

  Gmm gmm;
  gmm.dims = dims;
  gmm.weights.assign(k, 1.0 / k);
  gmm.means.resize(static_cast<std::size_t>(k) * dims);
  gmm.variances.resize(static_cast<std::size_t>(k) * dims);
  for (int j = 0; j < k; ++j) {
    for (int d = 0; d < dims; ++d) {
      gmm.means[j * dims + d] = sample(centers[j])[d];
      gmm.variances[j * dims + d] =
          std::max(global_var[d] / static_cast<double>(n), options.variance_floor);
    }
  }

  std::vector<double> resp(n * k);
  auto e_step = [&]() {
    double ll = 0.0;
    std::vector<double> logp(k);
    for (std::size_t i = 0; i < n; ++i) {
      const auto x = sample(i);
      double best = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < k; ++j) {
        if (gmm.weights[j] <= 0.0) {
          logp[j] = -std::numeric_limits<double>::infinity();
          continue;
        }
        double acc = std::log(gmm.weights[j]) - 0.5 * dims * kLog2Pi;
        for (int d = 0; d < dims; ++d) {
          const double var = gmm.variances[j * dims + d];
          const double diff = x[d] - gmm.means[j * dims + d];
          acc -= 0.5 * (std::log(var) + diff * diff / var);
        }
        logp[j] = acc;
        best = std::max(best, acc);
      }
      double sum = 0.0;
      for (int j = 0; j < k; ++j) sum += std::exp(logp[j] - best);
      const double log_norm = best + std::log(sum);
      for (int j = 0; j < k; ++j) resp[i * k + j] = std::exp(logp[j] - log_norm);
      ll += log_norm;
    }
    return ll / static_cast<double>(n);
  };
  auto m_step = [&]() {
    for (int j = 0; j < k; ++j) {
      double nk = 0.0;
      for (std::size_t i = 0; i < n; ++i) nk += resp[i * k + j];
      gmm.weights[j] = nk / static_cast<double>(n);
      if (nk <= 0.0) continue;  // keep the old parameters of an empty component
      for (int d = 0; d < dims; ++d) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += resp[i * k + j] * sample(i)[d];
        mean /= nk;
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double diff = sample(i)[d] - mean;
          var += resp[i * k + j] * diff * diff;
        }
        gmm.means[j * dims + d] = mean;
        gmm.variances[j * dims + d] = std::max(var / nk, options.variance_floor);
      }
    }
  };

  gmm.log_likelihood.push_back(e_step());
  for (int iter = 0; iter < options.max_iters; ++iter) {
    m_step();
    const double prev = gmm.log_likelihood.back();
    const double ll = e_step();
    gmm.log_likelihood.push_back(ll);
    if (std::abs(ll - prev) <= options.tolerance * std::max(std::abs(prev), 1e-12)) break;
  }
  return gmm;
}

GmmColorModel fit_color_model(const Image& i1, const Mask& mask, int k_fg, int k_bg,
                              std::uint64_t seed, const GmmFitOptions& options) {
  require_same_size(i1, mask, "fit_color_model");
  const int dims = i1.channels();
  auto gather = [&](int label) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < mask.pixel_count(); ++i) {
      if (label < 0 || mask[i] == label) idx.push_back(i);
    }
    const std::size_t stride = std::max<std::size_t>(1, (idx.size() + kMaxGmmSamples - 1) / kMaxGmmSamples);
    std::vector<double> out;
    for (std::size_t j = 0; j < idx.size(); j += stride) {
      for (int c = 0; c < dims; ++c) out.push_back(i1.data()[idx[j] * dims + c]);
    }
    return out;
  };
  auto fit = [&](int label, int k, std::uint64_t s) {
    std::vector<double> samples = gather(label);
    if (samples.empty()) samples = gather(-1);
    return fit_gmm(samples, dims, k, s, options);
  };
  GmmColorModel model;
  model.fg = fit(1, k_fg, seed);
  model.bg = fit(0, k_bg, seed + 1);
  return model;
}

double unary_segmentation(const ScoreMap& score, const GmmColorModel& gmm, const Image& i1,
                          Pixel p, int m) {
  const double s_fg = std::clamp(static_cast<double>(score.at(p.x, p.y)),
                                 static_cast<double>(kProbEpsilon), 1.0 - kProbEpsilon);
  const double s = m ? s_fg : 1.0 - s_fg;
  const std::vector<double> color = pixel_color(i1, p.x, p.y);
  const double c = std::max(gmm.likelihood(color, m), kLikelihoodFloor);
  return -std::log(s) - std::log(c);
}

void UnaryParams::validate() const {
  if (!(alpha1 > 0.0) || !(alpha2 > 0.0) || !(sigma_c > 0.0)) {
    throw ContractError("unary weights and sigma_c must be positive");
  }
}

void refresh_segmentation(PotentialTable& table, const ScoreMap& score, const GmmColorModel& gmm,
                          const Image& i1, const UnaryParams& params) {
  if (score.width() != table.width || score.height() != table.height) {
    throw ContractError("refresh_segmentation: dimension mismatch");
  }
  require_same_size(score, i1, "refresh_segmentation");
  table.seg_cost.assign(table.pixel_count() * 2, 0.0);
  for (int y = 0; y < table.height; ++y) {
    for (int x = 0; x < table.width; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * table.width + x;
      for (int m = 0; m < 2; ++m) {
        table.seg_cost[p * 2 + m] = params.alpha2 * unary_segmentation(score, gmm, i1, {x, y}, m);
      }
    }
  }
}

PotentialTable assemble_unary(const RegionalCorrespondenceSet& rcs, const JointHistogram& hist,
                              const ScoreMap& score, const GmmColorModel& gmm, const Image& i1,
                              const Image& i2, const UnaryParams& params) {
  params.validate();
  if (rcs.size() < 1) throw ContractError("assemble_unary: empty correspondence set");
  require_same_size(i1, i2, "assemble_unary");
  require_same_size(i1, score, "assemble_unary");
  for (const FlowField& map : rcs.maps) require_same_size(i1, map, "assemble_unary");

  PotentialTable table;
  table.width = i1.width();
  table.height = i1.height();
  table.labels = rcs.size();
  table.corr_cost.resize(table.pixel_count() * table.labels * 2);
  const MatchingCost cost(i1, i2);
  for (int y = 0; y < table.height; ++y) {
    for (int x = 0; x < table.width; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * table.width + x;
      for (int c = 0; c < table.labels; ++c) {
        const double u = rcs.maps[c].u(x, y);
        const double v = rcs.maps[c].v(x, y);
        const double psi_c = unary_correspondence(cost(x, y, u, v), params.sigma_c);
        for (int m = 0; m < 2; ++m) {
          table.corr_cost[(p * table.labels + c) * 2 + m] =
              -std::log(hist.prob(u, v, m)) + params.alpha1 * psi_c;
        }
      }
    }
  }
  refresh_segmentation(table, score, gmm, i1, params);
  return table;
}

void write_potential_table(const std::filesystem::path& path, const PotentialTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write("CSPT", 4);
  detail::put_le<std::int32_t>(out, table.width);
  detail::put_le<std::int32_t>(out, table.height);
  detail::put_le<std::int32_t>(out, table.labels);
  for (std::size_t p = 0; p < table.pixel_count(); ++p) {
    for (int c = 0; c < table.labels; ++c) {
      for (int m = 0; m < 2; ++m) detail::put_le<float>(out, static_cast<float>(table.unary(p, c, m)));
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

PotentialTable read_potential_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::string(bytes.data(), 4) != "CSPT") {
    throw FormatError(path.string() + ": not a potential table dump");
  }
  PotentialTable table;
  table.width = detail::get_le<std::int32_t>(bytes.data() + 4);
  table.height = detail::get_le<std::int32_t>(bytes.data() + 8);
  table.labels = detail::get_le<std::int32_t>(bytes.data() + 12);
  if (table.width <= 0 || table.height <= 0 || table.labels <= 0) {
    throw FormatError(path.string() + ": invalid table dimensions");
  }
  const std::size_t count = table.pixel_count() * table.labels * 2;
  if (bytes.size() < 16 + count * 4) throw FormatError(path.string() + ": truncated table");
  table.corr_cost.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    table.corr_cost[i] = detail::get_le<float>(bytes.data() + 16 + i * 4);
  }
  table.seg_cost.assign(table.pixel_count() * 2, 0.0);
  return table;
}

}  // namespace corrseg
