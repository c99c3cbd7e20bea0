#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "corrseg/image.hpp"
#include "corrseg/regional.hpp"

namespace corrseg {

/// Axis-aligned displacement box.
struct FlowRange {
  double u_min = 0.0;
  double u_max = 0.0;
  double v_min = 0.0;
  double v_max = 0.0;
};

FlowRange flow_range(const FlowField& flow);
FlowRange flow_range(const RegionalCorrespondenceSet& set);

/// Joint distribution h(w, m) over a 2-D flow grid and the two mask labels.
/// Axis bin 0 and bin (bins + 1) catch displacements outside the range.
struct JointHistogram {
  double bin_px = 2.0;
  double epsilon = 1e-4;
  double u_origin = 0.0;
  double v_origin = 0.0;
  int bins_u = 1;  ///< interior bins along u
  int bins_v = 1;
  std::vector<double> mass;  ///< [(bu * (bins_v + 2) + bv) * 2 + m]

  int axis_bins_u() const { return bins_u + 2; }
  int axis_bins_v() const { return bins_v + 2; }
  std::size_t flow_bin_count() const {
    return static_cast<std::size_t>(axis_bins_u()) * axis_bins_v();
  }
  std::size_t flow_bin(double u, double v) const;
  double prob(double u, double v, int m) const { return mass[flow_bin(u, v) * 2 + m]; }
};

/// Counts (init_flow, init_mask) pairs on a grid spanning `range` (the
/// range of init_flow when null), then mixes in epsilon of uniform mass.
JointHistogram build_joint_histogram(const FlowField& init_flow, const Mask& init_mask,
                                     double bin_px = 2.0, double epsilon = 1e-4,
                                     const FlowRange* range = nullptr);

inline constexpr double kOcclusionCost = 0.5;

/// Brightness plus gradient constancy cost between I1 at p and I2 at p + w,
/// L1 over channels. I2 and its gradients are sampled bilinearly. When the
/// channel counts differ both images are compared in luminance.
class MatchingCost {
 public:
  MatchingCost(const Image& i1, const Image& i2);

  double operator()(int x, int y, double u, double v) const;

 private:
  int width_;
  int height_;
  int channels_;
  std::vector<Image> a_;  ///< value, dx, dy of I1
  std::vector<Image> b_;  ///< value, dx, dy of I2
};

double matching_cost(const Image& i1, const Image& i2, const FlowField& w, Pixel p);

/// 1 - exp(-mu / sigma_c^2).
double unary_correspondence(double mu, double sigma_c);

/// Mixture of diagonal Gaussians.
struct Gmm {
  int dims = 0;
  std::vector<double> weights;
  std::vector<double> means;      ///< [k * dims + d]
  std::vector<double> variances;  ///< [k * dims + d]
  /// Mean log-likelihood per sample, one entry for the initialization and
  /// one per EM iteration.
  std::vector<double> log_likelihood;

  int components() const { return static_cast<int>(weights.size()); }
  double density(std::span<const double> x) const;
  double log_density(std::span<const double> x) const;
};

struct GmmFitOptions {
  int max_iters = 100;
  double tolerance = 1e-5;  ///< relative change of the log-likelihood
  double variance_floor = 1e-4;
};

/// EM from a seeded k-means++ start. `samples` holds samples.size() / dims
/// points. K is reduced to the sample count when there are fewer samples.
Gmm fit_gmm(std::span<const double> samples, int dims, int k, std::uint64_t seed,
            const GmmFitOptions& options = {});

struct GmmColorModel {
  Gmm fg;
  Gmm bg;

  /// C(m) at a color: fg density for m = 1, bg density for m = 0.
  double likelihood(std::span<const double> color, int m) const {
    return m ? fg.density(color) : bg.density(color);
  }
};

/// Fits the fg/bg models on I1 colors split by `mask`. A class without
/// pixels falls back to a model fitted on the whole frame.
GmmColorModel fit_color_model(const Image& i1, const Mask& mask, int k_fg = 6, int k_bg = 4,
                              std::uint64_t seed = 0, const GmmFitOptions& options = {});

/// -log S(m) - log max(C(m), 1e-12).
double unary_segmentation(const ScoreMap& score, const GmmColorModel& gmm, const Image& i1,
                          Pixel p, int m);

struct UnaryParams {
  double alpha1 = 1.5;
  double alpha2 = 1.5;
  double sigma_c = 0.2;

  void validate() const;
};

/// Unary costs over the joint labels (c, m). The segmentation term depends
/// only on m and is stored separately so it can be refreshed on its own.
struct PotentialTable {
  int width = 0;
  int height = 0;
  int labels = 0;                 ///< N
  std::vector<double> corr_cost;  ///< [(p * N + c) * 2 + m]: -log h + alpha1 * psi_c
  std::vector<double> seg_cost;   ///< [p * 2 + m]: alpha2 * psi_m

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  double unary(std::size_t p, int c, int m) const {
    return corr_cost[(p * labels + c) * 2 + m] + seg_cost[p * 2 + m];
  }
};

PotentialTable assemble_unary(const RegionalCorrespondenceSet& rcs, const JointHistogram& hist,
                              const ScoreMap& score, const GmmColorModel& gmm, const Image& i1,
                              const Image& i2, const UnaryParams& params = {});

/// Recomputes the segmentation columns with a new color model.
void refresh_segmentation(PotentialTable& table, const ScoreMap& score, const GmmColorModel& gmm,
                          const Image& i1, const UnaryParams& params = {});

/// Binary dump: "CSPT", int32 width, height, N, then width*height*N*2
/// little-endian float32 unary costs in table order.
void write_potential_table(const std::filesystem::path& path, const PotentialTable& table);
/// Reads a dump back; the whole cost lands in corr_cost, seg_cost is zero.
PotentialTable read_potential_table(const std::filesystem::path& path);

}  // namespace corrseg
