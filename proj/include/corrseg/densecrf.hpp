#pragma once

#include <functional>
#include <vector>

#include "corrseg/image.hpp"
#include "corrseg/potentials.hpp"
#include "corrseg/regional.hpp"

namespace corrseg {

enum class CrfMode { exact, fast };
enum class Schedule { sequential, parallel };

struct CrfConfig {
  double beta1 = 3.0;
  double beta2 = 3.0;
  double beta3 = 3.0;
  double sigma_s = 15.0;
  double sigma_r = 0.2;
  int meanfield_iters_per_block = 5;
  int alternations = 3;
  CrfMode mode = CrfMode::fast;
  /// Use g instead of g^2 in the joint c/m term.
  bool joint_term_single_g = false;
  /// Sweep order in exact mode. Fast mode always sweeps in parallel.
  Schedule exact_schedule = Schedule::sequential;
  /// Step size of parallel sweeps: Q <- (1 - d) Q + d softmax(-cost).
  double damping = 0.5;
  /// Bilateral grid cells per sigma along each axis (fast mode).
  double grid_resolution = 2.0;

  void validate() const;
};

struct JointLabel {
  int c = 0;
  int m = 0;
};

/// Hard labels per pixel.
struct Labeling {
  int width = 0;
  int height = 0;
  std::vector<int> c;
  std::vector<int> m;

  Labeling() = default;
  Labeling(int w, int h)
      : width(w), height(h), c(static_cast<std::size_t>(w) * h, 0),
        m(static_cast<std::size_t>(w) * h, 0) {}
  std::size_t pixel_count() const { return c.size(); }
};

/// exp(-|p - q|^2 / sigma_s^2 - |I1(p) - I1(q)|^2 / sigma_r^2), color norm over
/// all channels.
double bilateral_weight(Pixel p, Pixel q, const Image& i1, double sigma_s, double sigma_r);

double pairwise_energy(JointLabel zp, JointLabel zq, double g, const CrfConfig& cfg);

/// Unary plus pairwise energy over all ordered pixel pairs; O(n^2).
double energy(const Labeling& z, const PotentialTable& table, const Image& i1,
              const CrfConfig& cfg);

/// The same energy with the pairwise sums taken through the bilateral grid.
double approximate_energy(const Labeling& z, const PotentialTable& table, const Image& i1,
                          const CrfConfig& cfg);

struct MeanFieldState {
  int width = 0;
  int height = 0;
  int labels = 0;
  std::vector<double> qc;  ///< [p * labels + l]
  std::vector<double> qm;  ///< [p * 2 + m]
  int t = 0;

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

  /// Marginals of the per-pixel joint softmax of -unary.
  static MeanFieldState from_unary(const PotentialTable& table);
  bool normalized(double tolerance = 1e-9) const;
};

enum class Block { c, m };

/// Mean-field free energy with the same ordered-pair convention as energy():
/// sum E_Q[unary] + sum_{p != q} E_Q[pairwise] + sum Q log Q. Evaluated with
/// exact sums in exact mode and through the bilateral grid in fast mode.
double free_energy(const MeanFieldState& state, const PotentialTable& table, const Image& i1,
                   const CrfConfig& cfg);

/// Exact coordinate update of one pixel's block distribution.
void update_pixel(MeanFieldState& state, Block block, std::size_t p, const PotentialTable& table,
                  const Image& i1, const CrfConfig& cfg);

/// One sweep over all pixels, schedule and message path chosen by cfg.
void meanfield_sweep(MeanFieldState& state, Block block, const PotentialTable& table,
                     const Image& i1, const CrfConfig& cfg);

/// meanfield_iters_per_block sweeps with the other block held fixed.
void meanfield_block_update(MeanFieldState& state, Block block, const PotentialTable& table,
                            const Image& i1, const CrfConfig& cfg);

/// Per-pixel argmax; ties go to the lowest label index.
Labeling argmax_labels(const MeanFieldState& state);

FlowField select_flow(const RegionalCorrespondenceSet& set, const Labeling& z);
Mask labeling_mask(const Labeling& z);

struct InferenceResult {
  Labeling labels;
  Mask mask;
  FlowField flow;  ///< empty when no candidate set was given
  MeanFieldState state;
  std::vector<double> energies;  ///< hard-label energy after each alternation
};

/// Called once after the first alternation with the current mask; may
/// rewrite the table (segmentation refresh).
using RefreshHook = std::function<void(const Mask&, PotentialTable&)>;

InferenceResult alternate(PotentialTable& table, const Image& i1, const CrfConfig& cfg,
                          const MeanFieldState& init, const RegionalCorrespondenceSet* set = nullptr,
                          const RefreshHook& hook = {});

}  // namespace corrseg
