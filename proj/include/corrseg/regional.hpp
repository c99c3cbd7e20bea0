#pragma once

#include <vector>

#include "corrseg/flow_init.hpp"
#include "corrseg/image.hpp"

namespace corrseg {

/// Region label per pixel. Id 0 marks pixels owned by no region (motion
/// boundaries, textureless pixels, discarded outliers); regions are
/// numbered 1..region_count.
struct RegionMap {
  int width = 0;
  int height = 0;
  std::vector<int> ids;
  int region_count = 0;

  RegionMap() = default;
  RegionMap(int w, int h) : width(w), height(h), ids(static_cast<std::size_t>(w) * h, 0) {}

  int& at(int x, int y) { return ids[static_cast<std::size_t>(y) * width + x]; }
  int at(int x, int y) const { return ids[static_cast<std::size_t>(y) * width + x]; }

  Mask mask_of(int id) const;
  std::vector<std::size_t> areas() const;  ///< indexed by id, entry 0 = unowned
};

/// Candidate flow maps. maps[i] is accurate on supports[i] and smoothly
/// extended elsewhere.
struct RegionalCorrespondenceSet {
  std::vector<FlowField> maps;
  std::vector<Mask> supports;

  int size() const { return static_cast<int>(maps.size()); }
};

struct RegionalParams {
  int n_max = 10;
  double boundary_threshold = 1.0;  ///< flow Jacobian norm, px/px
  double merge_threshold = 1.5;     ///< mean-flow distance, px
  double outlier_factor = 4.0;
  double min_region_area = 0.005;   ///< fraction of the frame
  bool refine_subpixel = true;
  /// Guide pixels whose luminance gradient magnitude falls below this are
  /// treated as textureless and left out of region supports.
  double texture_threshold = 0.025;
  /// Support pixels closer than this (px) to a flat area are dropped before
  /// propagation; the flow there inherits the smoothing of the flat area.
  int flat_margin = 6;
  /// Support pixels whose matching cost under the refined flow exceeds this
  /// multiple of the support median are dropped. 0 disables the check.
  double consistency_factor = 2.0;

  void validate() const;
};

/// Finest-scale variational refinement settings.
struct RefineParams {
  int outer_iters = 3;
  int inner_iters = 30;
  double smoothness = 0.05;
  double gradient_weight = 1.0;
  double max_increment = 1.0;  ///< px
};

/// Motion-boundary partition of a flow field into 4-connected regions.
RegionMap partition_regions(const FlowField& flow, const Image& guide,
                            const RegionalParams& params = {});

/// Merges similar neighbours, discards small outliers and caps the region
/// count at n_max - 1.
RegionMap merge_and_filter(const RegionMap& regions, const FlowField& flow,
                           const RegionalParams& params = {});

/// Pull-push extension of `flow` from `support` to the full frame. Support
/// pixels are reproduced exactly.
FlowField propagate_region(const FlowField& flow, const Mask& support);

/// One finest-scale robust variational update of w, limited to sub-pixel
/// corrections.
FlowField refine_subpixel(const FlowField& w, const Image& i1, const Image& i2,
                          const RefineParams& params = {});

/// Candidate set from an already computed initial flow (Horn-Schunck after
/// weighted median filtering).
RegionalCorrespondenceSet build_regional_set_from_flow(const FlowField& initial_flow,
                                                       const Image& i1, const Image& i2,
                                                       const RegionalParams& params = {});

RegionalCorrespondenceSet build_regional_set(const Image& i1, const Image& i2,
                                             const RegionalParams& params = {},
                                             const HsParams& hs = {}, const WmfParams& wmf = {});

/// Pixels whose luminance gradient magnitude is below `threshold`. Empty
/// mask when the whole guide is flat.
Mask textureless_pixels(const Image& guide, double threshold);

/// Pixels within `margin` (chessboard distance) of a flat area, where a flat
/// area is a textureless pixel whose 3x3 neighbourhood is textureless too.
Mask near_flat_area(const Mask& textureless, int margin);

/// Otsu threshold of a set of non-negative values (256-bin histogram).
double otsu_threshold(std::span<const double> values);

}  // namespace corrseg
