#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "corrseg/densecrf.hpp"
#include "corrseg/flow_init.hpp"
#include "corrseg/image.hpp"
#include "corrseg/potentials.hpp"
#include "corrseg/regional.hpp"

namespace corrseg {

/// Raised for malformed configuration; the CLI maps it to a usage error.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Candidate labels for the c axis: the regional set, or K constant maps
/// spread over a displacement box.
struct LabelSpace {
  bool uniform = false;
  int k = 0;

  static LabelSpace parse(const std::string& text);
  std::string to_string() const;
};

struct PipelineConfig {
  HsParams hs;
  WmfParams wmf;
  RegionalParams regional;
  UnaryParams unary;
  CrfConfig crf;
  double hist_bin_px = 2.0;
  double hist_epsilon = 1e-4;
  int gmm_fg_components = 6;
  int gmm_bg_components = 4;
  LabelSpace label_space;
  /// Uniform labels cover [-r, r]^2; 0 takes the box of the initial flow.
  double uniform_radius = 0.0;
  /// Flow visualization scale; 0 takes the 99th-percentile magnitude.
  double max_flow = 0.0;
  /// Blur applied when a rough mask stands in for the score map.
  double mask_score_sigma = 5.0;
  std::uint64_t seed = 0;

  std::filesystem::path i1;
  std::filesystem::path i2;
  std::filesystem::path score;
  std::filesystem::path mask;
  std::filesystem::path out;

  /// Applies one key=value pair; throws ConfigError for unknown keys or
  /// unparsable values.
  void set(const std::string& key, const std::string& value);
  /// Flat key=value lines; '#' starts a comment.
  static PipelineConfig from_text(const std::string& text);
  static PipelineConfig load(const std::filesystem::path& path);
  std::string to_text() const;
  void validate() const;
};

/// K constant maps on a ceil(sqrt K) x ceil(sqrt K) lattice over `box`,
/// truncated to the first K in row-major order.
RegionalCorrespondenceSet uniform_label_set(int width, int height, const FlowRange& box, int k);

struct StageTime {
  std::string name;
  double seconds = 0.0;
};

struct RefineResult {
  FlowField initial_flow;  ///< Horn-Schunck after weighted median
  Mask initial_mask;       ///< thresholded score map
  RegionalCorrespondenceSet labels;
  int region_count = 0;  ///< regions behind the regional set; 0 for uniform
  PotentialTable potentials;  ///< after the segmentation refresh
  InferenceResult inference;
  std::vector<StageTime> stages;
  double total_seconds = 0.0;
};

/// Initial flow, candidate set, potentials and alternating inference.
RefineResult run_refine(const Image& i1, const Image& i2, const ScoreMap& score,
                        const PipelineConfig& cfg);

/// Score map from cfg.score, else from the blurred cfg.mask. Throws
/// ConfigError when neither is given.
ScoreMap load_score(const PipelineConfig& cfg);

std::string refine_report(const RefineResult& result, const PipelineConfig& cfg);

/// Middlebury color wheel: hue from direction, saturation from magnitude
/// over `max_flow`. max_flow <= 0 uses the 99th-percentile magnitude.
Image flow_to_color(const FlowField& flow, double max_flow = 0.0);

/// Foreground tinted red, background darkened.
Image mask_overlay(const Image& i1, const Mask& mask);

/// Writes flow.flo, mask.png, flow.png, overlay.png and report.txt.
void write_refine_outputs(const std::filesystem::path& dir, const Image& i1,
                          const RefineResult& result, const PipelineConfig& cfg);

}  // namespace corrseg
