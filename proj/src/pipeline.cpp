#include "corrseg/pipeline.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>

namespace corrseg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("invalid number for '" + key + "': " + v);
  }
  return out;
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("invalid integer for '" + key + "': " + v);
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("invalid boolean for '" + key + "': " + v);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

using Setter = std::function<void(PipelineConfig&, const std::string& key, const std::string&)>;
using Getter = std::function<std::string(const PipelineConfig&)>;

struct Field {
  Setter set;
  Getter get;
};

template <typename T>
Field real(T PipelineConfig::*group, double T::*member) {
  return {[=](PipelineConfig& c, const std::string& k, const std::string& v) {
            (c.*group).*member = parse_double(k, v);
          },
          [=](const PipelineConfig& c) { return fmt((c.*group).*member); }};
}

template <typename T>
Field integer(T PipelineConfig::*group, int T::*member) {
  return {[=](PipelineConfig& c, const std::string& k, const std::string& v) {
            (c.*group).*member = static_cast<int>(parse_int(k, v));
          },
          [=](const PipelineConfig& c) { return std::to_string((c.*group).*member); }};
}

template <typename T>
Field boolean(T PipelineConfig::*group, bool T::*member) {
  return {[=](PipelineConfig& c, const std::string& k, const std::string& v) {
            (c.*group).*member = parse_bool(k, v);
          },
          [=](const PipelineConfig& c) { return std::string((c.*group).*member ? "true" : "false"); }};
}

Field top_real(double PipelineConfig::*member) {
  return {[=](PipelineConfig& c, const std::string& k, const std::string& v) {
            c.*member = parse_double(k, v);
          },
          [=](const PipelineConfig& c) { return fmt(c.*member); }};
}

Field top_int(int PipelineConfig::*member) {
  return {[=](PipelineConfig& c, const std::string& k, const std::string& v) {
            c.*member = static_cast<int>(parse_int(k, v));
          },
          [=](const PipelineConfig& c) { return std::to_string(c.*member); }};
}

Field path(std::filesystem::path PipelineConfig::*member) {
  return {[=](PipelineConfig& c, const std::string&, const std::string& v) { c.*member = v; },
          [=](const PipelineConfig& c) { return (c.*member).string(); }};
}

const std::map<std::string, Field>& fields() {
  using C = PipelineConfig;
  static const std::map<std::string, Field> table = {
      {"hs_alpha", real(&C::hs, &HsParams::smoothness_alpha)},
      {"hs_levels", integer(&C::hs, &HsParams::pyramid_levels)},
      {"hs_warps", integer(&C::hs, &HsParams::warp_iters_per_level)},
      {"hs_solver_iters", integer(&C::hs, &HsParams::solver_iters)},
      {"hs_solver_tolerance", real(&C::hs, &HsParams::solver_tolerance)},
      {"wmf_radius", integer(&C::wmf, &WmfParams::radius)},
      {"wmf_sigma_spatial", real(&C::wmf, &WmfParams::sigma_spatial)},
      {"wmf_sigma_range", real(&C::wmf, &WmfParams::sigma_range)},
      {"n_max", integer(&C::regional, &RegionalParams::n_max)},
      {"boundary_threshold", real(&C::regional, &RegionalParams::boundary_threshold)},
      {"merge_threshold", real(&C::regional, &RegionalParams::merge_threshold)},
      {"outlier_factor", real(&C::regional, &RegionalParams::outlier_factor)},
      {"min_region_area", real(&C::regional, &RegionalParams::min_region_area)},
      {"refine_subpixel", boolean(&C::regional, &RegionalParams::refine_subpixel)},
      {"texture_threshold", real(&C::regional, &RegionalParams::texture_threshold)},
      {"flat_margin", integer(&C::regional, &RegionalParams::flat_margin)},
      {"consistency_factor", real(&C::regional, &RegionalParams::consistency_factor)},
      {"alpha1", real(&C::unary, &UnaryParams::alpha1)},
      {"alpha2", real(&C::unary, &UnaryParams::alpha2)},
      {"sigma_c", real(&C::unary, &UnaryParams::sigma_c)},
      {"beta1", real(&C::crf, &CrfConfig::beta1)},
      {"beta2", real(&C::crf, &CrfConfig::beta2)},
      {"beta3", real(&C::crf, &CrfConfig::beta3)},
      {"sigma_s", real(&C::crf, &CrfConfig::sigma_s)},
      {"sigma_r", real(&C::crf, &CrfConfig::sigma_r)},
      {"meanfield_iters", integer(&C::crf, &CrfConfig::meanfield_iters_per_block)},
      {"alternations", integer(&C::crf, &CrfConfig::alternations)},
      {"joint_term_single_g", boolean(&C::crf, &CrfConfig::joint_term_single_g)},
      {"damping", real(&C::crf, &CrfConfig::damping)},
      {"grid_resolution", real(&C::crf, &CrfConfig::grid_resolution)},
      {"mode",
       {[](C& c, const std::string& k, const std::string& v) {
          if (v == "exact") c.crf.mode = CrfMode::exact;
          else if (v == "fast") c.crf.mode = CrfMode::fast;
          else throw ConfigError("invalid value for '" + k + "': " + v);
        },
        [](const C& c) { return std::string(c.crf.mode == CrfMode::exact ? "exact" : "fast"); }}},
      {"exact_schedule",
       {[](C& c, const std::string& k, const std::string& v) {
          if (v == "sequential") c.crf.exact_schedule = Schedule::sequential;
          else if (v == "parallel") c.crf.exact_schedule = Schedule::parallel;
          else throw ConfigError("invalid value for '" + k + "': " + v);
        },
        [](const C& c) {
          return std::string(c.crf.exact_schedule == Schedule::sequential ? "sequential"
                                                                          : "parallel");
        }}},
      {"hist_bin_px", top_real(&C::hist_bin_px)},
      {"hist_epsilon", top_real(&C::hist_epsilon)},
      {"gmm_fg_components", top_int(&C::gmm_fg_components)},
      {"gmm_bg_components", top_int(&C::gmm_bg_components)},
      {"uniform_radius", top_real(&C::uniform_radius)},
      {"max_flow", top_real(&C::max_flow)},
      {"mask_score_sigma", top_real(&C::mask_score_sigma)},
      {"label_space",
       {[](C& c, const std::string&, const std::string& v) { c.label_space = LabelSpace::parse(v); },
        [](const C& c) { return c.label_space.to_string(); }}},
      {"seed",
       {[](C& c, const std::string& k, const std::string& v) {
          const long long s = parse_int(k, v);
          if (s < 0) throw ConfigError("seed must be nonnegative");
          c.seed = static_cast<std::uint64_t>(s);
        },
        [](const C& c) { return std::to_string(c.seed); }}},
      {"i1", path(&C::i1)},
      {"i2", path(&C::i2)},
      {"score", path(&C::score)},
      {"mask", path(&C::mask)},
      {"out", path(&C::out)},
  };
  return table;
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

LabelSpace LabelSpace::parse(const std::string& text) {
  if (text == "regional") return {};
  const std::string prefix = "uniform:";
  if (text.rfind(prefix, 0) == 0) {
    const long long k = parse_int("label_space", text.substr(prefix.size()));
    if (k < 1 || k > 4096) throw ConfigError("uniform label count must be in [1, 4096]");
    return {true, static_cast<int>(k)};
  }
  throw ConfigError("label_space must be 'regional' or 'uniform:K', got '" + text + "'");
}

std::string LabelSpace::to_string() const {
  return uniform ? "uniform:" + std::to_string(k) : "regional";
}

void PipelineConfig::set(const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(*this, key, value);
}

PipelineConfig PipelineConfig::from_text(const std::string& text) {
  PipelineConfig cfg;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(number) + ": expected key=value");
    }
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

std::string PipelineConfig::to_text() const {
  std::string out;
  for (const auto& [key, field] : fields()) {
    const std::string v = field.get(*this);
    if (v.empty()) continue;
    out += key + "=" + v + "\n";
  }
  return out;
}

void PipelineConfig::validate() const {
  try {
    hs.validate();
    wmf.validate();
    regional.validate();
    unary.validate();
    crf.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  if (!(hist_bin_px > 0.0) || !(hist_epsilon > 0.0 && hist_epsilon < 1.0)) {
    throw ConfigError("histogram bin width must be > 0 and epsilon in (0,1)");
  }
  if (gmm_fg_components < 1 || gmm_bg_components < 1) {
    throw ConfigError("GMM component counts must be >= 1");
  }
  if (uniform_radius < 0.0 || max_flow < 0.0 || !(mask_score_sigma > 0.0)) {
    throw ConfigError("uniform_radius and max_flow must be >= 0, mask_score_sigma > 0");
  }
}

RegionalCorrespondenceSet uniform_label_set(int width, int height, const FlowRange& box, int k) {
  if (k < 1) throw ContractError("uniform label count must be >= 1");
  const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(k))));
  auto coord = [side](double lo, double hi, int i) {
    return side == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * i / (side - 1);
  };
  RegionalCorrespondenceSet set;
  for (int j = 0; j < side && set.size() < k; ++j) {
    for (int i = 0; i < side && set.size() < k; ++i) {
      set.maps.emplace_back(width, height, static_cast<float>(coord(box.u_min, box.u_max, i)),
                            static_cast<float>(coord(box.v_min, box.v_max, j)));
      set.supports.emplace_back(width, height, std::uint8_t{1});
    }
  }
  return set;
}

ScoreMap load_score(const PipelineConfig& cfg) {
  if (!cfg.score.empty()) return read_score_map(cfg.score);
  if (!cfg.mask.empty()) return score_from_mask(load_mask(cfg.mask), cfg.mask_score_sigma);
  throw ConfigError("either a score map (score=) or a rough mask (mask=) is required");
}

RefineResult run_refine(const Image& i1, const Image& i2, const ScoreMap& score,
                        const PipelineConfig& cfg) {
  cfg.validate();
  require_same_size(i1, i2, "refine");
  require_same_size(i1, score, "refine");
  RefineResult r;
  const auto start = Clock::now();
  auto stage = [&r](const char* name, Clock::time_point t0) {
    r.stages.push_back({name, seconds_since(t0)});
  };

  auto t0 = Clock::now();
  r.initial_flow = weighted_median_refine(horn_schunck(i1, i2, cfg.hs), i1, cfg.wmf);
  r.initial_mask = threshold_score(score);
  stage("flow_init", t0);

  t0 = Clock::now();
  if (cfg.label_space.uniform) {
    FlowRange box{-cfg.uniform_radius, cfg.uniform_radius, -cfg.uniform_radius,
                  cfg.uniform_radius};
    if (cfg.uniform_radius == 0.0) box = flow_range(r.initial_flow);
    r.labels = uniform_label_set(i1.width(), i1.height(), box, cfg.label_space.k);
  } else {
    r.labels = build_regional_set_from_flow(r.initial_flow, i1, i2, cfg.regional);
    r.region_count = r.labels.size();
  }
  stage("labels", t0);

  t0 = Clock::now();
  const FlowRange range = flow_range(r.labels);
  const JointHistogram hist =
      build_joint_histogram(r.initial_flow, r.initial_mask, cfg.hist_bin_px, cfg.hist_epsilon, &range);
  const GmmColorModel gmm = fit_color_model(i1, r.initial_mask, cfg.gmm_fg_components,
                                            cfg.gmm_bg_components, cfg.seed);
  PotentialTable table = assemble_unary(r.labels, hist, score, gmm, i1, i2, cfg.unary);
  stage("potentials", t0);

  t0 = Clock::now();
  const RefreshHook refresh = [&](const Mask& mask, PotentialTable& t) {
    const GmmColorModel refit = fit_color_model(i1, mask, cfg.gmm_fg_components,
                                                cfg.gmm_bg_components, cfg.seed);
    refresh_segmentation(t, score, refit, i1, cfg.unary);
  };
  r.inference = alternate(table, i1, cfg.crf, MeanFieldState::from_unary(table), &r.labels, refresh);
  stage("inference", t0);
  r.potentials = std::move(table);
  r.total_seconds = seconds_since(start);
  return r;
}

std::string refine_report(const RefineResult& result, const PipelineConfig& cfg) {
  std::ostringstream os;
  os.precision(6);
  os << "label_space " << cfg.label_space.to_string() << "\n";
  os << "mode " << (cfg.crf.mode == CrfMode::exact ? "exact" : "fast") << "\n";
  os << "labels " << result.labels.size() << "\n";
  os << "regions " << result.region_count << "\n";
  for (std::size_t i = 0; i < result.inference.energies.size(); ++i) {
    os << "energy " << i + 1 << " " << result.inference.energies[i] << "\n";
  }
  for (const StageTime& s : result.stages) os << "time " << s.name << " " << s.seconds << "\n";
  os << "time total " << result.total_seconds << "\n";
  os << "foreground_pixels " << result.inference.mask.count() << "\n";
  return os.str();
}

namespace {

// Middlebury color wheel.
std::vector<std::array<double, 3>> color_wheel() {
  const int ry = 15, yg = 6, gc = 4, cb = 11, bm = 13, mr = 6;
  std::vector<std::array<double, 3>> wheel;
  for (int i = 0; i < ry; ++i) wheel.push_back({255.0, 255.0 * i / ry, 0.0});
  for (int i = 0; i < yg; ++i) wheel.push_back({255.0 - 255.0 * i / yg, 255.0, 0.0});
  for (int i = 0; i < gc; ++i) wheel.push_back({0.0, 255.0, 255.0 * i / gc});
  for (int i = 0; i < cb; ++i) wheel.push_back({0.0, 255.0 - 255.0 * i / cb, 255.0});
  for (int i = 0; i < bm; ++i) wheel.push_back({255.0 * i / bm, 0.0, 255.0});
  for (int i = 0; i < mr; ++i) wheel.push_back({255.0, 0.0, 255.0 - 255.0 * i / mr});
  return wheel;
}

}  // namespace

Image flow_to_color(const FlowField& flow, double max_flow) {
  const std::size_t n = flow.pixel_count();
  if (max_flow <= 0.0) {
    std::vector<double> mags(n);
    for (std::size_t i = 0; i < n; ++i) mags[i] = std::hypot(flow.u_data()[i], flow.v_data()[i]);
    if (n > 0) {
      const std::size_t k = std::min(n - 1, static_cast<std::size_t>(0.99 * (n - 1) + 0.5));
      std::nth_element(mags.begin(), mags.begin() + k, mags.end());
      max_flow = mags[k];
    }
    if (!(max_flow > 0.0)) max_flow = 1.0;
  }
  static const auto wheel = color_wheel();
  const int ncols = static_cast<int>(wheel.size());
  Image out(flow.width(), flow.height(), 3);
  for (int y = 0; y < flow.height(); ++y) {
    for (int x = 0; x < flow.width(); ++x) {
      const double u = flow.u(x, y) / max_flow;
      const double v = flow.v(x, y) / max_flow;
      const double rad = std::min(1.0, std::hypot(u, v));
      const double a = std::atan2(-v, -u) / std::numbers::pi;
      const double fk = (a + 1.0) / 2.0 * (ncols - 1);
      const int k0 = static_cast<int>(std::floor(fk));
      const int k1 = (k0 + 1) % ncols;
      const double f = fk - k0;
      for (int c = 0; c < 3; ++c) {
        const double col = ((1.0 - f) * wheel[k0][c] + f * wheel[k1][c]) / 255.0;
        out.at(x, y, c) = static_cast<float>(1.0 - rad * (1.0 - col));
      }
    }
  }
  return out;
}

Image mask_overlay(const Image& i1, const Mask& mask) {
  require_same_size(i1, mask, "overlay");
  Image out(i1.width(), i1.height(), 3);
  const float tint[3] = {1.0f, 0.1f, 0.1f};
  for (int y = 0; y < i1.height(); ++y) {
    for (int x = 0; x < i1.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = i1.at(x, y, i1.channels() == 3 ? c : 0);
        out.at(x, y, c) = mask.at(x, y) ? 0.5f * v + 0.5f * tint[c] : 0.6f * v;
      }
    }
  }
  return out;
}

void write_refine_outputs(const std::filesystem::path& dir, const Image& i1,
                          const RefineResult& result, const PipelineConfig& cfg) {
  std::filesystem::create_directories(dir);
  write_flo(dir / "flow.flo", result.inference.flow);
  save_mask(dir / "mask.png", result.inference.mask);
  save_image(dir / "flow.png", flow_to_color(result.inference.flow, cfg.max_flow));
  save_image(dir / "overlay.png", mask_overlay(i1, result.inference.mask));
  std::ofstream report(dir / "report.txt");
  if (!report) throw IoError("cannot write " + (dir / "report.txt").string());
  report << refine_report(result, cfg);
}

}  // namespace corrseg
