// corrseg: joint correspondence and segmentation refinement driver.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "corrseg/evalmetrics.hpp"
#include "corrseg/pipeline.hpp"

namespace fs = std::filesystem;
using namespace corrseg;

namespace {

constexpr int kUsage = 2;
constexpr int kRuntime = 1;

struct Common {
  std::string config;
  std::string out;
  std::optional<long long> seed;
  std::string mode;
  std::string label_space;
  std::optional<double> max_flow;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key=value config file")->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_option("--mode", c.mode, "exact|fast")->check(CLI::IsMember({"exact", "fast"}));
  cmd->add_option("--label-space", c.label_space, "regional|uniform:K");
  cmd->add_option("--max-flow", c.max_flow, "flow visualization scale (px)");
  cmd->add_option("--set", c.overrides, "extra key=value entries")->take_all();
}

PipelineConfig build_config(const Common& c) {
  PipelineConfig cfg = c.config.empty() ? PipelineConfig{} : PipelineConfig::load(c.config);
  for (const std::string& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!c.out.empty()) cfg.out = c.out;
  if (c.seed) cfg.set("seed", std::to_string(*c.seed));
  if (!c.mode.empty()) cfg.set("mode", c.mode);
  if (!c.label_space.empty()) cfg.set("label_space", c.label_space);
  if (c.max_flow) cfg.max_flow = *c.max_flow;
  cfg.validate();
  if (cfg.out.empty()) throw ConfigError("an output directory is required (--out or out=)");
  return cfg;
}

void require_file(const fs::path& p, const char* key) {
  if (p.empty()) throw ConfigError(std::string("missing input '") + key + "'");
  if (!fs::is_regular_file(p)) throw ConfigError(std::string(key) + ": no such file " + p.string());
}

struct Inputs {
  Image i1;
  Image i2;
};

Inputs load_pair(const PipelineConfig& cfg) {
  require_file(cfg.i1, "i1");
  require_file(cfg.i2, "i2");
  Inputs in{load_image(cfg.i1), load_image(cfg.i2)};
  require_same_size(in.i1, in.i2, "inputs");
  return in;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

int cmd_refine(const Common& c, bool dump_potentials) {
  const PipelineConfig cfg = build_config(c);
  const Inputs in = load_pair(cfg);
  if (!cfg.score.empty()) require_file(cfg.score, "score");
  else if (!cfg.mask.empty()) require_file(cfg.mask, "mask");
  const ScoreMap score = load_score(cfg);
  require_same_size(in.i1, score, "score map");
  const RefineResult r = run_refine(in.i1, in.i2, score, cfg);
  write_refine_outputs(cfg.out, in.i1, r, cfg);
  write_text(fs::path(cfg.out) / "config.txt", cfg.to_text());
  if (dump_potentials) write_potential_table(fs::path(cfg.out) / "potentials.cspt", r.potentials);
  std::cout << refine_report(r, cfg);
  return 0;
}

int cmd_flow_init(const Common& c) {
  const PipelineConfig cfg = build_config(c);
  const Inputs in = load_pair(cfg);
  const FlowField flow = weighted_median_refine(horn_schunck(in.i1, in.i2, cfg.hs), in.i1, cfg.wmf);
  fs::create_directories(cfg.out);
  write_flo(fs::path(cfg.out) / "flow_init.flo", flow);
  save_image(fs::path(cfg.out) / "flow_init.png", flow_to_color(flow, cfg.max_flow));
  std::ostringstream report;
  report << "levels " << (cfg.hs.pyramid_levels > 0 ? cfg.hs.pyramid_levels
                                                    : default_pyramid_levels(in.i1.width(),
                                                                             in.i1.height()))
         << "\n";
  write_text(fs::path(cfg.out) / "report.txt", report.str());
  std::cout << report.str();
  return 0;
}

int cmd_regional(const Common& c, const std::string& init_flow) {
  const PipelineConfig cfg = build_config(c);
  const Inputs in = load_pair(cfg);
  FlowField flow;
  if (!init_flow.empty()) {
    require_file(init_flow, "--flow");
    flow = read_flo(init_flow);
    require_same_size(flow, in.i1, "initial flow");
  } else {
    flow = weighted_median_refine(horn_schunck(in.i1, in.i2, cfg.hs), in.i1, cfg.wmf);
  }
  const RegionalCorrespondenceSet set = build_regional_set_from_flow(flow, in.i1, in.i2, cfg.regional);
  fs::create_directories(cfg.out);
  for (int i = 0; i < set.size(); ++i) {
    const std::string stem = "candidate_" + std::to_string(i);
    write_flo(fs::path(cfg.out) / (stem + ".flo"), set.maps[i]);
    save_mask(fs::path(cfg.out) / (stem + "_support.png"), set.supports[i]);
  }
  std::ostringstream report;
  report << "N " << set.size() << "\n";
  for (int i = 0; i < set.size(); ++i) {
    report << "support " << i << " " << set.supports[i].count() << "\n";
  }
  write_text(fs::path(cfg.out) / "report.txt", report.str());
  std::cout << report.str();
  return 0;
}

int cmd_eval(const std::string& result, const std::string& gt) {
  const fs::path r(result), g(gt);
  // A synth directory can stand in for a result (a ground-truth self check).
  const auto pick = [&](const char* name, const char* fallback) {
    return fs::is_regular_file(r / name) ? r / name : r / fallback;
  };
  const fs::path flow_path = pick("flow.flo", "gt.flo");
  const fs::path mask_path = pick("mask.png", "gt_mask.png");
  require_file(flow_path, "result flow");
  require_file(mask_path, "result mask");
  require_file(g / "gt.flo", "ground-truth flow");
  require_file(g / "gt_mask.png", "ground-truth mask");
  const FlowField flow = read_flo(flow_path);
  const FlowField gt_flow = read_flo(g / "gt.flo");
  const Mask mask = load_mask(mask_path);
  const Mask gt_mask = load_mask(g / "gt_mask.png");
  require_same_size(flow, gt_flow, "eval");
  require_same_size(mask, gt_mask, "eval");
  std::optional<Mask> valid;
  if (fs::is_regular_file(g / "valid.png")) valid = load_mask(g / "valid.png");
  const Mask* vp = valid ? &*valid : nullptr;
  std::printf("AEPE %.6f\nAAE %.6f\nIoU %.6f\n", aepe(flow, gt_flow, vp), aae(flow, gt_flow, vp),
              iou(mask, gt_mask));
  return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir, std::optional<long long> seed,
              double flip_fraction) {
  if (out_dir.empty()) throw ConfigError("--out is required");
  SyntheticSpec spec;
  if (!spec_path.empty()) {
    std::ifstream in(spec_path);
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
      spec = SyntheticSpec::from_text(ss.str());
    } catch (const ContractError& e) {
      throw ConfigError(e.what());
    }
  }
  const std::uint64_t s = seed ? static_cast<std::uint64_t>(*seed) : 0;
  const SyntheticPair pair = synthetic_pair(spec);
  const fs::path out(out_dir);
  fs::create_directories(out);
  save_image(out / "i1.png", pair.i1, 16);
  save_image(out / "i2.png", pair.i2, 16);
  write_flo(out / "gt.flo", pair.gt_flow);
  save_mask(out / "gt_mask.png", pair.gt_mask);
  save_mask(out / "valid.png", pair.valid);
  write_score_map(out / "score.pfm", perturbed_score(pair.gt_mask, flip_fraction, 3, 5.0, s));
  write_text(out / "spec.txt", spec.to_text());
  write_text(out / "refine.cfg", "i1=" + (out / "i1.png").string() + "\ni2=" +
                                     (out / "i2.png").string() + "\nscore=" +
                                     (out / "score.pfm").string() + "\n");
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint correspondence and segmentation refinement"};
  app.require_subcommand(1);

  Common refine_opts, flow_opts, regional_opts;
  bool dump_potentials = false;
  auto* refine = app.add_subcommand("refine", "flow and mask refinement with the joint CRF");
  add_common(refine, refine_opts);
  refine->add_flag("--dump-potentials", dump_potentials, "write the unary table");

  auto* flow_init = app.add_subcommand("flow-init", "Horn-Schunck plus weighted median flow");
  add_common(flow_init, flow_opts);

  std::string regional_flow;
  auto* regional = app.add_subcommand("regional", "regional correspondence candidates");
  add_common(regional, regional_opts);
  regional->add_option("--flow", regional_flow, "initial flow (.flo); computed when absent");

  std::string eval_result, eval_gt;
  auto* eval = app.add_subcommand("eval", "AEPE, AAE and IoU of a result directory");
  eval->add_option("--result", eval_result, "directory with flow.flo and mask.png")->required();
  eval->add_option("--gt", eval_gt, "directory with gt.flo, gt_mask.png and valid.png")->required();

  std::string synth_spec, synth_out;
  std::optional<long long> synth_seed;
  double synth_flip = 0.1;
  auto* synth = app.add_subcommand("synth", "two-layer synthetic pair with ground truth");
  synth->add_option("--config", synth_spec, "scene description")->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--seed", synth_seed, "score-map perturbation seed");
  synth->add_option("--flip", synth_flip, "fraction of border pixels flipped in the score map")
      ->check(CLI::Range(0.0, 1.0));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*refine) return cmd_refine(refine_opts, dump_potentials);
    if (*flow_init) return cmd_flow_init(flow_opts);
    if (*regional) return cmd_regional(regional_opts, regional_flow);
    if (*eval) return cmd_eval(eval_result, eval_gt);
    if (*synth) return cmd_synth(synth_spec, synth_out, synth_seed, synth_flip);
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
