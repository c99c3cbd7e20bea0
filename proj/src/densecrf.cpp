#include "corrseg/densecrf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "pair_filter.hpp"

namespace corrseg {

using detail::PairFilter;

void CrfConfig::validate() const {
  if (!(beta1 >= 0.0) || !(beta2 >= 0.0) || !(beta3 >= 0.0)) {
    throw ContractError("pairwise weights must be nonnegative");
  }
  if (!(sigma_s > 0.0) || !(sigma_r > 0.0)) throw ContractError("bilateral sigmas must be positive");
  if (meanfield_iters_per_block < 1 || alternations < 1) {
    throw ContractError("mean-field iteration counts must be >= 1");
  }
  if (!(damping > 0.0 && damping <= 1.0)) throw ContractError("damping must be in (0,1]");
  if (!(grid_resolution >= 1.0)) throw ContractError("grid_resolution must be >= 1");
}

double bilateral_weight(Pixel p, Pixel q, const Image& i1, double sigma_s, double sigma_r) {
  const double dx = p.x - q.x;
  const double dy = p.y - q.y;
  double di = 0.0;
  for (int c = 0; c < i1.channels(); ++c) {
    const double d = static_cast<double>(i1.at(p.x, p.y, c)) - i1.at(q.x, q.y, c);
    di += d * d;
  }
  return std::exp(-(dx * dx + dy * dy) / (sigma_s * sigma_s) - di / (sigma_r * sigma_r));
}

double pairwise_energy(JointLabel zp, JointLabel zq, double g, const CrfConfig& cfg) {
  const double dc = zp.c != zq.c ? 1.0 : 0.0;
  const double dm = zp.m != zq.m ? 1.0 : 0.0;
  const double joint = cfg.joint_term_single_g ? g : g * g;
  return cfg.beta1 * dc * dm * joint + cfg.beta2 * dc * g + cfg.beta3 * dm * g;
}

namespace {

void check_table(const PotentialTable& table, const Image& i1) {
  if (table.width != i1.width() || table.height != i1.height()) {
    throw ContractError("potential table and image dimensions differ");
  }
}

void check_state(const MeanFieldState& state, const PotentialTable& table) {
  if (state.width != table.width || state.height != table.height || state.labels != table.labels) {
    throw ContractError("mean-field state does not match the potential table");
  }
}

Pixel pixel_at(std::size_t i, int width) {
  return {static_cast<int>(i % width), static_cast<int>(i / width)};
}

// Filters for g and for the joint-term kernel (g^2 halves both scales).
struct Kernels {
  std::unique_ptr<PairFilter> f1;
  std::unique_ptr<PairFilter> f2;
  bool shared = false;

  Kernels(const Image& i1, const CrfConfig& cfg, bool exact) {
    f1 = detail::make_pair_filter(exact, i1, cfg.sigma_s, cfg.sigma_r, cfg.grid_resolution);
    shared = cfg.joint_term_single_g;
    if (!shared) {
      f2 = detail::make_pair_filter(exact, i1, cfg.sigma_s / std::numbers::sqrt2,
                                    cfg.sigma_r / std::numbers::sqrt2, cfg.grid_resolution);
    }
  }
  const PairFilter& joint() const { return shared ? *f1 : *f2; }
};

// Filtered products Qc(l) * Qm(k), channel l * 2 + k, under both kernels.
struct Messages {
  int labels = 0;
  std::vector<double> g1;
  std::vector<double> g2;

  double g1_c(std::size_t p, int l) const {
    return g1[(p * labels + l) * 2] + g1[(p * labels + l) * 2 + 1];
  }
  double g1_m(std::size_t p, int k) const {
    double s = 0.0;
    for (int l = 0; l < labels; ++l) s += g1[(p * labels + l) * 2 + k];
    return s;
  }
  double g1_all(std::size_t p) const { return g1_m(p, 0) + g1_m(p, 1); }
  double g2_joint(std::size_t p, int l, int k) const { return g2[(p * labels + l) * 2 + k]; }
  double g2_c(std::size_t p, int l) const { return g2_joint(p, l, 0) + g2_joint(p, l, 1); }
  double g2_m(std::size_t p, int k) const {
    double s = 0.0;
    for (int l = 0; l < labels; ++l) s += g2_joint(p, l, k);
    return s;
  }
  double g2_all(std::size_t p) const { return g2_m(p, 0) + g2_m(p, 1); }
};

Messages compute_messages(const MeanFieldState& state, const Kernels& kernels) {
  const int n_labels = state.labels;
  const std::size_t n = state.pixel_count();
  const int channels = n_labels * 2;
  std::vector<double> joint(n * channels);
  for (std::size_t p = 0; p < n; ++p) {
    for (int l = 0; l < n_labels; ++l) {
      for (int k = 0; k < 2; ++k) {
        joint[(p * n_labels + l) * 2 + k] = state.qc[p * n_labels + l] * state.qm[p * 2 + k];
      }
    }
  }
  Messages msg;
  msg.labels = n_labels;
  kernels.f1->apply(joint, channels, msg.g1);
  if (kernels.shared) {
    msg.g2 = msg.g1;
  } else {
    kernels.f2->apply(joint, channels, msg.g2);
  }
  return msg;
}

void softmax_into(const std::vector<double>& cost, double* q) {
  const double lo = *std::min_element(cost.begin(), cost.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < cost.size(); ++i) {
    q[i] = std::exp(-(cost[i] - lo));
    sum += q[i];
  }
  for (std::size_t i = 0; i < cost.size(); ++i) q[i] /= sum;
}

// Block costs at pixel p from filtered messages. Each unordered pair occurs
// twice in the ordered-pair energy, hence the factor 2.
void block_cost(const MeanFieldState& s, Block block, std::size_t p, const PotentialTable& table,
                const Messages& msg, const CrfConfig& cfg, std::vector<double>& cost) {
  const int n_labels = s.labels;
  const double* qc = &s.qc[p * n_labels];
  const double* qm = &s.qm[p * 2];
  if (block == Block::m) {
    cost.assign(2, 0.0);
    for (int k = 0; k < 2; ++k) {
      double unary = 0.0;
      double coupled = 0.0;
      for (int l = 0; l < n_labels; ++l) {
        unary += qc[l] * table.unary(p, l, k);
        coupled += qc[l] * msg.g2_joint(p, l, 1 - k);
      }
      const double pair = cfg.beta3 * msg.g1_m(p, 1 - k) + cfg.beta1 * (msg.g2_m(p, 1 - k) - coupled);
      cost[k] = unary + 2.0 * pair;
    }
  } else {
    cost.assign(n_labels, 0.0);
    const double g1_all = msg.g1_all(p);
    const double g2_m0 = msg.g2_m(p, 0), g2_m1 = msg.g2_m(p, 1);
    for (int l = 0; l < n_labels; ++l) {
      const double unary = qm[0] * table.unary(p, l, 0) + qm[1] * table.unary(p, l, 1);
      const double joint = qm[0] * (g2_m1 - msg.g2_joint(p, l, 1)) +
                           qm[1] * (g2_m0 - msg.g2_joint(p, l, 0));
      const double pair = cfg.beta2 * (g1_all - msg.g1_c(p, l)) + cfg.beta1 * joint;
      cost[l] = unary + 2.0 * pair;
    }
  }
}

void parallel_sweep(MeanFieldState& state, Block block, const PotentialTable& table,
                    const Kernels& kernels, const CrfConfig& cfg) {
  const Messages msg = compute_messages(state, kernels);
  const std::size_t n = state.pixel_count();
  const int width = block == Block::m ? 2 : state.labels;
  std::vector<double>& q = block == Block::m ? state.qm : state.qc;
  std::vector<double> next(q.size());
  std::vector<double> cost;
  for (std::size_t p = 0; p < n; ++p) {
    block_cost(state, block, p, table, msg, cfg, cost);
    softmax_into(cost, &next[p * width]);
  }
  const double d = cfg.damping;
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = (1.0 - d) * q[i] + d * next[i];
}

// Sum over ordered pairs of E_Q[pairwise], from filtered messages.
double pairwise_expectation(const MeanFieldState& s, const Messages& msg, const CrfConfig& cfg) {
  const int n_labels = s.labels;
  double total = 0.0;
  for (std::size_t p = 0; p < s.pixel_count(); ++p) {
    const double* qc = &s.qc[p * n_labels];
    const double* qm = &s.qm[p * 2];
    double c1 = 0.0, c2 = 0.0, j2 = 0.0;
    for (int l = 0; l < n_labels; ++l) {
      c1 += qc[l] * msg.g1_c(p, l);
      c2 += qc[l] * msg.g2_c(p, l);
      for (int k = 0; k < 2; ++k) j2 += qc[l] * qm[k] * msg.g2_joint(p, l, k);
    }
    double m1 = 0.0, m2 = 0.0;
    for (int k = 0; k < 2; ++k) {
      m1 += qm[k] * msg.g1_m(p, k);
      m2 += qm[k] * msg.g2_m(p, k);
    }
    const double g1_all = msg.g1_all(p);
    total += cfg.beta1 * (msg.g2_all(p) - c2 - m2 + j2) + cfg.beta2 * (g1_all - c1) +
             cfg.beta3 * (g1_all - m1);
  }
  return total;
}

double expected_unary(const MeanFieldState& s, const PotentialTable& table) {
  double total = 0.0;
  for (std::size_t p = 0; p < s.pixel_count(); ++p) {
    for (int l = 0; l < s.labels; ++l) {
      for (int k = 0; k < 2; ++k) total += s.qc[p * s.labels + l] * s.qm[p * 2 + k] * table.unary(p, l, k);
    }
  }
  return total;
}

double neg_entropy(const std::vector<double>& q) {
  double total = 0.0;
  for (double v : q) {
    if (v > 0.0) total += v * std::log(v);
  }
  return total;
}

MeanFieldState one_hot(const Labeling& z, int labels) {
  MeanFieldState s;
  s.width = z.width;
  s.height = z.height;
  s.labels = labels;
  s.qc.assign(z.pixel_count() * labels, 0.0);
  s.qm.assign(z.pixel_count() * 2, 0.0);
  for (std::size_t p = 0; p < z.pixel_count(); ++p) {
    s.qc[p * labels + z.c[p]] = 1.0;
    s.qm[p * 2 + z.m[p]] = 1.0;
  }
  return s;
}

void check_labeling(const Labeling& z, const PotentialTable& table) {
  if (z.width != table.width || z.height != table.height) {
    throw ContractError("labeling and potential table dimensions differ");
  }
  for (std::size_t p = 0; p < z.pixel_count(); ++p) {
    if (z.c[p] < 0 || z.c[p] >= table.labels || (z.m[p] != 0 && z.m[p] != 1)) {
      throw ContractError("label out of range");
    }
  }
}

}  // namespace

double energy(const Labeling& z, const PotentialTable& table, const Image& i1,
              const CrfConfig& cfg) {
  check_table(table, i1);
  check_labeling(z, table);
  const std::size_t n = z.pixel_count();
  double total = 0.0;
  for (std::size_t p = 0; p < n; ++p) total += table.unary(p, z.c[p], z.m[p]);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = p + 1; q < n; ++q) {
      if (z.c[p] == z.c[q] && z.m[p] == z.m[q]) continue;
      const double g = bilateral_weight(pixel_at(p, z.width), pixel_at(q, z.width), i1, cfg.sigma_s,
                                        cfg.sigma_r);
      total += 2.0 * pairwise_energy({z.c[p], z.m[p]}, {z.c[q], z.m[q]}, g, cfg);
    }
  }
  return total;
}

double approximate_energy(const Labeling& z, const PotentialTable& table, const Image& i1,
                          const CrfConfig& cfg) {
  check_table(table, i1);
  check_labeling(z, table);
  const MeanFieldState s = one_hot(z, table.labels);
  const Kernels kernels(i1, cfg, false);
  double total = 0.0;
  for (std::size_t p = 0; p < z.pixel_count(); ++p) total += table.unary(p, z.c[p], z.m[p]);
  return total + pairwise_expectation(s, compute_messages(s, kernels), cfg);
}

MeanFieldState MeanFieldState::from_unary(const PotentialTable& table) {
  if (table.labels < 1) throw ContractError("potential table has no labels");
  MeanFieldState s;
  s.width = table.width;
  s.height = table.height;
  s.labels = table.labels;
  s.qc.assign(s.pixel_count() * s.labels, 0.0);
  s.qm.assign(s.pixel_count() * 2, 0.0);
  std::vector<double> cost(static_cast<std::size_t>(s.labels) * 2);
  std::vector<double> joint(cost.size());
  for (std::size_t p = 0; p < s.pixel_count(); ++p) {
    for (int l = 0; l < s.labels; ++l) {
      for (int k = 0; k < 2; ++k) cost[l * 2 + k] = table.unary(p, l, k);
    }
    softmax_into(cost, joint.data());
    for (int l = 0; l < s.labels; ++l) {
      for (int k = 0; k < 2; ++k) {
        s.qc[p * s.labels + l] += joint[l * 2 + k];
        s.qm[p * 2 + k] += joint[l * 2 + k];
      }
    }
  }
  return s;
}

bool MeanFieldState::normalized(double tolerance) const {
  auto check = [&](const std::vector<double>& q, int width) {
    for (std::size_t p = 0; p < pixel_count(); ++p) {
      double sum = 0.0;
      for (int i = 0; i < width; ++i) {
        const double v = q[p * width + i];
        if (!(v >= 0.0)) return false;
        sum += v;
      }
      if (std::abs(sum - 1.0) > tolerance) return false;
    }
    return true;
  };
  return check(qc, labels) && check(qm, 2);
}

double free_energy(const MeanFieldState& state, const PotentialTable& table, const Image& i1,
                   const CrfConfig& cfg) {
  check_table(table, i1);
  check_state(state, table);
  const Kernels kernels(i1, cfg, cfg.mode == CrfMode::exact);
  return expected_unary(state, table) +
         pairwise_expectation(state, compute_messages(state, kernels), cfg) +
         neg_entropy(state.qc) + neg_entropy(state.qm);
}

void update_pixel(MeanFieldState& state, Block block, std::size_t p, const PotentialTable& table,
                  const Image& i1, const CrfConfig& cfg) {
  check_table(table, i1);
  check_state(state, table);
  const int n_labels = state.labels;
  const std::size_t n = state.pixel_count();
  const Pixel pp = pixel_at(p, state.width);
  const double* qc_p = &state.qc[p * n_labels];
  const double* qm_p = &state.qm[p * 2];
  const int width = block == Block::m ? 2 : n_labels;
  std::vector<double> acc(width, 0.0);
  for (std::size_t q = 0; q < n; ++q) {
    if (q == p) continue;
    const double g = bilateral_weight(pp, pixel_at(q, state.width), i1, cfg.sigma_s, cfg.sigma_r);
    const double g2 = cfg.joint_term_single_g ? g : g * g;
    const double* qc_q = &state.qc[q * n_labels];
    const double* qm_q = &state.qm[q * 2];
    if (block == Block::m) {
      double same_c = 0.0;
      for (int l = 0; l < n_labels; ++l) same_c += qc_p[l] * qc_q[l];
      const double coef = cfg.beta3 * g + cfg.beta1 * g2 * (1.0 - same_c);
      for (int k = 0; k < 2; ++k) acc[k] += coef * (1.0 - qm_q[k]);
    } else {
      const double same_m = qm_p[0] * qm_q[0] + qm_p[1] * qm_q[1];
      const double coef = cfg.beta2 * g + cfg.beta1 * g2 * (1.0 - same_m);
      for (int l = 0; l < n_labels; ++l) acc[l] += coef * (1.0 - qc_q[l]);
    }
  }
  std::vector<double> cost(width);
  for (int i = 0; i < width; ++i) {
    double unary = 0.0;
    if (block == Block::m) {
      for (int l = 0; l < n_labels; ++l) unary += qc_p[l] * table.unary(p, l, i);
    } else {
      unary = qm_p[0] * table.unary(p, i, 0) + qm_p[1] * table.unary(p, i, 1);
    }
    cost[i] = unary + 2.0 * acc[i];
  }
  double* q = block == Block::m ? &state.qm[p * 2] : &state.qc[p * n_labels];
  softmax_into(cost, q);
}

namespace {

void sweep_with(MeanFieldState& state, Block block, const PotentialTable& table, const Image& i1,
                const CrfConfig& cfg, const Kernels* kernels) {
  if (cfg.mode == CrfMode::exact && cfg.exact_schedule == Schedule::sequential) {
    for (std::size_t p = 0; p < state.pixel_count(); ++p) update_pixel(state, block, p, table, i1, cfg);
    return;
  }
  parallel_sweep(state, block, table, *kernels, cfg);
}

bool needs_kernels(const CrfConfig& cfg) {
  return !(cfg.mode == CrfMode::exact && cfg.exact_schedule == Schedule::sequential);
}

}  // namespace

void meanfield_sweep(MeanFieldState& state, Block block, const PotentialTable& table,
                     const Image& i1, const CrfConfig& cfg) {
  cfg.validate();
  check_table(table, i1);
  check_state(state, table);
  std::unique_ptr<Kernels> kernels;
  if (needs_kernels(cfg)) kernels = std::make_unique<Kernels>(i1, cfg, cfg.mode == CrfMode::exact);
  sweep_with(state, block, table, i1, cfg, kernels.get());
}

void meanfield_block_update(MeanFieldState& state, Block block, const PotentialTable& table,
                            const Image& i1, const CrfConfig& cfg) {
  cfg.validate();
  check_table(table, i1);
  check_state(state, table);
  std::unique_ptr<Kernels> kernels;
  if (needs_kernels(cfg)) kernels = std::make_unique<Kernels>(i1, cfg, cfg.mode == CrfMode::exact);
  for (int i = 0; i < cfg.meanfield_iters_per_block; ++i) {
    sweep_with(state, block, table, i1, cfg, kernels.get());
  }
}

Labeling argmax_labels(const MeanFieldState& state) {
  Labeling z(state.width, state.height);
  for (std::size_t p = 0; p < state.pixel_count(); ++p) {
    const double* qc = &state.qc[p * state.labels];
    z.c[p] = static_cast<int>(std::max_element(qc, qc + state.labels) - qc);
    z.m[p] = state.qm[p * 2 + 1] > state.qm[p * 2] ? 1 : 0;
  }
  return z;
}

FlowField select_flow(const RegionalCorrespondenceSet& set, const Labeling& z) {
  if (set.maps.empty()) throw ContractError("select_flow: empty correspondence set");
  FlowField out(z.width, z.height);
  for (const FlowField& map : set.maps) require_same_size(map, out, "select_flow");
  for (std::size_t p = 0; p < z.pixel_count(); ++p) {
    if (z.c[p] < 0 || z.c[p] >= set.size()) throw ContractError("select_flow: label out of range");
    const FlowField& map = set.maps[z.c[p]];
    out.u_data()[p] = map.u_data()[p];
    out.v_data()[p] = map.v_data()[p];
  }
  return out;
}

Mask labeling_mask(const Labeling& z) {
  Mask mask(z.width, z.height);
  for (std::size_t p = 0; p < z.pixel_count(); ++p) mask[p] = static_cast<std::uint8_t>(z.m[p]);
  return mask;
}

InferenceResult alternate(PotentialTable& table, const Image& i1, const CrfConfig& cfg,
                          const MeanFieldState& init, const RegionalCorrespondenceSet* set,
                          const RefreshHook& hook) {
  cfg.validate();
  check_table(table, i1);
  check_state(init, table);
  if (set && set->size() != table.labels) {
    throw ContractError("alternate: candidate count differs from the table");
  }
  std::unique_ptr<Kernels> kernels;
  if (needs_kernels(cfg)) kernels = std::make_unique<Kernels>(i1, cfg, cfg.mode == CrfMode::exact);

  InferenceResult result;
  result.state = init;
  MeanFieldState& s = result.state;
  for (int round = 0; round < cfg.alternations; ++round) {
    for (int i = 0; i < cfg.meanfield_iters_per_block; ++i) {
      sweep_with(s, Block::m, table, i1, cfg, kernels.get());
    }
    for (int i = 0; i < cfg.meanfield_iters_per_block; ++i) {
      sweep_with(s, Block::c, table, i1, cfg, kernels.get());
    }
    ++s.t;
    const Labeling z = argmax_labels(s);
    if (round == 0 && hook) hook(labeling_mask(z), table);
    result.energies.push_back(cfg.mode == CrfMode::exact ? energy(z, table, i1, cfg)
                                                         : approximate_energy(z, table, i1, cfg));
  }
  result.labels = argmax_labels(s);
  result.mask = labeling_mask(result.labels);
  if (set) result.flow = select_flow(*set, result.labels);
  return result;
}

}  // namespace corrseg
