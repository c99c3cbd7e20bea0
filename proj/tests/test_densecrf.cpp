#include <doctest.h>

#include <cmath>
#include <numeric>

#include "corrseg/densecrf.hpp"
#include "support.hpp"

using namespace corrseg;

namespace {

PotentialTable random_table(int w, int h, int n, std::uint32_t seed, double scale = 1.0) {
  PotentialTable t;
  t.width = w;
  t.height = h;
  t.labels = n;
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> d(0.0, scale);
  t.corr_cost.resize(static_cast<std::size_t>(w) * h * n * 2);
  for (double& v : t.corr_cost) v = d(rng);
  t.seg_cost.assign(static_cast<std::size_t>(w) * h * 2, 0.0);
  return t;
}

Labeling decode(std::size_t code, int w, int h, int n) {
  Labeling z(w, h);
  for (std::size_t p = 0; p < z.pixel_count(); ++p) {
    const int joint = static_cast<int>(code % (2 * n));
    code /= 2 * n;
    z.c[p] = joint / 2;
    z.m[p] = joint % 2;
  }
  return z;
}

double brute_minimum(const PotentialTable& t, const Image& img, const CrfConfig& cfg) {
  std::size_t total = 1;
  for (std::size_t p = 0; p < t.pixel_count(); ++p) total *= 2 * t.labels;
  double best = 1e300;
  for (std::size_t code = 0; code < total; ++code) {
    best = std::min(best, energy(decode(code, t.width, t.height, t.labels), t, img, cfg));
  }
  return best;
}

CrfConfig exact_config() {
  CrfConfig cfg;
  cfg.mode = CrfMode::exact;
  cfg.sigma_s = 2.0;
  cfg.sigma_r = 0.5;
  return cfg;
}

}  // namespace

TEST_CASE("bilateral weight values") {
  Image img(20, 1, 1, 0.3f);
  CHECK(bilateral_weight({4, 0}, {4, 0}, img, 15.0, 0.2) == 1.0);
  CHECK(bilateral_weight({0, 0}, {15, 0}, img, 15.0, 0.2) == doctest::Approx(std::exp(-1.0)));
  img.at(15, 0) = 0.5f;
  CHECK(bilateral_weight({0, 0}, {15, 0}, img, 15.0, 0.2) ==
        doctest::Approx(std::exp(-2.0)).epsilon(1e-6));
  CHECK(bilateral_weight({15, 0}, {0, 0}, img, 15.0, 0.2) ==
        bilateral_weight({0, 0}, {15, 0}, img, 15.0, 0.2));
}

TEST_CASE("bilateral weight uses the full colour distance") {
  Image img(2, 1, 3, 0.0f);
  img.at(1, 0, 0) = 0.3f;
  img.at(1, 0, 1) = 0.4f;
  // |dI| = 0.5 = sigma_r, distance 1 = sigma_s.
  CHECK(bilateral_weight({0, 0}, {1, 0}, img, 1.0, 0.5) == doctest::Approx(std::exp(-2.0)).epsilon(1e-6));
}

TEST_CASE("pairwise energy arithmetic") {
  CrfConfig cfg;
  CHECK(pairwise_energy({1, 0}, {1, 0}, 0.5, cfg) == 0.0);
  CHECK(pairwise_energy({0, 1}, {2, 1}, 0.5, cfg) == doctest::Approx(1.5));
  CHECK(pairwise_energy({0, 1}, {0, 0}, 0.5, cfg) == doctest::Approx(1.5));
  CHECK(pairwise_energy({0, 1}, {1, 0}, 0.5, cfg) == doctest::Approx(3.75));
  cfg.joint_term_single_g = true;
  CHECK(pairwise_energy({0, 1}, {1, 0}, 0.5, cfg) == doctest::Approx(4.5));
}

TEST_CASE("one pixel energy is the unary") {
  const PotentialTable t = random_table(1, 1, 3, 1);
  Labeling z(1, 1);
  z.c[0] = 2;
  z.m[0] = 1;
  CHECK(energy(z, t, Image(1, 1, 3), CrfConfig{}) == t.unary(0, 2, 1));
}

TEST_CASE("two pixel energy by hand") {
  PotentialTable t;
  t.width = 2;
  t.height = 1;
  t.labels = 2;
  t.corr_cost = {0.1, 0.2, 0.3, 0.4, 1.1, 1.2, 1.3, 1.4};
  t.seg_cost = {0.0, 0.05, 0.0, 0.0};
  Image img(2, 1, 1, 0.5f);
  CrfConfig cfg;
  cfg.sigma_s = 1.0;
  const double g = std::exp(-1.0);
  Labeling z(2, 1);
  z.c = {0, 1};
  z.m = {1, 0};
  // Unaries 0.2 + 0.05 and 1.3; each unordered pair counts twice.
  const double expected = 0.25 + 1.3 + 2.0 * (3.0 * g * g + 3.0 * g + 3.0 * g);
  CHECK(energy(z, t, img, cfg) == doctest::Approx(expected));
}

TEST_CASE("relabeling candidates leaves the energy unchanged") {
  const PotentialTable t = random_table(3, 2, 3, 7);
  PotentialTable swapped = t;
  for (std::size_t p = 0; p < t.pixel_count(); ++p) {
    for (int m = 0; m < 2; ++m) {
      swapped.corr_cost[(p * 3 + 0) * 2 + m] = t.corr_cost[(p * 3 + 2) * 2 + m];
      swapped.corr_cost[(p * 3 + 2) * 2 + m] = t.corr_cost[(p * 3 + 0) * 2 + m];
    }
  }
  const Image img = testing::random_image(3, 2, 3, 8);
  const CrfConfig cfg = exact_config();
  for (std::size_t code : {0u, 17u, 4000u, 46655u}) {
    Labeling z = decode(code, 3, 2, 3);
    Labeling zs = z;
    for (int& c : zs.c) c = c == 0 ? 2 : (c == 2 ? 0 : 1);
    CHECK(energy(z, t, img, cfg) == doctest::Approx(energy(zs, swapped, img, cfg)));
  }
}

TEST_CASE("enumerated minimum is below random configurations") {
  const PotentialTable t = random_table(3, 2, 3, 9, 3.0);
  const Image img = testing::random_image(3, 2, 3, 10);
  const CrfConfig cfg = exact_config();
  const double best = brute_minimum(t, img, cfg);
  std::mt19937 rng(11);
  std::uniform_int_distribution<std::size_t> d(0, 46655);
  for (int i = 0; i < 100; ++i) CHECK(best <= energy(decode(d(rng), 3, 2, 3), t, img, cfg));
}

TEST_CASE("grid energy tracks the exact energy on a grey image") {
  const int w = 12, h = 10;
  const PotentialTable t = random_table(w, h, 2, 12);
  Image img(w, h, 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) img.at(x, y) = x < w / 2 ? 0.2f : 0.7f;
  }
  CrfConfig cfg;
  cfg.sigma_s = 3.0;
  cfg.grid_resolution = 4.0;
  Labeling z(w, h);
  for (std::size_t p = 0; p < z.pixel_count(); ++p) {
    z.c[p] = static_cast<int>(p % 3 == 0);
    z.m[p] = static_cast<int>((p / w) % 2);
  }
  const double e = energy(z, t, img, cfg);
  CHECK(approximate_energy(z, t, img, cfg) == doctest::Approx(e).epsilon(0.05));
}

TEST_CASE("initial state is the marginal of the joint softmax") {
  const PotentialTable t = random_table(2, 2, 3, 13);
  const MeanFieldState s = MeanFieldState::from_unary(t);
  CHECK(s.normalized());
  for (std::size_t p = 0; p < 4; ++p) {
    double z = 0.0;
    std::vector<double> qc(3, 0.0), qm(2, 0.0);
    for (int c = 0; c < 3; ++c) {
      for (int m = 0; m < 2; ++m) {
        const double e = std::exp(-t.unary(p, c, m));
        z += e;
        qc[c] += e;
        qm[m] += e;
      }
    }
    for (int c = 0; c < 3; ++c) CHECK(s.qc[p * 3 + c] == doctest::Approx(qc[c] / z));
    for (int m = 0; m < 2; ++m) CHECK(s.qm[p * 2 + m] == doctest::Approx(qm[m] / z));
  }
}

TEST_CASE("zero pairwise weights give the unary softmax after one sweep") {
  const PotentialTable t = random_table(3, 3, 2, 14, 2.0);
  const Image img = testing::random_image(3, 3, 3, 15);
  for (CrfMode mode : {CrfMode::exact, CrfMode::fast}) {
    CrfConfig cfg;
    cfg.beta1 = cfg.beta2 = cfg.beta3 = 0.0;
    cfg.mode = mode;
    cfg.damping = 1.0;
    MeanFieldState s = MeanFieldState::from_unary(t);
    const MeanFieldState before = s;
    meanfield_sweep(s, Block::m, t, img, cfg);
    for (std::size_t p = 0; p < 9; ++p) {
      double cost[2] = {0.0, 0.0};
      for (int m = 0; m < 2; ++m) {
        for (int c = 0; c < 2; ++c) cost[m] += before.qc[p * 2 + c] * t.unary(p, c, m);
      }
      const double q1 = 1.0 / (1.0 + std::exp(cost[1] - cost[0]));
      CHECK(s.qm[p * 2 + 1] == doctest::Approx(q1).epsilon(1e-9));
    }
  }
}

TEST_CASE("two coupled pixels settle on the cheaper shared label") {
  // N = 1, so only the m coupling beta3 * g acts.
  PotentialTable t;
  t.width = 2;
  t.height = 1;
  t.labels = 1;
  t.corr_cost = {0.0, 0.1, 0.15, 0.0};
  t.seg_cost.assign(4, 0.0);
  const Image img(2, 1, 1, 0.5f);
  CrfConfig cfg;
  cfg.mode = CrfMode::exact;
  cfg.sigma_s = 4.0;
  cfg.beta3 = 1.0;
  cfg.meanfield_iters_per_block = 400;
  MeanFieldState s = MeanFieldState::from_unary(t);
  meanfield_block_update(s, Block::m, t, img, cfg);

  // Damped fixed-point iteration of q_p(1) = sigmoid(cost_p(0) - cost_p(1)),
  // cost_p(m) = U_p(m) + 2 beta3 g q_other(1 - m).
  const double g = std::exp(-1.0 / 16.0);
  double q[2] = {1.0 / (1.0 + std::exp(0.1)), 1.0 / (1.0 + std::exp(-0.15))};
  for (int it = 0; it < 5000; ++it) {
    double next[2];
    for (int p = 0; p < 2; ++p) {
      const double o = q[1 - p];
      const double c0 = t.corr_cost[p * 2 + 0] + 2.0 * g * o;
      const double c1 = t.corr_cost[p * 2 + 1] + 2.0 * g * (1.0 - o);
      next[p] = 1.0 / (1.0 + std::exp(c1 - c0));
    }
    for (int p = 0; p < 2; ++p) q[p] = 0.5 * q[p] + 0.5 * next[p];
  }
  CHECK(q[0] > 0.5);
  CHECK(q[1] > 0.5);
  CHECK(s.qm[1] == doctest::Approx(q[0]).epsilon(1e-6));
  CHECK(s.qm[3] == doctest::Approx(q[1]).epsilon(1e-6));
  const Labeling z = argmax_labels(s);
  CHECK(z.m[0] == 1);
  CHECK(z.m[1] == 1);
}

TEST_CASE("sequential coordinate updates never raise the free energy") {
  const Image img = testing::random_image(3, 2, 3, 16);
  for (std::uint32_t seed = 0; seed < 10; ++seed) {
    const PotentialTable t = random_table(3, 2, 3, 100 + seed, 2.0);
    const CrfConfig cfg = exact_config();
    MeanFieldState s = MeanFieldState::from_unary(t);
    double f = free_energy(s, t, img, cfg);
    for (int sweep = 0; sweep < 4; ++sweep) {
      for (Block b : {Block::m, Block::c}) {
        for (std::size_t p = 0; p < 6; ++p) {
          update_pixel(s, b, p, t, img, cfg);
          const double next = free_energy(s, t, img, cfg);
          CHECK(next <= f + 1e-9 * std::abs(f));
          f = next;
        }
      }
    }
    CHECK(s.normalized());
  }
}

TEST_CASE("argmax ties go to the lowest index") {
  MeanFieldState s;
  s.width = 1;
  s.height = 1;
  s.labels = 3;
  s.qc = {0.25, 0.5, 0.25};
  s.qm = {0.5, 0.5};
  Labeling z = argmax_labels(s);
  CHECK(z.c[0] == 1);
  CHECK(z.m[0] == 0);
  s.qc = {0.4, 0.2, 0.4};
  CHECK(argmax_labels(s).c[0] == 0);
}

TEST_CASE("dominant unary wins after one round") {
  const int w = 4, h = 3;
  PotentialTable t;
  t.width = w;
  t.height = h;
  t.labels = 3;
  t.corr_cost.assign(static_cast<std::size_t>(w) * h * 3 * 2, 100.0);
  t.seg_cost.assign(static_cast<std::size_t>(w) * h * 2, 0.0);
  std::vector<JointLabel> want(w * h);
  for (std::size_t p = 0; p < want.size(); ++p) {
    want[p] = {static_cast<int>(p % 3), static_cast<int>(p % 2)};
    t.corr_cost[(p * 3 + want[p].c) * 2 + want[p].m] = 0.0;
  }
  for (CrfMode mode : {CrfMode::exact, CrfMode::fast}) {
    CrfConfig cfg;
    cfg.mode = mode;
    cfg.alternations = 1;
    PotentialTable table = t;
    const InferenceResult r =
        alternate(table, testing::random_image(w, h, 3, 3), cfg, MeanFieldState::from_unary(t));
    for (std::size_t p = 0; p < want.size(); ++p) {
      CHECK(r.labels.c[p] == want[p].c);
      CHECK(r.labels.m[p] == want[p].m);
      CHECK(r.mask[p] == want[p].m);
    }
    CHECK(r.energies.size() == 1);
  }
}

TEST_CASE("single candidate passes its flow through") {
  const int w = 6, h = 5;
  PotentialTable t = random_table(w, h, 1, 17);
  RegionalCorrespondenceSet set;
  set.maps = {FlowField(w, h, 2.0f, -3.0f)};
  set.maps[0].u(1, 1) = 7.0f;
  set.supports = {Mask(w, h, 1)};
  const InferenceResult r = alternate(t, testing::random_image(w, h, 3, 18), CrfConfig{},
                                      MeanFieldState::from_unary(t), &set);
  CHECK(r.flow == set.maps[0]);
}

TEST_CASE("selection and mask helpers") {
  RegionalCorrespondenceSet set;
  set.maps = {FlowField(2, 1, 1.0f, 0.0f), FlowField(2, 1, 5.0f, 1.0f)};
  Labeling z(2, 1);
  z.c = {1, 0};
  z.m = {0, 1};
  const FlowField f = select_flow(set, z);
  CHECK(f.u(0, 0) == 5.0f);
  CHECK(f.u(1, 0) == 1.0f);
  const Mask m = labeling_mask(z);
  CHECK(m.at(0, 0) == 0);
  CHECK(m.at(1, 0) == 1);
}

TEST_CASE("refresh hook runs once after the first round") {
  const int w = 5, h = 4;
  PotentialTable t = random_table(w, h, 2, 19);
  CrfConfig cfg;
  cfg.alternations = 3;
  int calls = 0;
  Mask seen;
  const InferenceResult r =
      alternate(t, testing::random_image(w, h, 3, 20), cfg, MeanFieldState::from_unary(t), nullptr,
                [&](const Mask& m, PotentialTable& table) {
                  ++calls;
                  seen = m;
                  for (double& v : table.seg_cost) v = 0.0;
                });
  CHECK(calls == 1);
  CHECK(seen.pixel_count() == static_cast<std::size_t>(w * h));
  CHECK(r.energies.size() == 3);
  CHECK(r.state.t == 3);
}

TEST_CASE("configuration checks") {
  CrfConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.sigma_s = 0.0;
  CHECK_THROWS(cfg.validate());
  cfg = CrfConfig{};
  cfg.beta1 = -1.0;
  CHECK_THROWS(cfg.validate());
  cfg = CrfConfig{};
  cfg.grid_resolution = 0.5;
  CHECK_THROWS(cfg.validate());
}
