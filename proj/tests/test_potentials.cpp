#include <doctest.h>

#include <cmath>
#include <numbers>

#include "corrseg/evalmetrics.hpp"
#include "corrseg/potentials.hpp"
#include "support.hpp"

using namespace corrseg;

namespace {

// Diagonal-covariance mixture density evaluated from the raw parameters.
double mixture_density(const Gmm& g, const std::vector<double>& x) {
  double total = 0.0;
  for (int k = 0; k < g.components(); ++k) {
    double p = g.weights[k];
    for (int d = 0; d < g.dims; ++d) {
      const double var = g.variances[k * g.dims + d];
      const double e = x[d] - g.means[k * g.dims + d];
      p *= std::exp(-0.5 * e * e / var) / std::sqrt(2.0 * std::numbers::pi * var);
    }
    total += p;
  }
  return total;
}

std::vector<double> two_clusters(std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> n(0.0, 0.02);
  std::vector<double> s;
  for (double c : {0.1, 0.9}) {
    for (int i = 0; i < 1000; ++i) {
      for (int d = 0; d < 3; ++d) s.push_back(c + n(rng));
    }
  }
  return s;
}

Image two_color_image(int w, int h) {
  Image img(w, h, 3);
  std::mt19937 rng(4);
  std::normal_distribution<float> n(0.0f, 0.02f);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float base = x < w / 2 ? 0.2f : 0.8f;
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = base + n(rng);
    }
  }
  return img;
}

}  // namespace

TEST_CASE("single pixel histogram concentrates its mass") {
  const JointHistogram h = build_joint_histogram(FlowField(1, 1), Mask(1, 1, 1));
  CHECK(h.prob(0, 0, 1) == doctest::Approx(1.0).epsilon(1e-3));
  double sum = 0.0;
  for (double m : h.mass) sum += m;
  CHECK(sum == doctest::Approx(1.0));
}

TEST_CASE("half split mask divides the bin evenly") {
  Mask m(10, 4);
  for (int y = 0; y < 4; ++y) {
    for (int x = 5; x < 10; ++x) m.at(x, y) = 1;
  }
  const JointHistogram h = build_joint_histogram(FlowField(10, 4, 1.0f, -1.0f), m);
  CHECK(h.prob(1, -1, 0) == doctest::Approx(0.5).epsilon(1e-3));
  CHECK(h.prob(1, -1, 1) == doctest::Approx(0.5).epsilon(1e-3));
}

TEST_CASE("smoothing keeps every entry positive") {
  FlowField f(20, 20);
  std::mt19937 rng(8);
  std::uniform_real_distribution<float> d(-9.0f, 9.0f);
  for (float& v : f.u_data()) v = d(rng);
  for (float& v : f.v_data()) v = d(rng);
  Mask m(20, 20);
  for (std::size_t i = 0; i < m.pixel_count(); i += 3) m[i] = 1;
  const double eps = 1e-4;
  const JointHistogram h = build_joint_histogram(f, m, 2.0, eps);
  const double floor = eps / (static_cast<double>(h.flow_bin_count()) * 2.0);
  for (double v : h.mass) {
    CHECK(v >= floor * (1.0 - 1e-12));
    CHECK(std::isfinite(-std::log(v)));
  }
  // Out-of-range displacements land in the catch-all bins.
  CHECK(std::isfinite(-std::log(h.prob(500.0, -500.0, 1))));
}

TEST_CASE("matching cost of identical frames is zero") {
  const Image img = testing::textured_image(20, 20, 3);
  const MatchingCost cost(img, img);
  for (int y = 1; y < 19; ++y) {
    for (int x = 1; x < 19; ++x) CHECK(cost(x, y, 0, 0) == doctest::Approx(0.0));
  }
}

TEST_CASE("matching cost of two constant frames") {
  const Image a(8, 8, 1, 0.2f), b(8, 8, 1, 0.7f);
  CHECK(matching_cost(a, b, FlowField(8, 8), {4, 4}) == doctest::Approx(0.5).epsilon(1e-6));
  // Targets outside the frame cost the occlusion constant.
  CHECK(matching_cost(a, b, FlowField(8, 8, 50.0f, 0.0f), {4, 4}) == kOcclusionCost);
}

TEST_CASE("matching cost prefers the true shift") {
  SyntheticSpec s;
  s.width = 64;
  s.height = 64;
  s.background_shift = {3.0, 1.0};
  s.foreground_rects.clear();
  const SyntheticPair p = synthetic_pair(s);
  const MatchingCost cost(p.i1, p.i2);
  double at_truth = 0.0, off = 0.0;
  int n = 0;
  for (int y = 8; y < 56; ++y) {
    for (int x = 8; x < 50; ++x) {
      at_truth += cost(x, y, 3.0, 1.0);
      off += cost(x, y, 5.0, 1.0);
      ++n;
    }
  }
  CHECK(at_truth / n < off / n);
}

TEST_CASE("correspondence unary") {
  CHECK(unary_correspondence(0.0, 0.2) == 0.0);
  CHECK(unary_correspondence(0.04, 0.2) == doctest::Approx(1.0 - std::exp(-1.0)));
  double prev = -1.0;
  for (double mu = 0.0; mu < 1.0; mu += 0.05) {
    const double v = unary_correspondence(mu, 0.2);
    CHECK(v > prev);
    CHECK(v < 1.0);
    prev = v;
  }
  CHECK(unary_correspondence(50.0, 0.2) == doctest::Approx(1.0));
}

TEST_CASE("EM recovers two separated clusters") {
  const auto s = two_clusters(12);
  const Gmm g = fit_gmm(s, 3, 2, 5);
  REQUIRE(g.components() == 2);
  const int lo = g.means[0] < g.means[3] ? 0 : 1;
  for (int d = 0; d < 3; ++d) {
    CHECK(std::abs(g.means[lo * 3 + d] - 0.1) < 0.02);
    CHECK(std::abs(g.means[(1 - lo) * 3 + d] - 0.9) < 0.02);
  }
}

TEST_CASE("EM log-likelihood never decreases") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto s = two_clusters(static_cast<std::uint32_t>(seed) + 30);
    const Gmm g = fit_gmm(s, 3, 5, seed);
    REQUIRE(g.log_likelihood.size() >= 2);
    for (std::size_t i = 1; i < g.log_likelihood.size(); ++i) {
      CHECK(g.log_likelihood[i] >= g.log_likelihood[i - 1] - 1e-9 * std::abs(g.log_likelihood[i - 1]));
    }
  }
}

TEST_CASE("identical samples collapse onto the sample") {
  std::vector<double> s;
  for (int i = 0; i < 20; ++i) s.insert(s.end(), {0.3, 0.5, 0.7});
  const GmmFitOptions opt;
  const Gmm g = fit_gmm(s, 3, 4, 1, opt);
  for (int k = 0; k < g.components(); ++k) {
    for (int d = 0; d < 3; ++d) {
      CHECK(g.means[k * 3 + d] == doctest::Approx(s[d]));
      CHECK(g.variances[k * 3 + d] == doctest::Approx(opt.variance_floor));
    }
  }
  const double x[3] = {0.3, 0.5, 0.7};
  CHECK(std::isfinite(g.density(x)));
}

TEST_CASE("fewer samples than components reduces K") {
  const std::vector<double> s{0.1, 0.2, 0.3, 0.8, 0.7, 0.6};
  CHECK(fit_gmm(s, 3, 4, 0).components() == 2);
}

TEST_CASE("segmentation unary symmetry and ordering") {
  Gmm same;
  same.dims = 3;
  same.weights = {1.0};
  same.means = {0.5, 0.5, 0.5};
  same.variances = {0.1, 0.1, 0.1};
  const GmmColorModel sym{same, same};
  const Image img(3, 3, 3, 0.4f);
  const ScoreMap half(3, 3, 0.5f);
  CHECK(unary_segmentation(half, sym, img, {1, 1}, 1) ==
        doctest::Approx(unary_segmentation(half, sym, img, {1, 1}, 0)));

  Gmm far = same;
  far.means = {0.9, 0.9, 0.9};
  far.variances = {0.01, 0.01, 0.01};
  const GmmColorModel fg_heavy{same, far};
  const ScoreMap sure = clamp_score(ScoreMap(3, 3, 1.0f));
  CHECK(unary_segmentation(sure, fg_heavy, img, {1, 1}, 1) <
        unary_segmentation(sure, fg_heavy, img, {1, 1}, 0));
}

TEST_CASE("segmentation unary matches a standalone mixture") {
  const Image img = two_color_image(40, 20);
  Mask m(40, 20);
  for (int y = 0; y < 20; ++y) {
    for (int x = 20; x < 40; ++x) m.at(x, y) = 1;
  }
  const GmmColorModel model = fit_color_model(img, m, 6, 4, 3);
  ScoreMap score(40, 20);
  for (int y = 0; y < 20; ++y) {
    for (int x = 0; x < 40; ++x) score.at(x, y) = 0.1f + 0.8f * x / 39.0f;
  }
  score = clamp_score(score);
  for (Pixel p : {Pixel{30, 5}, Pixel{25, 15}}) {
    const std::vector<double> c{img.at(p.x, p.y, 0), img.at(p.x, p.y, 1), img.at(p.x, p.y, 2)};
    for (int lab : {0, 1}) {
      const double s = lab ? score.at(p.x, p.y) : 1.0 - score.at(p.x, p.y);
      const double cd = std::max(mixture_density(lab ? model.fg : model.bg, c), 1e-12);
      CHECK(unary_segmentation(score, model, img, p, lab) ==
            doctest::Approx(-std::log(s) - std::log(cd)).epsilon(1e-9));
    }
  }
}

TEST_CASE("color model honours the component counts") {
  const Image img = two_color_image(40, 20);
  Mask m(40, 20);
  for (int y = 0; y < 20; ++y) {
    for (int x = 20; x < 40; ++x) m.at(x, y) = 1;
  }
  const GmmColorModel model = fit_color_model(img, m);
  CHECK(model.fg.components() == 6);
  CHECK(model.bg.components() == 4);
}

TEST_CASE("unary table is the weighted sum of its parts") {
  const int w = 24, h = 16;
  const Image i1 = testing::textured_image(w, h, 5);
  const Image i2 = testing::textured_image(w, h, 6);
  RegionalCorrespondenceSet set;
  set.maps = {FlowField(w, h), FlowField(w, h, 1.0f, 0.5f)};
  set.supports = {Mask(w, h, 1), Mask(w, h, 1)};
  Mask init(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = w / 2; x < w; ++x) init.at(x, y) = 1;
  }
  const JointHistogram hist = build_joint_histogram(set.maps[1], init);
  const ScoreMap score = score_from_mask(init, 2.0);
  const GmmColorModel model = fit_color_model(i1, init, 2, 2, 1);
  UnaryParams params;
  params.alpha1 = 1.5;
  params.alpha2 = 1.5;
  const PotentialTable t = assemble_unary(set, hist, score, model, i1, i2, params);
  REQUIRE(t.labels == 2);
  for (Pixel p : {Pixel{3, 4}, Pixel{20, 10}, Pixel{0, 15}}) {
    const std::size_t i = static_cast<std::size_t>(p.y) * w + p.x;
    for (int c = 0; c < 2; ++c) {
      const double hu = set.maps[c].u(p.x, p.y), hv = set.maps[c].v(p.x, p.y);
      const double psi_c = unary_correspondence(matching_cost(i1, i2, set.maps[c], p), params.sigma_c);
      for (int m = 0; m < 2; ++m) {
        const double expected = -std::log(hist.prob(hu, hv, m)) + 1.5 * psi_c +
                                1.5 * unary_segmentation(score, model, i1, p, m);
        CHECK(t.unary(i, c, m) == doctest::Approx(expected).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("symmetric single-candidate evidence gives no preference over m") {
  const int w = 12, h = 10;
  const Image i1 = testing::textured_image(w, h, 1);
  RegionalCorrespondenceSet set;
  set.maps = {FlowField(w, h)};
  set.supports = {Mask(w, h, 1)};
  JointHistogram hist = build_joint_histogram(FlowField(w, h), Mask(w, h));
  for (double& v : hist.mass) v = 1.0 / hist.mass.size();
  Gmm g;
  g.dims = 3;
  g.weights = {1.0};
  g.means = {0.5, 0.5, 0.5};
  g.variances = {0.05, 0.05, 0.05};
  const PotentialTable t =
      assemble_unary(set, hist, ScoreMap(w, h, 0.5f), GmmColorModel{g, g}, i1, i1);
  for (std::size_t p = 0; p < t.pixel_count(); ++p) {
    CHECK(t.unary(p, 0, 1) - t.unary(p, 0, 0) == doctest::Approx(0.0));
  }
}

TEST_CASE("table favours the foreground candidate on foreground pixels") {
  SyntheticSpec s;
  s.width = 96;
  s.height = 96;
  s.foreground_rects = {{28, 24, 68, 80}};
  const SyntheticPair p = synthetic_pair(s);
  RegionalCorrespondenceSet set;
  set.maps = {p.gt_flow, p.gt_flow};
  // Candidate 0 is the background motion everywhere, candidate 1 the foreground motion.
  for (std::size_t i = 0; i < p.gt_flow.pixel_count(); ++i) {
    set.maps[0].u_data()[i] = static_cast<float>(s.background_shift.u);
    set.maps[0].v_data()[i] = static_cast<float>(s.background_shift.v);
    set.maps[1].u_data()[i] = static_cast<float>(s.foreground_shift.u);
    set.maps[1].v_data()[i] = static_cast<float>(s.foreground_shift.v);
  }
  set.supports = {Mask(96, 96, 1), Mask(96, 96, 1)};
  const ScoreMap score = score_from_mask(p.gt_mask, 3.0);
  const JointHistogram hist = build_joint_histogram(p.gt_flow, threshold_score(score));
  const GmmColorModel model = fit_color_model(p.i1, threshold_score(score));
  const PotentialTable t = assemble_unary(set, hist, score, model, p.i1, p.i2);
  const Mask flat = textureless_pixels(p.i1, RegionalParams{}.texture_threshold);
  int hits = 0, total = 0;
  for (std::size_t i = 0; i < t.pixel_count(); ++i) {
    if (!p.gt_mask[i] || !p.valid[i] || (flat.pixel_count() && flat[i])) continue;
    double best = 1e300;
    int arg = -1;
    for (int c = 0; c < 2; ++c) {
      for (int m = 0; m < 2; ++m) {
        if (t.unary(i, c, m) < best) {
          best = t.unary(i, c, m);
          arg = c;
        }
      }
    }
    hits += arg == 1;
    ++total;
  }
  REQUIRE(total > 0);
  CHECK(static_cast<double>(hits) / total >= 0.9);
}

TEST_CASE("refreshing the colour model touches only the m columns") {
  const int w = 16, h = 12;
  const Image i1 = two_color_image(w, h);
  RegionalCorrespondenceSet set;
  set.maps = {FlowField(w, h), FlowField(w, h, 1.0f, 0.0f)};
  set.supports = {Mask(w, h, 1), Mask(w, h, 1)};
  Mask a(w, h), b(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      a.at(x, y) = x >= w / 2;
      b.at(x, y) = x >= w / 4;
    }
  }
  const ScoreMap score = score_from_mask(a, 2.0);
  const JointHistogram hist = build_joint_histogram(FlowField(w, h), a);
  PotentialTable t = assemble_unary(set, hist, score, fit_color_model(i1, a, 2, 2), i1, i1);
  const auto corr = t.corr_cost;
  const GmmColorModel other = fit_color_model(i1, b, 2, 2);
  refresh_segmentation(t, score, other, i1);
  CHECK(t.corr_cost == corr);
  const double expected = 1.5 * unary_segmentation(score, other, i1, {5, 5}, 1);
  CHECK(t.seg_cost[(5 * w + 5) * 2 + 1] == doctest::Approx(expected));
}

TEST_CASE("table dump round trip") {
  testing::TempDir dir("cspt");
  PotentialTable t;
  t.width = 3;
  t.height = 2;
  t.labels = 2;
  t.corr_cost.resize(3 * 2 * 2 * 2);
  t.seg_cost.resize(3 * 2 * 2);
  for (std::size_t i = 0; i < t.corr_cost.size(); ++i) t.corr_cost[i] = 0.25 * i;
  for (std::size_t i = 0; i < t.seg_cost.size(); ++i) t.seg_cost[i] = 0.5 * i;
  write_potential_table(dir / "t.cspt", t);
  CHECK(std::filesystem::file_size(dir / "t.cspt") == 4u + 12u + 24u * 4u);
  const PotentialTable back = read_potential_table(dir / "t.cspt");
  REQUIRE(back.labels == 2);
  for (std::size_t p = 0; p < 6; ++p) {
    for (int c = 0; c < 2; ++c) {
      for (int m = 0; m < 2; ++m) CHECK(back.unary(p, c, m) == doctest::Approx(t.unary(p, c, m)));
    }
  }
}
