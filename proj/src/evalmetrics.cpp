#include "corrseg/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <sstream>

#include <fftw3.h>

namespace corrseg {

namespace {

void check_valid(const FlowField& flow, const FlowField& gt, const Mask* valid, const char* what) {
  require_same_size(flow, gt, what);
  if (valid) {
    require_same_size(flow, *valid, what);
    if (valid->count() == 0) throw ContractError(std::string(what) + ": empty valid set");
  }
}

template <typename PerPixel>
double mean_over_valid(const FlowField& flow, const Mask* valid, PerPixel&& f) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < flow.pixel_count(); ++i) {
    if (valid && !(*valid)[i]) continue;
    sum += f(i);
    ++n;
  }
  return sum / static_cast<double>(n);
}

// Thin RAII wrapper around an in-place complex 2-D transform.
class Spectrum {
 public:
  Spectrum(int width, int height) : width_(width), height_(height) {
    data_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * size()));
    forward_ = fftw_plan_dft_2d(height, width, data_, data_, FFTW_FORWARD, FFTW_ESTIMATE);
    backward_ = fftw_plan_dft_2d(height, width, data_, data_, FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  ~Spectrum() {
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(backward_);
    fftw_free(data_);
  }
  Spectrum(const Spectrum&) = delete;
  Spectrum& operator=(const Spectrum&) = delete;

  std::size_t size() const { return static_cast<std::size_t>(width_) * height_; }
  void load(const std::vector<double>& field) {
    for (std::size_t i = 0; i < size(); ++i) {
      data_[i][0] = field[i];
      data_[i][1] = 0.0;
    }
  }
  std::vector<double> real_part() const {
    std::vector<double> out(size());
    const double scale = 1.0 / static_cast<double>(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = data_[i][0] * scale;
    return out;
  }
  void forward() { fftw_execute(forward_); }
  void backward() { fftw_execute(backward_); }

  // Signed frequency in cycles per pixel.
  static double frequency(int k, int n) {
    return (k <= n / 2 ? k : k - n) / static_cast<double>(n);
  }

  template <typename F>
  void for_each(F&& f) {
    for (int ky = 0; ky < height_; ++ky) {
      for (int kx = 0; kx < width_; ++kx) {
        auto& c = data_[static_cast<std::size_t>(ky) * width_ + kx];
        std::complex<double> z(c[0], c[1]);
        z = f(frequency(kx, width_), frequency(ky, height_), kx, ky, z);
        c[0] = z.real();
        c[1] = z.imag();
      }
    }
  }

 private:
  int width_;
  int height_;
  fftw_complex* data_ = nullptr;
  fftw_plan forward_{};
  fftw_plan backward_{};
};

std::vector<double> roll(const std::vector<double>& field, int width, int height, int dx, int dy) {
  std::vector<double> out(field.size());
  for (int y = 0; y < height; ++y) {
    const int sy = ((y - dy) % height + height) % height;
    for (int x = 0; x < width; ++x) {
      const int sx = ((x - dx) % width + width) % width;
      out[static_cast<std::size_t>(y) * width + x] = field[static_cast<std::size_t>(sy) * width + sx];
    }
  }
  return out;
}

std::pair<double, double> parse_pair(const std::string& value) {
  std::istringstream in(value);
  double a = 0, b = 0;
  char comma = 0;
  if (!(in >> a >> comma >> b) || comma != ',') throw ContractError("expected 'a,b': " + value);
  return {a, b};
}

std::vector<double> parse_list(const std::string& value, std::size_t expected) {
  std::vector<double> out;
  std::istringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(std::stod(item));
  if (out.size() != expected) {
    throw ContractError("expected " + std::to_string(expected) + " comma-separated values: " + value);
  }
  return out;
}

}  // namespace

double aepe(const FlowField& flow, const FlowField& gt, const Mask* valid) {
  check_valid(flow, gt, valid, "aepe");
  return mean_over_valid(flow, valid, [&](std::size_t i) {
    const double du = flow.u_data()[i] - gt.u_data()[i];
    const double dv = flow.v_data()[i] - gt.v_data()[i];
    return std::sqrt(du * du + dv * dv);
  });
}

double aae(const FlowField& flow, const FlowField& gt, const Mask* valid) {
  check_valid(flow, gt, valid, "aae");
  return mean_over_valid(flow, valid, [&](std::size_t i) {
    const double u = flow.u_data()[i], v = flow.v_data()[i];
    const double ug = gt.u_data()[i], vg = gt.v_data()[i];
    // Angle between (u, v, 1) and (ug, vg, 1); atan2 stays exact near zero
    // where acos of the normalized dot product loses precision.
    const double cx = v - vg, cy = ug - u, cz = u * vg - v * ug;
    const double dot = u * ug + v * vg + 1.0;
    return std::atan2(std::sqrt(cx * cx + cy * cy + cz * cz), dot) * 180.0 / std::numbers::pi;
  });
}

double iou(const Mask& mask, const Mask& gt) {
  require_same_size(mask, gt, "iou");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < mask.pixel_count(); ++i) {
    inter += (mask[i] && gt[i]) ? 1 : 0;
    uni += (mask[i] || gt[i]) ? 1 : 0;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<double> band_limited_texture(int width, int height, double cutoff,
                                         std::uint64_t seed, double amplitude) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> noise(static_cast<std::size_t>(width) * height);
  for (double& n : noise) n = normal(rng);

  Spectrum spectrum(width, height);
  spectrum.load(noise);
  spectrum.forward();
  spectrum.for_each([&](double fx, double fy, int kx, int ky, std::complex<double> z) {
    const bool dc = kx == 0 && ky == 0;
    const bool nyquist = (width % 2 == 0 && kx == width / 2) || (height % 2 == 0 && ky == height / 2);
    if (dc || nyquist || std::hypot(fx, fy) > cutoff) return std::complex<double>(0.0, 0.0);
    return z;
  });
  spectrum.backward();
  std::vector<double> texture = spectrum.real_part();

  double var = 0.0;
  for (double t : texture) var += t * t;
  var /= static_cast<double>(texture.size());
  const double scale = var > 0.0 ? amplitude / std::sqrt(var) : 0.0;
  for (double& t : texture) t *= scale;
  return texture;
}

std::vector<double> spectral_shift(const std::vector<double>& field, int width, int height,
                                   double dx, double dy) {
  if (field.size() != static_cast<std::size_t>(width) * height) {
    throw ContractError("spectral_shift: field size does not match dimensions");
  }
  if (dx == std::round(dx) && dy == std::round(dy)) {
    return roll(field, width, height, static_cast<int>(dx), static_cast<int>(dy));
  }
  Spectrum spectrum(width, height);
  spectrum.load(field);
  spectrum.forward();
  spectrum.for_each([&](double fx, double fy, int, int, std::complex<double> z) {
    const double phase = -2.0 * std::numbers::pi * (fx * dx + fy * dy);
    return z * std::polar(1.0, phase);
  });
  spectrum.backward();
  return spectrum.real_part();
}

bool SyntheticSpec::in_foreground(double x, double y) const {
  for (const Rect& r : foreground_rects) {
    if (r.contains(x, y)) return true;
  }
  for (const Ellipse& e : foreground_ellipses) {
    if (e.contains(x, y)) return true;
  }
  return false;
}

void SyntheticSpec::validate() const {
  if (width < 2 || height < 2) throw ContractError("synthetic scene must be at least 2x2");
  for (const Vec2& s : {background_shift, foreground_shift}) {
    if (std::abs(s.u) > width / 4.0 || std::abs(s.v) > height / 4.0) {
      throw ContractError("synthetic shifts must be bounded by a quarter of the frame");
    }
  }
  auto rect_ok = [&](const Rect& r) {
    return r.x0 >= 0 && r.y0 >= 0 && r.x1 <= width && r.y1 <= height && r.x0 < r.x1 && r.y0 < r.y1;
  };
  for (const Rect& r : foreground_rects) {
    if (!rect_ok(r)) throw ContractError("foreground rectangle outside the frame");
  }
  for (const Ellipse& e : foreground_ellipses) {
    if (e.cx - e.rx < 0 || e.cy - e.ry < 0 || e.cx + e.rx > width || e.cy + e.ry > height ||
        e.rx <= 0 || e.ry <= 0) {
      throw ContractError("foreground ellipse outside the frame");
    }
  }
  if (textureless_band && !rect_ok(*textureless_band)) {
    throw ContractError("textureless band outside the frame");
  }
  if (!(texture_cutoff > 0.0 && texture_cutoff < 0.5)) {
    throw ContractError("texture_cutoff must lie in (0, 0.5)");
  }
  if (noise_sigma < 0.0 || texture_amplitude < 0.0) {
    throw ContractError("noise and amplitude must be non-negative");
  }
}

bool SyntheticSpec::set(const std::string& key, const std::string& value) {
  auto rect_from = [&](const std::string& v) {
    const auto xs = parse_list(v, 4);
    return Rect{static_cast<int>(xs[0]), static_cast<int>(xs[1]), static_cast<int>(xs[2]),
                static_cast<int>(xs[3])};
  };
  auto color_from = [&](const std::string& v) {
    const auto xs = parse_list(v, 3);
    return std::array<double, 3>{xs[0], xs[1], xs[2]};
  };
  if (key == "width") width = std::stoi(value);
  else if (key == "height") height = std::stoi(value);
  else if (key == "background_shift") { auto [a, b] = parse_pair(value); background_shift = {a, b}; }
  else if (key == "foreground_shift") { auto [a, b] = parse_pair(value); foreground_shift = {a, b}; }
  else if (key == "rect") foreground_rects.push_back(rect_from(value));
  else if (key == "ellipse") {
    const auto xs = parse_list(value, 4);
    foreground_ellipses.push_back(Ellipse{xs[0], xs[1], xs[2], xs[3]});
  }
  else if (key == "texture_seed") texture_seed = std::stoull(value);
  else if (key == "texture_cutoff") texture_cutoff = std::stod(value);
  else if (key == "texture_amplitude") texture_amplitude = std::stod(value);
  else if (key == "textureless_band") textureless_band = rect_from(value);
  else if (key == "band_color") band_color = color_from(value);
  else if (key == "background_color") background_color = color_from(value);
  else if (key == "foreground_color") foreground_color = color_from(value);
  else if (key == "noise_sigma") noise_sigma = std::stod(value);
  else if (key == "noise_seed") noise_seed = std::stoull(value);
  else return false;
  return true;
}

std::string SyntheticSpec::to_text() const {
  std::ostringstream out;
  out.precision(17);
  out << "width=" << width << "\nheight=" << height << '\n';
  out << "background_shift=" << background_shift.u << ',' << background_shift.v << '\n';
  out << "foreground_shift=" << foreground_shift.u << ',' << foreground_shift.v << '\n';
  for (const Rect& r : foreground_rects) {
    out << "rect=" << r.x0 << ',' << r.y0 << ',' << r.x1 << ',' << r.y1 << '\n';
  }
  for (const Ellipse& e : foreground_ellipses) {
    out << "ellipse=" << e.cx << ',' << e.cy << ',' << e.rx << ',' << e.ry << '\n';
  }
  out << "texture_seed=" << texture_seed << "\ntexture_cutoff=" << texture_cutoff
      << "\ntexture_amplitude=" << texture_amplitude << '\n';
  if (textureless_band) {
    const Rect& b = *textureless_band;
    out << "textureless_band=" << b.x0 << ',' << b.y0 << ',' << b.x1 << ',' << b.y1 << '\n';
  }
  if (band_color) {
    out << "band_color=" << (*band_color)[0] << ',' << (*band_color)[1] << ',' << (*band_color)[2]
        << '\n';
  }
  out << "background_color=" << background_color[0] << ',' << background_color[1] << ','
      << background_color[2] << '\n';
  out << "foreground_color=" << foreground_color[0] << ',' << foreground_color[1] << ','
      << foreground_color[2] << '\n';
  out << "noise_sigma=" << noise_sigma << "\nnoise_seed=" << noise_seed << '\n';
  return out.str();
}

SyntheticSpec SyntheticSpec::from_text(const std::string& text) {
  SyntheticSpec spec;
  spec.foreground_rects.clear();
  spec.foreground_ellipses.clear();
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    if (trim(line).empty()) continue;
    if (eq == std::string::npos) throw ContractError("malformed line: " + line);
    const std::string key = trim(line.substr(0, eq));
    if (!spec.set(key, trim(line.substr(eq + 1)))) throw ContractError("unknown key: " + key);
  }
  return spec;
}

SyntheticPair synthetic_pair(const SyntheticSpec& spec) {
  spec.validate();
  const int w = spec.width;
  const int h = spec.height;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  const auto bg_tex = band_limited_texture(w, h, spec.texture_cutoff, spec.texture_seed,
                                           spec.texture_amplitude);
  const auto fg_tex = band_limited_texture(w, h, spec.texture_cutoff, spec.texture_seed + 1,
                                           spec.texture_amplitude);
  const auto band_color = spec.band_color.value_or(spec.foreground_color);

  // Unclamped per-channel layer colors in layer coordinates.
  std::array<std::vector<double>, 3> bg_layer, fg_layer;
  for (int c = 0; c < 3; ++c) {
    bg_layer[c].resize(n);
    fg_layer[c].resize(n);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        bg_layer[c][i] = spec.background_color[c] + bg_tex[i];
        const bool flat = spec.textureless_band && spec.textureless_band->contains(x, y);
        fg_layer[c][i] = flat ? band_color[c] : spec.foreground_color[c] + fg_tex[i];
      }
    }
  }
  const Vec2 sb = spec.background_shift;
  const Vec2 sf = spec.foreground_shift;
  std::array<std::vector<double>, 3> bg_moved, fg_moved;
  for (int c = 0; c < 3; ++c) {
    bg_moved[c] = spectral_shift(bg_layer[c], w, h, sb.u, sb.v);
    fg_moved[c] = spectral_shift(fg_layer[c], w, h, sf.u, sf.v);
  }
  auto shade = [](double value) { return static_cast<float>(std::clamp(value, 0.0, 1.0)); };

  SyntheticPair pair;
  pair.i1 = Image(w, h, 3);
  Image i2_color(w, h, 3);
  pair.gt_flow = FlowField(w, h);
  pair.gt_mask = Mask(w, h);
  pair.valid = Mask(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const bool fg1 = spec.in_foreground(x, y);
      const bool fg2 = spec.in_foreground(x - sf.u, y - sf.v);
      for (int c = 0; c < 3; ++c) {
        pair.i1.at(x, y, c) = shade(fg1 ? fg_layer[c][i] : bg_layer[c][i]);
        i2_color.at(x, y, c) = shade(fg2 ? fg_moved[c][i] : bg_moved[c][i]);
      }
      const Vec2 s = fg1 ? sf : sb;
      pair.gt_flow.u(x, y) = static_cast<float>(s.u);
      pair.gt_flow.v(x, y) = static_cast<float>(s.v);
      pair.gt_mask.at(x, y) = fg1 ? 1 : 0;

      const double tx = x + s.u;
      const double ty = y + s.v;
      const bool inside = tx >= 0 && ty >= 0 && tx <= w - 1 && ty <= h - 1;
      const bool covered = !fg1 && spec.in_foreground(tx - sf.u, ty - sf.v);
      pair.valid.at(x, y) = inside && !covered ? 1 : 0;
    }
  }
  pair.i2 = luminance(i2_color);

  if (spec.noise_sigma > 0.0) {
    std::mt19937_64 rng(spec.noise_seed);
    std::normal_distribution<double> normal(0.0, spec.noise_sigma);
    for (float& value : pair.i1.data()) {
      value = static_cast<float>(std::clamp(value + normal(rng), 0.0, 1.0));
    }
    for (float& value : pair.i2.data()) {
      value = static_cast<float>(std::clamp(value + normal(rng), 0.0, 1.0));
    }
  }
  return pair;
}

ScoreMap perturbed_score(const Mask& gt, double flip_fraction, int border_width, double sigma,
                         std::uint64_t seed) {
  const int w = gt.width();
  const int h = gt.height();
  Mask noisy = gt;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      bool near_boundary = false;
      for (int dy = -border_width; dy <= border_width && !near_boundary; ++dy) {
        for (int dx = -border_width; dx <= border_width; ++dx) {
          const int qx = std::clamp(x + dx, 0, w - 1);
          const int qy = std::clamp(y + dy, 0, h - 1);
          if (gt.at(qx, qy) != gt.at(x, y)) {
            near_boundary = true;
            break;
          }
        }
      }
      if (near_boundary && unit(rng) < flip_fraction) noisy.at(x, y) = gt.at(x, y) ? 0 : 1;
    }
  }
  return score_from_mask(noisy, sigma);
}

}  // namespace corrseg
