#include "corrseg/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "binary_io.hpp"

namespace corrseg {

using detail::get_le;
using detail::put_le;

namespace {

void check_dims(int width, int height) {
  if (width <= 0 || height <= 0) {
    throw ContractError("raster dimensions must be positive");
  }
}

cv::Mat read_raw(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw IoError("cannot open " + path.string());
  }
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED | cv::IMREAD_ANYDEPTH);
  if (mat.empty()) {
    throw IoError("cannot decode " + path.string());
  }
  return mat;
}

double depth_scale(const cv::Mat& mat, const std::filesystem::path& path) {
  switch (mat.depth()) {
    case CV_8U:
      return 1.0 / 255.0;
    case CV_16U:
      return 1.0 / 65535.0;
    default:
      throw FormatError(path.string() + ": expected an 8- or 16-bit raster");
  }
}

void write_raw(const std::filesystem::path& path, const cv::Mat& mat) {
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), mat);
  } catch (const cv::Exception& e) {
    throw IoError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write " + path.string());
}

std::vector<double> gaussian_taps(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> taps(2 * radius + 1);
  double sum = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    taps[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    sum += taps[k + radius];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

}  // namespace

Image::Image(int width, int height, int channels, float fill)
    : width_(width), height_(height), channels_(channels) {
  check_dims(width, height);
  if (channels != 1 && channels != 3) throw FormatError("images must have 1 or 3 channels");
  data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
}

Image::Image(int width, int height, int channels, std::vector<float> data)
    : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
  check_dims(width, height);
  if (channels != 1 && channels != 3) throw FormatError("images must have 1 or 3 channels");
  if (data_.size() != static_cast<std::size_t>(width) * height * channels) {
    throw ContractError("image data length does not match its dimensions");
  }
}

float Image::at_clamped(int x, int y, int c) const {
  x = std::clamp(x, 0, width_ - 1);
  y = std::clamp(y, 0, height_ - 1);
  return data_[index(x, y, c)];
}

FlowField::FlowField(int width, int height, float u, float v) : width_(width), height_(height) {
  check_dims(width, height);
  u_.assign(static_cast<std::size_t>(width) * height, u);
  v_.assign(static_cast<std::size_t>(width) * height, v);
}

Mask::Mask(int width, int height, std::uint8_t fill) : width_(width), height_(height) {
  check_dims(width, height);
  labels_.assign(static_cast<std::size_t>(width) * height, fill ? 1 : 0);
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), std::uint8_t{1}));
}

ScoreMap::ScoreMap(int width, int height, float fill) : width_(width), height_(height) {
  check_dims(width, height);
  prob_fg_.assign(static_cast<std::size_t>(width) * height, fill);
}

Image load_image(const std::filesystem::path& path) {
  const cv::Mat mat = read_raw(path);
  const int channels = mat.channels();
  if (channels != 1 && channels != 3) {
    throw FormatError(path.string() + ": unsupported channel count " + std::to_string(channels));
  }
  const double scale = depth_scale(mat, path);
  Image image(mat.cols, mat.rows, channels);
  for (int y = 0; y < mat.rows; ++y) {
    for (int x = 0; x < mat.cols; ++x) {
      for (int c = 0; c < channels; ++c) {
        // OpenCV stores color as BGR.
        const int src_c = channels == 3 ? 2 - c : 0;
        double raw = 0.0;
        if (mat.depth() == CV_8U) {
          raw = mat.ptr<std::uint8_t>(y)[x * channels + src_c];
        } else {
          raw = mat.ptr<std::uint16_t>(y)[x * channels + src_c];
        }
        image.at(x, y, c) = static_cast<float>(raw * scale);
      }
    }
  }
  return image;
}

void save_image(const std::filesystem::path& path, const Image& image, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw ContractError("bit depth must be 8 or 16");
  const int channels = image.channels();
  const bool wide = bit_depth == 16;
  const double scale = wide ? 65535.0 : 255.0;
  cv::Mat mat(image.height(), image.width(), wide ? CV_16UC(channels) : CV_8UC(channels));
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < channels; ++c) {
        const int dst_c = channels == 3 ? 2 - c : 0;
        const double v = std::clamp(image.at(x, y, c), 0.0f, 1.0f);
        const long q = std::lround(v * scale);
        if (wide) {
          mat.ptr<std::uint16_t>(y)[x * channels + dst_c] = static_cast<std::uint16_t>(q);
        } else {
          mat.ptr<std::uint8_t>(y)[x * channels + dst_c] = static_cast<std::uint8_t>(q);
        }
      }
    }
  }
  write_raw(path, mat);
}

FlowField read_flo(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12) throw FormatError(path.string() + ": truncated .flo header");
  const float magic = get_le<float>(bytes.data());
  if (magic != kFloMagic) throw FormatError(path.string() + ": bad .flo magic");
  const std::int32_t width = get_le<std::int32_t>(bytes.data() + 4);
  const std::int32_t height = get_le<std::int32_t>(bytes.data() + 8);
  if (width <= 0 || height <= 0) throw FormatError(path.string() + ": invalid .flo dimensions");
  const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (bytes.size() < 12 + n * 8) throw FormatError(path.string() + ": truncated .flo payload");
  FlowField flow(width, height);
  const char* p = bytes.data() + 12;
  for (std::size_t i = 0; i < n; ++i, p += 8) {
    flow.u_data()[i] = get_le<float>(p);
    flow.v_data()[i] = get_le<float>(p + 4);
  }
  return flow;
}

void write_flo(const std::filesystem::path& path, const FlowField& flow) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  put_le(out, kFloMagic);
  put_le(out, static_cast<std::int32_t>(flow.width()));
  put_le(out, static_cast<std::int32_t>(flow.height()));
  for (std::size_t i = 0; i < flow.pixel_count(); ++i) {
    put_le(out, flow.u_data()[i]);
    put_le(out, flow.v_data()[i]);
  }
  if (!out) throw IoError("short write to " + path.string());
}

Mask load_mask(const std::filesystem::path& path) {
  const Image image = load_image(path);
  Mask mask(image.width(), image.height());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) mask.at(x, y) = image.at(x, y, 0) > 0.0f ? 1 : 0;
  }
  return mask;
}

void save_mask(const std::filesystem::path& path, const Mask& mask) {
  cv::Mat mat(mask.height(), mask.width(), CV_8UC1);
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) mat.at<std::uint8_t>(y, x) = mask.at(x, y) ? 255 : 0;
  }
  write_raw(path, mat);
}

ScoreMap read_score_map(const std::filesystem::path& path) {
  const cv::Mat mat = read_raw(path);
  if (mat.channels() != 1) throw FormatError(path.string() + ": score map must be single-channel");
  ScoreMap score(mat.cols, mat.rows);
  for (int y = 0; y < mat.rows; ++y) {
    for (int x = 0; x < mat.cols; ++x) {
      double v = 0.0;
      switch (mat.depth()) {
        case CV_8U: v = mat.at<std::uint8_t>(y, x) / 255.0; break;
        case CV_16U: v = mat.at<std::uint16_t>(y, x) / 65535.0; break;
        case CV_32F: v = mat.at<float>(y, x); break;
        default: throw FormatError(path.string() + ": unsupported score map depth");
      }
      if (!std::isfinite(v)) throw FormatError(path.string() + ": non-finite score");
      score.at(x, y) = static_cast<float>(v);
    }
  }
  return clamp_score(std::move(score));
}

void write_score_map(const std::filesystem::path& path, const ScoreMap& score) {
  if (path.extension() == ".pfm") {
    cv::Mat mat(score.height(), score.width(), CV_32FC1);
    for (int y = 0; y < score.height(); ++y) {
      for (int x = 0; x < score.width(); ++x) mat.at<float>(y, x) = score.at(x, y);
    }
    write_raw(path, mat);
    return;
  }
  cv::Mat mat(score.height(), score.width(), CV_16UC1);
  for (int y = 0; y < score.height(); ++y) {
    for (int x = 0; x < score.width(); ++x) {
      const double v = std::clamp(static_cast<double>(score.at(x, y)), 0.0, 1.0);
      mat.at<std::uint16_t>(y, x) = static_cast<std::uint16_t>(std::lround(v * 65535.0));
    }
  }
  write_raw(path, mat);
}

Image luminance(const Image& image) {
  if (image.channels() == 1) return image;
  Image gray(image.width(), image.height(), 1);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      gray.at(x, y) = 0.299f * image.at(x, y, 0) + 0.587f * image.at(x, y, 1) +
                      0.114f * image.at(x, y, 2);
    }
  }
  return gray;
}

Image gaussian_blur(const Image& image, double sigma) {
  if (sigma <= 0.0) return image;
  const auto taps = gaussian_taps(sigma);
  const int radius = static_cast<int>(taps.size() / 2);
  const int w = image.width();
  const int h = image.height();
  const int ch = image.channels();
  Image tmp(w, h, ch);
  Image out(w, h, ch);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) acc += taps[k + radius] * image.at_clamped(x + k, y, c);
        tmp.at(x, y, c) = static_cast<float>(acc);
      }
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) acc += taps[k + radius] * tmp.at_clamped(x, y + k, c);
        out.at(x, y, c) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

void central_gradient(const Image& gray, Image& gx, Image& gy) {
  const int w = gray.width();
  const int h = gray.height();
  gx = Image(w, h, 1);
  gy = Image(w, h, 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      gx.at(x, y) = 0.5f * (gray.at_clamped(x + 1, y) - gray.at_clamped(x - 1, y));
      gy.at(x, y) = 0.5f * (gray.at_clamped(x, y + 1) - gray.at_clamped(x, y - 1));
    }
  }
}

float sample_bilinear(const Image& image, double x, double y, int c) {
  x = std::clamp(x, 0.0, static_cast<double>(image.width() - 1));
  y = std::clamp(y, 0.0, static_cast<double>(image.height() - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0;
  const double fy = y - y0;
  const double a = image.at_clamped(x0, y0, c);
  const double b = image.at_clamped(x0 + 1, y0, c);
  const double d = image.at_clamped(x0, y0 + 1, c);
  const double e = image.at_clamped(x0 + 1, y0 + 1, c);
  return static_cast<float>((1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * d + fx * e));
}

ScoreMap clamp_score(ScoreMap score) {
  for (std::size_t i = 0; i < score.pixel_count(); ++i) {
    score[i] = std::clamp(score[i], kProbEpsilon, 1.0f - kProbEpsilon);
  }
  return score;
}

ScoreMap score_from_mask(const Mask& mask, double sigma) {
  Image raw(mask.width(), mask.height(), 1);
  for (std::size_t i = 0; i < mask.pixel_count(); ++i) raw.data()[i] = mask[i] ? 1.0f : 0.0f;
  const Image blurred = gaussian_blur(raw, sigma);
  ScoreMap score(mask.width(), mask.height());
  for (std::size_t i = 0; i < mask.pixel_count(); ++i) score[i] = blurred.data()[i];
  return clamp_score(std::move(score));
}

Mask threshold_score(const ScoreMap& score) {
  Mask mask(score.width(), score.height());
  for (std::size_t i = 0; i < score.pixel_count(); ++i) mask[i] = score[i] > 0.5f ? 1 : 0;
  return mask;
}

}  // namespace corrseg
