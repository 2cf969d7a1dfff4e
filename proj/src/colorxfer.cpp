#include "mmtrack/colorxfer.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "mmtrack/trackio.hpp"

namespace mmtrack::color {

namespace {

struct Transforms {
  Eigen::Matrix3d rgb_to_lms;
  Eigen::Matrix3d lms_to_rgb;
  Eigen::Matrix3d log_to_lab;
  Eigen::Matrix3d lab_to_log;
};

const Transforms& transforms() {
  static const Transforms t = [] {
    Transforms m;
    m.rgb_to_lms << 0.3811, 0.5783, 0.0402,
                    0.1967, 0.7244, 0.0782,
                    0.0241, 0.1288, 0.8444;
    Eigen::Matrix3d mix;
    mix << 1, 1, 1,
           1, 1, -2,
           1, -1, 0;
    const Eigen::Vector3d scale(1.0 / std::sqrt(3.0), 1.0 / std::sqrt(6.0), 1.0 / std::sqrt(2.0));
    m.log_to_lab = scale.asDiagonal() * mix;
    m.lms_to_rgb = m.rgb_to_lms.inverse();
    m.lab_to_log = m.log_to_lab.inverse();
    return m;
  }();
  return t;
}

Eigen::Vector3d pixel_to_lab(const std::uint8_t* p) {
  const auto& t = transforms();
  const Eigen::Vector3d rgb(p[0] / 255.0, p[1] / 255.0, p[2] / 255.0);
  Eigen::Vector3d lms = t.rgb_to_lms * rgb;
  for (int k = 0; k < 3; ++k) lms[k] = std::log10(std::max(lms[k], kLogFloor));
  return t.log_to_lab * lms;
}

std::uint8_t quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(c * 255.0 + 0.5));
}

void check_image(const ImageRGB& image) {
  if (image.width < 1 || image.height < 1 || image.pixels.size() != image.pixel_count() * 3) {
    throw Error("invalid RGB image");
  }
}

// Two-pass pooled population statistics.
ChannelStats stats_of(std::span<const ImageLab> images) {
  std::size_t n = 0;
  std::array<double, 3> mean{};
  for (const auto& img : images) {
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
      for (int k = 0; k < 3; ++k) mean[k] += img.pixels[3 * i + k];
    }
    n += img.pixel_count();
  }
  if (n < 2) throw Error("channel_stats needs at least two pixels");
  for (auto& m : mean) m /= static_cast<double>(n);
  std::array<double, 3> var{};
  for (const auto& img : images) {
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
      for (int k = 0; k < 3; ++k) {
        const double d = img.pixels[3 * i + k] - mean[k];
        var[k] += d * d;
      }
    }
  }
  ChannelStats s;
  s.mean = mean;
  for (int k = 0; k < 3; ++k) s.std[k] = std::max(std::sqrt(var[k] / static_cast<double>(n)), kStdFloor);
  return s;
}

}  // namespace

ImageRGB::ImageRGB(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

ImageLab rgb_to_lab(const ImageRGB& image) {
  check_image(image);
  ImageLab out{image.width, image.height, std::vector<double>(image.pixels.size())};
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    const Eigen::Vector3d lab = pixel_to_lab(&image.pixels[3 * i]);
    for (int k = 0; k < 3; ++k) out.pixels[3 * i + k] = lab[k];
  }
  return out;
}

ImageRGB lab_to_rgb(const ImageLab& image) {
  if (image.width < 1 || image.height < 1 || image.pixels.size() != image.pixel_count() * 3) {
    throw Error("invalid lab image");
  }
  const auto& t = transforms();
  ImageRGB out(image.width, image.height);
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    const Eigen::Vector3d lab(image.pixels[3 * i], image.pixels[3 * i + 1], image.pixels[3 * i + 2]);
    Eigen::Vector3d lms = t.lab_to_log * lab;
    for (int k = 0; k < 3; ++k) lms[k] = std::pow(10.0, lms[k]);
    const Eigen::Vector3d rgb = t.lms_to_rgb * lms;
    for (int k = 0; k < 3; ++k) out.pixels[3 * i + k] = quantize(rgb[k]);
  }
  return out;
}

ChannelStats channel_stats(std::span<const ImageRGB> images) {
  if (images.empty()) throw Error("channel_stats needs at least one image");
  std::vector<ImageLab> lab;
  lab.reserve(images.size());
  for (const auto& img : images) lab.push_back(rgb_to_lab(img));
  return stats_of(lab);
}

ChannelStats channel_stats(const ImageRGB& image) { return channel_stats(std::span<const ImageRGB>(&image, 1)); }

ChannelStats channel_stats(const ImageLab& image) { return stats_of(std::span<const ImageLab>(&image, 1)); }

ChannelStats reference_stats(std::span<const ImageRGB> frames, int stride) {
  if (stride < 1) throw Error("reference stride must be >= 1");
  std::vector<ImageRGB> picked;
  for (std::size_t i = 0; i < frames.size(); i += static_cast<std::size_t>(stride)) picked.push_back(frames[i]);
  return channel_stats(picked);
}

ImageLab transfer_lab(const ImageLab& content, const ChannelStats& content_stats,
                      const ChannelStats& reference_stats) {
  ImageLab out = content;
  for (int k = 0; k < 3; ++k) {
    if (!(content_stats.std[k] > 0.0) || !(reference_stats.std[k] > 0.0)) {
      throw Error("channel standard deviations must be positive");
    }
  }
  for (std::size_t i = 0; i < content.pixel_count(); ++i) {
    for (int k = 0; k < 3; ++k) {
      double& v = out.pixels[3 * i + k];
      v = reference_stats.std[k] / content_stats.std[k] * (v - content_stats.mean[k]) +
          reference_stats.mean[k];
    }
  }
  return out;
}

ImageRGB transfer(const ImageRGB& content, const ChannelStats& content_stats,
                  const ChannelStats& reference_stats) {
  return lab_to_rgb(transfer_lab(rgb_to_lab(content), content_stats, reference_stats));
}

ImageRGB transfer(const ImageRGB& content, const ChannelStats& reference_stats) {
  const ImageLab lab = rgb_to_lab(content);
  return lab_to_rgb(transfer_lab(lab, channel_stats(lab), reference_stats));
}

}  // namespace mmtrack::color
