#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace mmtrack::color {

struct ImageRGB {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB triples

  ImageRGB() = default;
  ImageRGB(int w, int h);

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  friend bool operator==(const ImageRGB&, const ImageRGB&) = default;
};

struct ImageLab {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;  // row-major (l, alpha, beta) triples

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
};

struct ChannelStats {
  std::array<double, 3> mean{};
  std::array<double, 3> std{1.0, 1.0, 1.0};
};

inline constexpr double kLogFloor = 1e-6;
inline constexpr double kStdFloor = 1e-6;

ImageLab rgb_to_lab(const ImageRGB& image);
// Clamps to [0, 1] before 8-bit quantization (round half up).
ImageRGB lab_to_rgb(const ImageLab& image);

// Pooled mean and population standard deviation over every pixel.
ChannelStats channel_stats(std::span<const ImageRGB> images);
ChannelStats channel_stats(const ImageRGB& image);
ChannelStats channel_stats(const ImageLab& image);

// Pools every `stride`-th frame, starting with the first.
ChannelStats reference_stats(std::span<const ImageRGB> frames, int stride = 30);

// Per channel: (ref.std / content.std) * (v - content.mean) + ref.mean.
ImageLab transfer_lab(const ImageLab& content, const ChannelStats& content_stats,
                      const ChannelStats& reference_stats);
ImageRGB transfer(const ImageRGB& content, const ChannelStats& content_stats,
                  const ChannelStats& reference_stats);
// Uses the content image's own statistics.
ImageRGB transfer(const ImageRGB& content, const ChannelStats& reference_stats);

// Binary PPM (P6, maxval 255) with optional header comments.
ImageRGB read_ppm(std::istream& in);
ImageRGB read_ppm_file(const std::filesystem::path& path);
void write_ppm(const ImageRGB& image, std::ostream& out);
void write_ppm_file(const ImageRGB& image, const std::filesystem::path& path);

}  // namespace mmtrack::color
