#include <cctype>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "mmtrack/colorxfer.hpp"
#include "mmtrack/trackio.hpp"

namespace mmtrack::color {

namespace {

// Skips whitespace and '#' comments between header tokens.
void skip_separators(std::istream& in) {
  while (true) {
    const int c = in.peek();
    if (c == '#') {
      std::string ignored;
      std::getline(in, ignored);
    } else if (c != EOF && std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

int read_header_int(std::istream& in, const char* what) {
  skip_separators(in);
  long v = 0;
  int digits = 0;
  while (std::isdigit(in.peek())) {
    v = v * 10 + (in.get() - '0');
    if (v > 1 << 20) throw Error(std::string("ppm: ") + what + " too large");
    ++digits;
  }
  if (digits == 0) throw Error(std::string("ppm: cannot read ") + what);
  return static_cast<int>(v);
}

}  // namespace

ImageRGB read_ppm(std::istream& in) {
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '6') throw Error("not a binary PPM (P6) file");
  const int width = read_header_int(in, "width");
  const int height = read_header_int(in, "height");
  const int maxval = read_header_int(in, "maxval");
  if (width < 1 || height < 1) throw Error("ppm: empty image");
  if (maxval != 255) throw Error("ppm: only maxval 255 is supported");
  // Exactly one whitespace byte separates the header from the raster.
  if (!std::isspace(in.get())) throw Error("ppm: malformed header");
  ImageRGB image(width, height);
  in.read(reinterpret_cast<char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(image.pixels.size())) throw Error("ppm: truncated raster");
  return image;
}

ImageRGB read_ppm_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return read_ppm(in);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_ppm(const ImageRGB& image, std::ostream& out) {
  if (image.width < 1 || image.height < 1 || image.pixels.size() != image.pixel_count() * 3) {
    throw Error("ppm: invalid image");
  }
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
}

void write_ppm_file(const ImageRGB& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_ppm(image, out);
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace mmtrack::color
