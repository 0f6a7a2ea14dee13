#include "ficl/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "ficl/error.hpp"

namespace ficl {

Image make_image(std::size_t height, std::size_t width, std::vector<double> pixels) {
  if (height == 0 || width == 0) throw InputError("image has zero area");
  if (pixels.size() != height * width) throw InputError("image pixel count does not match extents");
  for (double p : pixels) {
    if (!(p >= 0.0 && p <= 1.0)) throw InputError("image pixel outside [0, 1]");
  }
  return Image{height, width, std::move(pixels)};
}

Image pad_to_square(const Image& img, std::size_t patch) {
  if (img.height == 0 || img.width == 0) throw InputError("image has zero area");
  const std::size_t side0 = std::max(img.height, img.width);
  const std::size_t side = (side0 + patch - 1) / patch * patch;
  if (side == img.height && side == img.width) return img;
  Image out{side, side, std::vector<double>(side * side, 0.0)};
  for (std::size_t r = 0; r < img.height; ++r)
    std::copy_n(img.pixels.begin() + static_cast<std::ptrdiff_t>(r * img.width), img.width,
                out.pixels.begin() + static_cast<std::ptrdiff_t>(r * side));
  return out;
}

Digest image_digest(const Image& img) {
  Hasher h;
  h.update(std::string_view("image"));
  h.update(static_cast<std::uint64_t>(img.height)).update(static_cast<std::uint64_t>(img.width));
  h.update(std::span<const double>(img.pixels));
  return h.finish();
}

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open image " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Image parse_pgm(const std::string& bytes, const std::string& name) {
  std::size_t pos = 2;
  auto next_token = [&]() -> std::size_t {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw InputError("malformed PGM header in " + name);
    return std::stoul(bytes.substr(start, pos - start));
  };
  const std::size_t width = next_token();
  const std::size_t height = next_token();
  const std::size_t maxval = next_token();
  if (maxval == 0 || maxval > 255) throw InputError("unsupported PGM maxval in " + name);
  ++pos;  // single whitespace before raster
  if (bytes.size() < pos + width * height) throw InputError("truncated PGM raster in " + name);
  std::vector<double> px(width * height);
  for (std::size_t i = 0; i < px.size(); ++i)
    px[i] = static_cast<unsigned char>(bytes[pos + i]) / static_cast<double>(maxval);
  return make_image(height, width, std::move(px));
}

Image parse_raw(const std::string& bytes, const std::string& name) {
  if (bytes.size() < 16) throw InputError("truncated raw image header in " + name);
  std::uint64_t h = 0, w = 0;
  std::memcpy(&h, bytes.data(), 8);
  std::memcpy(&w, bytes.data() + 8, 8);
  if (h == 0 || w == 0) throw InputError("image has zero area: " + name);
  if (bytes.size() != 16 + h * w * sizeof(double)) throw InputError("raw image size mismatch in " + name);
  std::vector<double> px(h * w);
  std::memcpy(px.data(), bytes.data() + 16, px.size() * sizeof(double));
  return make_image(h, w, std::move(px));
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  const std::string bytes = slurp(path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return parse_pgm(bytes, path.string());
  return parse_raw(bytes, path.string());
}

void write_pgm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  for (double p : img.pixels) out.put(static_cast<char>(static_cast<unsigned char>(std::lround(p * 255.0))));
}

void write_raw_image(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  const std::uint64_t h = img.height, w = img.width;
  out.write(reinterpret_cast<const char*>(&h), 8);
  out.write(reinterpret_cast<const char*>(&w), 8);
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size() * sizeof(double)));
}

}  // namespace ficl
