#include "iapnet/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>

#include "iapnet/error.hpp"

namespace iapnet {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::string lower_ext(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

Image read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open image " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError("not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed");
  }
  Image image;
  std::vector<png_byte> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);

  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  if (depth == 16) png_set_swap(png);  // host little-endian 16-bit samples
  png_read_update_info(png, info);
  depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);

  buffer.resize(rowbytes * height);
  std::vector<png_bytep> rows(height);
  for (std::size_t y = 0; y < height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  image = Image(width, height);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      if (depth == 16) {
        std::uint16_t v;
        std::memcpy(&v, rows[y] + 2 * x, 2);
        image.at(y, x) = static_cast<float>(v);
      } else {
        image.at(y, x) = static_cast<float>(rows[y][x]);
      }
    }
  }
  return image;
}

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  auto token = [&]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
      } else {
        t.push_back(c);
      }
    }
    return t;
  };
  if (token() != "P5") throw IoError("not a binary PGM file: " + path.string());
  std::size_t width = 0, height = 0;
  long maxval = 0;
  try {
    width = std::stoul(token());
    height = std::stoul(token());
    maxval = std::stol(token());
  } catch (const std::exception&) {
    throw IoError("malformed PGM header: " + path.string());
  }
  if (maxval <= 0 || maxval > 65535) throw IoError("unsupported PGM maxval: " + path.string());
  const std::size_t bps = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> data(width * height * bps);
  if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()))) {
    throw IoError("truncated PGM data: " + path.string());
  }
  Image image(width, height);
  for (std::size_t i = 0; i < width * height; ++i) {
    image.pixels[i] = bps == 2 ? static_cast<float>((data[2 * i] << 8) | data[2 * i + 1])
                               : static_cast<float>(data[i]);
  }
  return image;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("image not found: " + path.string());
  const auto ext = lower_ext(path);
  Image image;
  if (ext == ".png") {
    image = read_png(path);
  } else if (ext == ".pgm") {
    image = read_pgm(path);
  } else {
    throw IoError("unsupported image format '" + ext + "': " + path.string());
  }
  if (image.empty()) throw IoError("zero-sized image: " + path.string());
  return image;
}

void write_png(const Image& image, const std::filesystem::path& path, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw IoError("PNG bit depth must be 8 or 16");
  if (image.empty()) throw IoError("refusing to write zero-sized image " + path.string());
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write image " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  const std::size_t bps = bit_depth / 8;
  std::vector<png_byte> buffer(image.width * image.height * bps);
  const double maxval = bit_depth == 16 ? 65535.0 : 255.0;
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    double v = std::clamp(static_cast<double>(image.pixels[i]), 0.0, 1.0);
    auto q = static_cast<unsigned>(std::lround(v * maxval));
    if (bps == 2) {
      buffer[2 * i] = static_cast<png_byte>(q >> 8);
      buffer[2 * i + 1] = static_cast<png_byte>(q & 0xff);
    } else {
      buffer[i] = static_cast<png_byte>(q);
    }
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encoding failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height),
               bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < image.height; ++y) {
    png_write_row(png, buffer.data() + y * image.width * bps);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_pgm(const Image& image, const std::filesystem::path& path, int maxval) {
  if (maxval <= 0 || maxval > 65535) throw IoError("PGM maxval out of range");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image " + path.string());
  out << "P5\n" << image.width << " " << image.height << "\n" << maxval << "\n";
  for (float p : image.pixels) {
    auto q = static_cast<unsigned>(std::lround(std::clamp(static_cast<double>(p), 0.0, 1.0) * maxval));
    if (maxval > 255) out.put(static_cast<char>(q >> 8));
    out.put(static_cast<char>(q & 0xff));
  }
}

Image resize_bilinear(const Image& src, std::size_t width, std::size_t height) {
  if (src.empty() || width == 0 || height == 0) throw ShapeError("resize of zero-sized image");
  Image dst(width, height);
  const double sx = static_cast<double>(src.width) / static_cast<double>(width);
  const double sy = static_cast<double>(src.height) / static_cast<double>(height);
  for (std::size_t y = 0; y < height; ++y) {
    double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    auto y0 = static_cast<std::size_t>(fy);
    std::size_t y1 = std::min(y0 + 1, src.height - 1);
    double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      auto x0 = static_cast<std::size_t>(fx);
      std::size_t x1 = std::min(x0 + 1, src.width - 1);
      double wx = fx - static_cast<double>(x0);
      double top = src.at(y0, x0) * (1.0 - wx) + src.at(y0, x1) * wx;
      double bottom = src.at(y1, x0) * (1.0 - wx) + src.at(y1, x1) * wx;
      dst.at(y, x) = static_cast<float>(top * (1.0 - wy) + bottom * wy);
    }
  }
  return dst;
}

}  // namespace iapnet
