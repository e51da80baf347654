// SPDX-License-Identifier: Apache-2.0

#include "dcomp/png_io.hpp"

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <string>

namespace dcomp {

namespace {

struct RawPng {
  std::size_t width = 0;
  std::size_t height = 0;
  int bit_depth = 0;
  int color_type = 0;
  std::size_t row_bytes = 0;
  std::vector<std::uint8_t> bytes;
  std::vector<std::uint8_t*> rows;
};

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// libpng reports errors through longjmp; no object with a destructor lives
// between the setjmp and the libpng calls in these two functions.
bool read_raw(std::FILE* fp, RawPng& out, std::string& err) {
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    err = "not a PNG file";
    return false;
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) {
    err = "png_create_read_struct failed";
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    err = "corrupt PNG data";
    return false;
  }
  png_init_io(png, fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  out.color_type = png_get_color_type(png, info);
  if (png_get_interlace_type(png, info) != PNG_INTERLACE_NONE) png_set_interlace_handling(png);
  png_read_update_info(png, info);
  out.row_bytes = png_get_rowbytes(png, info);
  out.bytes.resize(out.row_bytes * out.height);
  out.rows.resize(out.height);
  for (std::size_t r = 0; r < out.height; ++r) out.rows[r] = out.bytes.data() + r * out.row_bytes;
  png_read_image(png, out.rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

bool write_raw(std::FILE* fp, const RawPng& in, std::string& err) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) {
    err = "png_create_write_struct failed";
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    err = "PNG encoding failed";
    return false;
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(in.width), static_cast<png_uint_32>(in.height), in.bit_depth,
               in.color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < in.height; ++r) {
    png_write_row(png, const_cast<png_bytep>(in.bytes.data() + r * in.row_bytes));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

RawPng load(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open " + path.string());
  RawPng raw;
  std::string err;
  if (!read_raw(fp.get(), raw, err)) throw PngFormatError(path.string() + ": " + err);
  return raw;
}

void store(const RawPng& raw, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot write " + path.string());
  std::string err;
  if (!write_raw(fp.get(), raw, err)) throw PngFormatError(path.string() + ": " + err);
}

}  // namespace

std::uint16_t quantize_depth(double meters) {
  if (!std::isfinite(meters) || meters < 0.0) throw std::out_of_range("depth must be finite and non-negative");
  if (meters == 0.0) return 0;
  const double q = std::round(meters * kDepthPngScale);
  if (q > 65535.0) {
    throw std::out_of_range("depth " + std::to_string(meters) + " m exceeds the 16-bit PNG range (< " +
                            std::to_string(65535.0 / kDepthPngScale) + " m)");
  }
  if (q < 1.0) {
    throw std::out_of_range("valid depth " + std::to_string(meters) + " m rounds to the invalid sentinel");
  }
  return static_cast<std::uint16_t>(q);
}

std::vector<std::uint16_t> read_png16(const std::filesystem::path& path, std::size_t& height, std::size_t& width) {
  RawPng raw = load(path);
  if (raw.bit_depth != 16 || raw.color_type != PNG_COLOR_TYPE_GRAY) {
    throw PngFormatError(path.string() + ": expected a 16-bit single-channel PNG (bit depth " +
                         std::to_string(raw.bit_depth) + ", color type " + std::to_string(raw.color_type) + ")");
  }
  height = raw.height;
  width = raw.width;
  std::vector<std::uint16_t> values(height * width);
  for (std::size_t r = 0; r < height; ++r) {
    const std::uint8_t* row = raw.bytes.data() + r * raw.row_bytes;
    for (std::size_t c = 0; c < width; ++c) {
      values[r * width + c] = static_cast<std::uint16_t>((row[2 * c] << 8) | row[2 * c + 1]);
    }
  }
  return values;
}

void write_png16(const std::vector<std::uint16_t>& values, std::size_t height, std::size_t width,
                 const std::filesystem::path& path) {
  if (values.size() != height * width) throw std::invalid_argument("write_png16: size mismatch");
  RawPng raw;
  raw.width = width;
  raw.height = height;
  raw.bit_depth = 16;
  raw.color_type = PNG_COLOR_TYPE_GRAY;
  raw.row_bytes = 2 * width;
  raw.bytes.resize(raw.row_bytes * height);
  for (std::size_t i = 0; i < values.size(); ++i) {
    raw.bytes[2 * i] = static_cast<std::uint8_t>(values[i] >> 8);
    raw.bytes[2 * i + 1] = static_cast<std::uint8_t>(values[i] & 0xff);
  }
  store(raw, path);
}

DepthMap read_depth_png(const std::filesystem::path& path) {
  std::size_t h = 0, w = 0;
  auto values = read_png16(path, h, w);
  std::vector<double> depth(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) depth[i] = static_cast<double>(values[i]) / kDepthPngScale;
  return DepthMap::from_depths(h, w, std::move(depth));
}

void write_depth_png(const DepthMap& map, const std::filesystem::path& path) {
  std::vector<std::uint16_t> values(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) values[i] = map.valid_at(i) ? quantize_depth(map.depth_at(i)) : 0;
  write_png16(values, map.height(), map.width(), path);
}

RgbImage read_rgb_png(const std::filesystem::path& path) {
  RawPng raw = load(path);
  if (raw.bit_depth != 8 || (raw.color_type != PNG_COLOR_TYPE_RGB && raw.color_type != PNG_COLOR_TYPE_RGBA)) {
    throw PngFormatError(path.string() + ": expected an 8-bit RGB or RGBA PNG");
  }
  const std::size_t stride = raw.color_type == PNG_COLOR_TYPE_RGB ? 3 : 4;
  RgbImage img(raw.height, raw.width);
  for (std::size_t r = 0; r < raw.height; ++r) {
    const std::uint8_t* row = raw.bytes.data() + r * raw.row_bytes;
    for (std::size_t c = 0; c < raw.width; ++c) {
      for (std::size_t ch = 0; ch < 3; ++ch) img.set(ch, r, c, row[c * stride + ch] / 255.0);
    }
  }
  return img;
}

void write_rgb_png(const RgbImage& image, const std::filesystem::path& path) {
  RawPng raw;
  raw.width = image.width();
  raw.height = image.height();
  raw.bit_depth = 8;
  raw.color_type = PNG_COLOR_TYPE_RGB;
  raw.row_bytes = 3 * raw.width;
  raw.bytes.resize(raw.row_bytes * raw.height);
  for (std::size_t r = 0; r < raw.height; ++r) {
    for (std::size_t c = 0; c < raw.width; ++c) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        raw.bytes[r * raw.row_bytes + 3 * c + ch] = static_cast<std::uint8_t>(std::lround(image.at(ch, r, c) * 255.0));
      }
    }
  }
  store(raw, path);
}

}  // namespace dcomp
