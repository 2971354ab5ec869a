#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "sosmpl/renderer.hpp"

namespace sosmpl {

namespace {

void pngWrite(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<Bytes*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void pngFlush(png_structp) {}

struct ReadCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
};

void pngRead(png_structp png, png_bytep data, png_size_t length) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + length > cur->bytes.size()) png_error(png, "truncated PNG stream");
  std::memcpy(data, cur->bytes.data() + cur->pos, length);
  cur->pos += length;
}

[[noreturn]] void pngFail(png_structp, png_const_charp msg) { throw FormatError(std::string("PNG: ") + msg, 0); }
void pngWarn(png_structp, png_const_charp) {}

}  // namespace

Bytes encodePng(const Image& image) {
  if (image.channels != 1 && image.channels != 3 && image.channels != 4)
    throw ValidationError("PNG export supports 1, 3 or 4 channels");
  if (image.width <= 0 || image.height <= 0) throw ValidationError("cannot encode an empty image");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, pngFail, pngWarn);
  if (!png) throw Error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  Bytes out;
  std::vector<png_byte> row(static_cast<std::size_t>(image.width) * image.channels);
  try {
    png_set_write_fn(png, &out, pngWrite, pngFlush);
    const int colorType = image.channels == 1 ? PNG_COLOR_TYPE_GRAY
                          : image.channels == 3 ? PNG_COLOR_TYPE_RGB
                                                : PNG_COLOR_TYPE_RGB_ALPHA;
    png_set_IHDR(png, info, image.width, image.height, 8, colorType, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < image.height; ++y) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        const double v = std::clamp(image.data[static_cast<std::size_t>(y) * row.size() + i], 0.0, 1.0);
        row[i] = static_cast<png_byte>(std::lround(v * 255.0));
      }
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

Image decodePng(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw FormatError("not a PNG stream", 0);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, pngFail, pngWarn);
  if (!png) throw Error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  ReadCursor cur{bytes, 0};
  Image img;
  try {
    png_set_read_fn(png, &cur, pngRead);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_packing(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int c = png_get_channels(png, info);
    img = Image(w, h, c);
    std::vector<png_byte> row(png_get_rowbytes(png, info));
    for (int y = 0; y < h; ++y) {
      png_read_row(png, row.data(), nullptr);
      for (int i = 0; i < w * c; ++i) img.data[static_cast<std::size_t>(y) * w * c + i] = row[i] / 255.0;
    }
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

Bytes encodeRawF32(const Image& image) {
  Bytes out(image.data.size() * 4);
  for (std::size_t i = 0; i < image.data.size(); ++i) {
    const float f = static_cast<float>(image.data[i]);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    for (int b = 0; b < 4; ++b) out[4 * i + b] = static_cast<std::uint8_t>(u >> (8 * b));
  }
  return out;
}

}  // namespace sosmpl
