#pragma once

#include <png.h>

#include <csetjmp>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "cianet/errors.hpp"
#include "cianet/image.hpp"

namespace cianet::png {

namespace detail {

struct ReadCursor {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t offset;
};

struct ErrorSlot {
  char message[256];
};

inline void on_error(png_structp ptr, png_const_charp msg) {
  auto* slot = static_cast<ErrorSlot*>(png_get_error_ptr(ptr));
  std::snprintf(slot->message, sizeof slot->message, "%s", msg);
  png_longjmp(ptr, 1);
}
inline void on_warning(png_structp, png_const_charp) {}

inline void read_bytes(png_structp ptr, png_bytep out, png_size_t n) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(ptr));
  if (cur->offset + n > cur->size) png_error(ptr, "unexpected end of file");
  std::memcpy(out, cur->data + cur->offset, n);
  cur->offset += n;
}

inline void write_bytes(png_structp ptr, png_bytep in, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(ptr));
  out->insert(out->end(), in, in + n);
}
inline void flush_bytes(png_structp) {}

struct Decoded {
  std::uint32_t width = 0, height = 0;
  int bit_depth = 0, color_type = 0;
  std::vector<std::uint8_t> pixels;  // rows as stored after transforms
};

// setjmp lives here; every object this frame mutates after setjmp is owned
// by the caller.
inline bool decode(ReadCursor* cur, Decoded* out, ErrorSlot* err, int want_color, int want_depth) {
  png_structp ptr = png_create_read_struct(PNG_LIBPNG_VER_STRING, err, on_error, on_warning);
  if (!ptr) return false;
  png_infop info = png_create_info_struct(ptr);
  if (!info || setjmp(png_jmpbuf(ptr))) {
    png_destroy_read_struct(&ptr, &info, nullptr);
    return false;
  }
  png_set_read_fn(ptr, cur, read_bytes);
  png_read_info(ptr, info);
  out->width = png_get_image_width(ptr, info);
  out->height = png_get_image_height(ptr, info);
  out->bit_depth = png_get_bit_depth(ptr, info);
  out->color_type = png_get_color_type(ptr, info);
  if (out->color_type != want_color || out->bit_depth != want_depth) {
    std::snprintf(err->message, sizeof err->message, "expected color type %d depth %d, found type %d depth %d",
                  want_color, want_depth, out->color_type, out->bit_depth);
    png_destroy_read_struct(&ptr, &info, nullptr);
    return false;
  }
  if (out->bit_depth == 16) png_set_swap(ptr);  // host little-endian
  png_read_update_info(ptr, info);
  const std::size_t rowbytes = png_get_rowbytes(ptr, info);
  out->pixels.resize(rowbytes * out->height);
  for (std::uint32_t y = 0; y < out->height; ++y) png_read_row(ptr, out->pixels.data() + y * rowbytes, nullptr);
  png_read_end(ptr, nullptr);
  png_destroy_read_struct(&ptr, &info, nullptr);
  return true;
}

inline bool encode(std::vector<std::uint8_t>* sink, ErrorSlot* err, std::uint32_t width, std::uint32_t height,
                   int color, int depth, const std::uint8_t* rows, std::size_t rowbytes) {
  png_structp ptr = png_create_write_struct(PNG_LIBPNG_VER_STRING, err, on_error, on_warning);
  if (!ptr) return false;
  png_infop info = png_create_info_struct(ptr);
  if (!info || setjmp(png_jmpbuf(ptr))) {
    png_destroy_write_struct(&ptr, &info);
    return false;
  }
  png_set_write_fn(ptr, sink, write_bytes, flush_bytes);
  png_set_IHDR(ptr, info, width, height, depth, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(ptr, info);
  if (depth == 16) png_set_swap(ptr);
  for (std::uint32_t y = 0; y < height; ++y)
    png_write_row(ptr, const_cast<png_bytep>(rows + y * rowbytes));
  png_write_end(ptr, nullptr);
  png_destroy_write_struct(&ptr, &info);
  return true;
}

inline std::vector<std::uint8_t> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), {});
}

inline void spit(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot create " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

inline Decoded decode_file(const std::string& path, int color, int depth) {
  const auto bytes = slurp(path);
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw ParseError(path, 0, "not a PNG file");
  ReadCursor cur{bytes.data(), bytes.size(), 0};
  Decoded out;
  ErrorSlot err{};
  if (!decode(&cur, &out, &err, color, depth)) throw ParseError(path, cur.offset, err.message);
  return out;
}

}  // namespace detail

inline void write_rgb8(const std::string& path, const RgbImage& img) {
  std::vector<std::uint8_t> bytes;
  detail::ErrorSlot err{};
  if (!detail::encode(&bytes, &err, static_cast<std::uint32_t>(img.width()), static_cast<std::uint32_t>(img.height()),
                      PNG_COLOR_TYPE_RGB, 8, img.vec().data(), img.width() * 3))
    throw IoError("PNG encode failed for " + path + ": " + err.message);
  detail::spit(path, bytes);
}

inline RgbImage read_rgb8(const std::string& path) {
  auto d = detail::decode_file(path, PNG_COLOR_TYPE_RGB, 8);
  RgbImage img(d.height, d.width);
  img.vec() = std::move(d.pixels);
  return img;
}

/// Instance map as 16-bit grayscale (gray value = label).
inline void write_labels16(const std::string& path, const LabelMap& labels) {
  std::vector<std::uint16_t> rows(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto l = labels[i];
    if (l < 0 || l > 65535)
      throw DomainError("label " + std::to_string(l) + " does not fit a 16-bit PNG (" + path + ")");
    rows[i] = static_cast<std::uint16_t>(l);
  }
  std::vector<std::uint8_t> bytes;
  detail::ErrorSlot err{};
  if (!detail::encode(&bytes, &err, static_cast<std::uint32_t>(labels.width()),
                      static_cast<std::uint32_t>(labels.height()), PNG_COLOR_TYPE_GRAY, 16,
                      reinterpret_cast<const std::uint8_t*>(rows.data()), labels.width() * 2))
    throw IoError("PNG encode failed for " + path + ": " + err.message);
  detail::spit(path, bytes);
}

inline LabelMap read_labels16(const std::string& path) {
  auto d = detail::decode_file(path, PNG_COLOR_TYPE_GRAY, 16);
  LabelMap m(d.height, d.width);
  for (std::size_t i = 0; i < m.size(); ++i) {
    std::uint16_t v;
    std::memcpy(&v, d.pixels.data() + 2 * i, 2);
    m[i] = v;
  }
  return m;
}

}  // namespace cianet::png
