#pragma once

// Image planes, PPM/PNG file I/O, full-range BT.601 colour conversion and
// reflective padding.

#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wavecc/error.hpp"
#include "wavecc/params.hpp"

namespace wavecc {

enum class PlaneLabel { kY, kCb, kCr, kR, kG, kB, kGray };

/// One colour component. Samples are unclamped reals, nominally 0..255.
struct Plane {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> values;
  PlaneLabel label = PlaneLabel::kGray;

  Plane() = default;
  Plane(std::size_t w, std::size_t h, PlaneLabel l = PlaneLabel::kGray, float fill = 0.0f)
      : width(w), height(h), values(w * h, fill), label(l) {}

  float& at(std::size_t x, std::size_t y) { return values[y * width + x]; }
  float at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
};

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  Plane r, g, b;

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h)
      : width(w), height(h), r(w, h, PlaneLabel::kR), g(w, h, PlaneLabel::kG), b(w, h, PlaneLabel::kB) {}
};

struct YCbCrPlanes {
  Plane y, cb, cr;
};

inline std::uint8_t to_u8(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 255.0f)));
}

/// Rounds and clamps every sample to an 8-bit integer value.
inline RgbImage quantize_8bit(const RgbImage& img) {
  RgbImage out = img;
  for (Plane* p : {&out.r, &out.g, &out.b}) {
    for (float& v : p->values) v = static_cast<float>(to_u8(v));
  }
  return out;
}

// ---------------------------------------------------------------- PPM

namespace detail {

inline std::size_t ppm_token(const std::vector<std::uint8_t>& buf, std::size_t& pos) {
  for (;;) {
    while (pos < buf.size() && std::isspace(buf[pos])) ++pos;
    if (pos < buf.size() && buf[pos] == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  if (pos >= buf.size() || !std::isdigit(buf[pos])) fail(ErrorKind::kFormat, "PPM: malformed or truncated header");
  std::size_t v = 0;
  while (pos < buf.size() && std::isdigit(buf[pos])) {
    v = v * 10 + static_cast<std::size_t>(buf[pos] - '0');
    if (v > (1u << 24)) fail(ErrorKind::kFormat, "PPM: header value too large");
    ++pos;
  }
  return v;
}

}  // namespace detail

inline RgbImage decode_ppm(const std::vector<std::uint8_t>& buf) {
  if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '6') fail(ErrorKind::kFormat, "PPM: not a binary P6 file");
  std::size_t pos = 2;
  const std::size_t w = detail::ppm_token(buf, pos);
  const std::size_t h = detail::ppm_token(buf, pos);
  const std::size_t maxval = detail::ppm_token(buf, pos);
  if (maxval != 255) fail(ErrorKind::kFormat, "PPM: unsupported bit depth (maxval " + std::to_string(maxval) + ")");
  if (w == 0 || h == 0) fail(ErrorKind::kFormat, "PPM: empty image");
  if (pos >= buf.size() || !std::isspace(buf[pos])) fail(ErrorKind::kFormat, "PPM: truncated header");
  ++pos;
  if (buf.size() - pos < w * h * 3) fail(ErrorKind::kFormat, "PPM: truncated pixel data");
  RgbImage img(w, h);
  for (std::size_t i = 0; i < w * h; ++i) {
    img.r.values[i] = buf[pos + 3 * i];
    img.g.values[i] = buf[pos + 3 * i + 1];
    img.b.values[i] = buf[pos + 3 * i + 2];
  }
  return img;
}

inline std::vector<std::uint8_t> encode_ppm(const RgbImage& img) {
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + img.width * img.height * 3);
  for (std::size_t i = 0; i < img.width * img.height; ++i) {
    out.push_back(to_u8(img.r.values[i]));
    out.push_back(to_u8(img.g.values[i]));
    out.push_back(to_u8(img.b.values[i]));
  }
  return out;
}

// ---------------------------------------------------------------- PNG

inline RgbImage decode_png(const std::vector<std::uint8_t>& buf) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, buf.data(), buf.size())) {
    const std::string msg = image.message;
    png_image_free(&image);
    fail(ErrorKind::kFormat, "PNG: " + msg);
  }
  if ((image.format & PNG_FORMAT_FLAG_LINEAR) != 0) {
    png_image_free(&image);
    fail(ErrorKind::kFormat, "PNG: unsupported bit depth (16-bit samples)");
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    fail(ErrorKind::kFormat, "PNG: " + msg);
  }
  RgbImage img(image.width, image.height);
  for (std::size_t i = 0; i < img.width * img.height; ++i) {
    img.r.values[i] = pixels[3 * i];
    img.g.values[i] = pixels[3 * i + 1];
    img.b.values[i] = pixels[3 * i + 2];
  }
  return img;
}

inline std::vector<std::uint8_t> encode_png(const RgbImage& img) {
  std::vector<std::uint8_t> pixels(img.width * img.height * 3);
  for (std::size_t i = 0; i < img.width * img.height; ++i) {
    pixels[3 * i] = to_u8(img.r.values[i]);
    pixels[3 * i + 1] = to_u8(img.g.values[i]);
    pixels[3 * i + 2] = to_u8(img.b.values[i]);
  }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    fail(ErrorKind::kFormat, std::string("PNG: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
    fail(ErrorKind::kFormat, std::string("PNG: ") + image.message);
  }
  out.resize(size);
  return out;
}

inline RgbImage decode_image(const std::vector<std::uint8_t>& buf) {
  static constexpr std::array<std::uint8_t, 8> kPngSig = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (buf.size() >= 8 && std::equal(kPngSig.begin(), kPngSig.end(), buf.begin())) return decode_png(buf);
  if (buf.size() >= 2 && buf[0] == 'P' && buf[1] == '6') return decode_ppm(buf);
  fail(ErrorKind::kFormat, "unsupported image format (expected binary PPM or PNG)");
}

inline RgbImage load_image(const std::filesystem::path& path) {
  try {
    return decode_image(read_file_bytes(path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kIo) throw;
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

/// Writes PNG when the extension is ".png", binary PPM otherwise.
inline void save_image(const RgbImage& img, const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  write_file_atomic(path, ext == ".png" ? encode_png(img) : encode_ppm(img));
}

// ---------------------------------------------------------------- colour

/// Full-range BT.601: every component spans 0..255, chroma centred on 128.
inline YCbCrPlanes rgb_to_ycbcr(const RgbImage& img) {
  YCbCrPlanes out{Plane(img.width, img.height, PlaneLabel::kY), Plane(img.width, img.height, PlaneLabel::kCb),
                  Plane(img.width, img.height, PlaneLabel::kCr)};
  for (std::size_t i = 0; i < img.width * img.height; ++i) {
    const double r = img.r.values[i], g = img.g.values[i], b = img.b.values[i];
    out.y.values[i] = static_cast<float>(0.299 * r + 0.587 * g + 0.114 * b);
    out.cb.values[i] = static_cast<float>(128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b);
    out.cr.values[i] = static_cast<float>(128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b);
  }
  return out;
}

namespace detail {

// Exact inverse of the forward matrix above.
inline const std::array<std::array<double, 3>, 3>& ycbcr_inverse_matrix() {
  static const auto inv = [] {
    const double m[3][3] = {{0.299, 0.587, 0.114}, {-0.168736, -0.331264, 0.5}, {0.5, -0.418688, -0.081312}};
    const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                       m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                       m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    std::array<std::array<double, 3>, 3> r{};
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        const int i1 = (j + 1) % 3, i2 = (j + 2) % 3, j1 = (i + 1) % 3, j2 = (i + 2) % 3;
        r[i][j] = (m[i1][j1] * m[i2][j2] - m[i1][j2] * m[i2][j1]) / det;
      }
    }
    return r;
  }();
  return inv;
}

}  // namespace detail

inline RgbImage ycbcr_to_rgb(const YCbCrPlanes& p) {
  if (p.cb.width != p.y.width || p.cr.width != p.y.width || p.cb.height != p.y.height || p.cr.height != p.y.height) {
    fail(ErrorKind::kShape, "ycbcr_to_rgb: component dimensions differ");
  }
  const auto& inv = detail::ycbcr_inverse_matrix();
  RgbImage out(p.y.width, p.y.height);
  for (std::size_t i = 0; i < p.y.values.size(); ++i) {
    const double y = p.y.values[i], cb = p.cb.values[i] - 128.0, cr = p.cr.values[i] - 128.0;
    out.r.values[i] = static_cast<float>(inv[0][0] * y + inv[0][1] * cb + inv[0][2] * cr);
    out.g.values[i] = static_cast<float>(inv[1][0] * y + inv[1][1] * cb + inv[1][2] * cr);
    out.b.values[i] = static_cast<float>(inv[2][0] * y + inv[2][1] * cb + inv[2][2] * cr);
  }
  return out;
}

// ---------------------------------------------------------------- padding

struct PaddedPlane {
  Plane plane;
  std::size_t original_width = 0;
  std::size_t original_height = 0;
};

namespace detail {

// Whole-sample reflection; a one-sample axis falls back to replication.
inline std::size_t pad_source(std::size_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::size_t period = 2 * (n - 1);
  std::size_t k = i % period;
  return k < n ? k : period - k;
}

}  // namespace detail

/// Extends right/bottom edges by whole-sample reflection up to the next
/// multiples of `m`.
inline PaddedPlane pad_to_multiple(const Plane& plane, std::size_t m) {
  if (m == 0) fail(ErrorKind::kUsage, "pad_to_multiple: m must be at least 1");
  if (plane.width == 0 || plane.height == 0) fail(ErrorKind::kShape, "pad_to_multiple: empty plane");
  const std::size_t pw = (plane.width + m - 1) / m * m;
  const std::size_t ph = (plane.height + m - 1) / m * m;
  Plane out(pw, ph, plane.label);
  for (std::size_t y = 0; y < ph; ++y) {
    const std::size_t sy = detail::pad_source(y, plane.height);
    for (std::size_t x = 0; x < pw; ++x) out.at(x, y) = plane.at(detail::pad_source(x, plane.width), sy);
  }
  return {std::move(out), plane.width, plane.height};
}

inline Plane crop_to(const Plane& plane, std::size_t width, std::size_t height) {
  if (width > plane.width || height > plane.height) fail(ErrorKind::kShape, "crop_to: crop exceeds plane");
  Plane out(width, height, plane.label);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) out.at(x, y) = plane.at(x, y);
  }
  return out;
}

inline RgbImage pad_image(const RgbImage& img, std::size_t m) {
  RgbImage out;
  out.r = pad_to_multiple(img.r, m).plane;
  out.g = pad_to_multiple(img.g, m).plane;
  out.b = pad_to_multiple(img.b, m).plane;
  out.width = out.r.width;
  out.height = out.r.height;
  return out;
}

inline RgbImage crop_image(const RgbImage& img, std::size_t width, std::size_t height) {
  RgbImage out;
  out.r = crop_to(img.r, width, height);
  out.g = crop_to(img.g, width, height);
  out.b = crop_to(img.b, width, height);
  out.width = width;
  out.height = height;
  return out;
}

}  // namespace wavecc
