#pragma once

// Float rasters in [0, 1], 8-bit PNG I/O, and the pixel operations shared by
// augmentation, corruption and view extraction.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "pvinspect/error.hpp"
#include "pvinspect/random.hpp"

namespace pvinspect {

class Raster {
 public:
  Raster() = default;
  Raster(std::size_t width, std::size_t height, std::size_t channels, float fill = 0.0f)
      : width_(width), height_(height), channels_(channels), data_(width * height * channels, fill) {}

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t channels() const noexcept { return channels_; }
  bool empty() const noexcept { return data_.empty(); }

  float& at(std::size_t x, std::size_t y, std::size_t c = 0) { return data_[(y * width_ + x) * channels_ + c]; }
  float at(std::size_t x, std::size_t y, std::size_t c = 0) const { return data_[(y * width_ + x) * channels_ + c]; }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  bool same_shape(const Raster& o) const noexcept {
    return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
  }

  bool operator==(const Raster&) const = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::size_t channels_ = 0;
  std::vector<float> data_;
};

inline std::uint64_t content_hash(const Raster& img) {
  const std::uint64_t dims[3] = {img.width(), img.height(), img.channels()};
  std::uint64_t h = fnv1a64(std::span(reinterpret_cast<const unsigned char*>(dims), sizeof dims));
  const auto d = img.data();
  return fnv1a64(std::span(reinterpret_cast<const unsigned char*>(d.data()), d.size_bytes()), h);
}

inline double mean_value(const Raster& img) {
  double s = 0.0;
  for (float v : img.data()) s += v;
  return img.empty() ? 0.0 : s / static_cast<double>(img.data().size());
}

inline float clip01(double v) noexcept { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

// Decodes to 1 channel for grayscale inputs and 3 for color; alpha is dropped.
inline Raster read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw input_error("DecodeFailed", "cannot decode " + path.string() + ": " + image.message);
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw input_error("DecodeFailed", "cannot decode " + path.string() + ": " + image.message);
  }
  Raster out(image.width, image.height, color ? 3 : 1);
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<float>(buf[i]) / 255.0f;
  return out;
}

inline void write_png(const Raster& img, const std::filesystem::path& path) {
  if (img.channels() != 1 && img.channels() != 3)
    throw input_error("EncodeFailed", "PNG output supports 1 or 3 channels");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::vector<png_byte> buf(img.data().size());
  const auto d = img.data();
  for (std::size_t i = 0; i < d.size(); ++i)
    buf[i] = static_cast<png_byte>(std::lround(std::clamp(d[i], 0.0f, 1.0f) * 255.0f));
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = img.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buf.data(), 0, nullptr))
    throw input_error("EncodeFailed", "cannot write " + path.string() + ": " + image.message);
}

// Simulates an 8-bit round trip without touching the filesystem.
inline Raster quantize8(Raster img) {
  for (float& v : img.data()) v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
  return img;
}

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

inline Raster crop(const Raster& img, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) {
  if (x0 + w > img.width() || y0 + h > img.height()) throw invariant_error("CropOutOfBounds", "crop exceeds image");
  Raster out(w, h, img.channels());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < img.channels(); ++c) out.at(x, y, c) = img.at(x0 + x, y0 + y, c);
  return out;
}

inline Raster flip_horizontal(const Raster& img) {
  Raster out(img.width(), img.height(), img.channels());
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x)
      for (std::size_t c = 0; c < img.channels(); ++c) out.at(x, y, c) = img.at(img.width() - 1 - x, y, c);
  return out;
}

inline Raster flip_vertical(const Raster& img) {
  Raster out(img.width(), img.height(), img.channels());
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x)
      for (std::size_t c = 0; c < img.channels(); ++c) out.at(x, y, c) = img.at(x, img.height() - 1 - y, c);
  return out;
}

// Mirror index into [0, n) without repeating the edge sample.
inline std::size_t reflect_index(std::int64_t i, std::size_t n) noexcept {
  if (n <= 1) return 0;
  const std::int64_t period = 2 * static_cast<std::int64_t>(n - 1);
  i %= period;
  if (i < 0) i += period;
  if (i >= static_cast<std::int64_t>(n)) i = period - i;
  return static_cast<std::size_t>(i);
}

inline float sample_bilinear_reflect(const Raster& img, double x, double y, std::size_t c) {
  const double fx = std::floor(x), fy = std::floor(y);
  const double tx = x - fx, ty = y - fy;
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  const std::size_t x0 = reflect_index(ix, img.width()), x1 = reflect_index(ix + 1, img.width());
  const std::size_t y0 = reflect_index(iy, img.height()), y1 = reflect_index(iy + 1, img.height());
  const double top = (1 - tx) * img.at(x0, y0, c) + tx * img.at(x1, y0, c);
  const double bottom = (1 - tx) * img.at(x0, y1, c) + tx * img.at(x1, y1, c);
  return static_cast<float>((1 - ty) * top + ty * bottom);
}

// Output pixel (x, y) samples the input at center + M * ((x, y) - center),
// where M = {{m00, m01}, {m10, m11}} is the inverse of the forward transform.
inline Raster warp_inverse(const Raster& img, double m00, double m01, double m10, double m11) {
  Raster out(img.width(), img.height(), img.channels());
  const double cx = (static_cast<double>(img.width()) - 1) / 2.0;
  const double cy = (static_cast<double>(img.height()) - 1) / 2.0;
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      const double sx = cx + m00 * dx + m01 * dy;
      const double sy = cy + m10 * dx + m11 * dy;
      for (std::size_t c = 0; c < img.channels(); ++c) out.at(x, y, c) = sample_bilinear_reflect(img, sx, sy, c);
    }
  }
  return out;
}

namespace detail {

// Exact quarter turns (k counter-clockwise quarter turns) for shapes that
// map onto themselves.
inline Raster rotate_quarter_turns(const Raster& img, int k) {
  k = ((k % 4) + 4) % 4;
  const std::size_t w = img.width(), h = img.height();
  Raster out(w, h, img.channels());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      std::size_t sx = x, sy = y;
      switch (k) {
        case 1: sx = w - 1 - y; sy = x; break;
        case 2: sx = w - 1 - x; sy = h - 1 - y; break;
        case 3: sx = y; sy = h - 1 - x; break;
        default: break;
      }
      for (std::size_t c = 0; c < img.channels(); ++c) out.at(x, y, c) = img.at(sx, sy, c);
    }
  }
  return out;
}

}  // namespace detail

// Rotation about the image center by `degrees` (counter-clockwise in the
// usual y-up sense), bilinear with reflect padding, same output size.
inline Raster rotate(const Raster& img, double degrees) {
  const double turns = degrees / 90.0;
  if (turns == std::round(turns)) {
    const int k = static_cast<int>(std::lround(turns));
    if (k % 2 == 0 || img.width() == img.height()) return detail::rotate_quarter_turns(img, k);
  }
  const double a = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  // Image rows grow downward, so a visual counter-clockwise turn maps
  // output offsets back through the transpose of the y-up rotation.
  return warp_inverse(img, c, -s, s, c);
}

// Horizontal shear x' = x + factor * (y - cy).
inline Raster shear_x(const Raster& img, double factor) { return warp_inverse(img, 1.0, -factor, 0.0, 1.0); }

// ---------------------------------------------------------------------------
// Photometric
// ---------------------------------------------------------------------------

inline Raster brightness(Raster img, double alpha) {
  for (float& v : img.data()) v = clip01(alpha * v);
  return img;
}

// Contrast about the per-image mean.
inline Raster contrast(Raster img, double alpha) {
  const double mu = mean_value(img);
  for (float& v : img.data()) v = clip01(mu + alpha * (static_cast<double>(v) - mu));
  return img;
}

inline Raster add_uniform_noise(Raster img, double amplitude, Rng& rng) {
  for (float& v : img.data()) v = clip01(v + rng.uniform(-amplitude, amplitude));
  return img;
}

inline std::vector<double> gaussian_kernel(double sigma) {
  const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(radius);
    sum += (k[i] = std::exp(-d * d / (2.0 * sigma * sigma)));
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable Gaussian blur with reflect padding. Each output is accumulated
// as center + sum w * (neighbor - center), so flat regions stay bit-exact.
inline Raster gaussian_blur(const Raster& img, double sigma) {
  if (sigma <= 0.0) return img;
  const auto k = gaussian_kernel(sigma);
  const auto r = static_cast<std::int64_t>(k.size() / 2);
  auto pass = [&](const Raster& src, bool horizontal) {
    Raster dst(src.width(), src.height(), src.channels());
    for (std::size_t y = 0; y < src.height(); ++y) {
      for (std::size_t x = 0; x < src.width(); ++x) {
        for (std::size_t c = 0; c < src.channels(); ++c) {
          const double center = src.at(x, y, c);
          double acc = 0.0;
          for (std::int64_t o = -r; o <= r; ++o) {
            const double w = k[static_cast<std::size_t>(o + r)];
            const double v = horizontal
                                 ? src.at(reflect_index(static_cast<std::int64_t>(x) + o, src.width()), y, c)
                                 : src.at(x, reflect_index(static_cast<std::int64_t>(y) + o, src.height()), c);
            acc += w * (v - center);
          }
          dst.at(x, y, c) = clip01(center + acc);
        }
      }
    }
    return dst;
  };
  return pass(pass(img, true), false);
}

inline double mean_squared_difference(const Raster& a, const Raster& b) {
  if (!a.same_shape(b)) throw invariant_error("ShapeMismatch", "rasters differ in shape");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - b.data()[i];
    s += d * d;
  }
  return a.empty() ? 0.0 : s / static_cast<double>(a.data().size());
}

}  // namespace pvinspect
