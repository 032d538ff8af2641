#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cae/types.hpp"

namespace cae {

// 8-bit interleaved RGB raster.
struct RgbImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }
};

// Decodes any PNG libpng understands; grayscale and alpha inputs are converted
// to RGB (alpha composited onto black).
inline RgbImage read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw DataError("cannot read image " + path.string() + ": " + image.message);
  image.format = PNG_FORMAT_RGB;
  RgbImage out{image.width, image.height, std::vector<std::uint8_t>(PNG_IMAGE_SIZE(image))};
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DataError("corrupt image " + path.string() + ": " + image.message);
  }
  return out;
}

inline void write_png(const std::filesystem::path& path, const RgbImage& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, img.pixels.data(), 0, nullptr))
    throw DataError("cannot write image " + path.string() + ": " + image.message);
}

// Bilinear resampling with half-pixel centers and edge clamping.
inline RgbImage resize_bilinear(const RgbImage& src, std::size_t width, std::size_t height) {
  if (src.width == width && src.height == height) return src;
  RgbImage dst{width, height, std::vector<std::uint8_t>(width * height * 3)};
  const double sx = static_cast<double>(src.width) / width, sy = static_cast<double>(src.height) / height;
  auto clamp_index = [](double v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(n - 1)));
  };
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const std::size_t y0 = clamp_index(std::floor(fy), src.height), y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      const std::size_t x0 = clamp_index(std::floor(fx), src.width), x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double a = src.at(x0, y0, c), b = src.at(x1, y0, c);
        const double d = src.at(x0, y1, c), e = src.at(x1, y1, c);
        const double top = a + wx * (b - a), bottom = d + wx * (e - d);
        dst.at(x, y, c) = static_cast<std::uint8_t>(std::lround(top + wy * (bottom - top)));
      }
    }
  }
  return dst;
}

// Maps 8-bit values v to 2 v / 255 - 1 after rescaling to 64x64.
template <typename T = float>
FaceImage<T> to_face(const RgbImage& img) {
  const RgbImage sized = resize_bilinear(img, kFaceSize, kFaceSize);
  Tensor<T> t(face_shape());
  for (std::size_t c = 0; c < kFaceChannels; ++c)
    for (std::size_t y = 0; y < kFaceSize; ++y)
      for (std::size_t x = 0; x < kFaceSize; ++x)
        t[(c * kFaceSize + y) * kFaceSize + x] = static_cast<T>(2.0 * sized.at(x, y, c) / 255.0 - 1.0);
  return FaceImage<T>(std::move(t));
}

template <typename T>
RgbImage to_rgb(const FaceImage<T>& face) {
  RgbImage img{kFaceSize, kFaceSize, std::vector<std::uint8_t>(kFaceSize * kFaceSize * 3)};
  const auto& p = face.pixels();
  for (std::size_t c = 0; c < kFaceChannels; ++c)
    for (std::size_t y = 0; y < kFaceSize; ++y)
      for (std::size_t x = 0; x < kFaceSize; ++x) {
        const double v = (static_cast<double>(p[(c * kFaceSize + y) * kFaceSize + x]) + 1.0) * 127.5;
        img.at(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
  return img;
}

template <typename T = float>
FaceImage<T> load_face(const std::filesystem::path& path) {
  return to_face<T>(read_png(path));
}

template <typename T>
void save_face(const std::filesystem::path& path, const FaceImage<T>& face) {
  write_png(path, to_rgb(face));
}

}  // namespace cae
