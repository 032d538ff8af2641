#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "cae/autograd.hpp"

namespace cae {

inline constexpr std::size_t kFaceChannels = 3;
inline constexpr std::size_t kFaceSize = 64;
inline constexpr std::size_t kEmbeddingDim = 64;
inline constexpr std::size_t kMelBands = 64;

inline const Shape& face_shape() {
  static const Shape s{kFaceChannels, kFaceSize, kFaceSize};
  return s;
}

// 3x64x64 RGB face with channel values in [-1, 1].
template <typename T>
class FaceImage {
 public:
  FaceImage() : pixels_(face_shape()) {}
  explicit FaceImage(Tensor<T> pixels) : pixels_(std::move(pixels)) {
    if (pixels_.shape() == Shape{1, kFaceChannels, kFaceSize, kFaceSize}) pixels_ = pixels_.reshaped(face_shape());
    require_shape(pixels_, face_shape(), "face image");
    for (T v : pixels_.values())
      if (!(v >= T{-1} && v <= T{1})) throw InvalidInput("face image value out of [-1, 1]: " + std::to_string(v));
  }

  const Tensor<T>& pixels() const { return pixels_; }

  // [1, 3, 64, 64] view for batch-of-one network input.
  Var<T> as_batch() const { return Var<T>(pixels_.reshaped({1, kFaceChannels, kFaceSize, kFaceSize})); }

  template <typename U>
  FaceImage<U> cast() const {
    return FaceImage<U>(pixels_.template cast<U>());
  }

  friend bool operator==(const FaceImage& a, const FaceImage& b) { return a.pixels_ == b.pixels_; }

 private:
  Tensor<T> pixels_;
};

// 64-d speaker embedding produced by the voice embedding network.
template <typename T>
class VoiceEmbedding {
 public:
  VoiceEmbedding() : values_(Shape{kEmbeddingDim}) {}
  explicit VoiceEmbedding(Tensor<T> values) : values_(std::move(values)) {
    if (values_.size() != kEmbeddingDim)
      throw ShapeError("voice embedding must have " + std::to_string(kEmbeddingDim) + " entries, got " +
                       std::to_string(values_.size()));
    values_ = values_.reshaped({kEmbeddingDim});
    for (T v : values_.values())
      if (!std::isfinite(static_cast<double>(v))) throw NumericError("non-finite voice embedding");
  }

  const Tensor<T>& values() const { return values_; }
  Var<T> as_var() const { return Var<T>(values_); }

  friend bool operator==(const VoiceEmbedding& a, const VoiceEmbedding& b) { return a.values_ == b.values_; }

 private:
  Tensor<T> values_;
};

// Batch-norm behaviour: batch statistics (training) or running statistics.
enum class Phase { train, inference };

}  // namespace cae
