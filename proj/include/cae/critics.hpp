#pragma once

// Discriminator and identity classifier sharing one convolutional trunk. The
// trunk's 64-d output doubles as the face embedding for evaluation.

#include <array>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cae/generator.hpp"

namespace cae {

inline constexpr double kLeakySlope = 0.2;

struct CriticConfig {
  double width = 1.0;
  std::size_t identities = 2;

  static constexpr std::array<std::size_t, 5> kBaseChannels{32, 64, 128, 256, 512};

  std::array<std::size_t, 5> channels() const {
    std::array<std::size_t, 5> c{};
    for (std::size_t i = 0; i < 5; ++i) c[i] = scaled_channels(kBaseChannels[i], width);
    return c;
  }

  std::string fingerprint() const {
    std::ostringstream os;
    const auto c = channels();
    os << "critic:trunk=1x1:" << c[0];
    for (std::size_t i = 1; i < 5; ++i) os << ",3x3s2:" << c[i];
    os << ",4x4:" << kEmbeddingDim << ":lrelu0.2:k=" << identities;
    return os.str();
  }
};

template <typename T>
struct CriticOutput {
  Var<T> features;  // [N, 64]
  Var<T> d_logit;   // [N, 1]
  Var<T> c_logits;  // [N, k]
};

template <typename T>
class Critic {
 public:
  explicit Critic(CriticConfig config, std::uint64_t seed = 0) : config_(config) {
    if (config_.identities < 2) throw InvalidInput("classifier needs at least two identities");
    std::mt19937_64 rng(seed);
    const auto c = config_.channels();
    add_conv(kFaceChannels, c[0], 1, rng);
    for (std::size_t i = 1; i < 5; ++i) add_conv(c[i - 1], c[i], 3, rng);
    add_conv(c[4], kEmbeddingDim, 4, rng);
    d_weight_ = normal_parameter<T>({1, kEmbeddingDim}, rng, kInitStd);
    d_bias_ = constant_parameter<T>({1}, T{0});
    c_weight_ = normal_parameter<T>({config_.identities, kEmbeddingDim}, rng, kInitStd);
    c_bias_ = constant_parameter<T>({config_.identities}, T{0});
  }

  const CriticConfig& config() const { return config_; }
  std::size_t identities() const { return config_.identities; }

  // Spatial chain 64 -> 64 -> 32 -> 16 -> 8 -> 4 -> 1. When `shapes` is given,
  // each layer's output shape is appended to it.
  Var<T> trunk(const Var<T>& face, std::vector<Shape>* shapes = nullptr) const {
    const auto& s = face.shape();
    if (s.size() != 4 || s[1] != kFaceChannels || s[2] != kFaceSize || s[3] != kFaceSize)
      throw ShapeError("critic input: expected [N, 3, 64, 64], got " + to_string(s));
    Var<T> h = face;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      const Conv2dOptions opt = (i == 0 || i + 1 == weights_.size()) ? Conv2dOptions{} : Conv2dOptions::square(2, 1);
      h = leaky_relu(conv2d(h, weights_[i], biases_[i], opt), T(kLeakySlope));
      if (shapes) shapes->push_back(h.shape());
    }
    return reshape(h, {h.shape()[0], kEmbeddingDim});
  }

  CriticOutput<T> operator()(const Var<T>& face) const {
    CriticOutput<T> out;
    out.features = trunk(face);
    out.d_logit = linear(out.features, d_weight_, d_bias_);
    out.c_logits = linear(out.features, c_weight_, c_bias_);
    return out;
  }

  // Probability that the face is real.
  T discriminate(const FaceImage<T>& face) const {
    return sigmoid_value(linear(trunk(face.as_batch()), d_weight_, d_bias_).value()[0]);
  }

  // Identity posterior over the k training identities.
  std::vector<T> classify(const FaceImage<T>& face) const {
    auto logits = linear(trunk(face.as_batch()), c_weight_, c_bias_);
    return softmax<T>(logits.value().values());
  }

  Tensor<T> features(const FaceImage<T>& face) const { return trunk(face.as_batch()).value().reshaped({kEmbeddingDim}); }

  ParameterSet<T> trunk_parameters() const {
    ParameterSet<T> p;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      p.add("trunk" + std::to_string(i) + ".weight", weights_[i]);
      p.add("trunk" + std::to_string(i) + ".bias", biases_[i]);
    }
    return p;
  }

  ParameterSet<T> discriminator_head() const {
    ParameterSet<T> p;
    p.add("d_head.weight", d_weight_);
    p.add("d_head.bias", d_bias_);
    return p;
  }

  ParameterSet<T> classifier_head() const {
    ParameterSet<T> p;
    p.add("c_head.weight", c_weight_);
    p.add("c_head.bias", c_bias_);
    return p;
  }

  // theta_d and theta_c both contain the shared trunk.
  ParameterSet<T> discriminator_parameters() const {
    auto p = trunk_parameters();
    p.append(discriminator_head());
    return p;
  }
  ParameterSet<T> classifier_parameters() const {
    auto p = trunk_parameters();
    p.append(classifier_head());
    return p;
  }
  ParameterSet<T> parameters() const {
    auto p = trunk_parameters();
    p.append(discriminator_head());
    p.append(classifier_head());
    return p;
  }

  StateRefs<T> state() {
    StateRefs<T> refs;
    for (const auto& p : parameters()) {
      Var<T> v = p.var;
      refs.emplace_back("critic." + p.name, &v.mutable_value());
    }
    return refs;
  }

 private:
  void add_conv(std::size_t in, std::size_t out, std::size_t k, std::mt19937_64& rng) {
    weights_.push_back(normal_parameter<T>({out, in, k, k}, rng, kInitStd));
    biases_.push_back(constant_parameter<T>({out}, T{0}));
  }

  CriticConfig config_;
  std::vector<Var<T>> weights_, biases_;
  Var<T> d_weight_, d_bias_, c_weight_, c_bias_;
};

}  // namespace cae
