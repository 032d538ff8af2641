#pragma once

// The controlled autoencoder: a U-net over 3x64x64 faces whose decoder
// transpose-convolution filters are multiplied by sigmoid gates computed from
// a voice embedding.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cae/nn.hpp"
#include "cae/types.hpp"

namespace cae {

// Scales a base channel count by a width multiplier, never below one channel.
inline std::size_t scaled_channels(std::size_t base, double width) {
  const auto c = static_cast<std::size_t>(std::lround(static_cast<double>(base) * width));
  return c < 1 ? 1 : c;
}

struct GeneratorConfig {
  double width = 1.0;

  static constexpr std::array<std::size_t, 4> kBaseChannels{64, 128, 256, 512};

  std::array<std::size_t, 4> channels() const {
    std::array<std::size_t, 4> c{};
    for (std::size_t i = 0; i < 4; ++i) c[i] = scaled_channels(kBaseChannels[i], width);
    return c;
  }

  std::string fingerprint() const {
    std::ostringstream os;
    const auto c = channels();
    os << "generator:unet4:ch=" << c[0] << ',' << c[1] << ',' << c[2] << ',' << c[3]
       << ":gates=up0,up1,up2,up3:convT3x3s2:tanh";
    return os.str();
  }
};

// Two (conv 3x3 -> batch norm -> ReLU) layers.
template <typename T>
class DoubleConv {
 public:
  DoubleConv(std::size_t in, std::size_t out, std::mt19937_64& rng)
      : w1_(normal_parameter<T>({out, in, 3, 3}, rng, kInitStd)),
        g1_(constant_parameter<T>({out}, T{1})),
        b1_(constant_parameter<T>({out}, T{0})),
        s1_(out),
        w2_(normal_parameter<T>({out, out, 3, 3}, rng, kInitStd)),
        g2_(constant_parameter<T>({out}, T{1})),
        b2_(constant_parameter<T>({out}, T{0})),
        s2_(out) {}

  Var<T> operator()(const Var<T>& x, Phase phase) {
    const bool train = phase == Phase::train;
    auto h = relu(batch_norm(conv2d(x, w1_, Var<T>(), Conv2dOptions::square(1, 1)), g1_, b1_, s1_, train));
    return relu(batch_norm(conv2d(h, w2_, Var<T>(), Conv2dOptions::square(1, 1)), g2_, b2_, s2_, train));
  }

  void collect(const std::string& prefix, ParameterSet<T>& params) const {
    params.add(prefix + ".conv1.weight", w1_);
    params.add(prefix + ".bn1.gamma", g1_);
    params.add(prefix + ".bn1.beta", b1_);
    params.add(prefix + ".conv2.weight", w2_);
    params.add(prefix + ".bn2.gamma", g2_);
    params.add(prefix + ".bn2.beta", b2_);
  }

  void collect_buffers(const std::string& prefix, StateRefs<T>& refs) {
    refs.emplace_back(prefix + ".bn1.running_mean", &s1_.mean);
    refs.emplace_back(prefix + ".bn1.running_var", &s1_.var);
    refs.emplace_back(prefix + ".bn2.running_mean", &s2_.mean);
    refs.emplace_back(prefix + ".bn2.running_var", &s2_.var);
  }

 private:
  Var<T> w1_, g1_, b1_;
  BatchNormStats<T> s1_;
  Var<T> w2_, g2_, b2_;
  BatchNormStats<T> s2_;
};

// Linear map from the voice embedding to one gate per weight of a filter bank:
// gate = sigmoid(W e + b), reshaped to the filter bank's shape.
template <typename T>
class GateProjection {
 public:
  GateProjection(Shape target, std::size_t embedding_dim, std::mt19937_64& rng)
      : target_(std::move(target)),
        weight_(normal_parameter<T>({numel(target_), embedding_dim}, rng, kInitStd)),
        bias_(constant_parameter<T>({numel(target_)}, T{0})) {}

  Var<T> operator()(const Var<T>& embedding) const {
    if (embedding.value().size() != weight_.shape()[1])
      throw ShapeError("gate projection expects a " + std::to_string(weight_.shape()[1]) +
                       "-d embedding, got " + to_string(embedding.shape()));
    return reshape(sigmoid(linear(reshape(embedding, {weight_.shape()[1]}), weight_, bias_)), target_);
  }

  const Shape& target_shape() const { return target_; }
  std::size_t output_count() const { return numel(target_); }
  const Var<T>& weight() const { return weight_; }
  const Var<T>& bias() const { return bias_; }

 private:
  Shape target_;
  Var<T> weight_, bias_;
};

// Encoder feature maps kept for the skip connections, shallowest first, plus
// the bottleneck.
template <typename T>
struct SkipStack {
  std::array<Var<T>, 4> skips;
  Var<T> bottleneck;
};

// One gate array per decoder up-sampling stage, deepest stage first.
template <typename T>
struct GateSet {
  std::vector<Var<T>> gates;

  static GateSet constant(const std::vector<Shape>& shapes, T value) {
    GateSet set;
    for (const auto& s : shapes) set.gates.emplace_back(Tensor<T>(s, value));
    return set;
  }
};

template <typename T>
class Generator {
 public:
  explicit Generator(GeneratorConfig config, std::uint64_t seed = 0) : config_(config) {
    std::mt19937_64 rng(seed);
    const auto c = config_.channels();
    encoder_.emplace_back(kFaceChannels, c[0], rng);
    for (std::size_t i = 1; i < 4; ++i) encoder_.emplace_back(c[i - 1], c[i], rng);

    // Decoder stage d runs at depth 3 - d: up-sample, concatenate the skip of
    // that depth, DoubleConv down to the next shallower channel count.
    const std::array<std::size_t, 4> stage_in{c[3], c[2], c[1], c[0]};
    const std::array<std::size_t, 4> stage_out{c[2], c[1], c[0], c[0]};
    for (std::size_t d = 0; d < 4; ++d) {
      const std::size_t ch = stage_in[d];
      up_weight_.push_back(normal_parameter<T>({ch, ch, 3, 3}, rng, kInitStd));
      up_bias_.push_back(constant_parameter<T>({ch}, T{0}));
      decoder_.emplace_back(2 * ch, stage_out[d], rng);
    }
    for (std::size_t d = 0; d < 4; ++d) gates_.emplace_back(up_weight_[d].shape(), kEmbeddingDim, rng);
    out_weight_ = normal_parameter<T>({kFaceChannels, c[0], 1, 1}, rng, kInitStd);
    out_bias_ = constant_parameter<T>({kFaceChannels}, T{0});
  }

  const GeneratorConfig& config() const { return config_; }

  SkipStack<T> encode(const Var<T>& face, Phase phase) {
    require_shape(face.value(), {1, kFaceChannels, kFaceSize, kFaceSize}, "generator input");
    SkipStack<T> s;
    Var<T> h = face;
    for (std::size_t i = 0; i < 4; ++i) {
      s.skips[i] = encoder_[i](h, phase);
      h = max_pool2x2(s.skips[i]);
    }
    s.bottleneck = h;
    return s;
  }

  GateSet<T> compute_gates(const Var<T>& embedding) const {
    if (embedding.value().size() != kEmbeddingDim)
      throw ShapeError("voice embedding must have 64 entries, got " + to_string(embedding.shape()));
    GateSet<T> set;
    for (const auto& g : gates_) set.gates.push_back(g(embedding));
    return set;
  }

  // A null gate set runs the plain (un-gated) U-net.
  Var<T> decode(const SkipStack<T>& s, const GateSet<T>* gates, Phase phase) {
    if (gates && gates->gates.size() != up_weight_.size())
      throw ShapeError("gate set has " + std::to_string(gates->gates.size()) + " layers, decoder has " +
                       std::to_string(up_weight_.size()));
    Var<T> h = s.bottleneck;
    for (std::size_t d = 0; d < 4; ++d) {
      Var<T> w = up_weight_[d];
      if (gates) {
        const Var<T>& g = gates->gates[d];
        if (g.shape() != w.shape())
          throw ShapeError("gate shape " + to_string(g.shape()) + " does not match filter shape " + to_string(w.shape()));
        w = mul(w, g);
      }
      h = conv_transpose2d(h, w, up_bias_[d], ConvTranspose2dOptions{});
      h = decoder_[d](concat_channels(h, s.skips[3 - d]), phase);
    }
    return tanh(conv2d(h, out_weight_, out_bias_, Conv2dOptions{}));
  }

  Var<T> generate(const Var<T>& face, const Var<T>& embedding, Phase phase) {
    auto gates = compute_gates(embedding);
    return decode(encode(face, phase), &gates, phase);
  }

  Var<T> autoencode(const Var<T>& face, Phase phase) { return decode(encode(face, phase), nullptr, phase); }

  FaceImage<T> generate(const FaceImage<T>& face, const VoiceEmbedding<T>& embedding) {
    return FaceImage<T>(generate(face.as_batch(), embedding.as_var(), Phase::inference).value());
  }

  std::vector<Shape> gate_shapes() const {
    std::vector<Shape> shapes;
    for (const auto& w : up_weight_) shapes.push_back(w.shape());
    return shapes;
  }

  ParameterSet<T> encoder_parameters() const {
    ParameterSet<T> p;
    for (std::size_t i = 0; i < encoder_.size(); ++i) encoder_[i].collect("enc" + std::to_string(i), p);
    return p;
  }

  ParameterSet<T> decoder_parameters() const {
    ParameterSet<T> p;
    for (std::size_t d = 0; d < decoder_.size(); ++d) {
      p.add("up" + std::to_string(d) + ".weight", up_weight_[d]);
      p.add("up" + std::to_string(d) + ".bias", up_bias_[d]);
      decoder_[d].collect("dec" + std::to_string(d), p);
    }
    p.add("out.weight", out_weight_);
    p.add("out.bias", out_bias_);
    return p;
  }

  ParameterSet<T> gate_parameters() const {
    ParameterSet<T> p;
    for (std::size_t d = 0; d < gates_.size(); ++d) {
      p.add("gate" + std::to_string(d) + ".weight", gates_[d].weight());
      p.add("gate" + std::to_string(d) + ".bias", gates_[d].bias());
    }
    return p;
  }

  ParameterSet<T> parameters() const {
    ParameterSet<T> p = encoder_parameters();
    p.append(decoder_parameters());
    p.append(gate_parameters());
    return p;
  }

  StateRefs<T> state() {
    StateRefs<T> refs;
    for (const auto& p : parameters()) {
      Var<T> v = p.var;
      refs.emplace_back("generator." + p.name, &v.mutable_value());
    }
    for (std::size_t i = 0; i < encoder_.size(); ++i) encoder_[i].collect_buffers("generator.enc" + std::to_string(i), refs);
    for (std::size_t d = 0; d < decoder_.size(); ++d) decoder_[d].collect_buffers("generator.dec" + std::to_string(d), refs);
    return refs;
  }

 private:
  GeneratorConfig config_;
  std::vector<DoubleConv<T>> encoder_;
  std::vector<Var<T>> up_weight_, up_bias_;
  std::vector<DoubleConv<T>> decoder_;
  std::vector<GateProjection<T>> gates_;
  Var<T> out_weight_, out_bias_;
};

}  // namespace cae
