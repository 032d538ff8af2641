#pragma once

// Five-layer 1-D convolutional speaker embedder (64 mel bands in, 64-d out),
// pre-trained on speaker classification and then frozen.

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "cae/audio.hpp"
#include "cae/checkpoint.hpp"
#include "cae/nn.hpp"
#include "cae/types.hpp"

namespace cae {

inline constexpr std::array<std::size_t, 6> kEmbedderChannels{64, 256, 384, 576, 864, 64};

inline std::string embedder_fingerprint() {
  std::string s = "embedder:conv1d3s2p1+bn+relu:";
  for (std::size_t i = 0; i < kEmbedderChannels.size(); ++i) s += (i ? "-" : "") + std::to_string(kEmbedderChannels[i]);
  return s + ":avgpool";
}

// Temporal lengths t0..t5 through the stride-2 layers: t_i = floor((t_{i-1} - 1) / 2) + 1.
inline std::array<std::size_t, 6> embedder_lengths(std::size_t t0) {
  std::array<std::size_t, 6> t{t0};
  for (std::size_t i = 1; i < t.size(); ++i) t[i] = (t[i - 1] - 1) / 2 + 1;
  return t;
}

template <typename T>
class VoiceEmbedder {
 public:
  explicit VoiceEmbedder(std::uint64_t seed = 0) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i + 1 < kEmbedderChannels.size(); ++i) {
      const std::size_t in = kEmbedderChannels[i], out = kEmbedderChannels[i + 1];
      layers_.push_back({normal_parameter<T>({out, in, 1, 3}, rng, kInitStd), constant_parameter<T>({out}, T{0}),
                         constant_parameter<T>({out}, T{1}), constant_parameter<T>({out}, T{0}),
                         BatchNormStats<T>(out)});
    }
  }

  // mel: [N, 64, 1, T] -> [N, 64]
  Var<T> forward(const Var<T>& mel, Phase phase) {
    const auto& s = mel.shape();
    if (s.size() != 4 || s[1] != kMelBands || s[2] != 1 || s[3] == 0)
      throw ShapeError("embedder input must be [N, 64, 1, T], got " + to_string(s));
    const bool train = phase == Phase::train && !frozen_;
    Var<T> h = mel;
    for (auto& l : layers_)
      h = relu(batch_norm(conv2d(h, l.weight, l.bias, Conv2dOptions{1, 2, 0, 1}), l.gamma, l.beta, l.stats, train));
    return mean_spatial(h);
  }

  VoiceEmbedding<T> embed(const MelSpectrogram& mel) {
    if (mel.values.rank() != 2 || mel.bands() != kMelBands)
      throw ShapeError("mel spectrogram must have 64 bands, got " + to_string(mel.values.shape()));
    if (mel.frames() == 0) throw ShapeError("mel spectrogram has no frames");
    Var<T> in(mel.values.template cast<T>().reshaped({1, kMelBands, 1, mel.frames()}));
    return VoiceEmbedding<T>(forward(in, Phase::inference).value());
  }

  void freeze() {
    frozen_ = true;
    parameters().set_requires_grad(false);
  }
  bool frozen() const { return frozen_; }

  ParameterSet<T> parameters() const {
    ParameterSet<T> p;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const std::string n = "layer" + std::to_string(i);
      p.add(n + ".weight", layers_[i].weight);
      p.add(n + ".bias", layers_[i].bias);
      p.add(n + ".bn.gamma", layers_[i].gamma);
      p.add(n + ".bn.beta", layers_[i].beta);
    }
    return p;
  }

  StateRefs<T> state() {
    StateRefs<T> refs;
    for (const auto& p : parameters()) {
      Var<T> v = p.var;
      refs.emplace_back("embedder." + p.name, &v.mutable_value());
    }
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      refs.emplace_back("embedder.layer" + std::to_string(i) + ".bn.running_mean", &layers_[i].stats.mean);
      refs.emplace_back("embedder.layer" + std::to_string(i) + ".bn.running_var", &layers_[i].stats.var);
    }
    return refs;
  }

  // Replaces running statistics with the exact average of per-recording batch
  // statistics over `mels` (one forward pass each, layer by layer).
  void recompute_statistics(const std::vector<const MelSpectrogram*>& mels) {
    if (mels.empty()) return;
    std::vector<BatchNormStats<T>> acc;
    for (auto& l : layers_) acc.emplace_back(l.stats.mean.size());
    for (auto& a : acc) a.var.fill(T{0});
    for (const auto* m : mels) {
      Var<T> h(m->values.template cast<T>().reshaped({1, kMelBands, 1, m->frames()}));
      for (std::size_t i = 0; i < layers_.size(); ++i) {
        auto& l = layers_[i];
        BatchNormStats<T> batch(l.stats.mean.size());
        // momentum 1 makes the running statistics equal to this batch's.
        h = relu(batch_norm(conv2d(h, l.weight, l.bias, Conv2dOptions{1, 2, 0, 1}), l.gamma, l.beta, batch, true, T{1}));
        for (std::size_t c = 0; c < batch.mean.size(); ++c) {
          acc[i].mean[c] += batch.mean[c] / T(mels.size());
          acc[i].var[c] += batch.var[c] / T(mels.size());
        }
      }
    }
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].stats = acc[i];
  }

 private:
  struct Layer {
    Var<T> weight, bias, gamma, beta;
    BatchNormStats<T> stats;
  };
  std::vector<Layer> layers_;
  bool frozen_ = false;
};

struct LabeledVoice {
  MelSpectrogram mel;  // normalized log mel
  std::size_t label = 0;
};

struct PretrainOptions {
  std::size_t epochs = 25;
  std::size_t batch_size = 8;
  std::size_t crop_frames = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

template <typename T>
struct PretrainResult {
  VoiceEmbedder<T> embedder;
  double train_accuracy = 0.0;
  std::vector<double> epoch_loss;
};

// Fraction of recordings whose arg-max speaker under `head` matches the label,
// using inference-mode embeddings of the full recordings.
template <typename T>
double speaker_accuracy(VoiceEmbedder<T>& embedder, const Var<T>& head_w, const Var<T>& head_b,
                        const std::vector<LabeledVoice>& corpus) {
  std::size_t correct = 0;
  for (const auto& v : corpus) {
    auto e = embedder.embed(v.mel);
    auto logits = linear(e.as_var(), head_w, head_b).value();
    const auto best = std::max_element(logits.values().begin(), logits.values().end()) - logits.values().begin();
    correct += static_cast<std::size_t>(best) == v.label;
  }
  return static_cast<double>(correct) / static_cast<double>(corpus.size());
}

// Speaker-classification pre-training with a temporary linear softmax head on
// fixed-length random crops; the returned embedder is frozen.
template <typename T>
PretrainResult<T> pretrain_embedder(const std::vector<LabeledVoice>& corpus, const PretrainOptions& opt) {
  std::size_t speakers = 0;
  for (const auto& v : corpus) speakers = std::max(speakers, v.label + 1);
  std::vector<std::size_t> per_speaker(speakers, 0);
  for (const auto& v : corpus) ++per_speaker[v.label];
  if (speakers < 2) throw CorpusError("voice pre-training needs at least two speakers");
  for (std::size_t s = 0; s < speakers; ++s)
    if (per_speaker[s] < 2) throw CorpusError("speaker " + std::to_string(s) + " has fewer than two recordings");
  if (opt.batch_size == 0 || opt.crop_frames == 0) throw InvalidInput("batch size and crop length must be positive");

  std::mt19937_64 rng(opt.seed);
  PretrainResult<T> result{VoiceEmbedder<T>(rng()), 0.0, {}};
  auto& net = result.embedder;
  Var<T> head_w = normal_parameter<T>({speakers, kEmbeddingDim}, rng, kInitStd);
  Var<T> head_b = constant_parameter<T>({speakers}, T{0});
  ParameterSet<T> params = net.parameters();
  params.add("head.weight", head_w);
  params.add("head.bias", head_b);
  Adam<T> adam(params, AdamOptions{opt.learning_rate, 0.9, 0.999, 1e-8});

  std::vector<std::size_t> order(corpus.size());
  const std::size_t crop = opt.crop_frames;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t n = std::min(opt.batch_size, order.size() - start);
      Tensor<T> batch(Shape{n, kMelBands, 1, crop});
      std::vector<std::size_t> labels(n);
      for (std::size_t b = 0; b < n; ++b) {
        const auto& v = corpus[order[start + b]];
        const std::size_t frames = v.mel.frames();
        const std::size_t offset =
            frames > crop ? std::uniform_int_distribution<std::size_t>(0, frames - crop)(rng) : 0;
        for (std::size_t band = 0; band < kMelBands; ++band)
          for (std::size_t t = 0; t < crop; ++t)
            batch[(b * kMelBands + band) * crop + t] =
                static_cast<T>(v.mel.values[band * frames + (offset + t) % frames]);
        labels[b] = v.label;
      }
      params.zero_grad();
      auto loss = cross_entropy(linear(net.forward(Var<T>(std::move(batch)), Phase::train), head_w, head_b), labels);
      backward(loss);
      adam.step();
      loss_sum += static_cast<double>(loss.value()[0]);
      ++batches;
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
  }
  params.zero_grad();

  std::vector<const MelSpectrogram*> mels;
  for (const auto& v : corpus) mels.push_back(&v.mel);
  net.recompute_statistics(mels);
  net.freeze();
  result.train_accuracy = speaker_accuracy(net, head_w, head_b, corpus);
  return result;
}

inline constexpr const char* kEmbedderKind = "cae-embedder";

template <typename T>
void save_embedder(const std::filesystem::path& path, VoiceEmbedder<T>& embedder, const nlohmann::json& meta = {}) {
  save_checkpoint<T>(path, {kEmbedderKind, embedder_fingerprint(), meta}, embedder.state());
}

// Returns a frozen embedder.
template <typename T>
VoiceEmbedder<T> load_embedder(const std::filesystem::path& path) {
  VoiceEmbedder<T> e;
  load_checkpoint<T>(path, kEmbedderKind, embedder_fingerprint(), e.state());
  e.freeze();
  return e;
}

}  // namespace cae
