#pragma once

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "cae/cae.hpp"
#include "finite_difference.hpp"

namespace cae::test {

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("cae_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

template <typename T>
Tensor<T> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(u(rng));
  return t;
}

template <typename T>
FaceImage<T> random_face(std::mt19937_64& rng) {
  return FaceImage<T>(random_tensor<T>(face_shape(), rng));
}

template <typename T>
VoiceEmbedding<T> random_embedding(std::mt19937_64& rng) {
  return VoiceEmbedding<T>(random_tensor<T>({kEmbeddingDim}, rng));
}

// Redraws weights as N(0, 2 / fan_in) and biases uniformly in [-0.1, 0.1].
inline void he_rescale(const ParameterSet<double>& params, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> bias(-0.1, 0.1);
  for (const auto& p : params) {
    Var<double> v = p.var;
    const auto& shape = v.value().shape();
    if (shape.size() < 2) {
      for (auto& x : v.mutable_value().values()) x = bias(rng);
      continue;
    }
    const double fan_in = static_cast<double>(v.value().size() / shape[0]);
    std::normal_distribution<double> w(0.0, std::sqrt(2.0 / fan_in));
    for (auto& x : v.mutable_value().values()) x = w(rng);
  }
}

// Deep copy of named state, for before/after comparisons.
template <typename T>
std::map<std::string, Tensor<T>> snapshot(const StateRefs<T>& refs) {
  std::map<std::string, Tensor<T>> out;
  for (const auto& [name, t] : refs) out.emplace(name, *t);
  return out;
}

template <typename T>
std::map<std::string, Tensor<T>> snapshot(const ParameterSet<T>& params) {
  std::map<std::string, Tensor<T>> out;
  for (const auto& p : params) out.emplace(p.name, p.var.value());
  return out;
}

// Labeled voice features for every clip of one split.
inline std::vector<LabeledVoice> labeled_voices(const CorpusManifest& manifest, const std::string& split) {
  const auto corpus = load_corpus<float>(manifest, split);
  std::vector<LabeledVoice> out;
  for (std::size_t id = 0; id < corpus.identities(); ++id)
    for (const auto& mel : corpus.voices[id]) out.push_back({mel, id});
  return out;
}

// A small toy corpus on disk, generated once per test binary.
inline const std::filesystem::path& toy_corpus_dir() {
  static const std::filesystem::path dir = [] {
    auto d = scratch_dir("toy_corpus");
    make_toy_corpus(d, ToyCorpusOptions{});
    return d;
  }();
  return dir;
}

}  // namespace cae::test
