#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "cae/critics.hpp"
#include "cae/data_io.hpp"
#include "cae/generator.hpp"
#include "cae/voice_embedding.hpp"

namespace cae {

template <typename T>
double cosine(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size())
    throw ShapeError("cosine of vectors with lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw InvalidInput("cosine similarity is undefined for a zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

template <typename T>
double cosine(const Tensor<T>& a, const Tensor<T>& b) {
  return cosine<T>(a.values(), b.values());
}

// Indices of the k largest scores, best first; equal scores rank the lower
// index first.
template <typename T>
std::vector<std::size_t> top_k(std::span<const T> scores, std::size_t k) {
  if (k == 0 || k > scores.size())
    throw InvalidInput("k = " + std::to_string(k) + " must lie in [1, " + std::to_string(scores.size()) + "]");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(k);
  return idx;
}

// Fraction of rows whose target is among the row's top-k scores.
template <typename T>
double success_rate(const std::vector<std::vector<T>>& scores, const std::vector<std::size_t>& targets, std::size_t k) {
  if (scores.size() != targets.size()) throw InvalidInput("one target per score row required");
  if (scores.empty()) throw InvalidInput("no queries");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto top = top_k<T>(scores[i], k);
    hits += std::find(top.begin(), top.end(), targets[i]) != top.end();
  }
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

// Proposal face of A, voice of B, and a face of B for comparison.
struct EvalTriple {
  std::size_t id_a = 0, face_a = 0;
  std::size_t id_b = 0, voice_b = 0, face_b = 0;
};

// Every eval face of every identity A is paired with every other identity B;
// B's voice and comparison face cycle through B's clips and faces.
template <typename T>
std::vector<EvalTriple> make_triples(const Corpus<T>& c) {
  std::vector<EvalTriple> out;
  for (std::size_t a = 0; a < c.identities(); ++a)
    for (std::size_t i = 0; i < c.faces[a].size(); ++i)
      for (std::size_t b = 0; b < c.identities(); ++b) {
        if (b == a || c.voices[b].empty() || c.faces[b].empty()) continue;
        out.push_back({a, i, b, (i + a) % c.voices[b].size(), (i + a) % c.faces[b].size()});
      }
  return out;
}

struct SimilarityReport {
  double cos_g_a = 0, cos_g_b = 0, cos_random = 0;
  std::size_t triples = 0, random_pairs = 0;
  std::uint64_t seed = 0;
};

enum class RetrievalTarget { a, b };

struct RetrievalReport {
  std::size_t top_k = 0;
  RetrievalTarget target = RetrievalTarget::b;
  double success_rate = 0;
  double standard_error = 0;  // binomial, from the observed rate
  std::size_t queries = 0;
  std::vector<std::vector<std::size_t>> ranked;  // per query, best first
};

struct EvalOptions {
  std::size_t random_pairs = 1000;
  std::uint64_t seed = 0;
  std::size_t top_k = 5;
  RetrievalTarget target = RetrievalTarget::b;
};

// Frozen models used for evaluation. Generation runs in inference mode.
template <typename T>
struct EvalModels {
  Generator<T>& generator;
  Critic<T>& critic;
  VoiceEmbedder<T>& embedder;

  FaceImage<T> generate(const Corpus<T>& c, const EvalTriple& t) const {
    return generator.generate(c.faces[t.id_a][t.face_a], embedder.embed(c.voices[t.id_b][t.voice_b]));
  }
};

// Mean cosine between uniformly drawn distinct real faces of the corpus.
template <typename T>
double random_pair_baseline(const Corpus<T>& c, const Critic<T>& critic, std::size_t pairs, std::uint64_t seed) {
  std::vector<const FaceImage<T>*> all;
  for (const auto& fs : c.faces)
    for (const auto& f : fs) all.push_back(&f);
  if (all.size() < 2) throw CorpusError("random-pair baseline needs at least two faces");
  std::vector<Tensor<T>> emb;
  for (const auto* f : all) emb.push_back(critic.features(*f));
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, all.size() - 1);
  double sum = 0;
  for (std::size_t p = 0; p < pairs; ++p) {
    const std::size_t i = pick(rng);
    std::size_t j = pick(rng);
    while (j == i) j = pick(rng);
    sum += cosine(emb[i], emb[j]);
  }
  return sum / static_cast<double>(pairs);
}

template <typename T>
SimilarityReport eval_similarity(const Corpus<T>& c, const EvalModels<T>& m, const EvalOptions& opt = {}) {
  const auto triples = make_triples(c);
  if (triples.empty()) throw CorpusError("empty evaluation set");
  SimilarityReport r;
  r.triples = triples.size();
  r.random_pairs = opt.random_pairs;
  r.seed = opt.seed;
  for (const auto& t : triples) {
    const Tensor<T> g = m.critic.features(m.generate(c, t));
    r.cos_g_a += cosine(g, m.critic.features(c.faces[t.id_a][t.face_a]));
    r.cos_g_b += cosine(g, m.critic.features(c.faces[t.id_b][t.face_b]));
  }
  r.cos_g_a /= static_cast<double>(triples.size());
  r.cos_g_b /= static_cast<double>(triples.size());
  r.cos_random = random_pair_baseline(c, m.critic, opt.random_pairs, opt.seed);
  return r;
}

template <typename T>
RetrievalReport eval_retrieval(const Corpus<T>& c, const EvalModels<T>& m, const EvalOptions& opt = {}) {
  if (opt.top_k == 0 || opt.top_k > m.critic.identities())
    throw InvalidInput("top_k = " + std::to_string(opt.top_k) + " must lie in [1, " +
                       std::to_string(m.critic.identities()) + "]");
  const auto triples = make_triples(c);
  if (triples.empty()) throw CorpusError("empty evaluation set");
  std::vector<std::vector<T>> scores;
  std::vector<std::size_t> targets;
  RetrievalReport r;
  r.top_k = opt.top_k;
  r.target = opt.target;
  for (const auto& t : triples) {
    scores.push_back(m.critic.classify(m.generate(c, t)));
    targets.push_back(opt.target == RetrievalTarget::b ? t.id_b : t.id_a);
    r.ranked.push_back(top_k<T>(scores.back(), opt.top_k));
  }
  r.queries = triples.size();
  r.success_rate = success_rate(scores, targets, opt.top_k);
  r.standard_error = std::sqrt(r.success_rate * (1.0 - r.success_rate) / static_cast<double>(r.queries));
  return r;
}

inline nlohmann::json to_json(const SimilarityReport& s) {
  return {{"cos_g_A", s.cos_g_a}, {"cos_g_B", s.cos_g_b},        {"cos_random", s.cos_random},
          {"triples", s.triples}, {"random_pairs", s.random_pairs}, {"seed", s.seed}};
}

inline nlohmann::json to_json(const RetrievalReport& r) {
  return {{"top_k", r.top_k},
          {"target", r.target == RetrievalTarget::b ? "B" : "A"},
          {"success_rate", r.success_rate},
          {"standard_error", r.standard_error},
          {"queries", r.queries},
          {"ranked", r.ranked}};
}

}  // namespace cae
