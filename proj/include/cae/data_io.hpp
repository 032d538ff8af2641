#pragma once

// Corpus manifests, corpus loading and the procedural toy corpus.
//
// Manifest format: UTF-8 text, one file per line, four tab-separated fields
//
//   <split>\t<kind>\t<identity>\t<path>
//
// split is "train" or "eval", kind is "face" (PNG) or "voice" (16-bit WAV),
// identity is any label without tabs, and relative paths resolve against the
// manifest's directory (or $CAE_CORPUS_ROOT when set). Blank lines and lines
// starting with '#' are ignored.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cae/audio.hpp"
#include "cae/image_io.hpp"

namespace cae {

inline constexpr const char* kCorpusRootEnv = "CAE_CORPUS_ROOT";

enum class MediaKind { face, voice };

struct ManifestEntry {
  std::string split;
  MediaKind kind = MediaKind::face;
  std::string identity;
  std::filesystem::path path;
};

class CorpusManifest {
 public:
  CorpusManifest() = default;
  CorpusManifest(std::vector<ManifestEntry> entries, std::filesystem::path root)
      : entries_(std::move(entries)), root_(std::move(root)) {
    for (const auto& e : entries_) labels_.push_back(e.identity);
    std::sort(labels_.begin(), labels_.end());
    labels_.erase(std::unique(labels_.begin(), labels_.end()), labels_.end());
    for (std::size_t i = 0; i < labels_.size(); ++i) index_[labels_[i]] = i;
    for (const auto& label : labels_) {
      bool face = false, voice = false;
      for (const auto& e : entries_)
        if (e.identity == label) (e.kind == MediaKind::face ? face : voice) = true;
      if (!face || !voice) throw DataError("identity '" + label + "' needs at least one face and one voice");
    }
  }

  static CorpusManifest load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest " + path.string());
    std::vector<ManifestEntry> entries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      std::vector<std::string> fields;
      std::stringstream ss(line);
      for (std::string f; std::getline(ss, f, '\t');) fields.push_back(f);
      const std::string where = path.string() + ":" + std::to_string(lineno);
      if (fields.size() != 4) throw DataError(where + ": expected 4 tab-separated fields");
      if (fields[0] != "train" && fields[0] != "eval") throw DataError(where + ": split must be train or eval");
      if (fields[1] != "face" && fields[1] != "voice") throw DataError(where + ": kind must be face or voice");
      if (fields[2].empty()) throw DataError(where + ": empty identity");
      entries.push_back({fields[0], fields[1] == "face" ? MediaKind::face : MediaKind::voice, fields[2], fields[3]});
    }
    std::filesystem::path root = path.parent_path();
    if (const char* env = std::getenv(kCorpusRootEnv); env && *env) root = env;
    return CorpusManifest(std::move(entries), root);
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest " + path.string());
    out << "# split\tkind\tidentity\tpath\n";
    for (const auto& e : entries_)
      out << e.split << '\t' << (e.kind == MediaKind::face ? "face" : "voice") << '\t' << e.identity << '\t'
          << e.path.generic_string() << '\n';
  }

  const std::vector<ManifestEntry>& entries() const { return entries_; }
  // Sorted identity labels; position is the dense identity index.
  const std::vector<std::string>& labels() const { return labels_; }
  std::size_t index_of(const std::string& label) const {
    auto it = index_.find(label);
    if (it == index_.end()) throw DataError("unknown identity '" + label + "'");
    return it->second;
  }
  std::filesystem::path resolve(const std::filesystem::path& p) const { return p.is_absolute() ? p : root_ / p; }

  std::size_t count(MediaKind kind, const std::string& split = "") const {
    return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(), [&](const ManifestEntry& e) {
      return e.kind == kind && (split.empty() || e.split == split);
    }));
  }

 private:
  std::vector<ManifestEntry> entries_;
  std::filesystem::path root_;
  std::vector<std::string> labels_;
  std::map<std::string, std::size_t> index_;
};

// Decoded faces and voice features of one split, grouped by identity index.
template <typename T>
struct Corpus {
  std::vector<std::string> labels;
  std::vector<std::vector<FaceImage<T>>> faces;
  std::vector<std::vector<MelSpectrogram>> voices;

  std::size_t identities() const { return labels.size(); }
  std::size_t face_count() const {
    std::size_t n = 0;
    for (const auto& f : faces) n += f.size();
    return n;
  }
  std::size_t voice_count() const {
    std::size_t n = 0;
    for (const auto& v : voices) n += v.size();
    return n;
  }
};

struct LoadOptions {
  int sample_rate = kCanonicalSampleRate;
  FrontendOptions frontend{};
};

// Loads one split. Identity indexing always follows the full manifest so that
// train and eval corpora agree on labels.
template <typename T = float>
Corpus<T> load_corpus(const CorpusManifest& manifest, const std::string& split, const LoadOptions& opt = {}) {
  Corpus<T> c;
  c.labels = manifest.labels();
  c.faces.resize(c.labels.size());
  c.voices.resize(c.labels.size());
  for (const auto& e : manifest.entries()) {
    if (e.split != split) continue;
    const std::size_t id = manifest.index_of(e.identity);
    const auto path = manifest.resolve(e.path);
    if (e.kind == MediaKind::face)
      c.faces[id].push_back(load_face<T>(path));
    else
      c.voices[id].push_back(voice_features(load_voice(path, opt.sample_rate), opt.frontend));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Toy corpus

struct ToyCorpusOptions {
  std::size_t identities = 4;
  std::size_t faces_per_identity = 10;
  std::size_t clips_per_identity = 10;
  std::uint64_t seed = 7;
  double eval_fraction = 0.2;
  double clip_seconds = 1.2;
  double face_jitter = 2.0;  // max per-image face shift in pixels
  double face_zoom = 0.05;   // max per-image relative change of face scale
};

namespace detail {

struct Rgb {
  double r, g, b;
};

inline Rgb hsv(double h, double s, double v) {
  h = std::fmod(h, 1.0) * 6.0;
  const int i = static_cast<int>(h);
  const double f = h - i, p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

// Per-identity palette and geometry. The face position is not part of the
// identity: each rendered image shifts it independently.
struct FaceArchetype {
  Rgb background, skin, hair, eyes, mouth;
  double face_rx, face_ry, hair_line, eye_y, eye_dx, eye_r, mouth_y, mouth_w;
};

inline FaceArchetype face_archetype(std::size_t id, std::size_t count, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double pos = count > 1 ? static_cast<double>(id) / static_cast<double>(count - 1) : 0.0;
  // Spread geometry over the identity index so identities stay separable.
  auto spread = [&](double lo, double hi, double k) { return lo + (hi - lo) * std::fmod(pos * k + 0.1 * u(rng), 1.0); };
  FaceArchetype a{};
  a.background = {0.92, 0.92, 0.92};
  a.skin = hsv(0.07, 0.55, 0.95);
  a.hair = hsv(0.6, 0.8, 0.25);
  a.eyes = hsv(0.55, 1.0, 0.3);
  a.mouth = hsv(0.98, 0.9, 0.75);
  a.face_rx = spread(12.0, 24.0, 0.999);
  a.face_ry = spread(15.0, 26.0, 1.618);
  a.hair_line = spread(8.0, 20.0, 2.618);
  a.eye_y = 28.0 + 3.0 * u(rng);
  a.eye_dx = std::min(spread(4.0, 11.0, 1.414), a.face_rx - 4.0);
  a.eye_r = spread(1.5, 4.5, 2.236);
  a.mouth_y = 42.0 + 4.0 * u(rng);
  a.mouth_w = std::min(spread(3.0, 11.0, 1.732), a.face_rx - 3.0);
  return a;
}

// Draws one image of an archetype. Position, scale, a shirt and glasses are
// drawn per image and carry no identity information.
inline RgbImage render_face(const FaceArchetype& a, double jitter, double zoom, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> shift(-jitter, jitter), scale(1.0 - zoom, 1.0 + zoom);
  std::uniform_real_distribution<double> gain(0.97, 1.03);
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> noise(0.0, 1.5);
  const double cx = 32.0 + shift(rng), cy = 33.0 + shift(rng), z = scale(rng), g = gain(rng);
  const bool shirt = coin(rng), glasses = coin(rng);
  const Rgb shirt_color = hsv(0.35, 0.6, 0.55), glasses_color{0.1, 0.1, 0.1};
  RgbImage img{kFaceSize, kFaceSize, std::vector<std::uint8_t>(kFaceSize * kFaceSize * 3)};
  for (std::size_t y = 0; y < kFaceSize; ++y)
    for (std::size_t x = 0; x < kFaceSize; ++x) {
      const double px = (x + 0.5 - cx) / z, py = (y + 0.5 - cy) / z;
      Rgb col = a.background;
      if (shirt && py > a.face_ry - 2.0 && std::abs(px) <= 26.0 - 0.3 * std::max(0.0, 40.0 - py)) col = shirt_color;
      if ((px * px) / (a.face_rx * a.face_rx) + (py * py) / (a.face_ry * a.face_ry) <= 1.0) {
        col = a.skin;
        if (py < a.hair_line - a.face_ry) col = a.hair;
        for (double side : {-1.0, 1.0}) {
          const double ex = px - side * a.eye_dx, ey = py - (a.eye_y - 34.0);
          if (ex * ex + ey * ey <= a.eye_r * a.eye_r) col = a.eyes;
        }
        if (std::abs(py - (a.mouth_y - 34.0)) <= 1.5 && std::abs(px) <= a.mouth_w) col = a.mouth;
        if (glasses) {
          const double gy = std::abs(py - (a.eye_y - 34.0)), gx = std::abs(px) - a.eye_dx;
          const double ring = std::sqrt(gx * gx + gy * gy);
          if ((ring >= a.eye_r + 1.0 && ring <= a.eye_r + 2.5) || (gy <= 0.8 && std::abs(px) < a.eye_dx - a.eye_r - 1.0))
            col = glasses_color;
        }
      }
      const double rgb[3] = {col.r, col.g, col.b};
      for (std::size_t c = 0; c < 3; ++c)
        img.at(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(rgb[c] * 255.0 * g + noise(rng), 0.0, 255.0)));
    }
  return img;
}

// Per-identity voice: fundamental plus harmonics shaped by one resonance.
struct VoiceArchetype {
  double f0, resonance, bandwidth, tilt;
};

inline VoiceArchetype voice_archetype(std::size_t id, std::size_t count, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double pos = count > 1 ? static_cast<double>(id) / static_cast<double>(count - 1) : 0.0;
  return {100.0 + 220.0 * pos + 10.0 * u(rng), 500.0 + 2000.0 * std::fmod(pos * 2.618 + 0.2 * u(rng), 1.0),
          250.0 + 200.0 * u(rng), 0.4 + 0.8 * u(rng)};
}

inline Waveform render_voice(const VoiceArchetype& v, double seconds, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  Waveform w;
  const auto n = static_cast<std::size_t>(seconds * kCanonicalSampleRate);
  w.samples.assign(n, 0.0);
  const double lead = 0.1 + 0.15 * u(rng), tail = 0.1 + 0.15 * u(rng);
  const double f0 = v.f0 * (0.97 + 0.06 * u(rng)), amp = 0.15 + 0.1 * u(rng), vib = 4.0 + 2.0 * u(rng);
  const double on = lead * kCanonicalSampleRate, off = n - tail * kCanonicalSampleRate;
  const int harmonics = static_cast<int>(4000.0 / f0);
  std::vector<double> h_amp(harmonics + 1), phase(harmonics + 1);
  for (int k = 1; k <= harmonics; ++k) {
    const double f = k * f0, d = (f - v.resonance) / v.bandwidth;
    h_amp[k] = std::pow(k, -v.tilt) * (0.2 + std::exp(-0.5 * d * d));
    phase[k] = 2.0 * std::numbers::pi * u(rng);
  }
  double theta = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / kCanonicalSampleRate;
    theta += 2.0 * std::numbers::pi * f0 * (1.0 + 0.01 * std::sin(2.0 * std::numbers::pi * vib * t)) / kCanonicalSampleRate;
    double s = 0.0;
    if (i >= on && i < off) {
      for (int k = 1; k <= harmonics; ++k) s += h_amp[k] * std::sin(k * theta + phase[k]);
      const double env = std::min({1.0, (i - on) / 400.0, (off - i) / 400.0});
      s *= amp * env;
    }
    w.samples[i] = s + 0.002 * noise(rng);
  }
  return w;
}

}  // namespace detail

// Writes `identities` x (faces + clips) files under `dir` plus `dir`/manifest.tsv.
// The last eval_fraction of each identity's faces and clips are tagged eval.
inline CorpusManifest make_toy_corpus(const std::filesystem::path& dir, const ToyCorpusOptions& opt) {
  if (opt.identities < 2) throw InvalidInput("toy corpus needs at least two identities");
  if (opt.faces_per_identity == 0 || opt.clips_per_identity == 0) throw InvalidInput("toy corpus counts must be positive");
  if (opt.eval_fraction < 0.0 || opt.eval_fraction >= 1.0) throw InvalidInput("eval fraction must be in [0, 1)");
  std::filesystem::create_directories(dir / "faces");
  std::filesystem::create_directories(dir / "voices");
  std::vector<ManifestEntry> entries;
  auto split_of = [&](std::size_t i, std::size_t n) {
    const auto n_eval = static_cast<std::size_t>(std::floor(opt.eval_fraction * static_cast<double>(n)));
    return i + n_eval >= n && n_eval > 0 ? "eval" : "train";
  };
  for (std::size_t id = 0; id < opt.identities; ++id) {
    std::seed_seq seq{opt.seed, static_cast<std::uint64_t>(id)};
    std::mt19937_64 rng(seq);
    char label[32];
    std::snprintf(label, sizeof label, "id%02zu", id);
    const auto face = detail::face_archetype(id, opt.identities, rng);
    const auto voice = detail::voice_archetype(id, opt.identities, rng);
    for (std::size_t i = 0; i < opt.faces_per_identity; ++i) {
      const auto rel = std::filesystem::path("faces") / (std::string(label) + "_" + std::to_string(i) + ".png");
      write_png(dir / rel, detail::render_face(face, opt.face_jitter, opt.face_zoom, rng));
      entries.push_back({split_of(i, opt.faces_per_identity), MediaKind::face, label, rel});
    }
    for (std::size_t i = 0; i < opt.clips_per_identity; ++i) {
      const auto rel = std::filesystem::path("voices") / (std::string(label) + "_" + std::to_string(i) + ".wav");
      write_wav(dir / rel, detail::render_voice(voice, opt.clip_seconds, rng));
      entries.push_back({split_of(i, opt.clips_per_identity), MediaKind::voice, label, rel});
    }
  }
  CorpusManifest manifest(std::move(entries), dir);
  manifest.save(dir / "manifest.tsv");
  return manifest;
}

}  // namespace cae
