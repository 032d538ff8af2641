#pragma once

#include <array>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cae/checkpoint.hpp"
#include "cae/config.hpp"
#include "cae/data_io.hpp"
#include "cae/generator.hpp"
#include "cae/losses.hpp"
#include "cae/voice_embedding.hpp"

namespace cae {

struct TrainConfig {
  std::array<double, 5> lambda{1.0, 10.0, 1.0, 1.0, 10.0};
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::size_t d_to_g_ratio = 1;
  std::size_t batch_size = 1;
  std::size_t max_steps = 2000;
  std::uint64_t seed = 0;
  std::size_t checkpoint_interval = 500;
  double width = 1.0;
  bool early_stop = true;
  std::size_t plateau_window = 200;
  double plateau_tolerance = 1e-3;

  void validate() const {
    for (std::size_t i = 0; i < lambda.size(); ++i)
      if (!(lambda[i] >= 0.0) || !std::isfinite(lambda[i]))
        throw ConfigError("lambda" + std::to_string(i + 1) + " must be finite and >= 0");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("adam betas must lie in [0, 1)");
    if (batch_size != 1)
      throw ConfigError("batch_size must be 1: gates are computed per sample, so filters cannot be shared");
    if (d_to_g_ratio == 0) throw ConfigError("d_to_g_ratio must be >= 1");
    if (!(width > 0.0) || !std::isfinite(width)) throw ConfigError("width must be > 0");
    if (early_stop && plateau_window == 0) throw ConfigError("plateau_window must be >= 1");
  }

  AdamOptions adam() const { return AdamOptions{learning_rate, beta1, beta2, 1e-8}; }

  static const std::set<std::string>& keys() {
    static const std::set<std::string> k{"lambda1",   "lambda2",       "lambda3",     "lambda4",
                                         "lambda5",   "learning_rate", "beta1",       "beta2",
                                         "d_to_g_ratio", "batch_size", "max_steps",   "seed",
                                         "checkpoint_interval", "width", "early_stop", "plateau_window",
                                         "plateau_tolerance"};
    return k;
  }

  // Keys absent from `kv` keep the values already in *this.
  void apply(const KeyValues& kv) {
    for (std::size_t i = 0; i < lambda.size(); ++i)
      lambda[i] = kv.get_double("lambda" + std::to_string(i + 1), lambda[i]);
    learning_rate = kv.get_double("learning_rate", learning_rate);
    beta1 = kv.get_double("beta1", beta1);
    beta2 = kv.get_double("beta2", beta2);
    d_to_g_ratio = kv.get_uint("d_to_g_ratio", d_to_g_ratio);
    batch_size = kv.get_uint("batch_size", batch_size);
    max_steps = kv.get_uint("max_steps", max_steps);
    seed = kv.get_uint("seed", seed);
    checkpoint_interval = kv.get_uint("checkpoint_interval", checkpoint_interval);
    width = kv.get_double("width", width);
    early_stop = kv.get_bool("early_stop", early_stop);
    plateau_window = kv.get_uint("plateau_window", plateau_window);
    plateau_tolerance = kv.get_double("plateau_tolerance", plateau_tolerance);
  }

  nlohmann::json to_json() const {
    return {{"lambda", lambda},
            {"learning_rate", learning_rate},
            {"beta1", beta1},
            {"beta2", beta2},
            {"d_to_g_ratio", d_to_g_ratio},
            {"batch_size", batch_size},
            {"max_steps", max_steps},
            {"seed", seed},
            {"checkpoint_interval", checkpoint_interval},
            {"width", width},
            {"early_stop", early_stop},
            {"plateau_window", plateau_window},
            {"plateau_tolerance", plateau_tolerance}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.lambda = j.at("lambda").get<std::array<double, 5>>();
    c.learning_rate = j.at("learning_rate");
    c.beta1 = j.at("beta1");
    c.beta2 = j.at("beta2");
    c.d_to_g_ratio = j.at("d_to_g_ratio");
    c.batch_size = j.at("batch_size");
    c.max_steps = j.at("max_steps");
    c.seed = j.at("seed");
    c.checkpoint_interval = j.at("checkpoint_interval");
    c.width = j.at("width");
    c.early_stop = j.at("early_stop");
    c.plateau_window = j.at("plateau_window");
    c.plateau_tolerance = j.at("plateau_tolerance");
    return c;
  }
};

// Indices into the corpus for one training draw. A and B are sampled
// independently and may coincide.
struct TrainingInstance {
  std::size_t id_a = 0, face_a = 0, voice_a = 0;
  std::size_t id_b = 0, face_b = 0, voice_b = 0;
};

struct StepReport {
  std::size_t step = 0;
  double d_real = 0, d_fake = 0, c = 0;
  std::array<double, 5> g{};  // unweighted terms
  double g_total = 0;          // weighted sum

  bool finite() const {
    bool ok = std::isfinite(d_real) && std::isfinite(d_fake) && std::isfinite(c) && std::isfinite(g_total);
    for (double v : g) ok = ok && std::isfinite(v);
    return ok;
  }
};

inline const char* kLossCsvHeader = "step,L_d_real,L_d_fake,L_c,L1_fA,L1_fB,L_c_gen,L_d_gen,L1_cycle";

inline std::string to_csv(const StepReport& r) {
  char buf[320];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", r.step, r.d_real, r.d_fake, r.c,
                r.g[0], r.g[1], r.g[2], r.g[3], r.g[4]);
  return buf;
}

inline constexpr const char* kTrainerKind = "cae-trainer";

template <typename T>
class Trainer {
 public:
  // `embedder` must already be pre-trained; it is frozen here. The corpus must
  // outlive the trainer.
  Trainer(const Corpus<T>& corpus, VoiceEmbedder<T> embedder, TrainConfig cfg)
      : corpus_(check_corpus(corpus)),
        cfg_((cfg.validate(), cfg)),
        embedder_(std::move(embedder)),
        generator_(GeneratorConfig{cfg_.width}, derive_seed(cfg_.seed, 1)),
        critic_(CriticConfig{cfg_.width, corpus.identities()}, derive_seed(cfg_.seed, 2)),
        opt_g_(generator_.parameters(), cfg_.adam()),
        opt_d_(critic_.discriminator_parameters(), cfg_.adam()),
        opt_c_(critic_.classifier_parameters(), cfg_.adam()) {
    embedder_.freeze();
    embeddings_.resize(corpus_.identities());
    for (std::size_t id = 0; id < corpus_.identities(); ++id)
      for (const auto& mel : corpus_.voices[id]) embeddings_[id].push_back(embedder_.embed(mel));
  }

  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  const TrainConfig& config() const { return cfg_; }
  std::size_t step() const { return step_; }
  Generator<T>& generator() { return generator_; }
  Critic<T>& critic() { return critic_; }
  VoiceEmbedder<T>& embedder() { return embedder_; }
  const Corpus<T>& corpus() const { return corpus_; }
  const VoiceEmbedding<T>& embedding(std::size_t id, std::size_t clip) const { return embeddings_.at(id).at(clip); }

  // The draw for a given step depends only on (seed, step, repeat), so a
  // resumed run continues the same sample sequence.
  TrainingInstance sample(std::size_t step, std::size_t repeat = 0) const {
    std::seed_seq seq{static_cast<std::uint64_t>(cfg_.seed), static_cast<std::uint64_t>(step),
                      static_cast<std::uint64_t>(repeat)};
    std::mt19937_64 rng(seq);
    const std::size_t k = corpus_.identities();
    auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
    TrainingInstance inst;
    inst.id_a = pick(k);
    inst.face_a = pick(corpus_.faces[inst.id_a].size());
    inst.voice_a = pick(corpus_.voices[inst.id_a].size());
    inst.id_b = pick(k);
    inst.face_b = pick(corpus_.faces[inst.id_b].size());
    inst.voice_b = pick(corpus_.voices[inst.id_b].size());
    return inst;
  }

  Var<T> face(std::size_t id, std::size_t index) const { return corpus_.faces.at(id).at(index).as_batch(); }

  // f_hat_B = G(f_A, e_B) with a live graph into the generator.
  Var<T> generate_fake(const TrainingInstance& inst) {
    return generator_.generate(face(inst.id_a, inst.face_a), embedding(inst.id_b, inst.voice_b).as_var(), Phase::train);
  }

  // Discriminator update on L_d(fake, 0) + L_d(f_A, 1); the fake is detached.
  std::pair<double, double> update_discriminator(const TrainingInstance& inst, const Var<T>& fake) {
    opt_d_.parameters().zero_grad();
    opt_c_.parameters().zero_grad();
    critic_.parameters().set_requires_grad(true);
    Var<T> real_loss = discriminator_loss(critic_(face(inst.id_a, inst.face_a)), 1);
    Var<T> fake_loss = discriminator_loss(critic_(fake.detach()), 0);
    backward(add(real_loss, fake_loss));
    opt_d_.step();
    opt_d_.parameters().zero_grad();
    return {real_loss.value()[0], fake_loss.value()[0]};
  }

  // Classifier update on real faces only.
  double update_classifier(const TrainingInstance& inst) {
    opt_c_.parameters().zero_grad();
    opt_d_.parameters().zero_grad();
    critic_.parameters().set_requires_grad(true);
    Var<T> loss = classifier_loss(critic_(face(inst.id_a, inst.face_a)), inst.id_a);
    backward(loss);
    opt_c_.step();
    opt_c_.parameters().zero_grad();
    return loss.value()[0];
  }

  struct GeneratorTerms {
    std::array<Var<T>, 5> terms;
    Var<T> total;
  };

  // The five generator terms for a fake produced from `inst`.
  GeneratorTerms generator_objective(const TrainingInstance& inst, const Var<T>& fake) {
    const Var<T> f_a = face(inst.id_a, inst.face_a), f_b = face(inst.id_b, inst.face_b);
    const CriticOutput<T> judged = critic_(fake);
    const Var<T> cycle = generator_.generate(fake, embedding(inst.id_a, inst.voice_a).as_var(), Phase::train);
    GeneratorTerms out;
    out.terms = {l1_loss(fake, f_a), l1_loss(fake, f_b), classifier_loss(judged, inst.id_b),
                 discriminator_loss(judged, 1), l1_loss(cycle, f_a)};
    out.total = scale(out.terms[0], static_cast<T>(cfg_.lambda[0]));
    for (std::size_t i = 1; i < 5; ++i) out.total = add(out.total, scale(out.terms[i], static_cast<T>(cfg_.lambda[i])));
    return out;
  }

  // Generator update with the critic frozen; returns the five unweighted terms
  // and the weighted objective.
  std::pair<std::array<double, 5>, double> update_generator(const TrainingInstance& inst, const Var<T>& fake) {
    opt_g_.parameters().zero_grad();
    critic_.parameters().set_requires_grad(false);
    GeneratorTerms obj = generator_objective(inst, fake);
    backward(obj.total);
    critic_.parameters().set_requires_grad(true);
    opt_g_.step();
    opt_g_.parameters().zero_grad();
    std::array<double, 5> terms{};
    for (std::size_t i = 0; i < 5; ++i) terms[i] = obj.terms[i].value()[0];
    return {terms, obj.total.value()[0]};
  }

  // One training iteration. With d_to_g_ratio r, the critics are updated on
  // r draws and the generator on the last one, reusing its fake.
  StepReport train_step() {
    StepReport r;
    r.step = step_;
    TrainingInstance inst;
    Var<T> fake;
    for (std::size_t rep = 0; rep < cfg_.d_to_g_ratio; ++rep) {
      inst = sample(step_, rep);
      fake = generate_fake(inst);
      std::tie(r.d_real, r.d_fake) = update_discriminator(inst, fake);
      r.c = update_classifier(inst);
    }
    std::tie(r.g, r.g_total) = update_generator(inst, fake);
    ++step_;
    return r;
  }

  struct RunOptions {
    std::optional<std::filesystem::path> out_dir;  // CSV + checkpoints when set
    std::function<void(const StepReport&)> on_step;
  };

  // Trains until max_steps or a plateau. Non-finite losses abort with a
  // diagnostic checkpoint (when out_dir is set) and NumericError.
  std::vector<StepReport> run(const RunOptions& opt = {}) {
    std::ofstream csv;
    if (opt.out_dir) {
      std::filesystem::create_directories(*opt.out_dir);
      const auto path = *opt.out_dir / "losses.csv";
      const bool fresh = step_ == 0 || !std::filesystem::exists(path);
      csv.open(path, fresh ? std::ios::trunc : std::ios::app);
      if (!csv) throw DataError("cannot write " + path.string());
      if (fresh) csv << kLossCsvHeader << '\n';
    }
    std::vector<StepReport> reports;
    while (step_ < cfg_.max_steps && !stopped_) {
      StepReport r = train_step();
      if (!r.finite()) {
        if (opt.out_dir) save(*opt.out_dir / "diagnostic.ckpt");
        throw NumericError("non-finite loss at step " + std::to_string(r.step));
      }
      reports.push_back(r);
      if (csv.is_open()) csv << to_csv(r) << '\n' << std::flush;
      if (opt.on_step) opt.on_step(r);
      record_objective(r.g_total);
      if (opt.out_dir && cfg_.checkpoint_interval > 0 && step_ % cfg_.checkpoint_interval == 0)
        save(*opt.out_dir / "checkpoint.ckpt");
    }
    if (opt.out_dir) save(*opt.out_dir / "checkpoint.ckpt");
    return reports;
  }

  bool stopped_early() const { return stopped_; }

  std::string fingerprint() const {
    return generator_.config().fingerprint() + "|" + critic_.config().fingerprint() + "|" + embedder_fingerprint();
  }

  StateRefs<T> state() {
    StateRefs<T> refs = generator_.state();
    for (auto& r : critic_.state()) refs.push_back(r);
    for (auto& r : embedder_.state()) refs.push_back(r);
    for (auto& r : opt_g_.state("adam.g")) refs.push_back(r);
    for (auto& r : opt_d_.state("adam.d")) refs.push_back(r);
    for (auto& r : opt_c_.state("adam.c")) refs.push_back(r);
    return refs;
  }

  void save(const std::filesystem::path& path) {
    nlohmann::json meta;
    meta["step"] = step_;
    meta["config"] = cfg_.to_json();
    meta["labels"] = corpus_.labels;
    meta["adam_steps"] = {opt_g_.steps(), opt_d_.steps(), opt_c_.steps()};
    meta["objective_history"] = std::vector<double>(history_.begin(), history_.end());
    meta["stopped"] = stopped_;
    save_checkpoint<T>(path, {kTrainerKind, fingerprint(), meta}, state());
  }

  // Restores a checkpoint written by save() for the same corpus labels and
  // architecture. The trainer keeps its own config, so max_steps can extend a run.
  void load(const std::filesystem::path& path) {
    const nlohmann::json meta = load_checkpoint<T>(path, kTrainerKind, fingerprint(), state());
    if (meta.at("labels").get<std::vector<std::string>>() != corpus_.labels)
      throw VersionError(path.string() + ": checkpoint identities do not match the corpus");
    step_ = meta.at("step");
    const auto adam_steps = meta.at("adam_steps").get<std::array<std::uint64_t, 3>>();
    opt_g_.step_counter() = adam_steps[0];
    opt_d_.step_counter() = adam_steps[1];
    opt_c_.step_counter() = adam_steps[2];
    const auto hist = meta.at("objective_history").get<std::vector<double>>();
    history_.assign(hist.begin(), hist.end());
    stopped_ = meta.at("stopped");
  }

 private:
  static const Corpus<T>& check_corpus(const Corpus<T>& c) {
    if (c.identities() < 2) throw CorpusError("training needs at least two identities");
    for (std::size_t id = 0; id < c.identities(); ++id)
      if (c.faces[id].empty() || c.voices[id].empty())
        throw CorpusError("identity '" + c.labels[id] + "' has no face or no voice in the training split");
    return c;
  }

  static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{seed, stream};
    std::mt19937_64 rng(seq);
    return rng();
  }

  // Plateau test over two adjacent windows of the weighted objective.
  void record_objective(double g) {
    const std::size_t w = cfg_.plateau_window;
    history_.push_back(g);
    while (history_.size() > 2 * w) history_.pop_front();
    if (!cfg_.early_stop || history_.size() < 2 * w) return;
    const double prev = std::accumulate(history_.begin(), history_.begin() + w, 0.0) / w;
    const double cur = std::accumulate(history_.begin() + w, history_.end(), 0.0) / w;
    if (prev > 0.0 && (prev - cur) / prev < cfg_.plateau_tolerance) stopped_ = true;
  }

  const Corpus<T>& corpus_;
  TrainConfig cfg_;
  VoiceEmbedder<T> embedder_;
  Generator<T> generator_;
  Critic<T> critic_;
  Adam<T> opt_g_, opt_d_, opt_c_;
  std::vector<std::vector<VoiceEmbedding<T>>> embeddings_;
  std::size_t step_ = 0;
  std::deque<double> history_;
  bool stopped_ = false;
};

// Generator, critic and embedder restored from a trainer checkpoint without
// the corpus, for inference and evaluation.
template <typename T>
struct TrainedModels {
  TrainConfig config;
  std::vector<std::string> labels;
  std::size_t step = 0;
  std::unique_ptr<Generator<T>> generator;
  std::unique_ptr<Critic<T>> critic;
  std::unique_ptr<VoiceEmbedder<T>> embedder;
};

template <typename T>
TrainedModels<T> load_trained_models(const std::filesystem::path& path) {
  const nlohmann::json header = read_checkpoint_header(path);
  TrainedModels<T> m;
  try {
    const auto& meta = header.at("meta");
    m.config = TrainConfig::from_json(meta.at("config"));
    m.labels = meta.at("labels").template get<std::vector<std::string>>();
    m.step = meta.at("step");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": checkpoint metadata incomplete: " + e.what());
  }
  m.generator = std::make_unique<Generator<T>>(GeneratorConfig{m.config.width});
  m.critic = std::make_unique<Critic<T>>(CriticConfig{m.config.width, m.labels.size()});
  m.embedder = std::make_unique<VoiceEmbedder<T>>();
  const std::string fp = m.generator->config().fingerprint() + "|" + m.critic->config().fingerprint() + "|" +
                         embedder_fingerprint();
  StateRefs<T> refs = m.generator->state();
  for (auto& r : m.critic->state()) refs.push_back(r);
  for (auto& r : m.embedder->state()) refs.push_back(r);
  load_checkpoint<T>(path, kTrainerKind, fp, refs);
  m.embedder->freeze();
  return m;
}

}  // namespace cae
