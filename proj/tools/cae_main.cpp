// Command-line driver: toy corpus generation, voice pre-training, adversarial
// training, inference and evaluation.
//
//   cae make-toy-corpus --out <dir>
//   cae pretrain-voice  --manifest <file> --out <ckpt>
//   cae train           --manifest <file> --voice-ckpt <ckpt> [--config <file>] --out-dir <dir>
//   cae infer           --ckpt <ckpt> --face <png>... --voice <wav>... --out <png|dir> [--grid]
//   cae eval            --ckpt <ckpt> --manifest <file> --report <json>
//
// Global flags: --seed, --config, --log-level, --sample-rate.
// Exit codes: 0 ok, 1 other failure, 2 config error, 3 data error, 4 numeric failure.

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cae/cae.hpp"

namespace fs = std::filesystem;
using cae::KeyValues;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kNumeric = 4 };

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::string log_level = "info";
  std::optional<int> sample_rate;
};

// Keys accepted in a config file besides the training keys.
const std::set<std::string> kExtraKeys{"sample_rate",   "pretrain_epochs", "pretrain_batch_size", "pretrain_crop_frames",
                                       "pretrain_learning_rate", "top_k", "random_pairs",        "retrieval_target"};

KeyValues load_config(const Globals& g) {
  KeyValues kv;
  if (!g.config_path.empty()) kv = KeyValues::load(g.config_path);
  std::set<std::string> known = cae::TrainConfig::keys();
  known.insert(kExtraKeys.begin(), kExtraKeys.end());
  kv.require_known(known);
  // Flags override the file.
  if (g.seed) kv.set("seed", std::to_string(*g.seed));
  if (g.sample_rate) kv.set("sample_rate", std::to_string(*g.sample_rate));
  return kv;
}

void log_config(const std::string& command, const KeyValues& kv) {
  spdlog::info("{}: seed={}", command, kv.get_string("seed", "0"));
  for (const auto& [k, v] : kv.items()) spdlog::info("  {} = {}", k, v);
}

cae::LoadOptions load_options(const KeyValues& kv) {
  cae::LoadOptions opt;
  opt.sample_rate = static_cast<int>(kv.get_uint("sample_rate", cae::kCanonicalSampleRate));
  if (opt.sample_rate <= 0) throw cae::ConfigError("sample_rate must be positive");
  return opt;
}

int make_toy_corpus(const Globals& g, const fs::path& out, cae::ToyCorpusOptions opt) {
  const KeyValues kv = load_config(g);
  opt.seed = kv.get_uint("seed", opt.seed);
  log_config("make-toy-corpus", kv);
  const auto manifest = cae::make_toy_corpus(out, opt);
  spdlog::info("wrote {} identities, {} faces, {} clips to {}", manifest.labels().size(),
               manifest.count(cae::MediaKind::face), manifest.count(cae::MediaKind::voice), out.string());
  return kOk;
}

int pretrain_voice(const Globals& g, const fs::path& manifest_path, const fs::path& out) {
  const KeyValues kv = load_config(g);
  log_config("pretrain-voice", kv);
  cae::PretrainOptions opt;
  opt.seed = kv.get_uint("seed", 0);
  opt.epochs = kv.get_uint("pretrain_epochs", opt.epochs);
  opt.batch_size = kv.get_uint("pretrain_batch_size", opt.batch_size);
  opt.crop_frames = kv.get_uint("pretrain_crop_frames", opt.crop_frames);
  opt.learning_rate = kv.get_double("pretrain_learning_rate", opt.learning_rate);

  const auto manifest = cae::CorpusManifest::load(manifest_path);
  const auto corpus = cae::load_corpus<float>(manifest, "train", load_options(kv));
  std::vector<cae::LabeledVoice> voices;
  for (std::size_t id = 0; id < corpus.identities(); ++id)
    for (const auto& mel : corpus.voices[id]) voices.push_back({mel, id});
  spdlog::info("pre-training on {} recordings of {} speakers", voices.size(), corpus.identities());
  auto result = cae::pretrain_embedder<float>(voices, opt);
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) spdlog::debug("epoch {} loss {:.4f}", e, result.epoch_loss[e]);
  spdlog::info("training accuracy {:.3f}", result.train_accuracy);
  cae::save_embedder<float>(out, result.embedder,
                            {{"train_accuracy", result.train_accuracy}, {"labels", corpus.labels}, {"seed", opt.seed}});
  spdlog::info("saved {}", out.string());
  return kOk;
}

int train(const Globals& g, const fs::path& manifest_path, const fs::path& voice_ckpt, const fs::path& out_dir,
          const std::string& resume) {
  const KeyValues kv = load_config(g);
  cae::TrainConfig cfg;
  cfg.apply(kv);
  cfg.validate();
  log_config("train", kv);
  spdlog::info("resolved training config: {}", cfg.to_json().dump());

  const auto manifest = cae::CorpusManifest::load(manifest_path);
  const auto corpus = cae::load_corpus<float>(manifest, "train", load_options(kv));
  cae::Trainer<float> trainer(corpus, cae::load_embedder<float>(voice_ckpt), cfg);
  if (!resume.empty()) {
    trainer.load(resume);
    spdlog::info("resumed from {} at step {}", resume, trainer.step());
  }
  fs::create_directories(out_dir);
  std::ofstream(out_dir / "config.json") << cfg.to_json().dump(2) << '\n';

  typename cae::Trainer<float>::RunOptions run;
  run.out_dir = out_dir;
  run.on_step = [](const cae::StepReport& r) {
    if (r.step % 100 == 0)
      spdlog::info("step {} D(real) {:.4f} D(fake) {:.4f} C {:.4f} G {:.2f}", r.step, r.d_real, r.d_fake, r.c,
                   r.g_total);
  };
  trainer.run(run);
  spdlog::info("finished at step {}{}; checkpoint {}", trainer.step(), trainer.stopped_early() ? " (plateau)" : "",
               (out_dir / "checkpoint.ckpt").string());
  return kOk;
}

int infer(const Globals& g, const fs::path& ckpt, const std::vector<std::string>& faces,
          const std::vector<std::string>& voices, const fs::path& out, bool grid) {
  const KeyValues kv = load_config(g);
  log_config("infer", kv);
  auto models = cae::load_trained_models<float>(ckpt);
  const auto opt = load_options(kv);
  auto embed = [&](const std::string& path) {
    return models.embedder->embed(cae::voice_features(cae::load_voice(path, opt.sample_rate), opt.frontend));
  };
  if (!grid) {
    if (faces.size() != 1 || voices.size() != 1)
      throw cae::ConfigError("infer takes one --face and one --voice unless --grid is given");
    cae::save_face(out, models.generator->generate(cae::load_face<float>(faces[0]), embed(voices[0])));
    spdlog::info("wrote {}", out.string());
    return kOk;
  }
  fs::create_directories(out);
  std::vector<cae::VoiceEmbedding<float>> embeddings;
  for (const auto& v : voices) embeddings.push_back(embed(v));
  for (std::size_t i = 0; i < faces.size(); ++i) {
    const auto face = cae::load_face<float>(faces[i]);
    for (std::size_t j = 0; j < voices.size(); ++j) {
      const fs::path path = out / ("face" + std::to_string(i) + "_voice" + std::to_string(j) + ".png");
      cae::save_face(path, models.generator->generate(face, embeddings[j]));
      spdlog::info("wrote {} ({} + {})", path.string(), faces[i], voices[j]);
    }
  }
  return kOk;
}

int evaluate(const Globals& g, const fs::path& ckpt, const fs::path& manifest_path, const fs::path& report,
             const std::string& split) {
  const KeyValues kv = load_config(g);
  log_config("eval", kv);
  auto models = cae::load_trained_models<float>(ckpt);
  const auto manifest = cae::CorpusManifest::load(manifest_path);
  if (manifest.labels() != models.labels) throw cae::DataError("manifest identities differ from the checkpoint's");
  const auto corpus = cae::load_corpus<float>(manifest, split, load_options(kv));

  cae::EvalOptions opt;
  opt.seed = kv.get_uint("seed", 0);
  opt.random_pairs = kv.get_uint("random_pairs", opt.random_pairs);
  opt.top_k = kv.get_uint("top_k", std::min<std::size_t>(opt.top_k, models.labels.size()));
  const std::string target = kv.get_string("retrieval_target", "B");
  if (target != "A" && target != "B") throw cae::ConfigError("retrieval_target must be A or B");
  opt.target = target == "A" ? cae::RetrievalTarget::a : cae::RetrievalTarget::b;

  cae::EvalModels<float> m{*models.generator, *models.critic, *models.embedder};
  const auto sim = cae::eval_similarity(corpus, m, opt);
  const auto ret = cae::eval_retrieval(corpus, m, opt);
  auto other = opt;
  other.target = opt.target == cae::RetrievalTarget::b ? cae::RetrievalTarget::a : cae::RetrievalTarget::b;
  const auto ret_other = cae::eval_retrieval(corpus, m, other);

  nlohmann::json j{{"checkpoint", ckpt.string()},
                   {"split", split},
                   {"training_step", models.step},
                   {"identities", models.labels},
                   {"similarity", cae::to_json(sim)},
                   {"retrieval", cae::to_json(ret)},
                   {"retrieval_other_target", cae::to_json(ret_other)}};
  if (report.has_parent_path()) fs::create_directories(report.parent_path());
  std::ofstream out(report);
  if (!out) throw cae::DataError("cannot write report " + report.string());
  out << j.dump(2) << '\n';
  spdlog::info("cos(g,A) {:.4f}  cos(g,B) {:.4f}  random {:.4f}  top-{} ({}) {:.3f} over {} queries", sim.cos_g_a,
               sim.cos_g_b, sim.cos_random, ret.top_k, target, ret.success_rate, ret.queries);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Voice-controlled face autoencoder"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "random seed (overrides the config file)");
  app.add_option("--config", g.config_path, "flat key = value config file")->check(CLI::ExistingFile);
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error"}));
  app.add_option("--sample-rate", g.sample_rate, "audio sample rate in Hz");

  fs::path toy_out;
  cae::ToyCorpusOptions toy;
  auto* toy_cmd = app.add_subcommand("make-toy-corpus", "write a synthetic face/voice corpus and manifest");
  toy_cmd->add_option("--out", toy_out, "output directory")->required();
  toy_cmd->add_option("--identities", toy.identities, "number of identities");
  toy_cmd->add_option("--faces", toy.faces_per_identity, "faces per identity");
  toy_cmd->add_option("--clips", toy.clips_per_identity, "voice clips per identity");

  fs::path pre_manifest, pre_out;
  auto* pre_cmd = app.add_subcommand("pretrain-voice", "pre-train and freeze the voice embedder");
  pre_cmd->add_option("--manifest", pre_manifest, "corpus manifest")->required();
  pre_cmd->add_option("--out", pre_out, "embedder checkpoint to write")->required();

  fs::path tr_manifest, tr_voice, tr_out;
  std::string tr_resume;
  auto* train_cmd = app.add_subcommand("train", "adversarial training");
  train_cmd->add_option("--manifest", tr_manifest, "corpus manifest")->required();
  train_cmd->add_option("--voice-ckpt", tr_voice, "pre-trained embedder")->required();
  train_cmd->add_option("--out-dir", tr_out, "directory for losses.csv and checkpoints")->required();
  train_cmd->add_option("--resume", tr_resume, "trainer checkpoint to continue from");
  // Also accepted after the subcommand, as in `train --config <file>`.
  train_cmd->add_option("--config", g.config_path, "flat key = value config file")->check(CLI::ExistingFile);

  fs::path inf_ckpt, inf_out;
  std::vector<std::string> inf_faces, inf_voices;
  bool inf_grid = false;
  auto* infer_cmd = app.add_subcommand("infer", "morph proposal faces toward target voices");
  infer_cmd->add_option("--ckpt", inf_ckpt, "trainer checkpoint")->required();
  infer_cmd->add_option("--face", inf_faces, "proposal face image(s)")->required();
  infer_cmd->add_option("--voice", inf_voices, "target voice recording(s)")->required();
  infer_cmd->add_option("--out", inf_out, "output PNG, or directory with --grid")->required();
  infer_cmd->add_flag("--grid", inf_grid, "every face with every voice");

  fs::path ev_ckpt, ev_manifest, ev_report;
  std::string ev_split = "eval";
  auto* eval_cmd = app.add_subcommand("eval", "feature similarity and retrieval metrics");
  eval_cmd->add_option("--ckpt", ev_ckpt, "trainer checkpoint")->required();
  eval_cmd->add_option("--manifest", ev_manifest, "corpus manifest")->required();
  eval_cmd->add_option("--report", ev_report, "JSON report to write")->required();
  eval_cmd->add_option("--split", ev_split, "manifest split to evaluate")->check(CLI::IsMember({"train", "eval"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }
  spdlog::set_level(spdlog::level::from_str(g.log_level));

  try {
    if (*toy_cmd) return make_toy_corpus(g, toy_out, toy);
    if (*pre_cmd) return pretrain_voice(g, pre_manifest, pre_out);
    if (*train_cmd) return train(g, tr_manifest, tr_voice, tr_out, tr_resume);
    if (*infer_cmd) return infer(g, inf_ckpt, inf_faces, inf_voices, inf_out, inf_grid);
    if (*eval_cmd) return evaluate(g, ev_ckpt, ev_manifest, ev_report, ev_split);
  } catch (const cae::ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return kConfig;
  } catch (const cae::NumericError& e) {
    spdlog::error("numeric failure: {}", e.what());
    return kNumeric;
  } catch (const cae::DataError& e) {
    spdlog::error("data: {}", e.what());
    return kData;
  } catch (const cae::CorpusError& e) {
    spdlog::error("corpus: {}", e.what());
    return kData;
  } catch (const cae::VersionError& e) {
    spdlog::error("checkpoint: {}", e.what());
    return kData;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kOther;
  }
  return kOther;
}
