// Small end-to-end walk through the library: synthesize a toy corpus, pre-train
// the voice embedder, train briefly, then morph one face toward every voice.
//
//   morph_demo [out_dir] [steps]

#include <cstdio>
#include <cstdlib>
#include <filesystem>

#include "cae/cae.hpp"

int main(int argc, char** argv) {
  const std::filesystem::path out = argc > 1 ? argv[1] : "morph_demo_out";
  const std::size_t steps = argc > 2 ? std::strtoul(argv[2], nullptr, 10) : 200;

  const auto manifest = cae::make_toy_corpus(out / "toy", cae::ToyCorpusOptions{});
  const auto train = cae::load_corpus<float>(manifest, "train");

  std::vector<cae::LabeledVoice> voices;
  for (std::size_t id = 0; id < train.identities(); ++id)
    for (const auto& mel : train.voices[id]) voices.push_back({mel, id});
  auto pre = cae::pretrain_embedder<float>(voices, cae::PretrainOptions{});
  std::printf("voice embedder speaker accuracy %.2f\n", pre.train_accuracy);

  cae::TrainConfig cfg;
  cfg.width = 0.125;
  cfg.max_steps = steps;
  cfg.early_stop = false;
  cae::Trainer<float> trainer(train, std::move(pre.embedder), cfg);
  cae::Trainer<float>::RunOptions run;
  run.on_step = [](const cae::StepReport& r) {
    if ((r.step + 1) % 50 == 0) std::printf("step %4zu  objective %.1f\n", r.step + 1, r.g_total);
  };
  trainer.run(run);

  // Row 0 of the output: the proposal face, then one morph per identity.
  const auto& proposal = train.faces[0][0];
  cae::save_face(out / "proposal.png", proposal);
  for (std::size_t id = 0; id < train.identities(); ++id) {
    const auto path = out / ("morph_to_" + train.labels[id] + ".png");
    cae::save_face(path, trainer.generator().generate(proposal, trainer.embedding(id, 0)));
    std::printf("wrote %s\n", path.c_str());
  }
  return 0;
}
