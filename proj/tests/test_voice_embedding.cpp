#include "support.hpp"

namespace cae {
namespace {

MelSpectrogram random_mel(std::size_t frames, std::mt19937_64& rng) {
  MelSpectrogram m;
  m.values = test::random_tensor<double>({kMelBands, frames}, rng, -2.0, 2.0);
  return m;
}

TEST(EmbedderLengths, ThreeSecondClipFollowsTheStrideChain) {
  EXPECT_EQ(embedder_lengths(298), (std::array<std::size_t, 6>{298, 149, 75, 38, 19, 10}));
  EXPECT_EQ(embedder_lengths(1), (std::array<std::size_t, 6>{1, 1, 1, 1, 1, 1}));
}

// Property: t_i = ceil(t_{i-1} / 2), and the network really produces them.
TEST(EmbedderLengths, MatchCeilingHalvingForRandomInputs) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> len(1, 100000);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t t0 = len(rng);
    const auto t = embedder_lengths(t0);
    for (std::size_t i = 1; i < t.size(); ++i) ASSERT_EQ(t[i], (t[i - 1] + 1) / 2) << t0;
  }
}

TEST(VoiceEmbedder, ProducesOneSixtyFourVectorForAnyLength) {
  VoiceEmbedder<float> e(2);
  std::mt19937_64 rng(2);
  for (std::size_t frames : {1u, 2u, 7u, 64u, 298u}) {
    const auto v = e.embed(random_mel(frames, rng));
    EXPECT_EQ(v.values().shape(), (Shape{kEmbeddingDim}));
  }
  // Batched forward with two clips gives [2, 64].
  const auto out = e.forward(Var<float>(test::random_tensor<float>({2, kMelBands, 1, 50}, rng)), Phase::inference);
  EXPECT_EQ(out.shape(), (Shape{2, kEmbeddingDim}));
}

TEST(VoiceEmbedder, ZeroSpectrogramOfFreshNetworkEmbedsToZero) {
  VoiceEmbedder<double> e(3);
  MelSpectrogram m;
  m.values = Tensor<double>({kMelBands, 40}, 0.0);
  const auto embedded = e.embed(m);
  for (double v : embedded.values().values()) EXPECT_EQ(v, 0.0);
}

TEST(VoiceEmbedder, WrongBandCountIsAShapeError) {
  VoiceEmbedder<float> e(4);
  MelSpectrogram m;
  m.values = Tensor<double>({40, 100}, 0.0);
  EXPECT_THROW(e.embed(m), ShapeError);
  EXPECT_THROW(e.forward(Var<float>(Tensor<float>({1, 64, 2, 10})), Phase::inference), ShapeError);
}

TEST(VoiceEmbedder, OutputIsNonNegativeAfterFinalRelu) {
  VoiceEmbedder<float> e(5);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const auto embedded = e.embed(random_mel(80, rng));
    for (float v : embedded.values().values()) EXPECT_GE(v, 0.0f);
  }
}

TEST(VoiceEmbedder, FrozenNetworkIgnoresTrainPhaseAndGradients) {
  VoiceEmbedder<float> e(6);
  e.freeze();
  std::mt19937_64 rng(6);
  const auto mel = random_mel(60, rng);
  const auto before = test::snapshot(e.state());
  const auto first = e.embed(mel);
  Var<float> in(test::random_tensor<float>({2, kMelBands, 1, 30}, rng));
  backward(sum(e.forward(in, Phase::train)));
  EXPECT_EQ(test::snapshot(e.state()), before);
  EXPECT_EQ(e.embed(mel).values(), first.values());
  for (const auto& p : e.parameters()) EXPECT_FALSE(p.var.requires_grad()) << p.name;
}

TEST(VoiceEmbedder, CheckpointRoundTripIsExact) {
  VoiceEmbedder<float> e(7);
  std::mt19937_64 rng(7);
  const auto mel = random_mel(90, rng);
  const auto path = test::scratch_dir("embedder") / "voice.ckpt";
  save_embedder(path, e);
  auto back = load_embedder<float>(path);
  EXPECT_TRUE(back.frozen());
  EXPECT_EQ(back.embed(mel).values(), e.embed(mel).values());
}

class Pretraining : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    voices_ = std::make_unique<std::vector<LabeledVoice>>(
        test::labeled_voices(CorpusManifest::load(test::toy_corpus_dir() / "manifest.tsv"), "train"));
  }
  static void TearDownTestSuite() { voices_.reset(); }
  static std::unique_ptr<std::vector<LabeledVoice>> voices_;
};
std::unique_ptr<std::vector<LabeledVoice>> Pretraining::voices_;

TEST_F(Pretraining, SeparatesToySpeakersAndIsDeterministic) {
  PretrainOptions opt;
  opt.seed = 3;
  auto a = pretrain_embedder<float>(*voices_, opt);
  auto b = pretrain_embedder<float>(*voices_, opt);
  EXPECT_GT(a.train_accuracy, 0.9);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  EXPECT_TRUE(a.embedder.frozen());
  EXPECT_EQ(test::snapshot(a.embedder.state()), test::snapshot(b.embedder.state()));
  EXPECT_LT(a.epoch_loss.back(), a.epoch_loss.front());
}

TEST_F(Pretraining, SingleSpeakerCorpusIsRejected) {
  std::vector<LabeledVoice> one;
  for (const auto& v : *voices_)
    if (v.label == 0) one.push_back(v);
  EXPECT_THROW(pretrain_embedder<float>(one, PretrainOptions{}), CorpusError);
  EXPECT_THROW(pretrain_embedder<float>({}, PretrainOptions{}), CorpusError);
}

}  // namespace
}  // namespace cae
