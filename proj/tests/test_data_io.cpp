#include <cstdlib>
#include <fstream>

#include "support.hpp"

namespace cae {
namespace {

RgbImage solid(std::size_t size, std::uint8_t value) {
  return RgbImage{size, size, std::vector<std::uint8_t>(size * size * 3, value)};
}

TEST(Manifest, LabelsAreSortedDenseAndStable) {
  const auto dir = test::scratch_dir("manifest");
  std::ofstream(dir / "m.tsv") << "# header\ntrain\tface\tzed\ta.png\ntrain\tvoice\talpha\tb.wav\n"
                                  "eval\tface\tmid\tc.png\ntrain\tface\talpha\td.png\n"
                                  "eval\tvoice\tmid\te.wav\ntrain\tvoice\tzed\tf.wav\n";
  const auto m = CorpusManifest::load(dir / "m.tsv");
  EXPECT_EQ(m.labels(), (std::vector<std::string>{"alpha", "mid", "zed"}));
  EXPECT_EQ(m.index_of("mid"), 1u);
  EXPECT_EQ(m.count(MediaKind::face), 3u);
  EXPECT_EQ(m.count(MediaKind::face, "train"), 2u);
  EXPECT_EQ(m.count(MediaKind::voice, "eval"), 1u);
  EXPECT_EQ(m.resolve("a.png"), dir / "a.png");
  EXPECT_THROW(m.index_of("nobody"), DataError);

  m.save(dir / "copy.tsv");
  EXPECT_EQ(CorpusManifest::load(dir / "copy.tsv").labels(), m.labels());
}

TEST(Manifest, MalformedLinesAreDataErrors) {
  const auto dir = test::scratch_dir("manifest_bad");
  for (const char* line : {"train\tface\tx\n", "train\tface\tx\tp.png\n", "test\tface\tx\tp.png\n", "train\taudio\tx\tp.wav\n",
                           "train\tface\t\tp.png\n"}) {
    std::ofstream(dir / "m.tsv") << line;
    EXPECT_THROW(CorpusManifest::load(dir / "m.tsv"), DataError) << line;
  }
  EXPECT_THROW(CorpusManifest::load(dir / "missing.tsv"), DataError);
}

TEST(Manifest, CorpusRootEnvironmentOverridesTheManifestDirectory) {
  const auto dir = test::scratch_dir("manifest_env");
  std::ofstream(dir / "m.tsv") << "train\tface\tx\tp.png\ntrain\tvoice\tx\tq.wav\n";
  struct EnvGuard {
    EnvGuard() { ::setenv(kCorpusRootEnv, "/elsewhere", 1); }
    ~EnvGuard() { ::unsetenv(kCorpusRootEnv); }
  };
  const auto m = [&] {
    EnvGuard guard;
    return CorpusManifest::load(dir / "m.tsv");
  }();
  EXPECT_EQ(m.resolve("p.png"), std::filesystem::path("/elsewhere/p.png"));
  EXPECT_EQ(m.resolve("/abs/p.png"), std::filesystem::path("/abs/p.png"));
}

TEST(FaceLoading, WhiteImageOfAnySizeMapsToOne) {
  const auto dir = test::scratch_dir("faces_white");
  write_png(dir / "white.png", solid(128, 255));
  const auto f = load_face<double>(dir / "white.png");
  EXPECT_EQ(f.pixels().shape(), face_shape());
  for (double v : f.pixels().values()) EXPECT_EQ(v, 1.0);
}

TEST(FaceLoading, MidGrayMapsJustAboveZero) {
  const auto dir = test::scratch_dir("faces_gray");
  write_png(dir / "gray.png", solid(128, 128));
  const auto gray = load_face<double>(dir / "gray.png");
  for (double v : gray.pixels().values()) EXPECT_NEAR(v, 2.0 * 128 / 255 - 1, 1e-12);
  EXPECT_NEAR(2.0 * 128 / 255 - 1, 0.0039, 1e-4);
}

TEST(FaceLoading, NativeSizeIsNotResampled) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> byte(0, 255);
  RgbImage img = solid(64, 0);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(byte(rng));
  const auto dir = test::scratch_dir("faces_native");
  write_png(dir / "f.png", img);
  const auto f = load_face<double>(dir / "f.png");
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x)
        ASSERT_EQ(f.pixels()[(c * 64 + y) * 64 + x], 2.0 * img.at(x, y, c) / 255.0 - 1.0);
}

// Property: the 8-bit quantization is invertible for every byte value.
TEST(FaceLoading, QuantizationRoundTripsEveryByte) {
  RgbImage img = solid(64, 0);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i % 256);
  EXPECT_EQ(to_rgb(to_face<float>(img)).pixels, img.pixels);
  const auto dir = test::scratch_dir("faces_rt");
  save_face(dir / "f.png", to_face<float>(img));
  EXPECT_EQ(read_png(dir / "f.png").pixels, img.pixels);
}

TEST(FaceLoading, UnreadableImageIsADataError) {
  const auto dir = test::scratch_dir("faces_bad");
  std::ofstream(dir / "x.png") << "not a png";
  EXPECT_THROW(load_face<float>(dir / "x.png"), DataError);
  EXPECT_THROW(load_face<float>(dir / "absent.png"), DataError);
}

TEST(ToyCorpus, CountsAndSplitsMatchTheOptions) {
  const auto m = CorpusManifest::load(test::toy_corpus_dir() / "manifest.tsv");
  EXPECT_EQ(m.labels().size(), 4u);
  EXPECT_EQ(m.count(MediaKind::face), 40u);
  EXPECT_EQ(m.count(MediaKind::voice), 40u);
  EXPECT_EQ(m.count(MediaKind::face, "eval"), 8u);
  EXPECT_EQ(m.count(MediaKind::voice, "eval"), 8u);
  const auto train = load_corpus<float>(m, "train");
  for (std::size_t id = 0; id < 4; ++id) {
    EXPECT_EQ(train.faces[id].size(), 8u);
    EXPECT_EQ(train.voices[id].size(), 8u);
    for (const auto& v : train.voices[id]) EXPECT_EQ(v.bands(), kMelBands);
  }
}

TEST(ToyCorpus, SameSeedGivesIdenticalFiles) {
  ToyCorpusOptions opt;
  opt.identities = 2;
  opt.faces_per_identity = 2;
  opt.clips_per_identity = 2;
  const auto a = test::scratch_dir("toy_a"), b = test::scratch_dir("toy_b");
  const auto m = make_toy_corpus(a, opt);
  make_toy_corpus(b, opt);
  auto bytes = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  EXPECT_EQ(m.entries().size(), 8u);
  for (const auto& e : m.entries()) EXPECT_EQ(bytes(a / e.path), bytes(b / e.path)) << e.path;
  EXPECT_EQ(bytes(a / "manifest.tsv"), bytes(b / "manifest.tsv"));
  EXPECT_THROW(make_toy_corpus(a, ToyCorpusOptions{.identities = 1}), InvalidInput);
}

class CheckpointFile : public ::testing::Test {
 protected:
  void SetUp() override {
    std::mt19937_64 rng(2);
    a_ = test::random_tensor<double>({3, 4}, rng);
    b_ = test::random_tensor<double>({5}, rng);
    path_ = test::scratch_dir("ckpt") / "m.ckpt";
    save_checkpoint<double>(path_, {"kind", "arch-1", {{"step", 12}}}, {{"a", &a_}, {"b", &b_}});
  }
  Tensor<double> a_, b_;
  std::filesystem::path path_;
};

TEST_F(CheckpointFile, RoundTripIsBitExact) {
  Tensor<double> a({3, 4}), b({5});
  const auto meta = load_checkpoint<double>(path_, "kind", "arch-1", {{"a", &a}, {"b", &b}});
  EXPECT_EQ(a, a_);
  EXPECT_EQ(b, b_);
  EXPECT_EQ(meta.at("step"), 12);
}

TEST_F(CheckpointFile, MismatchesAreVersionErrors) {
  Tensor<double> a({3, 4}), wrong({4, 3});
  Tensor<float> af({3, 4});
  EXPECT_THROW(load_checkpoint<double>(path_, "other", "arch-1", {{"a", &a}}), VersionError);
  EXPECT_THROW(load_checkpoint<double>(path_, "kind", "arch-2", {{"a", &a}}), VersionError);
  EXPECT_THROW(load_checkpoint<double>(path_, "kind", "arch-1", {{"a", &wrong}}), VersionError);
  EXPECT_THROW(load_checkpoint<double>(path_, "kind", "arch-1", {{"c", &a}}), VersionError);
  EXPECT_THROW(load_checkpoint<float>(path_, "kind", "arch-1", {{"a", &af}}), VersionError);
}

TEST_F(CheckpointFile, FutureFormatVersionIsRejected) {
  std::fstream f(path_, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(8);
  const std::uint32_t future = kCheckpointVersion + 1;
  f.write(reinterpret_cast<const char*>(&future), sizeof future);
  f.close();
  Tensor<double> a({3, 4});
  EXPECT_THROW(load_checkpoint<double>(path_, "kind", "arch-1", {{"a", &a}}), VersionError);
}

TEST_F(CheckpointFile, TruncationIsADataError) {
  const auto full = std::filesystem::file_size(path_);
  Tensor<double> a({3, 4}), b({5});
  for (auto keep : {full - 8, full / 2, std::uintmax_t{10}, std::uintmax_t{0}}) {
    const auto cut = path_.parent_path() / "cut.ckpt";
    std::filesystem::copy_file(path_, cut, std::filesystem::copy_options::overwrite_existing);
    std::filesystem::resize_file(cut, keep);
    EXPECT_THROW(load_checkpoint<double>(cut, "kind", "arch-1", {{"a", &a}, {"b", &b}}), DataError) << keep;
  }
}

}  // namespace
}  // namespace cae
