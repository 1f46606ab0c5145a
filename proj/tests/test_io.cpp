#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "genae/io.hpp"
#include "genae/model.hpp"

using namespace genae;
namespace fs = std::filesystem;

namespace {
fs::path temp_dir() {
  auto d = fs::temp_directory_path() / ("genae_io_test_" + std::to_string(::getpid()));
  fs::create_directories(d);
  return d;
}

AudioBuffer random_audio(std::size_t ch, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-0.9f, 0.9f);
  AudioBuffer a;
  a.sample_rate = 44100;
  a.channels.assign(ch, std::vector<float>(n));
  for (auto& c : a.channels)
    for (auto& v : c) v = u(rng);
  return a;
}
}  // namespace

TEST(Wav, Pcm16RoundTripWithinHalfLsb) {
  auto a = random_audio(2, 1000, 1);
  auto b = decode_wav(encode_wav(a, WavEncoding::pcm16));
  ASSERT_EQ(b.num_channels(), 2u);
  ASSERT_EQ(b.length(), 1000u);
  EXPECT_EQ(b.sample_rate, 44100);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 1000; ++i) EXPECT_NEAR(a.channels[c][i], b.channels[c][i], 0.5f / 32768.0f + 1e-7f);
}

TEST(Wav, Float32RoundTripExact) {
  auto a = random_audio(1, 777, 2);
  auto b = decode_wav(encode_wav(a, WavEncoding::float32));
  EXPECT_EQ(a.channels, b.channels);
}

TEST(Wav, Pcm16ClampsOutOfRange) {
  AudioBuffer a;
  a.sample_rate = 44100;
  a.channels = {{2.0f, -2.0f, 1.0f, -1.0f}};
  auto b = decode_wav(encode_wav(a));
  EXPECT_FLOAT_EQ(b.channels[0][0], 32767.0f / 32768.0f);
  EXPECT_FLOAT_EQ(b.channels[0][1], -1.0f);
  EXPECT_FLOAT_EQ(b.channels[0][2], 32767.0f / 32768.0f);
  EXPECT_FLOAT_EQ(b.channels[0][3], -1.0f);
}

TEST(Wav, HeaderLayout) {
  auto bytes = encode_wav(random_audio(2, 10, 3));
  ASSERT_EQ(bytes.size(), 44u + 40u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "RIFF");
  EXPECT_EQ(std::string(bytes.begin() + 8, bytes.begin() + 12), "WAVE");
  EXPECT_EQ(bytes[22], 2);   // channels
  EXPECT_EQ(bytes[34], 16);  // bits per sample
}

TEST(Wav, ReadsPcm24AndSkipsUnknownChunks) {
  io::ByteWriter w;
  w.str("RIFF");
  w.le<std::uint32_t>(0);
  w.str("WAVE");
  w.str("LIST");
  w.le<std::uint32_t>(3);
  w.str("abc");
  w.le<std::uint8_t>(0);  // pad byte
  w.str("fmt ");
  w.le<std::uint32_t>(16);
  w.le<std::uint16_t>(1);
  w.le<std::uint16_t>(1);
  w.le<std::uint32_t>(48000);
  w.le<std::uint32_t>(48000 * 3);
  w.le<std::uint16_t>(3);
  w.le<std::uint16_t>(24);
  w.str("data");
  w.le<std::uint32_t>(6);
  for (std::uint8_t b : {0x00, 0x00, 0x40, 0x00, 0x00, 0xC0}) w.le<std::uint8_t>(b);
  auto a = decode_wav(w.buffer());
  EXPECT_EQ(a.sample_rate, 48000);
  ASSERT_EQ(a.length(), 2u);
  EXPECT_FLOAT_EQ(a.channels[0][0], 0.5f);
  EXPECT_FLOAT_EQ(a.channels[0][1], -0.5f);
}

TEST(Wav, TruncationAndMagicErrors) {
  auto bytes = encode_wav(random_audio(1, 100, 4));
  bytes.resize(bytes.size() - 10);
  try {
    decode_wav(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("expected"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("got"), std::string::npos);
  }
  bytes[0] = 'X';
  EXPECT_THROW(decode_wav(bytes), FormatError);
}

TEST(Wav, FileRoundTripLeavesNoTemporaries) {
  auto d = temp_dir() / "wav";
  fs::remove_all(d);
  auto a = random_audio(2, 500, 5);
  write_wav(d / "x.wav", a, WavEncoding::float32);
  EXPECT_EQ(read_wav(d / "x.wav").channels, a.channels);
  std::size_t n = 0;
  for ([[maybe_unused]] auto& e : fs::directory_iterator(d)) ++n;
  EXPECT_EQ(n, 1u);
  EXPECT_THROW(read_wav(d / "missing.wav"), FormatError);
}

TEST(Containers, LatentRoundTripAndSize) {
  LatentFile f;
  f.rate = 13.125;
  f.dim = 3;
  f.formats = {FormatToken::mid, FormatToken::side};
  f.original_length = 7000;
  f.frames = 2;
  f.channels = {{1, 2, 3, 4, 5, 6}, {-1, -2, -3, -4, -5, -6}};
  auto bytes = encode_latents(f);
  EXPECT_EQ(bytes.size(), 5u + 2 + 8 + 4 + 2 + 2 + 8 + 8 + 2 * 6 * 4);
  auto g = decode_latents(bytes);
  EXPECT_EQ(g.rate, f.rate);
  EXPECT_EQ(g.dim, f.dim);
  EXPECT_EQ(g.formats, f.formats);
  EXPECT_EQ(g.original_length, f.original_length);
  EXPECT_EQ(g.frames, f.frames);
  EXPECT_EQ(g.channels, f.channels);
  bytes.pop_back();
  EXPECT_THROW(decode_latents(bytes), FormatError);
  bytes[1] = 'X';
  EXPECT_THROW(decode_latents(bytes), FormatError);
}

TEST(Containers, TokenRoundTripAndValidation) {
  TokenFile f;
  f.rate = 13.125;
  f.n_codebooks = 2;
  f.entries = 1024;
  f.formats = {FormatToken::left};
  f.original_length = 3360;
  f.frames = 3;
  f.channels = {{0, 1, 1023, 5, 6, 7}};
  auto bytes = encode_tokens(f);
  auto g = decode_tokens(bytes);
  EXPECT_EQ(g.channels, f.channels);
  EXPECT_EQ(g.formats, f.formats);
  EXPECT_EQ(g.entries, 1024);
  f.channels[0][2] = 1024;
  EXPECT_THROW(decode_tokens(encode_tokens(f)), FormatError);
  auto bad = bytes;
  bad[5] = 9;  // version
  EXPECT_THROW(decode_tokens(bad), IncompatibleError);
  bad = bytes;
  bad.push_back(0);
  EXPECT_THROW(decode_tokens(bad), FormatError);
}

TEST(Checkpoint, ModelRoundTripRestoresChecksum) {
  GenAE<float> a(ModelConfig::toy());
  auto cfg = ModelConfig::toy();
  cfg.seed = a.config().seed + 1;
  GenAE<float> b(cfg);
  ASSERT_NE(param_checksum(a.parameters()), param_checksum(b.parameters()));
  nlohmann::json rec = {{"model", a.config()}};
  auto path = temp_dir() / "m.genck";
  write_checkpoint(path, rec, a.parameters());
  auto ck = read_checkpoint(path);
  EXPECT_EQ(ck.record["model"].get<ModelConfig>().name, a.config().name);
  load_params(ck, b.parameters());
  EXPECT_EQ(param_checksum(a.parameters()), param_checksum(b.parameters()));
}

TEST(Checkpoint, MismatchedShapesAreIncompatible) {
  ParamList<float> src{{"w", Tensor<float>(Shape{2, 3}, 1.0f)}};
  ParamList<float> dst{{"w", Tensor<float>(Shape{3, 2}, 0.0f)}};
  auto ck = decode_checkpoint(encode_checkpoint(nlohmann::json::object(), src));
  EXPECT_THROW(load_params(ck, dst), IncompatibleError);
  ParamList<float> other{{"v", Tensor<float>(Shape{2, 3}, 0.0f)}};
  EXPECT_THROW(load_params(ck, other), IncompatibleError);
}

TEST(Checkpoint, TruncatedCheckpointNamesByteCounts) {
  ParamList<float> src{{"w", Tensor<float>(Shape{4, 4}, 1.0f)}};
  auto bytes = encode_checkpoint(nlohmann::json{{"k", 1}}, src);
  bytes.resize(bytes.size() - 3);
  try {
    decode_checkpoint(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("expected at least " + std::to_string(bytes.size() + 3)),
              std::string::npos)
        << e.what();
  }
}
