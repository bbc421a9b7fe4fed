#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "evomoe/checkpoint.hpp"
#include "evomoe/error.hpp"

using namespace evomoe;

namespace {

Checkpoint sample() {
  Checkpoint c;
  c.config_text = "[model]\nlayers = 2\n";
  c.iteration = 1234;
  c.diversified = true;
  c.cumulative_flops = 9.5e12;
  c.params.push_back({"tok_emb", {3, 2}, {0.1, -0.2, 0.3, 1e-300, -0.0, 7.0}});
  c.params.push_back({"head.b", {3}, {1.0, 2.0, 3.0}});
  c.adam.moments["tok_emb"] = {{1, 2, 3, 4, 5, 6}, {6, 5, 4, 3, 2, 1}, 17};
  c.model_rng = "123 456";
  c.data_rng = "789";
  return c;
}

void expect_equal(const Checkpoint& a, const Checkpoint& b) {
  EXPECT_EQ(a.config_text, b.config_text);
  EXPECT_EQ(a.iteration, b.iteration);
  EXPECT_EQ(a.diversified, b.diversified);
  EXPECT_EQ(a.cumulative_flops, b.cumulative_flops);
  ASSERT_EQ(a.params.size(), b.params.size());
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    EXPECT_EQ(a.params[i].name, b.params[i].name);
    EXPECT_EQ(a.params[i].shape, b.params[i].shape);
    EXPECT_EQ(std::memcmp(a.params[i].data.data(), b.params[i].data.data(), a.params[i].data.size() * 8), 0);
  }
  ASSERT_EQ(a.adam.moments.size(), b.adam.moments.size());
  const auto& ma = a.adam.moments.at("tok_emb");
  const auto& mb = b.adam.moments.at("tok_emb");
  EXPECT_EQ(ma.m, mb.m);
  EXPECT_EQ(ma.v, mb.v);
  EXPECT_EQ(ma.steps, mb.steps);
  EXPECT_EQ(a.model_rng, b.model_rng);
  EXPECT_EQ(a.data_rng, b.data_rng);
}

}  // namespace

TEST(Checkpoint, RoundTripsBitExactly) {
  const auto c = sample();
  const std::string bytes = encode_checkpoint(c);
  EXPECT_EQ(bytes.substr(0, 4), "EVMO");
  expect_equal(decode_checkpoint(bytes), c);
  EXPECT_EQ(encode_checkpoint(decode_checkpoint(bytes)), bytes);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "evomoe_ckpt_test.ckpt";
  write_checkpoint(path, sample());
  expect_equal(read_checkpoint(path), sample());
  std::filesystem::remove(path);
}

TEST(Checkpoint, EveryBitFlipIsDetected) {
  const std::string bytes = encode_checkpoint(sample());
  for (std::size_t i = 0; i < bytes.size(); i += 7) {
    std::string bad = bytes;
    bad[i] ^= 0x10;
    EXPECT_THROW(decode_checkpoint(bad), CorruptArtifactError) << "byte " << i;
  }
}

TEST(Checkpoint, TruncationIsDetected) {
  const std::string bytes = encode_checkpoint(sample());
  for (std::size_t len : {std::size_t{0}, std::size_t{3}, std::size_t{8}, bytes.size() / 2, bytes.size() - 1})
    EXPECT_THROW(decode_checkpoint(std::string_view(bytes).substr(0, len)), CorruptArtifactError) << len;
  EXPECT_THROW(decode_checkpoint(bytes + "x"), CorruptArtifactError);
}

TEST(Checkpoint, WrongMagicIsDetected) {
  std::string bytes = encode_checkpoint(sample());
  bytes[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bytes), CorruptArtifactError);
}

TEST(Checkpoint, MissingFileIsCorruptArtifact) {
  EXPECT_THROW(read_checkpoint("/nonexistent/x.ckpt"), Error);
}

TEST(Sha256, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
