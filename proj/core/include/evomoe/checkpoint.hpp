#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "evomoe/optimizer.hpp"
#include "evomoe/tensor.hpp"

namespace evomoe {

inline constexpr char kCheckpointMagic[4] = {'E', 'V', 'M', 'O'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ParamBlob {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

// Everything needed to resume a run bit-exactly.
struct Checkpoint {
  std::string config_text;  // canonical form
  std::int64_t iteration = 0;
  bool diversified = false;
  double cumulative_flops = 0.0;
  std::vector<ParamBlob> params;
  AdamState adam;
  std::string model_rng, data_rng;
};

// Little-endian layout: magic, u32 version, body, SHA-256 of everything before it.
std::string encode_checkpoint(const Checkpoint& ckpt);
// Throws CorruptArtifactError on any structural or checksum failure.
Checkpoint decode_checkpoint(std::string_view bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::string sha256_hex(std::string_view bytes);

}  // namespace evomoe
