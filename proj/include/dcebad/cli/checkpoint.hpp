#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dcebad/data.hpp"
#include "dcebad/model.hpp"

namespace dcebad::cli {

inline constexpr char kCheckpointMagic[4] = {'D', 'C', 'E', 'B'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// A trained model plus what is needed to encode new text for it.
struct Checkpoint {
  zoo::ModelConfig config;
  std::vector<std::string> labels;
  data::Vocab vocab;
  std::vector<NamedTensor> tensors;
};

/// Layout, all little-endian:
///   "DCEB" | u32 version | u32 header length | header JSON (config, labels, vocab)
///   | u32 tensor count | per tensor: u32 name length, name, u32 rank, u64 dims, f32 values
std::string serialize_checkpoint(const zoo::Model& model, const std::vector<std::string>& labels,
                                 const data::Vocab& vocab);
Checkpoint parse_checkpoint(const std::string& bytes, const std::string& source = "checkpoint");

void save_checkpoint(const std::filesystem::path& path, const zoo::Model& model,
                     const std::vector<std::string>& labels, const data::Vocab& vocab);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Builds the model described by `ckpt` and installs its tensors.
zoo::Model instantiate(const Checkpoint& ckpt);

/// Rounds every parameter to the nearest 32-bit float, as a save/load cycle does.
void narrow_to_f32(zoo::Model& model);

}  // namespace dcebad::cli
