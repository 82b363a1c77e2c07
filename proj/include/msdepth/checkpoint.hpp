#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "msdepth/config.hpp"

namespace msdepth {

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

/// Parameter archive plus a JSON header.
///
/// File layout (little endian):
///   "MSDCKPT\0" | u32 version | u64 header bytes | header JSON |
///   u32 tensor count | per tensor: u32 name bytes, name, u8 dtype, u32 rank,
///   i64 dims[rank], u64 data bytes, data | 64 hex chars of SHA-256 over all preceding bytes
///
/// The header records stage, seed, epoch, the full config and its digest,
/// the digest of the tensor records, and for fuse checkpoints the file digest
/// of the align checkpoint they were trained on.
struct Checkpoint {
  Stage stage = Stage::Align;
  std::uint64_t seed = 0;
  int epoch = 0;
  nlohmann::json config;
  std::string config_digest;
  std::string payload_digest;
  std::string align_ckpt_hash;  // fuse only
  NamedTensors tensors;
  std::string file_digest;  // SHA-256 of the whole file, filled by save and load
};

/// Detached, contiguous CPU copies of every parameter and buffer, in registration order.
NamedTensors module_state(const torch::nn::Module& module);

/// Copies `tensors` into the module's parameters and buffers. The name sets and
/// shapes must match exactly; throws InterfaceError otherwise.
void load_module_state(torch::nn::Module& module, const NamedTensors& tensors);

/// Digest of the serialized tensor records.
std::string payload_digest(const NamedTensors& tensors);

/// Writes atomically (temp file in the same directory, then rename) and fills
/// `ckpt.payload_digest` and `ckpt.file_digest`.
void save_checkpoint(const std::filesystem::path& path, Checkpoint& ckpt);

/// Throws IoError when unreadable and CorruptionError when truncated, tampered
/// with, or internally inconsistent.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Loads a checkpoint and throws InterfaceError unless it has stage `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, Stage expected);

/// Throws CorruptionError unless `fuse` was trained on the align checkpoint `align`.
void verify_provenance(const Checkpoint& fuse, const Checkpoint& align);

}  // namespace msdepth
