#pragma once

#include <filesystem>
#include <string>

#include "metalic/config.hpp"
#include "metalic/train.hpp"

namespace metalic {

/// A checkpoint directory:
///   manifest.tsv  `group  name  rows  cols  dtype  offset` per tensor
///   payload.bin   little-endian float32, tensors back to back
///   config.cfg    resolved configuration snapshot
///   state.txt     format version, step, optimizer step, counter, RNG state
struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  std::string method = "metalic";
  KeyValues config;
  TrainState state;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& dir);

/// Throws IOError for missing files and FormatError for malformed ones.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace metalic
