// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mmtlab/parameter_store.hpp"

namespace mmtlab {

/// One named array in a checkpoint file.
struct CheckpointArray {
  std::string name;
  Shape shape;
  std::variant<std::vector<float>, std::vector<double>, std::vector<std::uint8_t>> data;
};

/// In-memory image of a checkpoint file: a JSON metadata document (model
/// config, train state, RNG state) plus named little-endian arrays.
/// The byte layout is described in docs/checkpoint-format.md.
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<CheckpointArray> arrays;

  const CheckpointArray* find(const std::string& name) const;
};

inline constexpr char kCheckpointMagic[8] = {'M', 'M', 'T', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Adds "param/<name>" arrays and "mask/<name>" arrays for every entry.
template <class T>
void store_parameters(Checkpoint& ckpt, const ParameterStore<T>& store);

/// Restores values and prune masks into a store built from the same config.
/// Values stored at a different precision are converted.
template <class T>
void load_parameters(const Checkpoint& ckpt, ParameterStore<T>& store);

/// SHA-256 of a file, lowercase hex.
std::string file_sha256(const std::filesystem::path& path);

}  // namespace mmtlab
