#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "jhgrf/model_config.hpp"
#include "jhgrf/parameters.hpp"

namespace jhgrf {

inline constexpr const char* kCheckpointMagic = "jhgrf-ckpt v1";

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;

  bool operator==(const NamedArray&) const = default;
};

// Text header, `key = value` config lines, then per array its name, rank and
// extents followed by the raw little-endian float64 payload.
struct Checkpoint {
  KeyValues config;
  std::vector<NamedArray> arrays;

  const NamedArray* find(std::string_view name) const;
  bool operator==(const Checkpoint&) const = default;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
// CheckpointError on unreadable or malformed files.
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const ModelConfig& config, const ParameterSet& params);

// Model config stored in a checkpoint ("model." keys only).
ModelConfig checkpoint_model_config(const Checkpoint& checkpoint);

// Copies stored values into `params`. CheckpointMismatch when a parameter is
// missing or its shape differs.
void restore_parameters(const Checkpoint& checkpoint, ParameterSet& params);

}  // namespace jhgrf
