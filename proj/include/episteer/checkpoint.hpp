#pragma once

// Flat named-tensor checkpoints.
//
// Binary layout (all integers little-endian):
//   magic "EPCK" | u32 version | u64 tensor count
//   per tensor: u32 name length | name bytes | u32 ndims | u64 dims[ndims]
//               | float64 payload, row-major, little-endian
// A JSON manifest `<path>.json` lists name→shape plus free-form metadata.

#include "episteer/autodiff.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace episteer {

struct NamedTensor {
  std::string name;
  Matrix value;
};

void save_checkpoint(const std::filesystem::path& path, std::span<Parameter* const> params,
                     const nlohmann::json& metadata = nlohmann::json::object());

struct Checkpoint {
  std::vector<NamedTensor> tensors;
  nlohmann::json metadata;

  const Matrix* find(const std::string& name) const;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies checkpoint values into params by name; every param must be present
// with a matching shape.
void restore_parameters(const Checkpoint& ckpt, std::span<Parameter* const> params);

}  // namespace episteer
