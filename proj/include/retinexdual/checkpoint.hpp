#pragma once

// Checkpoint archive: a JSON config header followed by named float32 arrays.
//
//   "RDXCKPT1"                        8-byte magic
//   u64 header_length, header bytes   JSON: {"format", "version", "config", "meta"}
//   u64 array_count
//   per array: u32 name_length, name, u32 ndim, i64 dims[ndim], f32 data[prod(dims)]
//
// All integers and floats are little-endian.

#include <torch/torch.h>

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "retinexdual/retinex.hpp"

namespace retinexdual {

struct Archive {
  nlohmann::json header;
  std::vector<std::pair<std::string, torch::Tensor>> arrays;
};

void write_archive(const std::string& path, const Archive& archive);
/// Throws DataError on I/O failure or a malformed file.
Archive read_archive(const std::string& path);

/// Writes every named parameter of `model` plus its config; `meta` lands in the header.
void save_checkpoint(const std::string& path, RetinexDualImpl& model, const nlohmann::json& meta = {});

/// Copies archive arrays into the module's parameters by name. Throws
/// ConfigError naming the first missing, unexpected or mis-shaped parameter.
void load_parameters(torch::nn::Module& module, const Archive& archive);

/// Rebuilds the model from the header config and loads its weights.
RetinexDual load_checkpoint(const std::string& path);

}  // namespace retinexdual
