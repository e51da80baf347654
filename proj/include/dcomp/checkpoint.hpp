// SPDX-License-Identifier: Apache-2.0
//
// Flat parameter container. A text header lists every tensor as
//   tensor <name> f64 <rank> <d0> ... <dn>
// after a `meta <json>` line, terminated by `end`; little-endian IEEE-754
// doubles follow in header order.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcomp/tensor.hpp"

namespace dcomp {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<NamedTensor>;

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  ParamList params;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes);

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies values from `source` into same-named, same-shaped leaves of `target`.
void load_params(ParamList& target, const ParamList& source);

std::size_t count_params(const ParamList& params);

}  // namespace dcomp
