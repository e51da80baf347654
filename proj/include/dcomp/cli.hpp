// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Exit codes: 0 success, 1 validation or I/O error,
// 2 gradient check failure.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include <json.hpp>

namespace dcomp {

inline constexpr const char* kToolName = "dcomp";
inline constexpr const char* kToolVersion = "0.1.0";

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// 64-bit FNV-1a, used for config hashes in metadata sidecars.
std::uint64_t fnv1a64(const std::string& bytes);

/// {"tool", "version", "command", "config_hash", "config", ...extra}
nlohmann::json make_metadata(const std::string& command, const nlohmann::json& config,
                             const nlohmann::json& extra = nlohmann::json::object());

}  // namespace dcomp
