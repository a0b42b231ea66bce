// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

namespace ldefense {

/// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

/// SHA-256 of a file's bytes; empty optional when the file is unreadable.
std::optional<std::string> sha256_file(const std::filesystem::path& path);

/// 64-bit FNV-1a, used where a cheap stable hash suffices (seeding, mock outputs).
std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis = 0xcbf29ce484222325ULL);

std::uint64_t splitmix64(std::uint64_t x);

/// Writes to a sibling temp file, then renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::optional<std::string> read_file(const std::filesystem::path& path);

}  // namespace ldefense
