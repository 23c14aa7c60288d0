#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace liverdiff {

/// Lower-case hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

/// SHA-256 of a file's contents; throws if the file cannot be read.
std::string sha256_file(const std::filesystem::path& path);

std::string base64_encode(std::string_view bytes);

/// Derives a stage-specific seed from the global seed and a stage name.
/// Stable across platforms (SHA-256 based), so run manifests stay reproducible.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view name);

}  // namespace liverdiff
