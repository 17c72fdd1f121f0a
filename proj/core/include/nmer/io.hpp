#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nmer::io {

/// Writes via a sibling temp file and rename, creating parent directories.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

/// Raw little-endian float32, no header.
std::string encode_f32_le(std::span<const float> values);
std::vector<float> decode_f32_le(std::string_view bytes);

}  // namespace nmer::io
