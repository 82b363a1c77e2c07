#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace msdepth {

/// Lower-case hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

/// SHA-256 of a whole file; throws IoError when it cannot be read.
std::string file_sha256(const std::filesystem::path& path);

}  // namespace msdepth
