#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace dhan {

// Writes via a temp file in the same directory plus rename, so a crashed run
// never leaves a truncated artifact behind.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

}  // namespace dhan
