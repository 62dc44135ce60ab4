#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace utrcaf {

// 17 significant digits; parses back to the same double.
std::string format_double(double v);

std::string read_text_file(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it over `path`, so readers
// never observe a truncated file. The environment variable
// UTRCAF_DEBUG_WRITE_DELAY_MS inserts a pause halfway through the temporary
// write (used by the kill-during-write test).
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace utrcaf
