#ifndef FTSEG_IO_UTIL_HPP
#define FTSEG_IO_UTIL_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ftseg {

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
std::string read_file_text(const std::filesystem::path& path);

/// Write-to-temp-then-rename; a crash leaves either the old file or none.
void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace ftseg

#endif  // FTSEG_IO_UTIL_HPP
