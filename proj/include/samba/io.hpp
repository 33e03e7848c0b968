#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace samba {

// Little-endian f64 blobs. Readers validate byte counts and fail loudly on
// truncation; all paths go through these two so layouts stay uniform.
void write_f64(const std::filesystem::path& file, const std::vector<double>& values);
std::vector<double> read_f64(const std::filesystem::path& file, std::size_t expected_count);

// FNV-1a over the raw bytes, printed as 16 hex digits. Stable across platforms
// for identical doubles, which is all the manifests need.
std::uint64_t fnv1a(const void* data, std::size_t bytes);
std::string checksum_hex(const std::vector<double>& values);

// RFC 4180: fields holding commas, quotes, or newlines are quoted and inner
// quotes doubled. write_csv prepends the header row.
std::string csv_escape(const std::string& field);
std::string csv_row(const std::vector<std::string>& fields);
void write_csv(const std::filesystem::path& file, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

std::string read_text(const std::filesystem::path& file);
void write_text(const std::filesystem::path& file, const std::string& content);

// Fixed significant-digit formatting for CSV payloads (shortest round-trip is
// not needed; 17 digits keeps doubles exact).
std::string format_double(double v, int digits = 17);

}  // namespace samba
