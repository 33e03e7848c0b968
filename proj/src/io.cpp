#include "samba/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "samba/common.hpp"

namespace samba {

namespace {

// Doubles are stored little-endian regardless of host order.
void to_little_endian(std::vector<unsigned char>& bytes) {
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i + 8 <= bytes.size(); i += 8)
            for (std::size_t j = 0; j < 4; ++j) std::swap(bytes[i + j], bytes[i + 7 - j]);
    }
}

}  // namespace

void write_f64(const std::filesystem::path& file, const std::vector<double>& values) {
    std::vector<unsigned char> bytes(values.size() * 8);
    std::memcpy(bytes.data(), values.data(), bytes.size());
    to_little_endian(bytes);
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + file.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + file.string());
}

std::vector<double> read_f64(const std::filesystem::path& file, std::size_t expected_count) {
    std::ifstream in(file, std::ios::binary | std::ios::ate);
    if (!in) throw DataError("cannot open " + file.string());
    const auto size = static_cast<std::size_t>(in.tellg());
    if (size != expected_count * 8)
        throw DataError(file.string() + " holds " + std::to_string(size) + " bytes, expected " +
                        std::to_string(expected_count * 8));
    in.seekg(0);
    std::vector<unsigned char> bytes(size);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
    if (!in) throw DataError("short read from " + file.string());
    to_little_endian(bytes);
    std::vector<double> values(expected_count);
    std::memcpy(values.data(), bytes.data(), size);
    return values;
}

std::uint64_t fnv1a(const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 14695981039346656037ull;
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

std::string checksum_hex(const std::vector<double>& values) {
    std::vector<unsigned char> bytes(values.size() * 8);
    std::memcpy(bytes.data(), values.data(), bytes.size());
    to_little_endian(bytes);
    const std::uint64_t h = fnv1a(bytes.data(), bytes.size());
    std::ostringstream os;
    os << std::hex;
    for (int shift = 60; shift >= 0; shift -= 4) os << ((h >> shift) & 0xF);
    return os.str();
}

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

std::string csv_row(const std::vector<std::string>& fields) {
    std::string row;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) row += ',';
        row += csv_escape(fields[i]);
    }
    row += "\r\n";
    return row;
}

void write_csv(const std::filesystem::path& file, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    std::string content = csv_row(header);
    for (const auto& r : rows) {
        if (r.size() != header.size())
            throw ArgumentError("csv row has " + std::to_string(r.size()) + " fields, header has " +
                                std::to_string(header.size()));
        content += csv_row(r);
    }
    write_text(file, content);
}

std::string read_text(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DataError("cannot open " + file.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_text(const std::filesystem::path& file, const std::string& content) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + file.string() + " for writing");
    out << content;
    if (!out) throw DataError("short write to " + file.string());
}

std::string format_double(double v, int digits) {
    std::ostringstream os;
    os.precision(digits);
    os << v;
    return os.str();
}

}  // namespace samba
