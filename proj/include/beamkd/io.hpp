#ifndef BEAMKD_IO_HPP
#define BEAMKD_IO_HPP

// Shared container layout for channel, dataset and model files: one line of
// JSON (the header) terminated by '\n', followed by a little-endian binary
// payload whose byte length is recorded in the header as "payload_bytes".

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>

#include <json.hpp>

namespace beamkd {

using json = nlohmann::json;

enum class FormatErrorKind {
    io,
    malformed_header,
    unsupported_version,
    dimension_mismatch,
    truncated_payload,
};

inline const char* to_string(FormatErrorKind kind) {
    switch (kind) {
    case FormatErrorKind::io: return "io error";
    case FormatErrorKind::malformed_header: return "malformed header";
    case FormatErrorKind::unsupported_version: return "unsupported version";
    case FormatErrorKind::dimension_mismatch: return "dimension mismatch";
    case FormatErrorKind::truncated_payload: return "truncated payload";
    }
    return "unknown";
}

class FormatError : public std::runtime_error {
public:
    FormatError(FormatErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    FormatErrorKind kind() const noexcept { return kind_; }

private:
    FormatErrorKind kind_;
};

/// Invalid configuration value; the message names the offending field.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline constexpr int kFormatVersion = 1;

class PayloadWriter {
public:
    void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
    void u16(std::uint16_t v) { put(v, 2); }

    const std::string& bytes() const { return buf_; }

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) {
            buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
        }
    }

    std::string buf_;
};

class PayloadReader {
public:
    explicit PayloadReader(std::string_view bytes) : bytes_(bytes) {}

    float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(get(4))); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::uint64_t get(int n) {
        if (remaining() < static_cast<std::size_t>(n)) {
            throw FormatError(FormatErrorKind::truncated_payload, "payload ended early");
        }
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += n;
        return v;
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

struct HeaderFile {
    json header;
    std::string payload;
};

inline void write_header_file(const std::filesystem::path& path, json header, const std::string& payload) {
    header["payload_bytes"] = payload.size();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError(FormatErrorKind::io, "cannot open '" + path.string() + "' for writing");
    }
    const std::string line = header.dump();
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    out.put('\n');
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) {
        throw FormatError(FormatErrorKind::io, "write failed for '" + path.string() + "'");
    }
}

/// Reads a header file and checks the format tag, the version and the
/// declared payload size. Field-level checks are left to the caller.
inline HeaderFile read_header_file(const std::filesystem::path& path, std::string_view format) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError(FormatErrorKind::io, "cannot open '" + path.string() + "'");
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto newline = bytes.find('\n');
    if (newline == std::string::npos) {
        throw FormatError(FormatErrorKind::malformed_header, "'" + path.string() + "' has no header line");
    }
    HeaderFile file;
    try {
        file.header = json::parse(bytes.substr(0, newline));
    } catch (const json::parse_error& e) {
        throw FormatError(FormatErrorKind::malformed_header, "'" + path.string() + "': " + e.what());
    }
    if (!file.header.is_object() || !file.header.contains("format") || file.header["format"] != format) {
        throw FormatError(FormatErrorKind::malformed_header,
                          "'" + path.string() + "' is not a " + std::string(format) + " file");
    }
    if (!file.header.contains("format_version") || !file.header["format_version"].is_number_integer()) {
        throw FormatError(FormatErrorKind::malformed_header, "'" + path.string() + "' lacks format_version");
    }
    if (file.header["format_version"].get<int>() != kFormatVersion) {
        throw FormatError(FormatErrorKind::unsupported_version,
                          "'" + path.string() + "' has format_version " + file.header["format_version"].dump() +
                              ", supported is " + std::to_string(kFormatVersion));
    }
    if (!file.header.contains("payload_bytes") || !file.header["payload_bytes"].is_number_unsigned()) {
        throw FormatError(FormatErrorKind::malformed_header, "'" + path.string() + "' lacks payload_bytes");
    }
    file.payload = bytes.substr(newline + 1);
    const auto declared = file.header["payload_bytes"].get<std::size_t>();
    if (file.payload.size() < declared) {
        throw FormatError(FormatErrorKind::truncated_payload,
                          "'" + path.string() + "' payload has " + std::to_string(file.payload.size()) +
                              " bytes, header declares " + std::to_string(declared));
    }
    if (file.payload.size() > declared) {
        throw FormatError(FormatErrorKind::dimension_mismatch,
                          "'" + path.string() + "' has trailing bytes after the declared payload");
    }
    return file;
}

/// Typed header field access; absent or mistyped fields are malformed headers.
template <typename T>
T header_field(const json& header, const std::string& key) {
    if (!header.contains(key)) {
        throw FormatError(FormatErrorKind::malformed_header, "missing header field '" + key + "'");
    }
    try {
        return header.at(key).get<T>();
    } catch (const json::exception&) {
        throw FormatError(FormatErrorKind::malformed_header, "header field '" + key + "' has the wrong type");
    }
}

inline bool is_non_negative_integer(const json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

/// Overwrites `value` from `j[key]` when present; type errors name "section.key".
template <typename T>
void read_optional(const json& j, const std::string& key, T& value, const std::string& section) {
    if (!j.contains(key) || j.at(key).is_null()) {
        return;
    }
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        if (!is_non_negative_integer(j.at(key))) {
            throw ConfigError(section + "." + key + ": expected a non-negative integer (got " + j.at(key).dump() + ")");
        }
    }
    try {
        value = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(section + "." + key + ": wrong type (got " + j.at(key).dump() + ")");
    }
}

inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline void reject_unknown_keys(const json& j, std::initializer_list<std::string_view> known, const std::string& section) {
    if (!j.is_object()) {
        throw ConfigError(section + ": expected an object");
    }
    for (const auto& [key, value] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw ConfigError(section + "." + key + ": unknown field");
        }
    }
}

} // namespace beamkd

#endif
