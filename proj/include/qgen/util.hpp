#pragma once

#include <array>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include <openssl/evp.h>

#include "qgen/error.hpp"

namespace qgen {

/// Half-open [start, end) offsets, in Unicode code points unless stated otherwise.
struct Span {
    std::size_t start = 0;
    std::size_t end = 0;

    [[nodiscard]] std::size_t length() const { return end - start; }
    friend bool operator==(const Span &, const Span &) = default;
};

inline void to_json(nlohmann::json &j, const Span &s) { j = nlohmann::json::array({s.start, s.end}); }
inline void from_json(const nlohmann::json &j, Span &s) {
    s.start = j.at(0).get<std::size_t>();
    s.end = j.at(1).get<std::size_t>();
}

namespace utf8 {

/// One decoded code point and the byte range it came from.
struct CodePoint {
    char32_t value;
    std::size_t byte_offset;
    std::size_t byte_length;
};

/// Decodes UTF-8; throws ParseError on malformed input.
inline std::vector<CodePoint> decode(std::string_view s) {
    std::vector<CodePoint> out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        const auto b0 = static_cast<unsigned char>(s[i]);
        std::size_t len = 0;
        char32_t cp = 0;
        if (b0 < 0x80) {
            len = 1;
            cp = b0;
        } else if ((b0 & 0xE0) == 0xC0) {
            len = 2;
            cp = b0 & 0x1F;
        } else if ((b0 & 0xF0) == 0xE0) {
            len = 3;
            cp = b0 & 0x0F;
        } else if ((b0 & 0xF8) == 0xF0) {
            len = 4;
            cp = b0 & 0x07;
        } else {
            fail(ErrorCode::ParseError, "invalid UTF-8 lead byte", {{"offset", i}});
        }
        if (i + len > s.size()) {
            fail(ErrorCode::ParseError, "truncated UTF-8 sequence", {{"offset", i}});
        }
        for (std::size_t k = 1; k < len; ++k) {
            const auto b = static_cast<unsigned char>(s[i + k]);
            if ((b & 0xC0) != 0x80) {
                fail(ErrorCode::ParseError, "invalid UTF-8 continuation byte", {{"offset", i + k}});
            }
            cp = (cp << 6) | (b & 0x3F);
        }
        const bool overlong = (len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000);
        if (overlong || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
            fail(ErrorCode::ParseError, "invalid UTF-8 code point", {{"offset", i}});
        }
        out.push_back({cp, i, len});
        i += len;
    }
    return out;
}

inline bool valid(std::string_view s) {
    try {
        decode(s);
        return true;
    } catch (const Error &) {
        return false;
    }
}

inline void append(std::string &out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

inline std::size_t length(std::string_view s) {
    std::size_t n = 0;
    for (char c : s) {
        if ((static_cast<unsigned char>(c) & 0xC0) != 0x80) {
            ++n;
        }
    }
    return n;
}

/// Substring by code-point offsets.
inline std::string substr(std::string_view s, Span span) {
    std::size_t cp = 0;
    std::size_t begin = s.size();
    std::size_t end = s.size();
    for (std::size_t i = 0; i <= s.size(); ++i) {
        const bool boundary = i == s.size() || (static_cast<unsigned char>(s[i]) & 0xC0) != 0x80;
        if (!boundary) {
            continue;
        }
        if (cp == span.start) {
            begin = i;
        }
        if (cp == span.end) {
            end = i;
            break;
        }
        ++cp;
    }
    if (begin > end) {
        return {};
    }
    return std::string(s.substr(begin, end - begin));
}

} // namespace utf8

inline bool is_unicode_space(char32_t c) {
    return (c >= 0x09 && c <= 0x0D) || c == 0x20 || c == 0x85 || c == 0xA0 || c == 0x1680 ||
           (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F || c == 0x205F ||
           c == 0x3000;
}

inline std::string trim(std::string_view s) {
    const auto cps = utf8::decode(s);
    std::size_t b = 0;
    std::size_t e = cps.size();
    while (b < e && is_unicode_space(cps[b].value)) {
        ++b;
    }
    while (e > b && is_unicode_space(cps[e - 1].value)) {
        --e;
    }
    if (b == e) {
        return {};
    }
    const auto from = cps[b].byte_offset;
    const auto to = cps[e - 1].byte_offset + cps[e - 1].byte_length;
    return std::string(s.substr(from, to - from));
}

inline std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
        fail(ErrorCode::Internal, "sha256 digest failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0x0F]);
    }
    return out;
}

/// 12 hex chars of sha256 over (label, counter).
inline std::string short_id(std::string_view label, std::uint64_t counter) {
    std::string material(label);
    material.push_back('\x1f');
    material += std::to_string(counter);
    return sha256_hex(material).substr(0, 12);
}

inline std::string utc_now_iso() {
    const auto now = std::chrono::system_clock::now();
    const auto secs = std::chrono::system_clock::to_time_t(now);
    const auto ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    char out[40];
    std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
}

/// Shortest round-trip decimal without exponent, e.g. 1e-5 -> "0.00001".
inline std::string plain_decimal(double v) {
    std::array<char, 512> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::fixed);
    if (ec != std::errc{}) {
        fail(ErrorCode::Internal, "cannot render number");
    }
    return std::string(buf.data(), ptr);
}

inline std::string read_file(const std::filesystem::path &p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        fail(ErrorCode::NotFound, "cannot open " + p.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes via a temporary sibling and rename so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path &p, std::string_view data) {
    auto tmp = p;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            fail(ErrorCode::WorkspaceUnavailable, "cannot write " + tmp.string());
        }
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        if (!out) {
            fail(ErrorCode::WorkspaceUnavailable, "short write to " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, p, ec);
    if (ec) {
        fail(ErrorCode::WorkspaceUnavailable, "cannot rename into " + p.string() + ": " + ec.message());
    }
}

} // namespace qgen
