#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace bitref::text {

bool is_valid_utf8(std::string_view s);
/// Decodes valid UTF-8 into code points; throws EncodingError otherwise.
std::vector<char32_t> decode_utf8(std::string_view s);
void append_utf8(std::string& out, char32_t cp);

/// Canonical composition (NFC).
std::string nfc(std::string_view s);

std::string_view trim(std::string_view s);
/// Splits on runs of ASCII whitespace; no empty tokens.
std::vector<std::string> split_ws(std::string_view s);
std::string join(const std::vector<std::string>& tokens, std::string_view sep = " ");
/// Collapses whitespace runs to single spaces and trims.
std::string normalize_ws(std::string_view s);

/// Splits a field list on a single delimiter character, keeping empty fields.
std::vector<std::string_view> split_fields(std::string_view s, char delim);

/// Shortest decimal representation that parses back to the same double.
std::string format_real(double v);
bool parse_real(std::string_view s, double& out);

std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace bitref::text
