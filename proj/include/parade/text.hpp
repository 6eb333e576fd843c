#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace parade {

/// FNV-1a, 64-bit. Used for the stub embedder slots and for content hashes.
inline constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                       std::uint64_t hash = 0xcbf29ce484222325ULL) noexcept
{
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

inline std::string hex64(std::uint64_t value)
{
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[value & 0xF];
        value >>= 4;
    }
    return out;
}

inline bool is_space(unsigned char c) noexcept
{
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// Bytes >= 0x80 belong to multi-byte UTF-8 sequences and count as word characters.
inline bool is_word_byte(unsigned char c) noexcept
{
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

inline std::string_view trim(std::string_view s) noexcept
{
    while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) {
        s.remove_prefix(1);
    }
    while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) {
        s.remove_suffix(1);
    }
    return s;
}

inline std::vector<std::string_view> split_whitespace(std::string_view s)
{
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && is_space(static_cast<unsigned char>(s[i]))) {
            ++i;
        }
        std::size_t start = i;
        while (i < s.size() && !is_space(static_cast<unsigned char>(s[i]))) {
            ++i;
        }
        if (i > start) {
            out.push_back(s.substr(start, i - start));
        }
    }
    return out;
}

/// The analyzer shared by BM25 and the stub backend: ASCII-lowercase, split on
/// whitespace, strip leading/trailing non-alphanumeric bytes. Pieces that
/// strip to nothing are dropped.
inline std::vector<std::string> tokenize(std::string_view text)
{
    std::vector<std::string> tokens;
    for (std::string_view piece : split_whitespace(text)) {
        while (!piece.empty() && !is_word_byte(static_cast<unsigned char>(piece.front()))) {
            piece.remove_prefix(1);
        }
        while (!piece.empty() && !is_word_byte(static_cast<unsigned char>(piece.back()))) {
            piece.remove_suffix(1);
        }
        if (piece.empty()) {
            continue;
        }
        std::string token(piece);
        for (char& c : token) {
            if (c >= 'A' && c <= 'Z') {
                c = static_cast<char>(c - 'A' + 'a');
            }
        }
        tokens.push_back(std::move(token));
    }
    return tokens;
}

inline void replace_all(std::string& s, std::string_view from, std::string_view to)
{
    if (from.empty()) {
        return;
    }
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
}

inline std::size_t count_occurrences(std::string_view haystack, std::string_view needle)
{
    if (needle.empty()) {
        return 0;
    }
    std::size_t count = 0;
    for (std::size_t pos = haystack.find(needle); pos != std::string_view::npos;
         pos = haystack.find(needle, pos + needle.size())) {
        ++count;
    }
    return count;
}

} // namespace parade
