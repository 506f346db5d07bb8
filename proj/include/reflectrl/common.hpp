// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <cctype>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

namespace reflectrl {

using json = nlohmann::ordered_json;

/// Invalid configuration values (weights, lengths, temperatures, group sizes).
class ConfigError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed input files or records.
class InputError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

inline bool is_space(char c) {
    return std::isspace(static_cast<unsigned char>(c)) != 0;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(s.front())) {
        s.remove_prefix(1);
    }
    while (!s.empty() && is_space(s.back())) {
        s.remove_suffix(1);
    }
    return s;
}

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    for (auto & c : out) {
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

/// Whitespace tokenizer shared by response-length counting and the cold-start token model.
/// Tokens are lowercased.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) {
            ++i;
        }
        std::size_t j = i;
        while (j < text.size() && !is_space(text[j])) {
            ++j;
        }
        if (j > i) {
            tokens.push_back(to_lower(text.substr(i, j - i)));
        }
        i = j;
    }
    return tokens;
}

inline std::size_t count_tokens(std::string_view text) {
    std::size_t n = 0;
    bool in_token = false;
    for (char c : text) {
        if (is_space(c)) {
            in_token = false;
        } else if (!in_token) {
            in_token = true;
            ++n;
        }
    }
    return n;
}

/// Locale-independent decimal parse; returns false on trailing garbage.
inline bool parse_double(std::string_view s, double & out) {
    s = trim(s);
    if (s.empty()) {
        return false;
    }
    if (s.front() == '+') {
        s.remove_prefix(1);
    }
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
}

inline bool parse_int(std::string_view s, long long & out) {
    s = trim(s);
    if (s.empty()) {
        return false;
    }
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
}

/// Shortest round-trip representation of a double, independent of locale.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) {
        return "nan";
    }
    return std::string(buf, ptr);
}

inline std::string format_fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

inline std::string read_file(const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Writes to a sibling temporary file and renames it over the target.
inline void write_file_atomic(const std::filesystem::path & path, std::string_view content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw InputError("cannot write " + tmp.string());
        }
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) {
            throw InputError("write failed: " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

/// Calls `fn(line_number, line)` for each non-blank line. Line numbers are 1-based.
inline void for_each_line(std::string_view text, const std::function<void(std::size_t, std::string_view)> & fn) {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        auto end = nl == std::string_view::npos ? text.size() : nl;
        ++line_no;
        auto line = text.substr(pos, end - pos);
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        if (!trim(line).empty()) {
            fn(line_no, line);
        }
        pos = end + 1;
    }
}

/// Flat `key = value` lines in file order; `#` starts a comment, blank lines are skipped.
inline std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text,
                                                                         const std::string & what) {
    std::vector<std::pair<std::string, std::string>> out;
    for_each_line(text, [&](std::size_t line_no, std::string_view line) {
        auto hash = line.find('#');
        if (hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            return;
        }
        auto eq = line.find('=');
        if (eq == std::string_view::npos || trim(line.substr(0, eq)).empty()) {
            throw ConfigError(what + " line " + std::to_string(line_no) + ": expected key = value");
        }
        out.emplace_back(std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))));
    });
    return out;
}

inline std::vector<json> read_jsonl(const std::filesystem::path & path) {
    std::vector<json> rows;
    auto text = read_file(path);
    for_each_line(text, [&](std::size_t line_no, std::string_view line) {
        try {
            rows.push_back(json::parse(line));
        } catch (const json::parse_error & e) {
            throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    });
    return rows;
}

}  // namespace reflectrl
