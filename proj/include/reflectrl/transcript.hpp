// SPDX-License-Identifier: Apache-2.0
#pragma once

// Parser for the tagged reasoning grammar used in prompts, rewards and data construction:
//
//   <think>...</think> <answer>...</answer> <reflection>...</reflection> <think>...</think> <answer>...</answer>
//
// `<reflect>` and `<reflection>` are synonyms. Parsing is total: malformed input produces
// diagnostics, never an exception.

#include "common.hpp"

#include <array>
#include <cmath>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace reflectrl {

enum class SegmentKind { Think, Answer, Reflection };

inline const char * to_string(SegmentKind k) {
    switch (k) {
        case SegmentKind::Think:
            return "think";
        case SegmentKind::Answer:
            return "answer";
        case SegmentKind::Reflection:
            return "reflection";
    }
    return "?";
}

enum class AnswerLetter { A, B, C, D };

inline char to_char(AnswerLetter l) {
    return static_cast<char>('A' + static_cast<int>(l));
}

/// Case-normalizing conversion; anything but a/b/c/d is absent.
inline std::optional<AnswerLetter> letter_from_char(char c) {
    c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (c >= 'A' && c <= 'D') {
        return static_cast<AnswerLetter>(c - 'A');
    }
    return std::nullopt;
}

inline std::optional<AnswerLetter> parse_letter(std::string_view s) {
    s = trim(s);
    if (s.size() != 1) {
        return std::nullopt;
    }
    return letter_from_char(s.front());
}

/// Closed time interval in seconds.
struct TimeInterval {
    double start_s = 0.0;
    double end_s   = 0.0;

    double length() const { return end_s - start_s; }

    bool valid() const { return std::isfinite(start_s) && std::isfinite(end_s) && start_s >= 0.0 && start_s <= end_s; }

    friend bool operator==(const TimeInterval &, const TimeInterval &) = default;
};

struct ByteSpan {
    std::size_t begin = 0;
    std::size_t end   = 0;

    std::size_t size() const { return end - begin; }

    friend bool operator==(const ByteSpan &, const ByteSpan &) = default;
};

struct Segment {
    SegmentKind kind = SegmentKind::Think;
    std::string body;
    std::string open_tag;   // as written, e.g. "<reflect>"
    std::string close_tag;  // as written; "" when closed implicitly at end of text
    ByteSpan    span;       // whole element, tags included
    ByteSpan    body_span;

    /// True when the element was closed by a proper `</...>` tag.
    bool properly_closed() const { return close_tag.size() > 2 && close_tag[1] == '/'; }
};

struct Diagnostic {
    enum class Kind { UnclosedTag, StrayClosingTag, RecoveredClose };

    Kind        kind = Kind::UnclosedTag;
    std::size_t offset = 0;
    std::string tag;

    /// Recovered problems did not prevent a segment from being formed.
    bool recovered() const { return kind == Kind::RecoveredClose; }

    std::string message() const {
        switch (kind) {
            case Kind::UnclosedTag:
                return "unclosed tag at offset " + std::to_string(offset);
            case Kind::StrayClosingTag:
                return "stray closing tag at offset " + std::to_string(offset);
            case Kind::RecoveredClose:
                return "recovered close for tag at offset " + std::to_string(offset);
        }
        return {};
    }
};

enum class StageLayout { Unrecognized, InitialOnly, FullRft, SftPair };

inline const char * to_string(StageLayout l) {
    switch (l) {
        case StageLayout::InitialOnly:
            return "initial-only";
        case StageLayout::FullRft:
            return "full-rft";
        case StageLayout::SftPair:
            return "sft-pair";
        case StageLayout::Unrecognized:
            break;
    }
    return "unrecognized";
}

struct Transcript {
    std::string             raw;
    std::vector<Segment>    segments;
    std::vector<Diagnostic> diagnostics;
    StageLayout             layout = StageLayout::Unrecognized;

    std::size_t unrecovered_diagnostics() const {
        std::size_t n = 0;
        for (const auto & d : diagnostics) {
            n += d.recovered() ? 0 : 1;
        }
        return n;
    }
};

struct ParseOptions {
    /// Accept a slashless same-kind tag as the closer and close a trailing open tag at end of text.
    bool recover = false;
};

namespace detail {

struct TagToken {
    std::size_t pos = 0;
    std::size_t len = 0;
    SegmentKind kind = SegmentKind::Think;
    bool        closing = false;
};

struct TagName {
    std::string_view name;
    SegmentKind      kind;
};

// Longest spelling first so "reflection" wins over "reflect".
inline constexpr std::array<TagName, 4> kTagNames = { {
    { "reflection", SegmentKind::Reflection },
    { "reflect", SegmentKind::Reflection },
    { "answer", SegmentKind::Answer },
    { "think", SegmentKind::Think },
} };

inline std::optional<TagToken> match_tag(std::string_view raw, std::size_t pos) {
    std::size_t i = pos + 1;
    bool closing = false;
    if (i < raw.size() && raw[i] == '/') {
        closing = true;
        ++i;
    }
    for (const auto & tn : kTagNames) {
        if (raw.compare(i, tn.name.size(), tn.name) == 0 && i + tn.name.size() < raw.size() &&
            raw[i + tn.name.size()] == '>') {
            return TagToken{ pos, i + tn.name.size() + 1 - pos, tn.kind, closing };
        }
    }
    return std::nullopt;
}

inline std::vector<TagToken> lex_tags(std::string_view raw) {
    std::vector<TagToken> tokens;
    std::size_t pos = raw.find('<');
    while (pos != std::string_view::npos) {
        if (auto tok = match_tag(raw, pos)) {
            tokens.push_back(*tok);
            pos = raw.find('<', pos + tok->len);
        } else {
            pos = raw.find('<', pos + 1);
        }
    }
    return tokens;
}

inline StageLayout classify(const std::vector<Segment> & segments) {
    using K = SegmentKind;
    std::vector<K> kinds;
    kinds.reserve(segments.size());
    for (const auto & s : segments) {
        kinds.push_back(s.kind);
    }
    if (kinds == std::vector<K>{ K::Think, K::Answer }) {
        return StageLayout::InitialOnly;
    }
    if (kinds == std::vector<K>{ K::Think, K::Answer, K::Reflection, K::Think, K::Answer }) {
        return StageLayout::FullRft;
    }
    if (kinds == std::vector<K>{ K::Think, K::Answer, K::Think, K::Answer }) {
        return StageLayout::SftPair;
    }
    return StageLayout::Unrecognized;
}

}  // namespace detail

inline Transcript parse_transcript(std::string_view raw, ParseOptions opts = {}) {
    using detail::TagToken;
    Transcript t;
    t.raw = std::string(raw);

    const auto tokens = detail::lex_tags(raw);
    auto tag_text = [&](const TagToken & tok) { return std::string(raw.substr(tok.pos, tok.len)); };
    auto emit = [&](const TagToken & open, std::size_t body_end, std::size_t end, std::string close_tag) {
        Segment s;
        s.kind      = open.kind;
        s.open_tag  = tag_text(open);
        s.close_tag = std::move(close_tag);
        s.body_span = { open.pos + open.len, body_end };
        s.span      = { open.pos, end };
        s.body      = std::string(raw.substr(s.body_span.begin, s.body_span.size()));
        t.segments.push_back(std::move(s));
    };

    std::size_t i = 0;
    while (i < tokens.size()) {
        const auto & tok = tokens[i];
        if (tok.closing) {
            t.diagnostics.push_back({ Diagnostic::Kind::StrayClosingTag, tok.pos, tag_text(tok) });
            ++i;
            continue;
        }
        if (i + 1 < tokens.size()) {
            const auto & next = tokens[i + 1];
            if (next.kind == tok.kind && next.closing) {
                emit(tok, next.pos, next.pos + next.len, tag_text(next));
                i += 2;
                continue;
            }
            if (opts.recover && next.kind == tok.kind) {
                t.diagnostics.push_back({ Diagnostic::Kind::RecoveredClose, tok.pos, tag_text(tok) });
                emit(tok, next.pos, next.pos + next.len, tag_text(next));
                i += 2;
                continue;
            }
        } else if (opts.recover) {
            t.diagnostics.push_back({ Diagnostic::Kind::RecoveredClose, tok.pos, tag_text(tok) });
            emit(tok, raw.size(), raw.size(), "");
            ++i;
            continue;
        }
        t.diagnostics.push_back({ Diagnostic::Kind::UnclosedTag, tok.pos, tag_text(tok) });
        ++i;
    }
    t.layout = detail::classify(t.segments);
    return t;
}

/// Text between segments: gaps()[i] precedes segments[i]; the last entry trails the final segment.
inline std::vector<std::string_view> gaps(const Transcript & t) {
    std::vector<std::string_view> out;
    std::string_view raw = t.raw;
    std::size_t cursor = 0;
    for (const auto & s : t.segments) {
        out.push_back(raw.substr(cursor, s.span.begin - cursor));
        cursor = s.span.end;
    }
    out.push_back(raw.substr(cursor));
    return out;
}

/// Rebuilds the input from gap text and segment spans; equals `t.raw` byte-for-byte.
inline std::string reassemble(const Transcript & t) {
    std::string out;
    auto g = gaps(t);
    std::string_view raw = t.raw;
    for (std::size_t i = 0; i < t.segments.size(); ++i) {
        out.append(g[i]);
        out.append(raw.substr(t.segments[i].span.begin, t.segments[i].span.size()));
    }
    out.append(g.back());
    return out;
}

inline std::string canonical_open(SegmentKind k) {
    return std::string("<") + to_string(k) + ">";
}

inline std::string canonical_close(SegmentKind k) {
    return std::string("</") + to_string(k) + ">";
}

/// Canonical serialization: gap text verbatim, every segment with canonical tags.
inline std::string render(const Transcript & t) {
    std::string out;
    auto g = gaps(t);
    for (std::size_t i = 0; i < t.segments.size(); ++i) {
        const auto & s = t.segments[i];
        out.append(g[i]);
        out.append(canonical_open(s.kind));
        out.append(s.body);
        out.append(canonical_close(s.kind));
    }
    out.append(g.back());
    return out;
}

enum class AnswerChoice { Initial, Final };

/// First standalone A-D token of an answer body. Uppercase tokens win over lowercase ones so
/// that an article such as "a" does not shadow "Option B".
inline std::optional<AnswerLetter> letter_in_text(std::string_view body) {
    std::optional<AnswerLetter> lowercase_hit;
    std::size_t i = 0;
    while (i < body.size()) {
        while (i < body.size() && is_space(body[i])) {
            ++i;
        }
        std::size_t j = i;
        while (j < body.size() && !is_space(body[j])) {
            ++j;
        }
        auto tok = body.substr(i, j - i);
        while (!tok.empty() && (tok.front() == '(' || tok.front() == '[')) {
            tok.remove_prefix(1);
        }
        while (!tok.empty() && (tok.back() == '.' || tok.back() == ')' || tok.back() == ']' || tok.back() == ':' ||
                                tok.back() == ',')) {
            tok.remove_suffix(1);
        }
        if (tok.size() == 1) {
            char c = tok.front();
            if (c >= 'A' && c <= 'D') {
                return letter_from_char(c);
            }
            if (c >= 'a' && c <= 'd' && !lowercase_hit) {
                lowercase_hit = letter_from_char(c);
            }
        }
        i = j;
    }
    return lowercase_hit;
}

inline const Segment * find_answer_segment(const Transcript & t, AnswerChoice which) {
    const Segment * found = nullptr;
    for (const auto & s : t.segments) {
        if (s.kind != SegmentKind::Answer) {
            continue;
        }
        found = &s;
        if (which == AnswerChoice::Initial) {
            break;
        }
    }
    return found;
}

inline std::optional<AnswerLetter> extract_answer(const Transcript & t, AnswerChoice which) {
    const Segment * s = find_answer_segment(t, which);
    if (s == nullptr) {
        return std::nullopt;
    }
    return letter_in_text(s->body);
}

namespace detail {

// Accepted interval mentions. A dash/"to" range needs a unit on either bound or a leading "from";
// a bracketed pair needs neither.
//   5.4s–10.6s | 5.4s-10.6s | 5.4s to 10.6s | from 5 to 10 seconds | 5 - 10 sec | [5.4, 10.6] | [5.4s, 10.6s]
inline const std::regex & range_pattern() {
    static const std::regex re(
        R"((\bfrom\s+)?\b(\d+(?:\.\d+)?)(\s*(?:seconds|second|secs|sec|s)\b)?)"
        "\\s*(?:-|\xE2\x80\x93|\xE2\x80\x94|to|until)\\s*"
        R"((\d+(?:\.\d+)?)(\s*(?:seconds|second|secs|sec|s)\b)?)",
        std::regex::ECMAScript | std::regex::icase);
    return re;
}

inline const std::regex & bracket_pattern() {
    static const std::regex re(
        R"(\[\s*(\d+(?:\.\d+)?)\s*(?:seconds|second|secs|sec|s)?\s*,\s*(\d+(?:\.\d+)?)\s*(?:seconds|second|secs|sec|s)?\s*\])",
        std::regex::ECMAScript | std::regex::icase);
    return re;
}

inline std::optional<TimeInterval> make_interval(const std::string & a, const std::string & b) {
    double x = 0;
    double y = 0;
    if (!parse_double(a, x) || !parse_double(b, y) || !std::isfinite(x) || !std::isfinite(y)) {
        return std::nullopt;
    }
    if (x > y) {
        std::swap(x, y);
    }
    return TimeInterval{ x, y };
}

}  // namespace detail

inline std::optional<TimeInterval> extract_interval(std::string_view body) {
    const std::string text(body);
    std::optional<TimeInterval> best;
    std::size_t best_pos = std::string::npos;

    for (auto it = std::sregex_iterator(text.begin(), text.end(), detail::range_pattern());
         it != std::sregex_iterator(); ++it) {
        const auto & m = *it;
        if (!(m[1].matched || m[3].matched || m[5].matched)) {
            continue;
        }
        if (auto iv = detail::make_interval(m[2].str(), m[4].str())) {
            best     = iv;
            best_pos = static_cast<std::size_t>(m.position(0));
        }
        break;
    }
    std::smatch m;
    if (std::regex_search(text, m, detail::bracket_pattern()) && static_cast<std::size_t>(m.position(0)) < best_pos) {
        if (auto iv = detail::make_interval(m[1].str(), m[2].str())) {
            best = iv;
        }
    }
    return best;
}

/// Bodies of the post-reflection think/answer region; when there is no reflection, the last think
/// and the last answer. Joined with newlines in document order.
inline std::string final_region_text(const Transcript & t) {
    std::size_t start = 0;
    bool has_reflection = false;
    for (std::size_t i = 0; i < t.segments.size(); ++i) {
        if (t.segments[i].kind == SegmentKind::Reflection) {
            start          = i + 1;
            has_reflection = true;
        }
    }
    std::vector<const Segment *> picked;
    if (has_reflection) {
        for (std::size_t i = start; i < t.segments.size(); ++i) {
            if (t.segments[i].kind != SegmentKind::Reflection) {
                picked.push_back(&t.segments[i]);
            }
        }
    } else {
        const Segment * last_think  = nullptr;
        const Segment * last_answer = nullptr;
        for (const auto & s : t.segments) {
            if (s.kind == SegmentKind::Think) {
                last_think = &s;
            } else if (s.kind == SegmentKind::Answer) {
                last_answer = &s;
            }
        }
        for (const auto * s : { last_think, last_answer }) {
            if (s != nullptr) {
                picked.push_back(s);
            }
        }
        if (picked.size() == 2 && picked[0]->span.begin > picked[1]->span.begin) {
            std::swap(picked[0], picked[1]);
        }
    }
    std::string out;
    for (const auto * s : picked) {
        if (!out.empty()) {
            out.push_back('\n');
        }
        out.append(s->body);
    }
    return out;
}

inline std::optional<TimeInterval> extract_final_interval(const Transcript & t) {
    return extract_interval(final_region_text(t));
}

enum class FormatSchema { InitialQA, RftFull, SftPair };

struct FormatReport {
    bool                     layout_ok = false;
    std::vector<SegmentKind> missing;
    std::vector<std::size_t> extra;  // indices into Transcript::segments
    bool                     reflection_tag_ok = false;
    std::size_t              unrecovered_diagnostics = 0;
};

inline std::vector<SegmentKind> expected_kinds(FormatSchema schema) {
    using K = SegmentKind;
    switch (schema) {
        case FormatSchema::InitialQA:
            return { K::Think, K::Answer };
        case FormatSchema::RftFull:
            return { K::Think, K::Answer, K::Reflection, K::Think, K::Answer };
        case FormatSchema::SftPair:
            return { K::Think, K::Answer, K::Think, K::Answer };
    }
    return {};
}

/// Greedy in-order alignment of segments against the schema. Unmatched segments are `extra`,
/// unmatched schema slots are `missing`. Unrecovered tag errors also fail the layout.
inline FormatReport validate_format(const Transcript & t, FormatSchema schema) {
    FormatReport report;
    const auto expected = expected_kinds(schema);
    std::size_t next = 0;
    for (std::size_t i = 0; i < t.segments.size(); ++i) {
        if (next < expected.size() && t.segments[i].kind == expected[next]) {
            ++next;
        } else {
            report.extra.push_back(i);
        }
        if (t.segments[i].kind == SegmentKind::Reflection && t.segments[i].properly_closed()) {
            report.reflection_tag_ok = true;
        }
    }
    report.missing.assign(expected.begin() + static_cast<std::ptrdiff_t>(next), expected.end());
    report.unrecovered_diagnostics = t.unrecovered_diagnostics();
    report.layout_ok = report.missing.empty() && report.extra.empty() && report.unrecovered_diagnostics == 0;
    return report;
}

}  // namespace reflectrl
