// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <reflectrl/reflectrl.hpp>

#include <random>
#include <string>
#include <vector>

namespace reflectrl::testing {

// Five-part correction transcript modelled on the arson case: the first pass picks the fire
// spreading (A), the reflection points at the burning man running off, the final answer is B.
inline const std::string kArsonCorrection =
    "<think>The fire spreads across the parking lot very quickly, which looks deliberate. "
    "The speed of the spread is the strongest clue.</think>\n"
    "<answer>A</answer>\n"
    "<reflection>The first pass ignored the person on fire fleeing the lot, a direct behavioral "
    "clue that outweighs how fast the flames spread.</reflection>\n"
    "<think>Flames appear in the parking lot first. Shortly afterwards a man who is on fire runs away "
    "from the scene, which points to him having started it.</think>\n"
    "<answer>B</answer>";

// Grounding transcript whose revised reasoning localizes the event to 5.4s-10.6s; the first pass
// proposes a coarser window that must not be used for scoring.
inline const std::string kGroundingCorrection =
    "<think>Something unusual seems to happen from 2s to 14s.</think>\n"
    "<answer>B</answer>\n"
    "<reflection>The first window leaned on background motion instead of the actual altercation.</reflection>\n"
    "<think>Re-checking the timeline, the altercation starts and ends within 5.4s–10.6s.</think>\n"
    "<answer>B</answer>";

// Slashless answer tags in the style of the printed examples.
inline const std::string kSlashlessRefinement =
    "<think>The man in the yellow shirt walks to the driver's side and throws a punch.</think>\n"
    "<answer> B <answer>";

inline Episode make_episode(std::string id, AnswerLetter gt, bool anomaly, std::optional<TimeInterval> iv = std::nullopt,
                            std::string dataset = "toy") {
    Episode ep;
    ep.id          = std::move(id);
    ep.question    = "What is the key anomalous behavior?";
    ep.options     = { "Option one", "Option two", "Option three", "Option four" };
    ep.gt_answer   = gt;
    ep.is_anomaly  = anomaly;
    ep.gt_interval = iv;
    ep.dataset_tag = std::move(dataset);
    ep.context     = "A street scene filmed by a fixed camera.";
    return ep;
}

/// Five-part transcript with the given answers, padded with filler words to `tokens` whitespace tokens.
inline std::string five_part(char initial, char final, std::size_t tokens = 0, const std::string & final_think = "revised look",
                             const std::string & reflection_open = "<reflection>",
                             const std::string & reflection_close = "</reflection>") {
    std::string s = "<think>first look</think> <answer>" + std::string(1, initial) + "</answer> " + reflection_open +
                    "check again" + reflection_close + " <think>" + final_think + "</think> <answer>" +
                    std::string(1, final) + "</answer>";
    std::size_t n = count_tokens(s);
    while (n < tokens) {
        s += " pad";
        ++n;
    }
    return s;
}

/// Two templates per context with equal task reward and opposite reflection outcomes: a
/// well-formed W->C revision and a C->W revision missing its final think (so it keeps the
/// accuracy bonus but loses the format bonus). Both are padded to the same length and carry no
/// interval. `wc_index[c]` is where the W->C template sits.
struct ShapingWorld {
    ToyWorld                 world;
    std::vector<std::size_t> wc_index;
};

inline ShapingWorld reflection_shaping_world(std::size_t contexts = 4) {
    ShapingWorld out;
    for (std::size_t c = 0; c < contexts; ++c) {
        ToyContext ctx;
        ctx.id      = "ctx" + std::to_string(c);
        ctx.episode = make_episode(ctx.id, AnswerLetter::B, true, TimeInterval{ 1, 3 });
        std::string wc = "<think>first look</think> <answer>A</answer> <reflection>look again</reflection> "
                         "<think>revised view</think> <answer>B</answer>";
        std::string cw = "<think>first look</think> <answer>B</answer> <reflection>look again</reflection> "
                         "<answer>A</answer>";
        while (count_tokens(cw) < count_tokens(wc)) {
            cw += " pad";
        }
        const std::size_t pos = c % 2;
        ctx.templates = pos == 0 ? std::vector<std::string>{ wc, cw } : std::vector<std::string>{ cw, wc };
        out.wc_index.push_back(pos);
        out.world.contexts.push_back(std::move(ctx));
    }
    return out;
}

inline std::string data_path(const std::string & name) {
    return std::string(REFLECTRL_DATA_DIR) + "/" + name;
}

/// Random tag soup: well-formed pairs, stray and unclosed tags, slashless closers, plain text and
/// multi-byte characters.
inline std::string random_transcript(std::mt19937_64 & rng) {
    static const std::vector<std::string> pieces = {
        "<think>", "</think>", "<answer>", "</answer>", "<reflect>", "</reflect>", "<reflection>", "</reflection>",
        "<", ">", "</", "<thin", "B", " A. ", "5.4s–10.6s", "from 10 to 5 seconds", "[1, 2]", "\n", "  ", "é", "—",
        "<Think>", "text", "<answer/>",
    };
    std::uniform_int_distribution<std::size_t> len(0, 24);
    std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1);
    std::string out;
    const std::size_t n = len(rng);
    for (std::size_t i = 0; i < n; ++i) {
        out += pieces[pick(rng)];
    }
    return out;
}

}  // namespace reflectrl::testing
