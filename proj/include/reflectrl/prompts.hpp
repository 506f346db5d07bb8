// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "common.hpp"

#include <map>
#include <stdexcept>
#include <string>
#include <string_view>

namespace reflectrl {

enum class PromptName { InitialReasoning, ReflectionConstruction, SftPrompt, RftPrompt };

/// `system` and `user` hold the prompt box text verbatim. `inputs` is the data block appended to the
/// user message for templates whose box carries no slots of its own.
struct PromptTemplate {
    PromptName  name;
    std::string system;
    std::string user;
    std::string inputs;
};

class PromptError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

namespace detail {

inline constexpr std::string_view kQuestionBlock =
    "Question: {Question}\n"
    "Options:\n"
    "A. {Option 1}\n"
    "B. {Option 2}\n"
    "C. {Option 3}\n"
    "D. {Option 4}";

}  // namespace detail

inline const PromptTemplate & prompt_template(PromptName name) {
    static const PromptTemplate initial{
        PromptName::InitialReasoning,
        "You are a precise and reliable AI assistant for video anomaly understanding.\n"
        "You must strictly follow the formatting and reasoning rules below:\n"
        "1. First generate a concise, human-like reasoning process wrapped inside <think>...</think>.\n"
        "2. The reasoning must be strictly grounded in observable actions and events in the video. Do not "
        "speculate or introduce information not supported by visual evidence.\n"
        "3. Output the final answer wrapped inside <answer>...</answer>.\n"
        "4. The answer must be a single uppercase letter (A/B/C/D).",
        "Please analyze the given video and answer the following multiple-choice question.\n" +
            std::string(detail::kQuestionBlock),
        "",
    };
    static const PromptTemplate reflection{
        PromptName::ReflectionConstruction,
        "You are a meticulous multi-modal reasoning editor.\n"
        "You must improve a model’s reasoning by performing self-reflection and producing a revised,\n"
        "grounded chain-of-thought that matches the correct option.",
        "You are performing self-reflection on a previously generated reasoning process for a video-based\n"
        "multiple-choice question. Your goal is to:\n"
        "1. Critique the initial reasoning; and\n"
        "2. Produce a cleaner, more reliable revised reasoning that supports the correct option.\n"
        "\n"
        "Reflection Rules:\n"
        "- If the initial answer does not match the correct option:\n"
        "  - Explain why the chosen incorrect option is not supported by the video.\n"
        "  - Explain which key evidence supports the correct option.\n"
        "- If the initial answer matches the correct option:\n"
        "  - Explain how the reasoning can be clearer, better structured, or more grounded in\n"
        "    chronological evidence.\n"
        "Keep the reflection short and focused on improving the reasoning structure.\n"
        "\n"
        "Final Output Requirement:\n"
        "- Generate a FINAL THINK:\n"
        "- Write a new, improved reasoning wrapped inside <think>...</think>.",
        "\n\n" + std::string(detail::kQuestionBlock) +
            "\n"
            "Initial reasoning:\n"
            "{InitialReasoning}\n"
            "Correct option: {GroundTruth}\n"
            "Wrap the reflection inside <reflection>...</reflection> before the FINAL THINK, and give the final "
            "answer inside <answer>...</answer> after it.",
    };
    static const PromptTemplate sft{
        PromptName::SftPrompt,
        "You are a thoughtful multi-modal reasoning model trained to analyze videos step by step\n"
        "and improve your reasoning through self-reflection.",
        "You are given a question about a video and four answer options (A, B, C, D).\n"
        "Your goal is to perform two rounds of reasoning:\n"
        "1. Initial Reasoning: Analyze the video and generate an initial\n"
        "Chain-of-Thought (CoT) reasoning, followed by an initial answer.\n"
        "2. Reflection and Revision: Reflect on your initial reasoning,\n"
        "identify potential issues or areas for improvement, and then produce a revised\n"
        "reasoning and a final answer.\n"
        "\n"
        "Reasoning Guidelines:\n"
        "- All reasoning must be strictly grounded in observable video content.\n"
        "Do not speculate or hallucinate.\n"
        "- Follow the chronological order of events in the video.\n"
        "- Structure reasoning as:\n"
        "what happens → what it implies →\n"
        "comparison with options.\n"
        "- Keep reasoning clear, concise, factual, and well-organized.",
        "\n\n" + std::string(detail::kQuestionBlock),
    };
    static const PromptTemplate rft{
        PromptName::RftPrompt,
        "You are a multi-modal reasoning model for video understanding.\n"
        "You must base your reasoning strictly on observable evidence in the video\n"
        "and avoid hallucination or unsupported speculation.",
        "You will be given a question about a video and four answer options (A–D).\n"
        "Your task is to reason in two rounds:\n"
        "1. Provide an INITIAL reasoning and an INITIAL answer.\n"
        "2. Reflect on your initial reasoning, revise it if necessary,\n"
        "and provide a FINAL reasoning and a FINAL answer.\n"
        "\n"
        "Output Requirements (MUST follow exactly):\n"
        "The output must follow five parts in order:\n"
        "- THINK (<think>...</think>)\n"
        "- ANSWER (<answer>...</answer>)\n"
        "- REFLECTION (<reflection>...</reflection>)\n"
        "\n"
        "Reasoning Constraints:\n"
        "- Ground all reasoning in visible events and actions in the video.\n"
        "- Follow the chronological order of events.\n"
        "- Keep the reasoning clear, factual, and concise.\n"
        "- Do not introduce details not supported by the video.",
        "\n\n" + std::string(detail::kQuestionBlock),
    };
    switch (name) {
        case PromptName::InitialReasoning:
            return initial;
        case PromptName::ReflectionConstruction:
            return reflection;
        case PromptName::SftPrompt:
            return sft;
        case PromptName::RftPrompt:
            return rft;
    }
    throw std::invalid_argument("unknown prompt template");
}

struct RenderedPrompt {
    std::string system;
    std::string user;

    friend bool operator==(const RenderedPrompt &, const RenderedPrompt &) = default;
};

using SlotMap = std::map<std::string, std::string, std::less<>>;

/// Replaces every `{Name}` with its slot value in a single pass; values are not re-scanned.
inline std::string fill_slots(std::string_view text, const SlotMap & slots) {
    std::string out;
    out.reserve(text.size());
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto open = text.find('{', pos);
        if (open == std::string_view::npos) {
            out.append(text.substr(pos));
            break;
        }
        auto close = text.find('}', open + 1);
        if (close == std::string_view::npos) {
            out.append(text.substr(pos));
            break;
        }
        out.append(text.substr(pos, open - pos));
        auto name = text.substr(open + 1, close - open - 1);
        auto it = slots.find(name);
        if (it == slots.end()) {
            throw PromptError("unfilled slot: " + std::string(name));
        }
        out.append(it->second);
        pos = close + 1;
    }
    return out;
}

inline RenderedPrompt render_prompt(const PromptTemplate & tpl, const SlotMap & slots) {
    return { fill_slots(tpl.system, slots), fill_slots(tpl.user + tpl.inputs, slots) };
}

}  // namespace reflectrl
