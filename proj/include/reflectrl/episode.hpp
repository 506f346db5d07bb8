// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "common.hpp"
#include "transcript.hpp"

#include <array>
#include <optional>
#include <string>

namespace reflectrl {

/// QA episodes judge "correct" by the final answer letter. Grounding episodes judge it by whether
/// the model localizes an interval (anomaly) or asserts that nothing anomalous happens (normal).
enum class TaskKind { QA, Grounding };

struct Episode {
    std::string                 id;
    std::string                 question;
    std::array<std::string, 4>  options;
    AnswerLetter                gt_answer = AnswerLetter::A;
    bool                        is_anomaly = false;
    std::optional<TimeInterval> gt_interval;
    std::string                 dataset_tag;
    std::string                 context;  // textual stand-in for the video
    TaskKind                    task = TaskKind::QA;

    void validate() const {
        if (is_anomaly) {
            if (!gt_interval || !gt_interval->valid() || !(gt_interval->end_s > gt_interval->start_s)) {
                throw InputError("episode " + id + ": anomaly episodes need a non-empty gt_interval");
            }
        } else if (gt_interval) {
            throw InputError("episode " + id + ": normal episodes must not carry gt_interval");
        }
    }
};

inline json interval_to_json(const std::optional<TimeInterval> & iv) {
    if (!iv) {
        return nullptr;
    }
    return json::array({ iv->start_s, iv->end_s });
}

inline std::optional<TimeInterval> interval_from_json(const json & j) {
    if (j.is_null()) {
        return std::nullopt;
    }
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
        throw InputError("interval must be [start, end]");
    }
    TimeInterval iv{ j[0].get<double>(), j[1].get<double>() };
    if (!iv.valid()) {
        throw InputError("interval must satisfy 0 <= start <= end");
    }
    return iv;
}

inline AnswerLetter letter_from_json(const json & j, const char * field) {
    if (!j.is_string()) {
        throw InputError(std::string(field) + " must be a letter A-D");
    }
    auto l = parse_letter(j.get<std::string>());
    if (!l) {
        throw InputError(std::string(field) + " must be a letter A-D");
    }
    return *l;
}

inline json to_json(const Episode & ep) {
    json j;
    j["id"]          = ep.id;
    j["question"]    = ep.question;
    j["options"]     = json::array({ ep.options[0], ep.options[1], ep.options[2], ep.options[3] });
    j["gt_answer"]   = std::string(1, to_char(ep.gt_answer));
    j["is_anomaly"]  = ep.is_anomaly;
    j["gt_interval"] = interval_to_json(ep.gt_interval);
    j["dataset_tag"] = ep.dataset_tag;
    j["context"]     = ep.context;
    j["task"]        = ep.task == TaskKind::QA ? "qa" : "grounding";
    return j;
}

inline Episode episode_from_json(const json & j) {
    if (!j.is_object()) {
        throw InputError("episode must be a JSON object");
    }
    Episode ep;
    try {
        ep.id       = j.at("id").get<std::string>();
        ep.question = j.value("question", "");
        const auto & opts = j.at("options");
        if (!opts.is_array() || opts.size() != 4) {
            throw InputError("episode " + ep.id + ": options must have exactly 4 entries");
        }
        for (std::size_t i = 0; i < 4; ++i) {
            ep.options[i] = opts[i].get<std::string>();
        }
        ep.gt_answer   = letter_from_json(j.at("gt_answer"), "gt_answer");
        ep.is_anomaly  = j.at("is_anomaly").get<bool>();
        ep.gt_interval = interval_from_json(j.value("gt_interval", json(nullptr)));
        ep.dataset_tag = j.value("dataset_tag", "");
        ep.context     = j.value("context", "");
        auto task      = j.value("task", std::string("qa"));
        if (task == "qa") {
            ep.task = TaskKind::QA;
        } else if (task == "grounding") {
            ep.task = TaskKind::Grounding;
        } else {
            throw InputError("episode " + ep.id + ": unknown task '" + task + "'");
        }
    } catch (const json::exception & e) {
        throw InputError(std::string("episode: ") + e.what());
    }
    ep.validate();
    return ep;
}

}  // namespace reflectrl
