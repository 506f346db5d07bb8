// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reflection-aware data construction: a base model answers each episode, a teacher that sees the
// ground truth writes a reflection and a revised reasoning, and the pipeline routes each sample to
// the correction or refinement path by comparing the base answer with the ground truth.

#include "chat_client.hpp"
#include "cold_start.hpp"
#include "common.hpp"
#include "episode.hpp"
#include "prompts.hpp"
#include "transcript.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace reflectrl {

inline constexpr int kSampleSchemaVersion = 1;

enum class ReflectionPath { Correction, Refinement };

inline const char * to_string(ReflectionPath p) {
    return p == ReflectionPath::Correction ? "correction" : "refinement";
}

/// Correction unless the base model's initial answer equals the ground truth.
inline ReflectionPath assign_path(std::optional<AnswerLetter> initial_answer, AnswerLetter gt) {
    return initial_answer && *initial_answer == gt ? ReflectionPath::Refinement : ReflectionPath::Correction;
}

struct Provenance {
    std::string base_model;
    std::string teacher_model;
    std::string initial_generated_at;
    std::string reflection_generated_at;

    friend bool operator==(const Provenance &, const Provenance &) = default;
};

struct ReflectionSample {
    std::string                 video_id;
    std::string                 question;
    std::array<std::string, 4>  options;
    AnswerLetter                gt_answer = AnswerLetter::A;
    std::string                 initial_reasoning;
    std::optional<AnswerLetter> initial_answer;
    std::string                 reflection;
    std::string                 revised_reasoning;
    AnswerLetter                final_answer = AnswerLetter::A;
    ReflectionPath              path = ReflectionPath::Correction;
    Provenance                  provenance;

    friend bool operator==(const ReflectionSample &, const ReflectionSample &) = default;
};

inline json to_json(const ReflectionSample & s) {
    json j;
    j["schema_version"]    = kSampleSchemaVersion;
    j["video_id"]          = s.video_id;
    j["question"]          = s.question;
    j["options"]           = json::array({ s.options[0], s.options[1], s.options[2], s.options[3] });
    j["gt_answer"]         = std::string(1, to_char(s.gt_answer));
    j["initial_reasoning"] = s.initial_reasoning;
    j["initial_answer"]    = s.initial_answer ? json(std::string(1, to_char(*s.initial_answer))) : json(nullptr);
    j["reflection"]        = s.reflection;
    j["revised_reasoning"] = s.revised_reasoning;
    j["final_answer"]      = std::string(1, to_char(s.final_answer));
    j["path"]              = to_string(s.path);
    j["provenance"]        = {
        { "base_model", s.provenance.base_model },
        { "teacher_model", s.provenance.teacher_model },
        { "initial_generated_at", s.provenance.initial_generated_at },
        { "reflection_generated_at", s.provenance.reflection_generated_at },
    };
    return j;
}

inline ReflectionSample reflection_sample_from_json(const json & j) {
    ReflectionSample s;
    try {
        const int version = j.at("schema_version").get<int>();
        if (version != kSampleSchemaVersion) {
            throw InputError("reflection sample: unsupported schema_version " + std::to_string(version));
        }
        s.video_id = j.at("video_id").get<std::string>();
        s.question = j.at("question").get<std::string>();
        const auto & opts = j.at("options");
        if (!opts.is_array() || opts.size() != 4) {
            throw InputError("reflection sample " + s.video_id + ": options must have 4 entries");
        }
        for (std::size_t i = 0; i < 4; ++i) {
            s.options[i] = opts[i].get<std::string>();
        }
        s.gt_answer         = letter_from_json(j.at("gt_answer"), "gt_answer");
        s.initial_reasoning = j.at("initial_reasoning").get<std::string>();
        const auto & ia     = j.at("initial_answer");
        if (!ia.is_null()) {
            s.initial_answer = letter_from_json(ia, "initial_answer");
        }
        s.reflection        = j.at("reflection").get<std::string>();
        s.revised_reasoning = j.at("revised_reasoning").get<std::string>();
        s.final_answer      = letter_from_json(j.at("final_answer"), "final_answer");
        const auto path     = j.at("path").get<std::string>();
        if (path == "correction") {
            s.path = ReflectionPath::Correction;
        } else if (path == "refinement") {
            s.path = ReflectionPath::Refinement;
        } else {
            throw InputError("reflection sample " + s.video_id + ": unknown path '" + path + "'");
        }
        const auto & p = j.at("provenance");
        s.provenance.base_model              = p.at("base_model").get<std::string>();
        s.provenance.teacher_model           = p.at("teacher_model").get<std::string>();
        s.provenance.initial_generated_at    = p.at("initial_generated_at").get<std::string>();
        s.provenance.reflection_generated_at = p.at("reflection_generated_at").get<std::string>();
    } catch (const json::exception & e) {
        throw InputError(std::string("reflection sample: ") + e.what());
    }
    if (s.path != assign_path(s.initial_answer, s.gt_answer)) {
        throw InputError("reflection sample " + s.video_id + ": path disagrees with initial answer");
    }
    return s;
}

/// Cold-start view of an accepted sample: a2 is the revised reasoning followed by its answer tag.
inline SftSample to_sft_sample(const ReflectionSample & s) {
    std::string q = s.question;
    for (std::size_t i = 0; i < s.options.size(); ++i) {
        q += "\n" + std::string(1, static_cast<char>('A' + i)) + ". " + s.options[i];
    }
    return { q, s.initial_reasoning, s.reflection,
             s.revised_reasoning + "\n<answer>" + std::string(1, to_char(s.final_answer)) + "</answer>" };
}

inline std::string utc_timestamp() {
    const auto now   = std::chrono::system_clock::now();
    const auto t     = std::chrono::system_clock::to_time_t(now);
    const auto ms    = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm    tm{};
    gmtime_r(&t, &tm);
    char buf[40];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", &tm);
    char out[48];
    std::snprintf(out, sizeof(out), "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
}

inline SlotMap episode_slots(const Episode & ep) {
    return {
        { "Question", ep.question },   { "Option 1", ep.options[0] }, { "Option 2", ep.options[1] },
        { "Option 3", ep.options[2] }, { "Option 4", ep.options[3] },
    };
}

/// System + user messages. The video slot carries the textual description; a multimodal client
/// would attach frames there instead.
inline std::vector<ChatMessage> build_messages(const RenderedPrompt & prompt, const Episode & ep) {
    std::string user;
    if (!ep.context.empty()) {
        user = "Video description: " + ep.context + "\n\n";
    }
    user += prompt.user;
    return { { "system", prompt.system }, { "user", std::move(user) } };
}

struct InitialGeneration {
    std::string text;
    int         retries = 0;
    std::string model;
    std::string generated_at;
};

/// Re-raises a client failure with the episode id prepended, keeping its class.
[[noreturn]] inline void rethrow_for_episode(const Episode & ep, const TransportError & e) {
    const auto msg = "episode " + ep.id + ": " + e.what();
    if (dynamic_cast<const EndpointConfigError *>(&e) != nullptr) {
        throw EndpointConfigError(msg);
    }
    throw TransportError(msg);
}

inline InitialGeneration generate_initial(ChatClient & client, const Episode & ep) {
    const auto prompt = render_prompt(prompt_template(PromptName::InitialReasoning), episode_slots(ep));
    try {
        auto res = client.complete(build_messages(prompt, ep));
        return { std::move(res.content), res.retries, client.model_id(), utc_timestamp() };
    } catch (const TransportError & e) {
        rethrow_for_episode(ep, e);
    }
}

struct ReflectionGeneration {
    std::string                 reflection;
    std::string                 revised_reasoning;
    std::optional<AnswerLetter> final_answer;
    std::string                 raw_output;
    std::optional<std::string>  reject_reason;  // set when the teacher output fails validation
    int                         retries = 0;
    std::string                 model;
    std::string                 generated_at;
};

/// Splits a teacher completion into reflection / revised think / final answer, or explains why not.
inline ReflectionGeneration parse_teacher_output(std::string_view output, AnswerLetter gt) {
    ReflectionGeneration gen;
    gen.raw_output = std::string(output);
    const auto t = parse_transcript(output, { .recover = true });

    const Segment * reflection = nullptr;
    for (const auto & s : t.segments) {
        if (s.kind == SegmentKind::Reflection) {
            reflection = &s;
            break;
        }
    }
    const Segment * think = nullptr;
    for (const auto & s : t.segments) {
        if (s.kind == SegmentKind::Think && (reflection == nullptr || s.span.begin > reflection->span.begin)) {
            think = &s;
        }
    }
    gen.final_answer = extract_answer(t, AnswerChoice::Final);

    if (reflection == nullptr || trim(reflection->body).empty()) {
        gen.reject_reason = "missing reflection";
    } else if (think == nullptr || trim(think->body).empty()) {
        gen.reject_reason = "missing revised think";
    } else if (!gen.final_answer) {
        gen.reject_reason = "missing final answer";
    } else if (*gen.final_answer != gt) {
        gen.reject_reason = std::string("final answer ") + to_char(*gen.final_answer) + " disagrees with ground truth " +
                            to_char(gt);
    }
    if (reflection != nullptr) {
        gen.reflection = std::string(trim(reflection->body));
    }
    if (think != nullptr) {
        gen.revised_reasoning = std::string(trim(think->body));
    }
    return gen;
}

inline ReflectionGeneration generate_reflection(ChatClient & client, const Episode & ep, std::string_view a1) {
    auto slots = episode_slots(ep);
    slots["InitialReasoning"] = std::string(a1);
    slots["GroundTruth"]      = std::string(1, to_char(ep.gt_answer)) + ". " +
                           ep.options[static_cast<std::size_t>(ep.gt_answer)];
    const auto prompt = render_prompt(prompt_template(PromptName::ReflectionConstruction), slots);
    ChatCompletion res;
    try {
        res = client.complete(build_messages(prompt, ep));
    } catch (const TransportError & e) {
        rethrow_for_episode(ep, e);
    }
    auto gen         = parse_teacher_output(res.content, ep.gt_answer);
    gen.retries      = res.retries;
    gen.model        = client.model_id();
    gen.generated_at = utc_timestamp();
    return gen;
}

struct BuildOptions {
    bool        resume          = false;
    std::size_t max_concurrency = 1;
    /// Stop scheduling new episodes after this many have been started (simulates an interrupted run).
    std::size_t stop_after = std::numeric_limits<std::size_t>::max();
    std::function<void(std::string_view)> log = [](std::string_view line) { std::cerr << line << '\n'; };
};

struct BuildReport {
    std::size_t              total_episodes   = 0;
    std::size_t              skipped_existing = 0;
    std::size_t              accepted         = 0;
    std::size_t              rejected         = 0;
    std::size_t              failed           = 0;
    std::size_t              correction       = 0;
    std::size_t              refinement       = 0;
    std::size_t              requests_issued  = 0;
    std::size_t              configuration_failures = 0;
    std::vector<std::string> failed_ids;
};

inline json to_json(const BuildReport & r) {
    json j;
    j["schema_version"]   = kSampleSchemaVersion;
    j["total_episodes"]   = r.total_episodes;
    j["skipped_existing"] = r.skipped_existing;
    j["accepted"]         = r.accepted;
    j["rejected"]         = r.rejected;
    j["failed"]           = r.failed;
    j["correction"]       = r.correction;
    j["refinement"]       = r.refinement;
    j["correction_ratio"] = r.accepted == 0 ? 0.0 : static_cast<double>(r.correction) / static_cast<double>(r.accepted);
    j["requests_issued"]  = r.requests_issued;
    j["configuration_failures"] = r.configuration_failures;
    j["failed_ids"]       = r.failed_ids;
    return j;
}

struct DatasetPaths {
    std::filesystem::path samples;
    std::filesystem::path rejects;
    std::filesystem::path report;

    explicit DatasetPaths(const std::filesystem::path & dir) :
        samples(dir / "samples.jsonl"),
        rejects(dir / "rejects.jsonl"),
        report(dir / "build_report.json") {}
};

namespace detail {

/// Drops a trailing partial line left by an interrupted writer and returns the ids already present.
inline std::set<std::string> recover_jsonl(const std::filesystem::path & path) {
    std::set<std::string> ids;
    if (!std::filesystem::exists(path)) {
        return ids;
    }
    auto text = read_file(path);
    auto last_nl = text.rfind('\n');
    const std::size_t keep = last_nl == std::string::npos ? 0 : last_nl + 1;
    if (keep != text.size()) {
        std::filesystem::resize_file(path, keep);
        text.resize(keep);
    }
    for_each_line(text, [&](std::size_t, std::string_view line) {
        try {
            auto j = json::parse(line);
            ids.insert(j.at("video_id").get<std::string>());
        } catch (const json::exception &) {
            // complete but unreadable line: leave it, the id will be regenerated
        }
    });
    return ids;
}

/// Serializes accepted/rejected writes; each record is one flushed line.
class Appender {
  public:
    Appender(const DatasetPaths & paths, bool append) {
        const auto mode = std::ios::binary | (append ? std::ios::app : std::ios::trunc);
        samples_.open(paths.samples, mode);
        rejects_.open(paths.rejects, mode);
        if (!samples_ || !rejects_) {
            throw InputError("cannot open output files under " + paths.samples.parent_path().string());
        }
    }

    void accept(const json & j) { write(samples_, j); }

    void reject(const json & j) { write(rejects_, j); }

  private:
    void write(std::ofstream & out, const json & j) {
        std::lock_guard lock(mu_);
        out << j.dump() << '\n';
        out.flush();
    }

    std::mutex    mu_;
    std::ofstream samples_;
    std::ofstream rejects_;
};

}  // namespace detail

/// Runs both generation stages for every episode not already present under `out_dir`.
/// Transport failures are counted and never abort the batch.
inline BuildReport build_dataset(const std::vector<Episode> & episodes, ChatClient & base, ChatClient & teacher,
                                 const std::filesystem::path & out_dir, const BuildOptions & opts) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir)) {
        throw InputError("cannot create output directory " + out_dir.string());
    }
    const DatasetPaths paths(out_dir);

    std::set<std::string> done;
    if (opts.resume) {
        done = detail::recover_jsonl(paths.samples);
        done.merge(detail::recover_jsonl(paths.rejects));
    }
    detail::Appender appender(paths, opts.resume);

    BuildReport report;
    report.total_episodes = episodes.size();
    std::vector<const Episode *> pending;
    for (const auto & ep : episodes) {
        if (done.count(ep.id) != 0) {
            ++report.skipped_existing;
        } else {
            pending.push_back(&ep);
        }
    }
    if (pending.size() > opts.stop_after) {
        pending.resize(opts.stop_after);
    }

    std::mutex report_mu;
    std::atomic<std::size_t> next{ 0 };
    auto worker = [&]() {
        for (;;) {
            const std::size_t idx = next.fetch_add(1);
            if (idx >= pending.size()) {
                return;
            }
            const Episode & ep = *pending[idx];
            std::size_t requests = 0;
            try {
                ++requests;
                auto initial = generate_initial(base, ep);
                if (initial.retries > 0) {
                    opts.log("episode " + ep.id + ": initial generation succeeded after " +
                             std::to_string(initial.retries) + " retries");
                }
                ++requests;
                auto refl = generate_reflection(teacher, ep, initial.text);
                if (refl.retries > 0) {
                    opts.log("episode " + ep.id + ": reflection generation succeeded after " +
                             std::to_string(refl.retries) + " retries");
                }
                const auto initial_answer =
                    extract_answer(parse_transcript(initial.text, { .recover = true }), AnswerChoice::Initial);
                const auto path = assign_path(initial_answer, ep.gt_answer);
                if (refl.reject_reason) {
                    json j;
                    j["schema_version"]    = kSampleSchemaVersion;
                    j["video_id"]          = ep.id;
                    j["diagnostic"]        = *refl.reject_reason;
                    j["path"]              = to_string(path);
                    j["initial_reasoning"] = initial.text;
                    j["teacher_output"]    = refl.raw_output;
                    appender.reject(j);
                    opts.log("episode " + ep.id + ": quarantined: " + *refl.reject_reason);
                    std::lock_guard lock(report_mu);
                    ++report.rejected;
                    report.requests_issued += requests;
                    continue;
                }
                ReflectionSample s;
                s.video_id          = ep.id;
                s.question          = ep.question;
                s.options           = ep.options;
                s.gt_answer         = ep.gt_answer;
                s.initial_reasoning = initial.text;
                s.initial_answer    = initial_answer;
                s.reflection        = refl.reflection;
                s.revised_reasoning = refl.revised_reasoning;
                s.final_answer      = *refl.final_answer;
                s.path              = path;
                s.provenance        = { initial.model, refl.model, initial.generated_at, refl.generated_at };
                appender.accept(to_json(s));
                std::lock_guard lock(report_mu);
                ++report.accepted;
                ++(path == ReflectionPath::Correction ? report.correction : report.refinement);
                report.requests_issued += requests;
            } catch (const std::exception & e) {
                const bool config = dynamic_cast<const EndpointConfigError *>(&e) != nullptr;
                opts.log("episode " + ep.id + ": failed: " + e.what());
                std::lock_guard lock(report_mu);
                ++report.failed;
                report.configuration_failures += config ? 1 : 0;
                report.failed_ids.push_back(ep.id);
                report.requests_issued += requests;
            }
        }
    };

    const std::size_t n_workers = std::max<std::size_t>(1, std::min(opts.max_concurrency, pending.size()));
    std::vector<std::thread> threads;
    threads.reserve(n_workers);
    for (std::size_t i = 0; i < n_workers; ++i) {
        threads.emplace_back(worker);
    }
    for (auto & t : threads) {
        t.join();
    }
    std::sort(report.failed_ids.begin(), report.failed_ids.end());
    write_file_atomic(paths.report, to_json(report).dump(2) + "\n");
    return report;
}

}  // namespace reflectrl
