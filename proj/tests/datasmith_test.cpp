// SPDX-License-Identifier: Apache-2.0
#include "support/fixtures.hpp"
#include "support/mock_chat.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

using namespace reflectrl;
using reflectrl::testing::mock_endpoint;
using reflectrl::testing::MockChatServer;
using reflectrl::testing::MockReply;
using reflectrl::testing::scripted_episodes;
using reflectrl::testing::ScriptedEndpoints;

namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string & name) {
    auto dir = fs::temp_directory_path() / ("reflectrl_datasmith_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    return dir;
}

BuildOptions quiet(std::size_t concurrency = 4, bool resume = false) {
    BuildOptions o;
    o.max_concurrency = concurrency;
    o.resume          = resume;
    o.log             = [](std::string_view) {};
    return o;
}

/// Accepted samples keyed by id with wall-clock provenance removed.
std::map<std::string, std::string> accepted_set(const fs::path & dir) {
    std::map<std::string, std::string> out;
    for (const auto & j : read_jsonl(DatasetPaths(dir).samples)) {
        auto s = reflection_sample_from_json(j);
        s.provenance.initial_generated_at.clear();
        s.provenance.reflection_generated_at.clear();
        EXPECT_TRUE(out.emplace(s.video_id, to_json(s).dump()).second) << "duplicate id " << s.video_id;
    }
    return out;
}

struct Rig {
    ScriptedEndpoints script;
    MockChatServer    server{ [this](const std::string & m, const std::string & u) { return script(m, u); } };
    HttpChatClient    base{ mock_endpoint(server, "mock-base") };
    HttpChatClient    teacher{ mock_endpoint(server, "mock-teacher") };
};

}  // namespace

TEST(Paths, AssignedFromInitialAnswerOnly) {
    EXPECT_EQ(assign_path(AnswerLetter::A, AnswerLetter::B), ReflectionPath::Correction);
    EXPECT_EQ(assign_path(AnswerLetter::B, AnswerLetter::B), ReflectionPath::Refinement);
    EXPECT_EQ(assign_path(std::nullopt, AnswerLetter::B), ReflectionPath::Correction);
}

TEST(TeacherOutput, Validation) {
    auto ok = parse_teacher_output("<reflection>r</reflection><think>t</think><answer>B</answer>", AnswerLetter::B);
    EXPECT_FALSE(ok.reject_reason);
    EXPECT_EQ(ok.reflection, "r");
    EXPECT_EQ(ok.revised_reasoning, "t");

    EXPECT_EQ(parse_teacher_output("<think>t</think><answer>B</answer>", AnswerLetter::B).reject_reason,
              "missing reflection");
    EXPECT_EQ(parse_teacher_output("<reflection>r</reflection><answer>B</answer>", AnswerLetter::B).reject_reason,
              "missing revised think");
    EXPECT_EQ(parse_teacher_output("<reflection>r</reflection><think>t</think>", AnswerLetter::B).reject_reason,
              "missing final answer");
    EXPECT_EQ(parse_teacher_output("<reflection>r</reflection><think>t</think><answer>C</answer>", AnswerLetter::B)
                  .reject_reason,
              "final answer C disagrees with ground truth B");
    // A think that precedes the reflection is not a revision.
    EXPECT_EQ(parse_teacher_output("<think>t</think><reflection>r</reflection><answer>B</answer>", AnswerLetter::B)
                  .reject_reason,
              "missing revised think");
}

TEST(SampleJson, RoundTripAndPathCheck) {
    ReflectionSample s;
    s.video_id          = "v1";
    s.question          = "q";
    s.options           = { "a", "b", "c", "d" };
    s.gt_answer         = AnswerLetter::B;
    s.initial_reasoning = "<think>x</think><answer>A</answer>";
    s.initial_answer    = AnswerLetter::A;
    s.reflection        = "r";
    s.revised_reasoning = "t";
    s.final_answer      = AnswerLetter::B;
    s.path              = ReflectionPath::Correction;
    s.provenance        = { "base", "teacher", "t0", "t1" };
    EXPECT_EQ(reflection_sample_from_json(json::parse(to_json(s).dump())), s);

    auto j    = to_json(s);
    j["path"] = "refinement";
    EXPECT_THROW(reflection_sample_from_json(j), InputError);
}

TEST(BuildDataset, CorrectionRefinementSplit) {
    Rig rig;
    rig.script.wrong    = { "ep01", "ep04", "ep08" };
    rig.script.delay_ms = 30;
    const auto dir = fresh_dir("split");
    const auto report = build_dataset(scripted_episodes(10), rig.base, rig.teacher, dir, quiet(4));
    EXPECT_EQ(report.accepted, 10u);
    EXPECT_EQ(report.correction, 3u);
    EXPECT_EQ(report.refinement, 7u);
    EXPECT_EQ(report.rejected, 0u);
    EXPECT_EQ(report.failed, 0u);
    EXPECT_EQ(report.requests_issued, 20u);
    EXPECT_EQ(rig.server.requests(), 20u);
    EXPECT_LE(rig.server.high_water(), 4u);
    EXPECT_GE(rig.server.high_water(), 2u);

    const auto lines = read_jsonl(DatasetPaths(dir).samples);
    ASSERT_EQ(lines.size(), 10u);
    for (const auto & j : lines) {
        const auto s = reflection_sample_from_json(j);
        EXPECT_EQ(to_json(s).dump(), j.dump());
        EXPECT_EQ(s.final_answer, s.gt_answer);
        EXPECT_EQ(s.provenance.base_model, "mock-base");
        EXPECT_EQ(s.provenance.teacher_model, "mock-teacher");
    }
    const auto saved = json::parse(read_file(DatasetPaths(dir).report));
    EXPECT_EQ(saved.at("accepted"), 10);
    EXPECT_DOUBLE_EQ(saved.at("correction_ratio").get<double>(), 0.3);

    // Second run over the same output issues nothing.
    rig.server.reset_counters();
    const auto again = build_dataset(scripted_episodes(10), rig.base, rig.teacher, dir, quiet(4, true));
    EXPECT_EQ(again.requests_issued, 0u);
    EXPECT_EQ(again.skipped_existing, 10u);
    EXPECT_EQ(rig.server.requests(), 0u);
    EXPECT_EQ(read_jsonl(DatasetPaths(dir).samples).size(), 10u);
    fs::remove_all(dir);
}

TEST(BuildDataset, ConcurrencyBoundHolds) {
    for (std::size_t limit : { 1u, 2u, 3u }) {
        Rig rig;
        rig.script.delay_ms = 20;
        const auto dir = fresh_dir("bound" + std::to_string(limit));
        build_dataset(scripted_episodes(8), rig.base, rig.teacher, dir, quiet(limit));
        EXPECT_LE(rig.server.high_water(), limit);
        EXPECT_EQ(rig.server.high_water(), limit);
        fs::remove_all(dir);
    }
}

TEST(BuildDataset, KillAndResumeMatchesUninterrupted) {
    const auto episodes = scripted_episodes(10);
    Rig rig;
    rig.script.wrong = { "ep02", "ep03", "ep09" };

    const auto full = fresh_dir("full");
    build_dataset(episodes, rig.base, rig.teacher, full, quiet(3));

    const auto part = fresh_dir("part");
    auto opts       = quiet(2);
    opts.stop_after = 4;
    const auto first = build_dataset(episodes, rig.base, rig.teacher, part, opts);
    EXPECT_EQ(first.accepted, 4u);
    {
        // writer died mid-line
        std::ofstream out(DatasetPaths(part).samples, std::ios::app | std::ios::binary);
        out << R"({"schema_version":1,"video_id":"ep09","question":"Cl)";
    }
    const auto second = build_dataset(episodes, rig.base, rig.teacher, part, quiet(3, true));
    EXPECT_EQ(second.skipped_existing, 4u);
    EXPECT_EQ(second.accepted, 6u);
    EXPECT_EQ(accepted_set(part), accepted_set(full));
    fs::remove_all(full);
    fs::remove_all(part);
}

TEST(BuildDataset, MalformedTeacherIsQuarantined) {
    Rig rig;
    rig.script.malformed = { "ep05" };
    const auto dir = fresh_dir("malformed");
    const auto report = build_dataset(scripted_episodes(10), rig.base, rig.teacher, dir, quiet(4));
    EXPECT_EQ(report.accepted, 9u);
    EXPECT_EQ(report.rejected, 1u);
    const auto rejects = read_jsonl(DatasetPaths(dir).rejects);
    ASSERT_EQ(rejects.size(), 1u);
    EXPECT_EQ(rejects[0].at("video_id"), "ep05");
    EXPECT_EQ(rejects[0].at("diagnostic"), "missing revised think");

    // A quarantined id is not regenerated on resume.
    rig.server.reset_counters();
    build_dataset(scripted_episodes(10), rig.base, rig.teacher, dir, quiet(4, true));
    EXPECT_EQ(rig.server.requests(), 0u);
    fs::remove_all(dir);
}

TEST(BuildDataset, TransientErrorsAreRetried) {
    Rig rig;
    rig.script.fail_first = { { "ep00", 2 } };
    std::vector<std::string> log;
    std::mutex mu;
    auto opts = quiet(1);
    opts.log  = [&](std::string_view line) {
        std::lock_guard lock(mu);
        log.emplace_back(line);
    };
    const auto dir = fresh_dir("retry");
    const auto report = build_dataset(scripted_episodes(2), rig.base, rig.teacher, dir, opts);
    EXPECT_EQ(report.accepted, 2u);
    EXPECT_EQ(rig.server.requests(), 6u);
    ASSERT_FALSE(log.empty());
    EXPECT_EQ(log[0], "episode ep00: initial generation succeeded after 2 retries");
    fs::remove_all(dir);
}

TEST(BuildDataset, TimeoutFailsOneEpisodeOnly) {
    Rig rig;
    rig.script.slow    = { "ep01" };
    rig.script.slow_ms = 600;
    auto cfg            = mock_endpoint(rig.server, "mock-base");
    cfg.request_timeout = 0.15;
    cfg.max_retries     = 1;
    HttpChatClient base(cfg);
    const auto dir = fresh_dir("timeout");
    const auto report = build_dataset(scripted_episodes(4), base, rig.teacher, dir, quiet(2));
    EXPECT_EQ(report.accepted, 3u);
    EXPECT_EQ(report.failed, 1u);
    EXPECT_EQ(report.configuration_failures, 0u);
    EXPECT_EQ(report.failed_ids, std::vector<std::string>{ "ep01" });
    fs::remove_all(dir);
}

TEST(BuildDataset, ClientErrorsAreNotRetried) {
    MockChatServer server([](const std::string &, const std::string &) { return MockReply{ 401, "bad key", 0 }; });
    HttpChatClient base(mock_endpoint(server, "mock-base"));
    HttpChatClient teacher(mock_endpoint(server, "mock-teacher"));
    const auto dir = fresh_dir("unauthorized");
    const auto report = build_dataset(scripted_episodes(3), base, teacher, dir, quiet(1));
    EXPECT_EQ(report.failed, 3u);
    EXPECT_EQ(report.configuration_failures, 3u);
    EXPECT_EQ(server.requests(), 3u);
    fs::remove_all(dir);
}

TEST(ChatClient, UnreachableEndpoint) {
    EndpointConfig cfg;
    cfg.base_url           = "http://127.0.0.1:1/v1";
    cfg.model_name         = "m";
    cfg.max_retries        = 2;
    cfg.request_timeout    = 0.5;
    cfg.backoff_initial_ms = 1;
    cfg.backoff_max_ms     = 2;
    HttpChatClient client(cfg);
    try {
        client.complete({ { "user", "hi" } });
        FAIL() << "expected TransportError";
    } catch (const EndpointConfigError &) {
        FAIL() << "connection failure must not be a configuration error";
    } catch (const TransportError & e) {
        EXPECT_NE(std::string(e.what()).find("gave up after 2 retries"), std::string::npos);
    }
}

TEST(ChatClient, RequestShapeAndKey) {
    std::string seen_auth;
    httplib::Server svr;
    svr.Post("/api/chat/completions", [&](const httplib::Request & req, httplib::Response & res) {
        seen_auth = req.get_header_value("Authorization");
        const auto j = json::parse(req.body);
        EXPECT_EQ(j.at("model"), "m1");
        EXPECT_EQ(j.at("messages").size(), 2u);
        EXPECT_DOUBLE_EQ(j.at("temperature").get<double>(), 0.3);
        res.set_content(R"({"choices":[{"message":{"content":"hello"}}]})", "application/json");
    });
    const int port = svr.bind_to_any_port("127.0.0.1");
    std::thread th([&] { svr.listen_after_bind(); });
    svr.wait_until_ready();

    ::setenv("REFLECTRL_TEST_KEY", "sk-test", 1);
    const auto cfg = endpoint_config_from_json(
        json{ { "base_url", "http://127.0.0.1:" + std::to_string(port) + "/api/" }, { "model_name", "m1" },
              { "api_key_env", "REFLECTRL_TEST_KEY" } },
        0.3);
    HttpChatClient client(cfg);
    EXPECT_EQ(client.complete({ { "system", "s" }, { "user", "u" } }).content, "hello");
    EXPECT_EQ(seen_auth, "Bearer sk-test");
    svr.stop();
    th.join();

    EXPECT_THROW(endpoint_config_from_json(json{ { "model_name", "m" } }, 1.0), ConfigError);
    EXPECT_THROW(HttpChatClient(EndpointConfig{ "ftp://x", "m" }), ConfigError);
}

TEST(SftConversion, UsesRevisionAsTarget) {
    const auto samples = read_jsonl(reflectrl::testing::data_path("reflection_fixture.jsonl"));
    const auto s   = reflection_sample_from_json(samples.at(0));
    const auto sft = to_sft_sample(s);
    EXPECT_EQ(sft.reflection, s.reflection);
    EXPECT_EQ(sft.initial, s.initial_reasoning);
    EXPECT_EQ(sft.revised.rfind(s.revised_reasoning, 0), 0u);
    EXPECT_NE(sft.question.find("D. "), std::string::npos);
}
