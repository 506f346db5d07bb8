// SPDX-License-Identifier: Apache-2.0
#include "support/fixtures.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace reflectrl;
using reflectrl::testing::five_part;
using reflectrl::testing::make_episode;

namespace {

constexpr double kExpMinusOne = 0.367879441171442321595523770161;

}  // namespace

TEST(RewardConstants, ExactValues) {
    FormatReport ok;
    ok.layout_ok = true;
    EXPECT_EQ(format_reward(ok), 0.5);
    EXPECT_EQ(format_reward(FormatReport{}), 0.0);

    EXPECT_EQ(accuracy_reward(AnswerLetter::B, AnswerLetter::B), 0.5);
    EXPECT_EQ(accuracy_reward(AnswerLetter::A, AnswerLetter::B), 0.0);
    EXPECT_EQ(accuracy_reward(std::nullopt, AnswerLetter::B), 0.0);

    EXPECT_EQ(effectiveness(true, true), 0.25);
    EXPECT_EQ(effectiveness(false, true), 0.5);
    EXPECT_EQ(effectiveness(false, false), 0.0);
    EXPECT_EQ(effectiveness(true, false), -0.25);

    const RewardConfig cfg;
    EXPECT_EQ(cfg.reflect_tag_bonus, 0.25);
    EXPECT_EQ(tiou_reward(make_episode("n", AnswerLetter::A, false), std::nullopt, false, true), 1.0);
}

TEST(RewardConstants, EmptyTranscriptReportFailsLayout) {
    EXPECT_EQ(format_reward(validate_format(parse_transcript(""), FormatSchema::RftFull)), 0.0);
}

TEST(Brevity, KnownPoints) {
    EXPECT_EQ(brevity_term(320, 320, 640), 1.0);
    EXPECT_NEAR(brevity_term(640, 320, 640), kExpMinusOne, 1e-12);
    EXPECT_NEAR(brevity_term(0, 320, 640), kExpMinusOne, 1e-12);
    EXPECT_THROW(brevity_term(10, 640, 640), ConfigError);
    EXPECT_THROW(brevity_term(10, 0, 640), ConfigError);
}

TEST(Brevity, UnimodalSweep) {
    double prev = 0.0;
    for (std::int64_t len = 0; len <= 1280; ++len) {
        const double v = brevity_term(len, 320, 640);
        ASSERT_GT(v, 0.0);
        ASSERT_LE(v, 1.0);
        if (len <= 320) {
            ASSERT_GT(v, prev) << len;
        } else {
            ASSERT_LT(v, prev) << len;
        }
        prev = v;
    }
}

TEST(ReflectionReward, Examples) {
    RewardConfig cfg;
    EXPECT_EQ(reflection_reward(false, true, true, 320, cfg), 1.0);
    EXPECT_EQ(reflection_reward(true, false, false, 320, cfg), 0.0);
    cfg.alpha_brevity = 0.0;
    EXPECT_EQ(reflection_reward(false, false, true, 640, cfg), 0.25);
}

TEST(ReflectionReward, WrongToCorrectNeverBelowCorrectToWrong) {
    const RewardConfig cfg;
    for (bool tag : { false, true }) {
        for (std::int64_t len : { 0, 100, 320, 640, 2000 }) {
            EXPECT_GE(reflection_reward(false, true, tag, len, cfg), reflection_reward(true, false, tag, len, cfg));
        }
    }
}

TEST(TemporalIou, Examples) {
    EXPECT_NEAR(temporal_iou({ 0, 10 }, { 5, 15 }), 1.0 / 3.0, 1e-15);
    EXPECT_EQ(temporal_iou({ 2, 4 }, { 2, 4 }), 1.0);
    EXPECT_EQ(temporal_iou({ 0, 1 }, { 2, 3 }), 0.0);
    EXPECT_EQ(temporal_iou({ 3, 3 }, { 3, 3 }), 1.0);
    EXPECT_EQ(temporal_iou({ 3, 3 }, { 2, 4 }), 0.0);
}

TEST(TemporalIou, Properties) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 100.0);
    for (int i = 0; i < 5000; ++i) {
        double a0 = u(rng), a1 = u(rng), b0 = u(rng), b1 = u(rng);
        TimeInterval a{ std::min(a0, a1), std::max(a0, a1) };
        TimeInterval b{ std::min(b0, b1), std::max(b0, b1) };
        const double ab = temporal_iou(a, b);
        ASSERT_GE(ab, 0.0);
        ASSERT_LE(ab, 1.0);
        ASSERT_EQ(ab, temporal_iou(b, a));
        ASSERT_EQ(temporal_iou(a, a), 1.0);
        const double bound = std::min(a.length(), b.length()) / std::max(a.length(), b.length());
        ASSERT_LE(ab, bound + 1e-12);
        if (!(a == b)) {
            ASSERT_LT(ab, 1.0);
        }
    }
}

TEST(TiouReward, Cases) {
    auto anomaly = make_episode("a", AnswerLetter::B, true, TimeInterval{ 5, 15 });
    EXPECT_NEAR(tiou_reward(anomaly, TimeInterval{ 0, 10 }, false, true), 1.0 / 3.0, 1e-15);
    EXPECT_EQ(tiou_reward(anomaly, TimeInterval{ 5, 15 }, false, false), 0.0);
    EXPECT_EQ(tiou_reward(anomaly, std::nullopt, false, true), 0.0);

    auto normal = make_episode("n", AnswerLetter::A, false);
    EXPECT_EQ(tiou_reward(normal, std::nullopt, false, true), 1.0);
    EXPECT_EQ(tiou_reward(normal, std::nullopt, false, false), 0.0);
}

TEST(TiouReward, GroundingEpisodesUseNormalJudgment) {
    auto normal = make_episode("n", AnswerLetter::A, false);
    normal.task = TaskKind::Grounding;
    EXPECT_EQ(tiou_reward(normal, std::nullopt, true, false), 1.0);
    EXPECT_EQ(tiou_reward(normal, std::nullopt, false, true), 0.0);

    auto anomaly = make_episode("a", AnswerLetter::B, true, TimeInterval{ 2, 4 });
    anomaly.task = TaskKind::Grounding;
    EXPECT_EQ(tiou_reward(anomaly, TimeInterval{ 2, 4 }, false, false), 1.0);
    EXPECT_EQ(tiou_reward(anomaly, std::nullopt, true, true), 0.0);

    EXPECT_TRUE(asserts_normal("There is no anomaly in this clip."));
    EXPECT_TRUE(asserts_normal("The video looks Normal."));
    EXPECT_FALSE(asserts_normal("An abnormal fight breaks out."));
}

TEST(TotalReward, WrongToCorrectExactInterval) {
    const RewardConfig cfg;
    auto ep = make_episode("a", AnswerLetter::B, true, TimeInterval{ 2, 4 });
    auto t  = parse_transcript(five_part('A', 'B', 320, "the fight spans 2s-4s"));
    ASSERT_EQ(count_tokens(t.raw), 320u);
    auto b = total_reward(t, ep, cfg);
    EXPECT_EQ(b.r_format, 0.5);
    EXPECT_EQ(b.r_accuracy, 0.0);
    EXPECT_EQ(b.r_task, 0.5);
    EXPECT_EQ(b.i_eff, 0.5);
    EXPECT_EQ(b.i_ref, 0.25);
    EXPECT_EQ(b.f_len_value, 1.0);
    EXPECT_EQ(b.r_reflection, 1.0);
    EXPECT_EQ(b.r_tiou, 1.0);
    EXPECT_EQ(b.r_total, 2.5);
}

TEST(TotalReward, CorrectToCorrectExactInterval) {
    const RewardConfig cfg;
    auto ep = make_episode("a", AnswerLetter::B, true, TimeInterval{ 2, 4 });
    auto b  = total_reward(parse_transcript(five_part('B', 'B', 320, "the fight spans 2s-4s")), ep, cfg);
    EXPECT_EQ(b.r_task, 1.0);
    EXPECT_EQ(b.r_reflection, 0.75);
    EXPECT_EQ(b.r_tiou, 1.0);
    EXPECT_EQ(b.r_total, 2.75);
}

TEST(TotalReward, EmptyTranscriptKeepsBrevityFloor) {
    const RewardConfig cfg;
    for (bool anomaly : { false, true }) {
        auto ep = anomaly ? make_episode("a", AnswerLetter::B, true, TimeInterval{ 2, 4 })
                          : make_episode("n", AnswerLetter::B, false);
        auto b = total_reward(parse_transcript(""), ep, cfg);
        EXPECT_EQ(b.r_task, 0.0);
        EXPECT_EQ(b.i_eff, 0.0);
        EXPECT_EQ(b.i_ref, 0.0);
        EXPECT_EQ(b.r_tiou, 0.0);
        EXPECT_NEAR(b.r_total, 0.25 * kExpMinusOne, 1e-15);
    }
}

TEST(TotalReward, InitialIntervalIsIgnored) {
    auto ep = make_episode("a", AnswerLetter::B, true, TimeInterval{ 5.4, 10.6 });
    auto b  = total_reward(parse_transcript(reflectrl::testing::kGroundingCorrection), ep, RewardConfig{});
    EXPECT_EQ(b.r_tiou, 1.0);
}

TEST(TotalReward, GammaZeroDropsTiou) {
    RewardConfig cfg;
    cfg.gamma_total = 0.0;
    auto ep = make_episode("a", AnswerLetter::B, true, TimeInterval{ 2, 4 });
    auto b  = total_reward(parse_transcript(five_part('B', 'B', 320, "2s-4s")), ep, cfg);
    EXPECT_EQ(b.r_total, b.r_task + b.r_reflection);
}

TEST(TotalReward, DecompositionIsExact) {
    std::mt19937_64 rng(3);
    RewardConfig cfg;
    cfg.alpha_total   = 0.7;
    cfg.beta_total    = 1.3;
    cfg.gamma_total   = 0.45;
    cfg.alpha_brevity = 0.11;
    auto ep = make_episode("a", AnswerLetter::C, true, TimeInterval{ 1, 9 });
    for (int i = 0; i < 500; ++i) {
        auto b = total_reward(parse_transcript(reflectrl::testing::random_transcript(rng)), ep, cfg);
        ASSERT_EQ(b.r_task, b.r_format + b.r_accuracy);
        ASSERT_EQ(b.r_reflection, b.i_eff + b.i_ref + cfg.alpha_brevity * b.f_len_value);
        ASSERT_EQ(b.r_total, compose_total(cfg, b));
        ASSERT_GE(b.r_tiou, 0.0);
        ASSERT_LE(b.r_tiou, 1.0);
        ASSERT_GT(b.f_len_value, 0.0);
        ASSERT_LE(b.f_len_value, 1.0);
    }
}

TEST(RewardConfigText, RoundTripAndErrors) {
    RewardConfig cfg;
    cfg.alpha_total = 0.3;
    cfg.t_target    = 100;
    cfg.t_max       = 150;
    const auto back = parse_reward_config(to_config_text(cfg));
    EXPECT_EQ(to_config_text(back), to_config_text(cfg));
    EXPECT_EQ(back.alpha_total, 0.3);

    auto parsed = parse_reward_config("# weights\nbeta_total = 2\n\ngamma_total=0\n");
    EXPECT_EQ(parsed.beta_total, 2.0);
    EXPECT_EQ(parsed.gamma_total, 0.0);
    EXPECT_EQ(parsed.alpha_total, 1.0);

    EXPECT_THROW(parse_reward_config("bogus = 1\n"), ConfigError);
    EXPECT_THROW(parse_reward_config("t_max = 100\n"), ConfigError);
    EXPECT_THROW(parse_reward_config("alpha_total = nan\n"), ConfigError);
}

TEST(GroupAdvantages, Examples) {
    auto a = group_advantages(std::vector<double>{ 0, 1 });
    EXPECT_EQ(a, (std::vector<double>{ -1, 1 }));
    EXPECT_EQ(group_advantages(std::vector<double>{ 2, 2, 2, 2 }), std::vector<double>(4, 0.0));

    a = group_advantages(std::vector<double>{ 1, 2, 3, 4 });
    const double big = 1.34164078649987381784550420123879, small = 0.447213595499957939281834733746296;
    EXPECT_NEAR(a[0], -big, 1e-15);
    EXPECT_NEAR(a[1], -small, 1e-15);
    EXPECT_NEAR(a[2], small, 1e-15);
    EXPECT_NEAR(a[3], big, 1e-15);

    EXPECT_THROW(group_advantages(std::vector<double>{ 1 }), std::invalid_argument);
}

TEST(GroupAdvantages, NormalizedOnRandomGroups) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> r(4);
        for (auto & x : r) {
            x = u(rng);
        }
        const auto a = group_advantages(r);
        double mean = 0.0;
        for (double x : a) {
            mean += x;
        }
        mean /= 4.0;
        ASSERT_LT(std::abs(mean), 1e-9);
        ASSERT_NEAR(population_std(a), 1.0, 1e-9);
    }
}
