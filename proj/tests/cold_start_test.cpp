// SPDX-License-Identifier: Apache-2.0
#include "support/fixtures.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace reflectrl;

namespace {

std::vector<SftSample> five_sample_corpus() {
    return {
        { "q1", "a one", "r one", "the man runs away" },
        { "q1", "a one", "r two", "the car burns fast" },
        { "q2", "a two", "r one", "the man burns the car" },
        { "q3", "a three", "r three", "nothing happens here" },
        { "q1", "a one", "r one", "the man runs fast" },
    };
}

/// Same question and first answer everywhere; the revision is determined by the reflection.
std::vector<SftSample> reflection_dependent_corpus() {
    std::vector<SftSample> out;
    for (int i = 0; i < 4; ++i) {
        out.push_back({ "what happened", "<answer>A</answer>", "focus on the flames", "the fire spreads from the car" });
        out.push_back({ "what happened", "<answer>A</answer>", "focus on the runner", "a burning man flees the lot" });
    }
    return out;
}

std::vector<SftSample> fixture_samples() {
    std::vector<SftSample> out;
    for (const auto & j : read_jsonl(reflectrl::testing::data_path("reflection_fixture.jsonl"))) {
        out.push_back(to_sft_sample(reflection_sample_from_json(j)));
    }
    return out;
}

}  // namespace

TEST(Nll, UniformModel) {
    TokenModel model({ "w", "x", "y", "z" });
    SftSample s{ "q", "a1", "r", "x y z" };
    EXPECT_NEAR(nll(model, s), 4.15888308335967185650339272875, 1e-12);
}

TEST(Nll, DeterministicModelIsZero) {
    TokenModel model({ "x", "y", "z" }, 0.0);
    SftSample s{ "q", "a1", "r", "x y z" };
    model.observe(s);
    EXPECT_EQ(nll(model, s), 0.0);

    SftSample other{ "q", "a1", "r", "y x" };
    EXPECT_THROW(nll(model, other), ModelStateError);
}

TEST(Nll, FittedBigramMatchesBruteForce) {
    auto data  = five_sample_corpus();
    auto model = TokenModel::from_dataset(data);
    EXPECT_EQ(model.vocab_size(), 11u);
    train_sft(model, data, 1);
    EXPECT_NEAR(nll(model, data[0]), 6.27081338328187256061098193404, 1e-12);
    EXPECT_NEAR(nll(model, data[3]), 5.37527840768416500243743207514, 1e-12);
}

TEST(Nll, ProbabilityRowsSumToOne) {
    auto data  = five_sample_corpus();
    auto model = TokenModel::from_dataset(data, 0.5);
    train_sft(model, data, 2);
    for (const auto & s : data) {
        const auto b = model.bucket(s);
        for (std::size_t prev = 0; prev < model.vocab_size(); ++prev) {
            double sum = 0.0;
            for (std::size_t next = 0; next < model.vocab_size(); ++next) {
                ASSERT_GT(model.prob(b, prev, next), 0.0);
                sum += model.prob(b, prev, next);
            }
            ASSERT_NEAR(sum, 1.0, 1e-12);
        }
    }
}

TEST(TrainSft, ZeroEpochs) {
    auto data  = five_sample_corpus();
    auto model = TokenModel::from_dataset(data);
    const auto curve = train_sft(model, data, 0);
    ASSERT_EQ(curve.size(), 1u);
    EXPECT_NEAR(curve[0], mean_nll(TokenModel::from_dataset(data), data), 0.0);
}

TEST(TrainSft, RepeatedSampleApproachesFloor) {
    std::vector<SftSample> data{ { "q", "a", "r", "alpha beta gamma delta" } };
    auto model = TokenModel::from_dataset(data);
    const auto curve = train_sft(model, data, 200);
    for (std::size_t i = 1; i < curve.size(); ++i) {
        ASSERT_LT(curve[i], curve[i - 1]);
    }
    EXPECT_LT(curve.back(), 0.1);
}

TEST(TrainSft, DisjointSamplesBothImprove) {
    std::vector<SftSample> data{ { "q1", "a", "r1", "red green blue" }, { "q2", "a", "r2", "one two three four" } };
    auto model = TokenModel::from_dataset(data);
    std::vector<double> before{ nll(model, data[0]), nll(model, data[1]) };
    for (int e = 0; e < 5; ++e) {
        train_sft(model, data, 1);
        std::vector<double> after{ nll(model, data[0]), nll(model, data[1]) };
        EXPECT_LT(after[0], before[0]);
        EXPECT_LT(after[1], before[1]);
        before = after;
    }
}

TEST(TrainSft, ReproducibleAndErrors) {
    auto data = five_sample_corpus();
    auto a = TokenModel::from_dataset(data), b = TokenModel::from_dataset(data);
    EXPECT_EQ(train_sft(a, data, 4), train_sft(b, data, 4));
    EXPECT_THROW(train_sft(a, {}, 1), InputError);
    EXPECT_THROW(train_sft(a, data, -1), ConfigError);
}

TEST(TrainSft, ReflectionConditioningHelps) {
    auto data = reflection_dependent_corpus();
    auto with    = TokenModel::from_dataset(data, 1.0, true);
    auto without = TokenModel::from_dataset(data, 1.0, false);
    ASSERT_NE(with.bucket(data[0]), with.bucket(data[1]));
    ASSERT_EQ(without.bucket(data[0]), without.bucket(data[1]));
    const auto cw = train_sft(with, data, 3);
    const auto co = train_sft(without, data, 3);
    EXPECT_LT(cw.back(), co.back());
}

TEST(TrainSft, BundledFixtureLossDecreases) {
    const auto data = fixture_samples();
    ASSERT_EQ(data.size(), 20u);
    auto model = TokenModel::from_dataset(data);
    const auto curve = train_sft(model, data, 3);
    EXPECT_LT(curve.back(), curve.front());
    EXPECT_EQ(loss_curve_csv(curve).substr(0, 15), "epoch,mean_nll\n");
}
