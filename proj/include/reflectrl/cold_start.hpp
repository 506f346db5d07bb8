// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reflection-conditioned SFT objective on a count-based token model.
//
// The target is the revised reasoning a2, predicted token by token. The model conditions on the
// previous a2 token and on a bucket hashed from (question, initial reasoning, tagged reflection).

#include "common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace reflectrl {

struct SftSample {
    std::string question;
    std::string initial;     // a1
    std::string reflection;  // r
    std::string revised;     // a2

    void validate() const {
        if (trim(revised).empty()) {
            throw InputError("sft sample: revised reasoning must be non-empty");
        }
    }
};

/// A zero-probability target was hit; the model needs smoothing or more data.
class ModelStateError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kConditionBuckets = 256;
inline constexpr const char *  kUnknownToken     = "<unk>";
inline constexpr const char *  kReflectionPlaceholder = "<reflection-placeholder>";

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string conditioning_text(const SftSample & s, bool include_reflection) {
    return s.question + "\n" + s.initial + "\n<reflection>" + (include_reflection ? s.reflection : kReflectionPlaceholder) +
           "</reflection>";
}

class TokenModel {
  public:
    /// `vocabulary` is the set of predictable tokens; if it contains "<unk>", unknown tokens map to it.
    explicit TokenModel(std::vector<std::string> vocabulary, double smoothing = 1.0, bool condition_on_reflection = true) :
        vocab_(std::move(vocabulary)),
        smoothing_(smoothing),
        condition_on_reflection_(condition_on_reflection) {
        if (vocab_.empty()) {
            throw ConfigError("token model: empty vocabulary");
        }
        if (!(smoothing_ >= 0.0) || !std::isfinite(smoothing_)) {
            throw ConfigError("token model: smoothing must be >= 0");
        }
        for (std::size_t i = 0; i < vocab_.size(); ++i) {
            if (!index_.emplace(vocab_[i], i).second) {
                throw ConfigError("token model: duplicate vocabulary entry '" + vocab_[i] + "'");
            }
        }
        auto unk = index_.find(kUnknownToken);
        unk_ = unk == index_.end() ? npos : unk->second;
    }

    /// Sorted vocabulary of every a2 token in `data`, plus "<unk>".
    static TokenModel from_dataset(const std::vector<SftSample> & data, double smoothing = 1.0,
                                   bool condition_on_reflection = true) {
        std::set<std::string> seen{ kUnknownToken };
        for (const auto & s : data) {
            for (auto & tok : tokenize(s.revised)) {
                seen.insert(std::move(tok));
            }
        }
        return TokenModel({ seen.begin(), seen.end() }, smoothing, condition_on_reflection);
    }

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    const std::vector<std::string> & vocabulary() const { return vocab_; }

    std::size_t vocab_size() const { return vocab_.size(); }

    double smoothing() const { return smoothing_; }

    std::uint32_t bucket(const SftSample & s) const {
        return static_cast<std::uint32_t>(fnv1a64(conditioning_text(s, condition_on_reflection_)) % kConditionBuckets);
    }

    std::size_t token_id(const std::string & tok) const {
        auto it = index_.find(tok);
        return it == index_.end() ? unk_ : it->second;
    }

    /// p(next | prev, bucket); prev == npos is the sequence start.
    double prob(std::uint32_t bucket, std::size_t prev, std::size_t next) const {
        if (next >= vocab_.size()) {
            return 0.0;
        }
        const double v = static_cast<double>(vocab_.size());
        auto it = rows_.find(key(bucket, prev));
        const double count = it == rows_.end() ? 0.0 : it->second.counts[next];
        const double total = it == rows_.end() ? 0.0 : it->second.total;
        const double denom = total + smoothing_ * v;
        if (denom <= 0.0) {
            return 0.0;
        }
        return (count + smoothing_) / denom;
    }

    /// Adds one count for each a2 transition of `s`.
    void observe(const SftSample & s) {
        const auto b = bucket(s);
        std::size_t prev = npos;
        for (const auto & tok : tokenize(s.revised)) {
            const auto id = token_id(tok);
            if (id == npos) {
                throw ModelStateError("token model: '" + tok + "' is outside the vocabulary");
            }
            auto & row = rows_[key(b, prev)];
            if (row.counts.empty()) {
                row.counts.assign(vocab_.size(), 0.0);
            }
            row.counts[id] += 1.0;
            row.total += 1.0;
            prev = id;
        }
    }

  private:
    struct Row {
        std::vector<double> counts;
        double              total = 0.0;
    };

    static std::uint64_t key(std::uint32_t bucket, std::size_t prev) {
        return (static_cast<std::uint64_t>(bucket) << 32) | (prev == npos ? 0xffffffffULL : static_cast<std::uint64_t>(prev));
    }

    std::vector<std::string>                     vocab_;
    std::unordered_map<std::string, std::size_t> index_;
    std::size_t                                  unk_ = npos;
    double                                       smoothing_;
    bool                                         condition_on_reflection_;
    std::map<std::uint64_t, Row>                 rows_;
};

/// -sum_t log p(a2_t | a2_{t-1}, bucket(q, a1, <reflection> r </reflection>)).
inline double nll(const TokenModel & model, const SftSample & sample) {
    const auto b = model.bucket(sample);
    std::size_t prev = TokenModel::npos;
    double total = 0.0;
    for (const auto & tok : tokenize(sample.revised)) {
        const auto id = model.token_id(tok);
        const double p = id == TokenModel::npos ? 0.0 : model.prob(b, prev, id);
        if (!(p > 0.0)) {
            throw ModelStateError("token model assigns zero probability to '" + tok + "'");
        }
        total -= std::log(p);
        prev = id;
    }
    return total;
}

inline double mean_nll(const TokenModel & model, const std::vector<SftSample> & data) {
    if (data.empty()) {
        throw InputError("mean_nll: empty dataset");
    }
    double sum = 0.0;
    for (const auto & s : data) {
        sum += nll(model, s);
    }
    return sum / static_cast<double>(data.size());
}

/// Count-based fitting: each epoch adds one pass of a2 transition counts in dataset order.
/// Returns the mean NLL before training followed by one value per epoch.
inline std::vector<double> train_sft(TokenModel & model, const std::vector<SftSample> & data, int epochs) {
    if (data.empty()) {
        throw InputError("train_sft: empty dataset");
    }
    if (epochs < 0) {
        throw ConfigError("train_sft: epochs must be >= 0");
    }
    for (const auto & s : data) {
        s.validate();
    }
    std::vector<double> curve{ mean_nll(model, data) };
    for (int e = 0; e < epochs; ++e) {
        for (const auto & s : data) {
            model.observe(s);
        }
        curve.push_back(mean_nll(model, data));
    }
    return curve;
}

inline std::string loss_curve_csv(const std::vector<double> & curve) {
    std::string out = "epoch,mean_nll\n";
    for (std::size_t i = 0; i < curve.size(); ++i) {
        out += std::to_string(i) + "," + format_double(curve[i]) + "\n";
    }
    return out;
}

}  // namespace reflectrl
