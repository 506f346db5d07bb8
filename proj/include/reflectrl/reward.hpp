// SPDX-License-Identifier: Apache-2.0
#pragma once

// Composite reward for reflection-aware RL:
//
//   total      = alpha_total * task + beta_total * reflection + gamma_total * tiou
//   task       = format + accuracy
//   reflection = effectiveness + tag + alpha_brevity * exp(-|L - T_target| / (T_max - T_target))

#include "common.hpp"
#include "episode.hpp"
#include "transcript.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <vector>

namespace reflectrl {

struct RewardConfig {
    double       alpha_total       = 1.0;
    double       beta_total        = 1.0;
    double       gamma_total       = 1.0;
    double       alpha_brevity     = 0.25;
    std::int64_t t_target          = 320;
    std::int64_t t_max             = 640;
    double       format_bonus      = 0.5;
    double       accuracy_bonus    = 0.5;
    double       reflect_tag_bonus = 0.25;

    void validate() const {
        if (!(t_target > 0 && t_max > t_target)) {
            throw ConfigError("reward config: need t_max > t_target > 0");
        }
        for (double w : { alpha_total, beta_total, gamma_total, alpha_brevity, format_bonus, accuracy_bonus,
                          reflect_tag_bonus }) {
            if (!std::isfinite(w)) {
                throw ConfigError("reward config: weights must be finite");
            }
        }
    }

    friend bool operator==(const RewardConfig &, const RewardConfig &) = default;
};

/// Applies one `key = value` assignment; throws ConfigError on an unknown key or bad value.
inline void set_reward_key(RewardConfig & cfg, const std::string & key, std::string_view value) {
    auto as_double = [&](double & field) {
        if (!parse_double(value, field)) {
            throw ConfigError("reward config: bad value for " + key + ": '" + std::string(value) + "'");
        }
    };
    auto as_int = [&](std::int64_t & field) {
        long long v = 0;
        if (!parse_int(value, v)) {
            throw ConfigError("reward config: bad integer for " + key + ": '" + std::string(value) + "'");
        }
        field = v;
    };
    if (key == "alpha_total") {
        as_double(cfg.alpha_total);
    } else if (key == "beta_total") {
        as_double(cfg.beta_total);
    } else if (key == "gamma_total") {
        as_double(cfg.gamma_total);
    } else if (key == "alpha_brevity") {
        as_double(cfg.alpha_brevity);
    } else if (key == "t_target") {
        as_int(cfg.t_target);
    } else if (key == "t_max") {
        as_int(cfg.t_max);
    } else if (key == "format_bonus") {
        as_double(cfg.format_bonus);
    } else if (key == "accuracy_bonus") {
        as_double(cfg.accuracy_bonus);
    } else if (key == "reflect_tag_bonus") {
        as_double(cfg.reflect_tag_bonus);
    } else {
        throw ConfigError("reward config: unknown key '" + key + "'");
    }
}

/// Flat `key = value` file; `#` starts a comment. Keys are the RewardConfig field names.
inline RewardConfig parse_reward_config(std::string_view text, RewardConfig base = {}) {
    for (const auto & [key, value] : parse_key_values(text, "reward config")) {
        set_reward_key(base, key, value);
    }
    base.validate();
    return base;
}

inline std::string to_config_text(const RewardConfig & cfg) {
    std::string out;
    auto put = [&](const char * key, const std::string & v) { out += std::string(key) + " = " + v + "\n"; };
    put("alpha_total", format_double(cfg.alpha_total));
    put("beta_total", format_double(cfg.beta_total));
    put("gamma_total", format_double(cfg.gamma_total));
    put("alpha_brevity", format_double(cfg.alpha_brevity));
    put("t_target", std::to_string(cfg.t_target));
    put("t_max", std::to_string(cfg.t_max));
    put("format_bonus", format_double(cfg.format_bonus));
    put("accuracy_bonus", format_double(cfg.accuracy_bonus));
    put("reflect_tag_bonus", format_double(cfg.reflect_tag_bonus));
    return out;
}

struct RewardBreakdown {
    double r_format     = 0.0;
    double r_accuracy   = 0.0;
    double r_task       = 0.0;
    double i_eff        = 0.0;
    double i_ref        = 0.0;
    double f_len_value  = 0.0;
    double r_reflection = 0.0;
    double r_tiou       = 0.0;
    double r_total      = 0.0;
};

inline json to_json(const RewardBreakdown & b) {
    json j;
    j["r_format"]     = b.r_format;
    j["r_accuracy"]   = b.r_accuracy;
    j["r_task"]       = b.r_task;
    j["i_eff"]        = b.i_eff;
    j["i_ref"]        = b.i_ref;
    j["f_len_value"]  = b.f_len_value;
    j["r_reflection"] = b.r_reflection;
    j["r_tiou"]       = b.r_tiou;
    j["r_total"]      = b.r_total;
    return j;
}

inline double format_reward(const FormatReport & report, const RewardConfig & cfg = {}) {
    return report.layout_ok ? cfg.format_bonus : 0.0;
}

inline double accuracy_reward(std::optional<AnswerLetter> initial, AnswerLetter gt, const RewardConfig & cfg = {}) {
    return initial && *initial == gt ? cfg.accuracy_bonus : 0.0;
}

/// Payoff for the correctness transition across reflection.
inline double effectiveness(bool initial_correct, bool final_correct) {
    if (initial_correct) {
        return final_correct ? 0.25 : -0.25;
    }
    return final_correct ? 0.5 : 0.0;
}

inline double brevity_term(std::int64_t len_tokens, std::int64_t t_target, std::int64_t t_max) {
    if (!(t_target > 0 && t_max > t_target)) {
        throw ConfigError("brevity term: need t_max > t_target > 0");
    }
    if (len_tokens < 0) {
        throw ConfigError("brevity term: negative length");
    }
    const double dev = std::abs(static_cast<double>(len_tokens - t_target));
    return std::exp(-dev / static_cast<double>(t_max - t_target));
}

inline double reflection_reward(bool initial_correct, bool final_correct, bool tag_ok, std::int64_t len_tokens,
                                const RewardConfig & cfg) {
    return effectiveness(initial_correct, final_correct) + (tag_ok ? cfg.reflect_tag_bonus : 0.0) +
           cfg.alpha_brevity * brevity_term(len_tokens, cfg.t_target, cfg.t_max);
}

/// Overlap over union, union = len(a) + len(b) - overlap. Identical zero-length intervals give 1;
/// any other zero-length union gives 0.
inline double temporal_iou(const TimeInterval & a, const TimeInterval & b) {
    const double overlap = std::max(0.0, std::min(a.end_s, b.end_s) - std::max(a.start_s, b.start_s));
    const double uni     = a.length() + b.length() - overlap;
    if (uni <= 0.0) {
        return a == b ? 1.0 : 0.0;
    }
    if (a.length() <= 0.0 || b.length() <= 0.0) {
        return 0.0;
    }
    return std::clamp(overlap / uni, 0.0, 1.0);
}

inline double tiou_reward(const Episode & ep, const std::optional<TimeInterval> & predicted, bool answered_normal,
                          bool final_correct) {
    const bool correct = ep.task == TaskKind::QA ? final_correct : (ep.is_anomaly ? !answered_normal : answered_normal);
    if (!correct) {
        return 0.0;
    }
    if (!ep.is_anomaly) {
        return 1.0;
    }
    if (!predicted || !ep.gt_interval) {
        return 0.0;
    }
    return temporal_iou(*predicted, *ep.gt_interval);
}

/// True when the text asserts that nothing anomalous happens ("no anomaly", "normal").
inline bool asserts_normal(std::string_view text) {
    static const std::regex re(R"(\b(no\s+anomal\w*|no\s+abnormal\w*|normal)\b)", std::regex::icase);
    const std::string s(text);
    return std::regex_search(s, re);
}

inline double compose_total(const RewardConfig & cfg, const RewardBreakdown & b) {
    return cfg.alpha_total * b.r_task + cfg.beta_total * b.r_reflection + cfg.gamma_total * b.r_tiou;
}

inline RewardBreakdown total_reward(const Transcript & t, const Episode & ep, const RewardConfig & cfg) {
    cfg.validate();
    RewardBreakdown b;

    const auto report = validate_format(t, FormatSchema::RftFull);
    b.r_format = format_reward(report, cfg);

    const auto initial = extract_answer(t, AnswerChoice::Initial);
    const auto final   = extract_answer(t, AnswerChoice::Final);
    const bool initial_correct = initial && *initial == ep.gt_answer;
    const bool final_correct   = final && *final == ep.gt_answer;

    b.r_accuracy = accuracy_reward(initial, ep.gt_answer, cfg);
    b.r_task     = b.r_format + b.r_accuracy;

    b.i_eff       = effectiveness(initial_correct, final_correct);
    b.i_ref       = report.reflection_tag_ok ? cfg.reflect_tag_bonus : 0.0;
    b.f_len_value = brevity_term(static_cast<std::int64_t>(count_tokens(t.raw)), cfg.t_target, cfg.t_max);
    b.r_reflection = b.i_eff + b.i_ref + cfg.alpha_brevity * b.f_len_value;

    const auto region    = final_region_text(t);
    const auto predicted = extract_interval(region);
    const bool answered_normal = !predicted && asserts_normal(region);
    b.r_tiou = tiou_reward(ep, predicted, answered_normal, final_correct);

    b.r_total = compose_total(cfg, b);
    return b;
}

inline constexpr double kDegenerateStd = 1e-8;

inline double population_std(std::span<const double> xs) {
    const double n    = static_cast<double>(xs.size());
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : xs) {
        ss += (x - mean) * (x - mean);
    }
    return std::sqrt(ss / n);
}

/// A_i = (r_i - mean) / population std; all zero when the group is (numerically) constant.
inline std::vector<double> group_advantages(std::span<const double> rewards) {
    if (rewards.size() < 2) {
        throw std::invalid_argument("group_advantages: need at least 2 rewards");
    }
    const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(rewards.size());
    const double sd   = population_std(rewards);
    std::vector<double> adv(rewards.size(), 0.0);
    if (sd < kDegenerateStd) {
        return adv;
    }
    for (std::size_t i = 0; i < rewards.size(); ++i) {
        adv[i] = (rewards[i] - mean) / sd;
    }
    return adv;
}

}  // namespace reflectrl
