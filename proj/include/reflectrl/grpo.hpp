// SPDX-License-Identifier: Apache-2.0
#pragma once

// Group-relative policy optimization on a tabular softmax policy. Each context owns a row of
// logits over K pre-authored response transcripts; rewards come from the composite reward.

#include "common.hpp"
#include "episode.hpp"
#include "reward.hpp"
#include "transcript.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace reflectrl {

/// Dense row-major matrix.
class Matrix {
  public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }

    std::size_t cols() const { return cols_; }

    double & operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return { data_.data() + r * cols_, cols_ }; }

    std::span<const double> row(std::size_t r) const { return { data_.data() + r * cols_, cols_ }; }

    std::span<double> flat() { return data_; }

    std::span<const double> flat() const { return data_; }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Matrix &, const Matrix &) = default;

  private:
    std::size_t         rows_ = 0;
    std::size_t         cols_ = 0;
    std::vector<double> data_;
};

struct PolicyParams {
    Matrix       theta;
    std::int64_t step_count = 0;

    static PolicyParams zeros(std::size_t contexts, std::size_t actions) { return { Matrix(contexts, actions), 0 }; }
};

struct GrpoConfig {
    int          group_size    = 4;
    double       clip_eps      = 0.2;
    double       kl_beta       = 0.04;
    double       learning_rate = 0.1;
    int          iterations    = 500;
    std::uint64_t seed         = 7;
    double       temperature   = 1.0;
    // Gradient steps taken against each sampled batch before the old policy is refreshed.
    int          updates_per_iteration = 1;

    /// Values used for the 3B-parameter model; too small to move a tabular policy.
    static GrpoConfig full_scale_preset() {
        GrpoConfig cfg;
        cfg.learning_rate = 2e-5;
        return cfg;
    }

    void validate() const {
        if (group_size < 2) {
            throw ConfigError("grpo: group_size must be >= 2");
        }
        if (!(clip_eps > 0.0 && clip_eps < 1.0)) {
            throw ConfigError("grpo: clip_eps must lie in (0, 1)");
        }
        if (!(kl_beta >= 0.0) || !std::isfinite(kl_beta)) {
            throw ConfigError("grpo: kl_beta must be >= 0");
        }
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
            throw ConfigError("grpo: learning_rate must be > 0");
        }
        if (iterations < 0) {
            throw ConfigError("grpo: iterations must be >= 0");
        }
        if (!(temperature > 0.0) || !std::isfinite(temperature)) {
            throw ConfigError("grpo: temperature must be > 0");
        }
        if (updates_per_iteration < 1) {
            throw ConfigError("grpo: updates_per_iteration must be >= 1");
        }
    }
};

/// softmax(row / temperature), max-subtracted.
inline std::vector<double> policy_probs(std::span<const double> row, double temperature = 1.0) {
    if (!(temperature > 0.0)) {
        throw ConfigError("policy_probs: temperature must be > 0");
    }
    if (row.empty()) {
        return {};
    }
    const double hi = *std::max_element(row.begin(), row.end());
    std::vector<double> p(row.size());
    double z = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) {
        p[i] = std::exp((row[i] - hi) / temperature);
        z += p[i];
    }
    for (auto & v : p) {
        v /= z;
    }
    return p;
}

/// Uniform double in [0, 1) from the top 53 bits; identical on every platform for a given engine state.
inline double unit_uniform(std::mt19937_64 & rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline std::size_t sample_categorical(std::span<const double> probs, std::mt19937_64 & rng) {
    const double u = unit_uniform(rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) {
            return i;
        }
    }
    // u landed in the rounding slack above the cumulative sum: last action with nonzero mass.
    for (std::size_t i = probs.size(); i-- > 0;) {
        if (probs[i] > 0.0) {
            return i;
        }
    }
    return probs.size() - 1;
}

/// G i.i.d. draws (with replacement) from the policy row of `context`.
inline std::vector<std::size_t> sample_group(const PolicyParams & policy, std::size_t context, int group_size,
                                             std::mt19937_64 & rng, double temperature = 1.0) {
    if (group_size < 2) {
        throw ConfigError("sample_group: group size must be >= 2");
    }
    const auto probs = policy_probs(policy.theta.row(context), temperature);
    std::vector<std::size_t> actions(static_cast<std::size_t>(group_size));
    for (auto & a : actions) {
        a = sample_categorical(probs, rng);
    }
    return actions;
}

inline double categorical_kl(std::span<const double> p, std::span<const double> q) {
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) {
            kl += p[i] * (std::log(p[i]) - std::log(q[i]));
        }
    }
    return std::max(kl, 0.0);
}

/// Exact KL(pi_theta(.|c) || pi_ref(.|c)).
inline double kl_to_ref(const PolicyParams & theta, const PolicyParams & ref, std::size_t context,
                        double temperature = 1.0) {
    const auto p = policy_probs(theta.theta.row(context), temperature);
    const auto q = policy_probs(ref.theta.row(context), temperature);
    return categorical_kl(p, q);
}

/// Sampled actions for one context and their group-normalized advantages.
struct ContextGroup {
    std::size_t              context = 0;
    std::vector<std::size_t> actions;
    std::vector<double>      advantages;
};

/// Mean over groups of  (1/G) sum_i min(rho_i A_i, clip(rho_i, 1-eps, 1+eps) A_i) - kl_beta * KL.
/// Returned for maximization.
inline double grpo_objective(const PolicyParams & theta, const PolicyParams & old, const PolicyParams & ref,
                             std::span<const ContextGroup> groups, const GrpoConfig & cfg) {
    if (groups.empty()) {
        return 0.0;
    }
    double total = 0.0;
    for (const auto & g : groups) {
        const auto p     = policy_probs(theta.theta.row(g.context), cfg.temperature);
        const auto p_old = policy_probs(old.theta.row(g.context), cfg.temperature);
        const auto p_ref = policy_probs(ref.theta.row(g.context), cfg.temperature);
        double surrogate = 0.0;
        for (std::size_t i = 0; i < g.actions.size(); ++i) {
            const double rho = p[g.actions[i]] / p_old[g.actions[i]];
            const double a   = g.advantages[i];
            surrogate += std::min(rho * a, std::clamp(rho, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * a);
        }
        total += surrogate / static_cast<double>(g.actions.size()) - cfg.kl_beta * categorical_kl(p, p_ref);
    }
    return total / static_cast<double>(groups.size());
}

/// Analytic gradient of grpo_objective in theta. A member whose clipped branch is the active
/// minimum contributes nothing.
inline Matrix grpo_gradient(const PolicyParams & theta, const PolicyParams & old, const PolicyParams & ref,
                            std::span<const ContextGroup> groups, const GrpoConfig & cfg) {
    Matrix grad(theta.theta.rows(), theta.theta.cols());
    if (groups.empty()) {
        return grad;
    }
    const double inv_groups = 1.0 / static_cast<double>(groups.size());
    const double inv_t      = 1.0 / cfg.temperature;
    for (const auto & g : groups) {
        const auto p     = policy_probs(theta.theta.row(g.context), cfg.temperature);
        const auto p_old = policy_probs(old.theta.row(g.context), cfg.temperature);
        const auto p_ref = policy_probs(ref.theta.row(g.context), cfg.temperature);
        auto row = grad.row(g.context);
        const double member_w = inv_groups / static_cast<double>(g.actions.size());
        for (std::size_t i = 0; i < g.actions.size(); ++i) {
            const std::size_t a  = g.actions[i];
            const double rho     = p[a] / p_old[a];
            const double adv     = g.advantages[i];
            const double clipped = std::clamp(rho, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv;
            if (rho * adv > clipped) {
                continue;
            }
            // d rho / d theta_j = rho * (1[j == a] - p_j) / T
            for (std::size_t j = 0; j < row.size(); ++j) {
                const double ind = j == a ? 1.0 : 0.0;
                row[j] += member_w * adv * rho * (ind - p[j]) * inv_t;
            }
        }
        if (cfg.kl_beta != 0.0) {
            const double kl = categorical_kl(p, p_ref);
            for (std::size_t j = 0; j < row.size(); ++j) {
                const double dkl = p[j] * (std::log(p[j]) - std::log(p_ref[j]) - kl) * inv_t;
                row[j] -= inv_groups * cfg.kl_beta * dkl;
            }
        }
    }
    return grad;
}

struct ToyContext {
    std::string              id;
    Episode                  episode;
    std::vector<std::string> templates;
};

struct ToyWorld {
    std::vector<ToyContext> contexts;

    std::size_t num_actions() const { return contexts.empty() ? 0 : contexts.front().templates.size(); }

    void validate() const {
        if (contexts.empty()) {
            throw InputError("toy world: needs at least one context");
        }
        const auto k = num_actions();
        if (k < 2) {
            throw InputError("toy world: needs at least two templates per context");
        }
        for (const auto & c : contexts) {
            if (c.templates.size() != k) {
                throw InputError("toy world: context " + c.id + " has " + std::to_string(c.templates.size()) +
                                 " templates, expected " + std::to_string(k));
            }
        }
    }
};

inline ToyWorld toy_world_from_json(const json & j) {
    ToyWorld w;
    try {
        for (const auto & c : j.at("contexts")) {
            ToyContext ctx;
            ctx.id      = c.at("id").get<std::string>();
            ctx.episode = episode_from_json(c.at("episode"));
            for (const auto & t : c.at("templates")) {
                ctx.templates.push_back(t.get<std::string>());
            }
            w.contexts.push_back(std::move(ctx));
        }
    } catch (const json::exception & e) {
        throw InputError(std::string("toy world: ") + e.what());
    }
    w.validate();
    return w;
}

inline json to_json(const ToyWorld & w) {
    json j;
    j["contexts"] = json::array();
    for (const auto & c : w.contexts) {
        json jc;
        jc["id"]        = c.id;
        jc["episode"]   = to_json(c.episode);
        jc["templates"] = c.templates;
        j["contexts"].push_back(std::move(jc));
    }
    return j;
}

/// Reward breakdown of every (context, template) pair.
inline std::vector<std::vector<RewardBreakdown>> score_world(const ToyWorld & world, const RewardConfig & reward_cfg) {
    std::vector<std::vector<RewardBreakdown>> table;
    for (const auto & c : world.contexts) {
        auto & row = table.emplace_back();
        for (const auto & text : c.templates) {
            row.push_back(total_reward(parse_transcript(text), c.episode, reward_cfg));
        }
    }
    return table;
}

struct TrainRecord {
    int    iteration = 0;
    double mean_reward = 0.0;         // expected total reward under the policy after this iteration
    double mean_abs_advantage = 0.0;  // over the groups sampled this iteration
    double kl = 0.0;                  // mean over contexts
    double argmax_match_rate = 0.0;
};

struct TrainLog {
    std::vector<TrainRecord> records;  // records[0] is the untrained snapshot
};

struct TrainResult {
    PolicyParams policy;
    TrainLog     log;
};

class TrainingFailure : public std::runtime_error {
  public:
    TrainingFailure(int iteration, const std::string & what) :
        std::runtime_error("non-finite " + what + " at iteration " + std::to_string(iteration)),
        iteration_(iteration) {}

    int iteration() const { return iteration_; }

  private:
    int iteration_;
};

inline std::size_t argmax(std::span<const double> row) {
    return static_cast<std::size_t>(std::distance(row.begin(), std::max_element(row.begin(), row.end())));
}

namespace detail {

inline TrainRecord snapshot(int iteration, const PolicyParams & theta, const PolicyParams & ref,
                            const std::vector<std::vector<double>> & rewards, const GrpoConfig & cfg) {
    TrainRecord rec;
    rec.iteration = iteration;
    const std::size_t contexts = rewards.size();
    std::size_t matches = 0;
    for (std::size_t c = 0; c < contexts; ++c) {
        const auto p = policy_probs(theta.theta.row(c), cfg.temperature);
        for (std::size_t k = 0; k < p.size(); ++k) {
            rec.mean_reward += p[k] * rewards[c][k];
        }
        rec.kl += kl_to_ref(theta, ref, c, cfg.temperature);
        const double best = *std::max_element(rewards[c].begin(), rewards[c].end());
        matches += rewards[c][argmax(theta.theta.row(c))] >= best ? 1 : 0;
    }
    rec.mean_reward /= static_cast<double>(contexts);
    rec.kl /= static_cast<double>(contexts);
    rec.argmax_match_rate = static_cast<double>(matches) / static_cast<double>(contexts);
    return rec;
}

}  // namespace detail

/// On-policy loop: snapshot old policy, sample G templates per context, score, normalize within
/// the group, ascend the surrogate. The reference policy is the initial policy.
inline TrainResult train(const ToyWorld & world, const GrpoConfig & cfg, const RewardConfig & reward_cfg,
                         const PolicyParams * initial = nullptr) {
    world.validate();
    cfg.validate();
    reward_cfg.validate();

    const std::size_t contexts = world.contexts.size();
    const std::size_t actions  = world.num_actions();

    std::vector<std::vector<double>> rewards;
    for (const auto & row : score_world(world, reward_cfg)) {
        auto & r = rewards.emplace_back();
        for (const auto & b : row) {
            r.push_back(b.r_total);
        }
    }

    TrainResult result;
    result.policy = initial != nullptr ? *initial : PolicyParams::zeros(contexts, actions);
    if (result.policy.theta.rows() != contexts || result.policy.theta.cols() != actions) {
        throw ConfigError("train: initial policy shape does not match the world");
    }
    const PolicyParams ref = result.policy;
    auto & theta = result.policy;

    std::mt19937_64 rng(cfg.seed);
    result.log.records.push_back(detail::snapshot(0, theta, ref, rewards, cfg));

    std::vector<ContextGroup> groups(contexts);
    for (int it = 1; it <= cfg.iterations; ++it) {
        const PolicyParams old = theta;
        double abs_adv = 0.0;
        for (std::size_t c = 0; c < contexts; ++c) {
            auto & g   = groups[c];
            g.context  = c;
            g.actions  = sample_group(old, c, cfg.group_size, rng, cfg.temperature);
            std::vector<double> r;
            r.reserve(g.actions.size());
            for (auto a : g.actions) {
                r.push_back(rewards[c][a]);
            }
            g.advantages = group_advantages(r);
            for (double a : g.advantages) {
                abs_adv += std::abs(a);
            }
        }
        for (int u = 0; u < cfg.updates_per_iteration; ++u) {
            const Matrix grad = grpo_gradient(theta, old, ref, groups, cfg);
            if (!grad.all_finite()) {
                throw TrainingFailure(it, "gradient");
            }
            auto params = theta.theta.flat();
            auto step   = grad.flat();
            for (std::size_t i = 0; i < params.size(); ++i) {
                params[i] += cfg.learning_rate * step[i];
            }
            if (!theta.theta.all_finite()) {
                throw TrainingFailure(it, "parameters");
            }
        }
        ++theta.step_count;
        auto rec = detail::snapshot(it, theta, ref, rewards, cfg);
        rec.mean_abs_advantage = abs_adv / static_cast<double>(contexts * static_cast<std::size_t>(cfg.group_size));
        if (!std::isfinite(rec.mean_reward) || !std::isfinite(rec.kl)) {
            throw TrainingFailure(it, "objective");
        }
        result.log.records.push_back(rec);
    }
    return result;
}

inline std::string train_log_csv(const TrainLog & log) {
    std::string out = "iteration,mean_reward,mean_abs_advantage,kl,argmax_match_rate\n";
    for (const auto & r : log.records) {
        out += std::to_string(r.iteration) + "," + format_double(r.mean_reward) + "," +
               format_double(r.mean_abs_advantage) + "," + format_double(r.kl) + "," +
               format_double(r.argmax_match_rate) + "\n";
    }
    return out;
}

inline std::string train_log_jsonl(const TrainLog & log) {
    std::string out;
    for (const auto & r : log.records) {
        json j;
        j["iteration"]          = r.iteration;
        j["mean_reward"]        = r.mean_reward;
        j["mean_abs_advantage"] = r.mean_abs_advantage;
        j["kl"]                 = r.kl;
        j["argmax_match_rate"]  = r.argmax_match_rate;
        out += j.dump() + "\n";
    }
    return out;
}

inline json policy_to_json(const PolicyParams & policy, const ToyWorld & world, double temperature) {
    json j;
    j["step_count"]  = policy.step_count;
    j["temperature"] = temperature;
    j["contexts"]    = json::array();
    for (std::size_t c = 0; c < policy.theta.rows(); ++c) {
        json jc;
        jc["id"]     = c < world.contexts.size() ? world.contexts[c].id : std::to_string(c);
        auto row     = policy.theta.row(c);
        jc["theta"]  = std::vector<double>(row.begin(), row.end());
        jc["probs"]  = policy_probs(row, temperature);
        jc["argmax"] = argmax(row);
        j["contexts"].push_back(std::move(jc));
    }
    return j;
}

}  // namespace reflectrl
