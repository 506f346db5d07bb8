// SPDX-License-Identifier: Apache-2.0
#pragma once

// Command-line front end. Every subcommand resolves its settings as
//   defaults < --config file (key = value) < flags
// and writes a manifest.json into its output directory when it finishes.
//
// Exit codes: 0 ok, 1 usage/config/input error, 2 transport failures, 3 malformed input under
// --strict, 4 non-finite training, 5 unresolved episode ids.

#include "reflectrl.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace reflectrl::cli {

inline constexpr const char * kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kFailure = 1, kTransport = 2, kMalformed = 3, kTraining = 4, kUnresolved = 5 };

/// Failure carrying its exit code and the machine-readable error object printed on stderr.
class CliError : public std::runtime_error {
  public:
    CliError(int code, std::string kind, const std::string & message, json extra = json::object()) :
        std::runtime_error(message),
        code_(code),
        kind_(std::move(kind)),
        extra_(std::move(extra)) {}

    int code() const { return code_; }

    json to_json() const {
        json j;
        j["error"]   = kind_;
        j["message"] = what();
        for (auto it = extra_.begin(); it != extra_.end(); ++it) {
            j[it.key()] = it.value();
        }
        return j;
    }

  private:
    int         code_;
    std::string kind_;
    json        extra_;
};

enum class Source { Default, File, Flag };

inline const char * to_string(Source s) {
    return s == Source::Default ? "default" : s == Source::File ? "file" : "flag";
}

/// Resolved settings of one run.
class Resolved {
  public:
    void set(const std::string & key, std::string value, Source src) {
        values_[key]  = std::move(value);
        sources_[key] = src;
    }

    bool has(const std::string & key) const { return !values_.at(key).empty(); }

    Source source(const std::string & key) const { return sources_.at(key); }

    const std::string & text(const std::string & key) const { return values_.at(key); }

    const std::string & required(const std::string & key) const {
        const auto & v = values_.at(key);
        if (v.empty()) {
            throw ConfigError("missing required setting '" + key + "' (flag --" + dashed(key) + " or config file)");
        }
        return v;
    }

    double number(const std::string & key) const {
        double v = 0.0;
        if (!parse_double(text(key), v)) {
            throw ConfigError("setting '" + key + "' is not a number: '" + text(key) + "'");
        }
        return v;
    }

    long long integer(const std::string & key) const {
        long long v = 0;
        if (!parse_int(text(key), v)) {
            throw ConfigError("setting '" + key + "' is not an integer: '" + text(key) + "'");
        }
        return v;
    }

    bool boolean(const std::string & key) const {
        const auto v = to_lower(text(key));
        if (v == "true" || v == "1" || v == "yes") {
            return true;
        }
        if (v == "false" || v == "0" || v == "no" || v.empty()) {
            return false;
        }
        throw ConfigError("setting '" + key + "' is not a boolean: '" + text(key) + "'");
    }

    std::vector<std::string> list(const std::string & key) const {
        std::vector<std::string> out;
        std::string_view rest = text(key);
        while (!rest.empty()) {
            const auto comma = rest.find(',');
            const auto item  = trim(rest.substr(0, comma));
            if (!item.empty()) {
                out.emplace_back(item);
            }
            rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
        }
        return out;
    }

    json snapshot() const {
        json j = json::object();
        for (const auto & [k, v] : values_) {
            j[k] = v;
        }
        return j;
    }

    json sources() const {
        json j = json::object();
        for (const auto & [k, s] : sources_) {
            j[k] = to_string(s);
        }
        return j;
    }

    static std::string dashed(std::string key) {
        std::replace(key.begin(), key.end(), '_', '-');
        return key;
    }

  private:
    std::map<std::string, std::string> values_;
    std::map<std::string, Source>      sources_;
};

/// Flags of one subcommand, each mirrored by a config-file key of the same name.
class Settings {
  public:
    explicit Settings(CLI::App * app) : app_(app) {
        app_->add_option("--config", config_path_, "Settings file with key = value lines; flags take precedence")
            ->type_name("FILE");
    }

    Settings & add(const std::string & key, std::string def, const std::string & help,
                   const std::string & type = "TEXT") {
        auto & e = entries_.emplace_back(std::make_unique<Entry>());
        e->key    = key;
        e->def    = std::move(def);
        e->option = app_->add_option("--" + Resolved::dashed(key), e->value,
                                     e->def.empty() ? help : help + " (default " + e->def + ")");
        e->option->type_name(type);
        return *this;
    }

    Settings & add_switch(const std::string & key, const std::string & help) {
        auto & e = entries_.emplace_back(std::make_unique<Entry>());
        e->key    = key;
        e->def    = "false";
        e->option = app_->add_flag("--" + Resolved::dashed(key), e->flag, help);
        e->is_switch = true;
        return *this;
    }

    Resolved resolve() const {
        std::map<std::string, std::string> file;
        if (!config_path_.empty()) {
            for (auto & [k, v] : parse_key_values(read_file(config_path_), "config " + config_path_)) {
                const bool known = std::any_of(entries_.begin(), entries_.end(), [&](const auto & e) { return e->key == k; });
                if (!known) {
                    throw ConfigError("config " + config_path_ + ": unknown key '" + k + "'");
                }
                file[k] = v;
            }
        }
        Resolved r;
        for (const auto & e : entries_) {
            if (e->option->count() > 0) {
                r.set(e->key, e->is_switch ? (e->flag ? "true" : "false") : e->value, Source::Flag);
            } else if (auto it = file.find(e->key); it != file.end()) {
                r.set(e->key, it->second, Source::File);
            } else {
                r.set(e->key, e->def, Source::Default);
            }
        }
        return r;
    }

  private:
    struct Entry {
        std::string    key;
        std::string    def;
        std::string    value;
        bool           flag      = false;
        bool           is_switch = false;
        CLI::Option *  option    = nullptr;
    };

    CLI::App *                          app_;
    std::string                         config_path_;
    std::vector<std::unique_ptr<Entry>> entries_;
};

inline void add_reward_settings(Settings & s) {
    const RewardConfig d;
    s.add("alpha_total", format_double(d.alpha_total), "Weight of the task reward", "FLOAT")
        .add("beta_total", format_double(d.beta_total), "Weight of the reflection reward", "FLOAT")
        .add("gamma_total", format_double(d.gamma_total), "Weight of the temporal IoU reward", "FLOAT")
        .add("alpha_brevity", format_double(d.alpha_brevity), "Weight of the brevity term", "FLOAT")
        .add("t_target", std::to_string(d.t_target), "Target response length in whitespace tokens", "INT")
        .add("t_max", std::to_string(d.t_max), "Maximum response length in whitespace tokens", "INT")
        .add("format_bonus", format_double(d.format_bonus), "Format reward when the layout is valid", "FLOAT")
        .add("accuracy_bonus", format_double(d.accuracy_bonus), "Reward for a correct first answer", "FLOAT")
        .add("reflect_tag_bonus", format_double(d.reflect_tag_bonus), "Reward for a well-tagged reflection", "FLOAT");
}

inline RewardConfig reward_config(const Resolved & r) {
    RewardConfig cfg;
    for (const char * key : { "alpha_total", "beta_total", "gamma_total", "alpha_brevity", "t_target", "t_max",
                              "format_bonus", "accuracy_bonus", "reflect_tag_bonus" }) {
        set_reward_key(cfg, key, r.text(key));
    }
    cfg.validate();
    return cfg;
}

inline EpisodeMap load_episodes(const std::string & path) {
    EpisodeMap out;
    for (const auto & j : read_jsonl(path)) {
        auto ep = episode_from_json(j);
        ep.validate();
        const auto id = ep.id;
        if (!out.emplace(id, std::move(ep)).second) {
            throw InputError(path + ": duplicate episode id '" + id + "'");
        }
    }
    return out;
}

inline void throw_unresolved(const UnresolvedEpisodes & e) {
    std::vector<std::string> first(e.ids().begin(), e.ids().begin() + std::min<std::size_t>(10, e.ids().size()));
    throw CliError(kUnresolved, "unresolved_ids", e.what(), json{ { "count", e.ids().size() }, { "ids", first } });
}

inline std::filesystem::path prepare_out_dir(const std::string & dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
        throw InputError("cannot create output directory " + dir);
    }
    return dir;
}

struct RunContext {
    std::ostream & out;
    std::ostream & err;
    Resolved &     settings;
};

inline void log_line(std::ostream & err, std::string_view line) {
    err << "reflectrl: " << line << '\n';
}

// build-data ------------------------------------------------------------------------------------

inline void build_data_settings(Settings & s) {
    s.add("episodes", "", "Episodes JSONL", "FILE")
        .add("base_config", "", "Endpoint JSON for the base model", "FILE")
        .add("teacher_config", "", "Endpoint JSON for the teacher model", "FILE")
        .add("out", "", "Output directory", "DIR")
        .add("max_concurrency", "", "In-flight request limit (default: smaller of the two endpoint limits)", "INT")
        .add("base_temperature", "1", "Sampling temperature for the base model unless its config sets one", "FLOAT")
        .add("teacher_temperature", "0.3", "Sampling temperature for the teacher unless its config sets one", "FLOAT")
        .add("seed", "7", "Run seed (recorded; generation is endpoint-side)", "INT")
        .add_switch("resume", "Skip episodes already present in the output directory");
}

inline int cmd_build_data(RunContext & ctx) {
    const auto & s = ctx.settings;
    std::vector<Episode> episodes;
    for (auto & [id, ep] : load_episodes(s.required("episodes"))) {
        episodes.push_back(ep);
    }
    auto base_cfg    = endpoint_config_from_json(json::parse(read_file(s.required("base_config"))), s.number("base_temperature"));
    auto teacher_cfg = endpoint_config_from_json(json::parse(read_file(s.required("teacher_config"))),
                                                 s.number("teacher_temperature"));
    BuildOptions opts;
    opts.resume          = s.boolean("resume");
    opts.max_concurrency = std::min(base_cfg.max_concurrency, teacher_cfg.max_concurrency);
    if (s.has("max_concurrency")) {
        const auto n = s.integer("max_concurrency");
        if (n < 1) {
            throw ConfigError("max_concurrency must be >= 1");
        }
        opts.max_concurrency = static_cast<std::size_t>(n);
    }
    opts.log = [&ctx](std::string_view line) { log_line(ctx.err, line); };

    HttpChatClient base(base_cfg), teacher(teacher_cfg);
    const auto out    = prepare_out_dir(s.required("out"));
    const auto report = build_dataset(episodes, base, teacher, out, opts);
    log_line(ctx.err, std::to_string(report.requests_issued) + " new requests");
    ctx.out << to_json(report).dump(2) << '\n';
    if (report.failed > 0) {
        throw CliError(kTransport, "transport",
                       std::to_string(report.failed) + " episode(s) failed at the endpoint",
                       json{ { "failed", report.failed },
                             { "configuration_failures", report.configuration_failures },
                             { "failed_ids", report.failed_ids } });
    }
    return kOk;
}

// score -----------------------------------------------------------------------------------------

inline void score_settings(Settings & s) {
    s.add("predictions", "", "Predictions JSONL (episode_id, mode, transcript)", "FILE")
        .add("episodes", "", "Episodes JSONL", "FILE")
        .add("out", "", "Output directory", "DIR")
        .add("seed", "7", "Run seed (recorded; scoring is deterministic)", "INT")
        .add_switch("strict", "Fail with exit 3 on the first malformed prediction line");
    add_reward_settings(s);
}

inline int cmd_score(RunContext & ctx) {
    const auto & s       = ctx.settings;
    const auto   cfg     = reward_config(s);
    const auto   gts     = load_episodes(s.required("episodes"));
    const bool   strict  = s.boolean("strict");
    const auto   out_dir = prepare_out_dir(s.required("out"));
    const auto   text    = read_file(s.required("predictions"));

    struct Row {
        std::size_t     line;
        std::string     episode_id;
        PredictionMode  mode;
        std::string     transcript;
    };
    std::vector<Row> rows;
    std::size_t skipped = 0;
    std::vector<std::string> missing;
    for_each_line(text, [&](std::size_t line_no, std::string_view line) {
        try {
            const auto j = json::parse(line);
            Row r{ line_no, j.at("episode_id").get<std::string>(),
                   prediction_mode_from_string(j.value("mode", std::string("with_think"))),
                   j.at("transcript").get<std::string>() };
            if (gts.find(r.episode_id) == gts.end()) {
                if (std::find(missing.begin(), missing.end(), r.episode_id) == missing.end()) {
                    missing.push_back(r.episode_id);
                }
                return;
            }
            rows.push_back(std::move(r));
        } catch (const std::exception & e) {
            if (strict) {
                throw CliError(kMalformed, "malformed_input",
                               s.text("predictions") + ":" + std::to_string(line_no) + ": " + e.what(),
                               json{ { "line", line_no } });
            }
            log_line(ctx.err, "skipping malformed line " + std::to_string(line_no) + ": " + e.what());
            ++skipped;
        }
    });
    if (!missing.empty()) {
        throw_unresolved(UnresolvedEpisodes(missing));
    }

    std::string lines;
    RewardBreakdown sum;
    for (const auto & r : rows) {
        const auto b = total_reward(parse_transcript(r.transcript), gts.find(r.episode_id)->second, cfg);
        json j;
        j["line"]       = r.line;
        j["episode_id"] = r.episode_id;
        j["mode"]       = to_string(r.mode);
        const auto jb = to_json(b);
        for (auto it = jb.begin(); it != jb.end(); ++it) {
            j[it.key()] = it.value();
        }
        lines += j.dump() + "\n";
        sum.r_format += b.r_format;
        sum.r_accuracy += b.r_accuracy;
        sum.r_task += b.r_task;
        sum.i_eff += b.i_eff;
        sum.i_ref += b.i_ref;
        sum.f_len_value += b.f_len_value;
        sum.r_reflection += b.r_reflection;
        sum.r_tiou += b.r_tiou;
        sum.r_total += b.r_total;
    }
    json summary;
    summary["scored"]  = rows.size();
    summary["skipped"] = skipped;
    json means         = to_json(sum);
    for (auto it = means.begin(); it != means.end(); ++it) {
        it.value() = rows.empty() ? 0.0 : it.value().get<double>() / static_cast<double>(rows.size());
    }
    summary["means"] = means;

    write_file_atomic(out_dir / "breakdowns.jsonl", lines);
    write_file_atomic(out_dir / "summary.json", summary.dump(2) + "\n");
    ctx.out << summary.dump(2) << '\n';
    return kOk;
}

// train-toy -------------------------------------------------------------------------------------

inline void train_toy_settings(Settings & s) {
    const GrpoConfig d;
    s.add("world", "", "Toy world JSON", "FILE")
        .add("out", "", "Output directory", "DIR")
        .add("preset", "toy", "Hyper-parameter preset: toy, or full-scale (learning rate 2e-5)", "NAME")
        .add("iterations", std::to_string(d.iterations), "Training iterations", "INT")
        .add("learning_rate", format_double(d.learning_rate), "Gradient ascent step size", "FLOAT")
        .add("kl_beta", format_double(d.kl_beta), "KL penalty coefficient", "FLOAT")
        .add("clip_eps", format_double(d.clip_eps), "Ratio clipping threshold", "FLOAT")
        .add("group_size", std::to_string(d.group_size), "Responses sampled per context", "INT")
        .add("temperature", format_double(d.temperature), "Policy temperature", "FLOAT")
        .add("updates_per_iteration", std::to_string(d.updates_per_iteration),
             "Gradient steps per sampled batch", "INT")
        .add("seed", std::to_string(d.seed), "Sampling seed", "INT");
    add_reward_settings(s);
}

inline GrpoConfig grpo_config(const Resolved & s) {
    const auto preset = s.text("preset");
    if (preset != "toy" && preset != "full-scale") {
        throw ConfigError("unknown preset '" + preset + "' (toy, full-scale)");
    }
    GrpoConfig cfg;
    cfg.iterations            = static_cast<int>(s.integer("iterations"));
    cfg.learning_rate         = s.number("learning_rate");
    cfg.kl_beta               = s.number("kl_beta");
    cfg.clip_eps              = s.number("clip_eps");
    cfg.group_size            = static_cast<int>(s.integer("group_size"));
    cfg.temperature           = s.number("temperature");
    cfg.updates_per_iteration = static_cast<int>(s.integer("updates_per_iteration"));
    const auto seed           = s.integer("seed");
    if (seed < 0) {
        throw ConfigError("seed must be >= 0");
    }
    cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.validate();
    return cfg;
}

inline int cmd_train_toy(RunContext & ctx) {
    // The preset only moves defaults; an explicit learning rate wins.
    if (ctx.settings.text("preset") == "full-scale" && ctx.settings.source("learning_rate") == Source::Default) {
        ctx.settings.set("learning_rate", format_double(GrpoConfig::full_scale_preset().learning_rate), Source::Default);
    }
    const auto & s          = ctx.settings;
    const auto   cfg        = grpo_config(s);
    const auto   reward_cfg = reward_config(s);
    const auto   world      = toy_world_from_json(json::parse(read_file(s.required("world"))));
    const auto   out_dir    = prepare_out_dir(s.required("out"));

    TrainResult result;
    try {
        result = train(world, cfg, reward_cfg);
    } catch (const TrainingFailure & e) {
        throw CliError(kTraining, "training", e.what(), json{ { "iteration", e.iteration() } });
    }
    write_file_atomic(out_dir / "train_log.csv", train_log_csv(result.log));
    write_file_atomic(out_dir / "train_log.jsonl", train_log_jsonl(result.log));
    write_file_atomic(out_dir / "policy.json", policy_to_json(result.policy, world, cfg.temperature).dump(2) + "\n");

    const auto & last = result.log.records.back();
    json summary;
    summary["iterations"]        = last.iteration;
    summary["mean_reward"]       = last.mean_reward;
    summary["kl"]                = last.kl;
    summary["argmax_match_rate"] = last.argmax_match_rate;
    ctx.out << summary.dump(2) << '\n';
    return kOk;
}

// sft-toy ---------------------------------------------------------------------------------------

inline void sft_toy_settings(Settings & s) {
    s.add("samples", "", "Reflection samples JSONL (build-data output)", "FILE")
        .add("out", "", "Output directory", "DIR")
        .add("epochs", "3", "Passes over the samples", "INT")
        .add("smoothing", "1", "Additive smoothing of the token model", "FLOAT")
        .add("condition_on_reflection", "true", "Include the reflection in the conditioning context", "BOOL")
        .add("seed", "7", "Run seed (recorded; fitting is deterministic)", "INT");
}

inline int cmd_sft_toy(RunContext & ctx) {
    const auto & s = ctx.settings;
    std::vector<SftSample> data;
    for (const auto & j : read_jsonl(s.required("samples"))) {
        data.push_back(to_sft_sample(reflection_sample_from_json(j)));
    }
    const auto epochs = s.integer("epochs");
    if (epochs < 0) {
        throw ConfigError("epochs must be >= 0");
    }
    const auto out_dir = prepare_out_dir(s.required("out"));
    auto model = TokenModel::from_dataset(data, s.number("smoothing"), s.boolean("condition_on_reflection"));
    const auto curve = train_sft(model, data, static_cast<int>(epochs));
    write_file_atomic(out_dir / "loss_curve.csv", loss_curve_csv(curve));
    json summary;
    summary["samples"]     = data.size();
    summary["vocabulary"]  = model.vocab_size();
    summary["initial_nll"] = curve.front();
    summary["final_nll"]   = curve.back();
    ctx.out << summary.dump(2) << '\n';
    return kOk;
}

// eval / report ---------------------------------------------------------------------------------

inline std::vector<ReportFormat> parse_formats(const std::vector<std::string> & names) {
    std::vector<ReportFormat> out;
    for (const auto & n : names) {
        if (n == "json") {
            out.push_back(ReportFormat::Json);
        } else if (n == "markdown" || n == "md") {
            out.push_back(ReportFormat::Markdown);
        } else if (n == "csv") {
            out.push_back(ReportFormat::Csv);
        } else {
            throw ConfigError("unknown report format '" + n + "' (json, markdown, csv)");
        }
    }
    if (out.empty()) {
        throw ConfigError("no report format selected");
    }
    return out;
}

inline const char * extension(ReportFormat f) {
    return f == ReportFormat::Json ? "json" : f == ReportFormat::Markdown ? "md" : "csv";
}

inline void eval_settings(Settings & s) {
    s.add("predictions", "", "Predictions JSONL (episode_id, mode, transcript)", "FILE")
        .add("episodes", "", "Episodes JSONL", "FILE")
        .add("judges", "", "Judge scores JSONL (cls, km, flu, inf, fac per line)", "FILE")
        .add("out", "", "Output directory", "DIR")
        .add("thresholds", "0.3,0.5,0.7", "IoU thresholds for recall, ascending", "LIST")
        .add("formats", "json,markdown,csv", "Report formats to write", "LIST")
        .add("seed", "7", "Run seed (recorded; evaluation is deterministic)", "INT");
}

inline int cmd_eval(RunContext & ctx) {
    const auto & s = ctx.settings;
    std::vector<double> thresholds;
    for (const auto & t : s.list("thresholds")) {
        double v = 0.0;
        if (!parse_double(t, v)) {
            throw ConfigError("bad threshold '" + t + "'");
        }
        thresholds.push_back(v);
    }
    validate_thresholds(thresholds);
    const auto formats = parse_formats(s.list("formats"));
    const auto gts     = load_episodes(s.required("episodes"));

    std::vector<PredictionRecord> records;
    for (const auto & j : read_jsonl(s.required("predictions"))) {
        records.push_back(prediction_from_json(j));
    }
    std::vector<JudgeRow> judges;
    if (s.has("judges")) {
        for (const auto & j : read_jsonl(s.text("judges"))) {
            judges.push_back(judge_row_from_json(j));
        }
    }
    EvalReport report;
    try {
        report = build_eval_report(records, gts, judges, thresholds);
    } catch (const UnresolvedEpisodes & e) {
        throw_unresolved(e);
    }
    const auto out_dir = prepare_out_dir(s.required("out"));
    for (auto f : formats) {
        write_file_atomic(out_dir / (std::string("report.") + extension(f)), render_report(report, f));
    }
    for (const auto & d : report.datasets) {
        if (d.judge_total_discrepancies > 0) {
            log_line(ctx.err, d.dataset + ": " + std::to_string(d.judge_total_discrepancies) +
                                  " judge row(s) report a total that differs from the dimension sum; using the sum");
        }
    }
    ctx.out << render_report(report, ReportFormat::Markdown);
    return kOk;
}

inline void report_settings(Settings & s) {
    s.add("report", "", "report.json written by eval", "FILE")
        .add("format", "markdown", "Output format: json, markdown or csv", "NAME")
        .add("out", "", "Output directory (default: print to stdout)", "DIR")
        .add("seed", "7", "Run seed (recorded)", "INT");
}

inline int cmd_report(RunContext & ctx) {
    const auto & s      = ctx.settings;
    const auto   format = parse_formats({ s.text("format") }).front();
    const auto   report = eval_report_from_json(json::parse(read_file(s.required("report"))));
    const auto   text   = render_report(report, format);
    if (s.has("out")) {
        write_file_atomic(prepare_out_dir(s.text("out")) / (std::string("report.") + extension(format)), text);
    } else {
        ctx.out << text;
    }
    return kOk;
}

// driver ----------------------------------------------------------------------------------------

struct Command {
    const char * name;
    const char * help;
    void (*settings)(Settings &);
    int (*run)(RunContext &);
};

inline const std::vector<Command> & commands() {
    static const std::vector<Command> all = {
        { "build-data", "Generate reflection samples through the base and teacher endpoints", build_data_settings,
          cmd_build_data },
        { "score", "Score transcripts with the composite reward", score_settings, cmd_score },
        { "train-toy", "Train the tabular policy on a toy world with GRPO", train_toy_settings, cmd_train_toy },
        { "sft-toy", "Fit the cold-start token model on reflection samples", sft_toy_settings, cmd_sft_toy },
        { "eval", "Compute accuracy, grounding and judge metrics", eval_settings, cmd_eval },
        { "report", "Re-render a saved evaluation report", report_settings, cmd_report },
    };
    return all;
}

inline void write_manifest(const std::filesystem::path & dir, const std::string & sub, const Resolved & settings,
                           const std::string & started, int status) {
    json m;
    m["subcommand"]     = sub;
    m["tool_version"]   = kVersion;
    m["seed"]           = settings.text("seed");
    m["config"]         = settings.snapshot();
    m["config_sources"] = settings.sources();
    m["started_at"]     = started;
    m["finished_at"]    = utc_timestamp();
    m["exit_status"]    = status;
    write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

inline int run(int argc, const char * const * argv, std::ostream & out = std::cout, std::ostream & err = std::cerr) {
    CLI::App app{ "Reflection-aware reward shaping, GRPO toy training, data construction and evaluation", "reflectrl" };
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    std::vector<std::unique_ptr<Settings>> settings;
    std::vector<CLI::App *>                subs;
    for (const auto & c : commands()) {
        auto * sub = app.add_subcommand(c.name, c.help);
        settings.push_back(std::make_unique<Settings>(sub));
        c.settings(*settings.back());
        subs.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp &) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::CallForVersion &) {
        out << kVersion << '\n';
        return kOk;
    } catch (const CLI::ParseError & e) {
        err << CliError(kFailure, "usage", e.what()).to_json().dump() << '\n';
        return kFailure;
    }

    for (std::size_t i = 0; i < subs.size(); ++i) {
        if (!subs[i]->parsed()) {
            continue;
        }
        const std::string started = utc_timestamp();
        std::optional<Resolved> resolved;
        int status = kFailure;
        try {
            resolved.emplace(settings[i]->resolve());
            RunContext ctx{ out, err, *resolved };
            status = commands()[i].run(ctx);
        } catch (const CliError & e) {
            err << e.to_json().dump() << '\n';
            status = e.code();
        } catch (const UnresolvedEpisodes & e) {
            std::vector<std::string> first(e.ids().begin(),
                                           e.ids().begin() + std::min<std::size_t>(10, e.ids().size()));
            err << CliError(kUnresolved, "unresolved_ids", e.what(), json{ { "count", e.ids().size() }, { "ids", first } })
                       .to_json()
                       .dump()
                << '\n';
            status = kUnresolved;
        } catch (const TransportError & e) {
            err << CliError(kTransport, "transport", e.what()).to_json().dump() << '\n';
            status = kTransport;
        } catch (const ConfigError & e) {
            err << CliError(kFailure, "config", e.what()).to_json().dump() << '\n';
        } catch (const InputError & e) {
            err << CliError(kFailure, "input", e.what()).to_json().dump() << '\n';
        } catch (const json::exception & e) {
            err << CliError(kFailure, "input", e.what()).to_json().dump() << '\n';
        } catch (const std::exception & e) {
            err << CliError(kFailure, "internal", e.what()).to_json().dump() << '\n';
        }
        if (resolved && resolved->has("out")) {
            std::error_code ec;
            if (std::filesystem::is_directory(resolved->text("out"), ec)) {
                write_manifest(resolved->text("out"), commands()[i].name, *resolved, started, status);
            }
        }
        return status;
    }
    return kFailure;
}

}  // namespace reflectrl::cli
