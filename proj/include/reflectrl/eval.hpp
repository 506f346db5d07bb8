// SPDX-License-Identifier: Apache-2.0
#pragma once

// Evaluation metrics: multiple-choice accuracy per prompting mode, temporal mIoU and R@t over
// anomaly episodes, and aggregation of externally produced judge scores.

#include "common.hpp"
#include "episode.hpp"
#include "reward.hpp"
#include "transcript.hpp"

#include <algorithm>
#include <iterator>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace reflectrl {

enum class PredictionMode { WithThink, WithoutThink };

inline const char * to_string(PredictionMode m) {
    return m == PredictionMode::WithThink ? "with_think" : "without_think";
}

inline PredictionMode prediction_mode_from_string(const std::string & s) {
    if (s == "with_think") {
        return PredictionMode::WithThink;
    }
    if (s == "without_think") {
        return PredictionMode::WithoutThink;
    }
    throw InputError("unknown prediction mode '" + s + "'");
}

struct PredictionRecord {
    std::string                 episode_id;
    PredictionMode              mode = PredictionMode::WithThink;
    Transcript                  transcript;
    std::optional<AnswerLetter> predicted_answer;
    std::optional<TimeInterval> predicted_interval;
};

struct DerivedPrediction {
    std::optional<AnswerLetter> answer;
    std::optional<TimeInterval> interval;
};

/// WithThink scores the final answer, WithoutThink the first (sole) one. A transcript without any
/// tagged segment is scanned as plain text.
inline DerivedPrediction derive_prediction(const Transcript & t, PredictionMode mode) {
    if (t.segments.empty()) {
        return { letter_in_text(t.raw), extract_interval(t.raw) };
    }
    const auto which = mode == PredictionMode::WithThink ? AnswerChoice::Final : AnswerChoice::Initial;
    return { extract_answer(t, which), extract_final_interval(t) };
}

inline PredictionRecord make_prediction(std::string episode_id, PredictionMode mode, std::string_view raw) {
    PredictionRecord r;
    r.episode_id = std::move(episode_id);
    r.mode       = mode;
    r.transcript = parse_transcript(raw, { .recover = true });
    auto d       = derive_prediction(r.transcript, mode);
    r.predicted_answer   = d.answer;
    r.predicted_interval = d.interval;
    return r;
}

/// {"episode_id", "mode", "transcript"}; mode defaults to with_think.
inline PredictionRecord prediction_from_json(const json & j) {
    try {
        return make_prediction(j.at("episode_id").get<std::string>(),
                               prediction_mode_from_string(j.value("mode", std::string("with_think"))),
                               j.at("transcript").get<std::string>());
    } catch (const json::exception & e) {
        throw InputError(std::string("prediction: ") + e.what());
    }
}

using EpisodeMap = std::map<std::string, Episode, std::less<>>;

class UnresolvedEpisodes : public std::runtime_error {
  public:
    explicit UnresolvedEpisodes(std::vector<std::string> ids) :
        std::runtime_error("unresolved episode ids: " + join_first(ids)),
        ids_(std::move(ids)) {}

    const std::vector<std::string> & ids() const { return ids_; }

  private:
    static std::string join_first(const std::vector<std::string> & ids) {
        std::string out;
        for (std::size_t i = 0; i < ids.size() && i < 10; ++i) {
            out += (i ? ", " : "") + ids[i];
        }
        return out;
    }

    std::vector<std::string> ids_;
};

inline void check_resolvable(const std::vector<PredictionRecord> & records, const EpisodeMap & gts) {
    std::vector<std::string> missing;
    std::set<std::string>    seen;
    for (const auto & r : records) {
        if (gts.find(r.episode_id) == gts.end() && seen.insert(r.episode_id).second) {
            missing.push_back(r.episode_id);
        }
    }
    if (!missing.empty()) {
        throw UnresolvedEpisodes(std::move(missing));
    }
}

struct Rate {
    std::size_t hits  = 0;
    std::size_t total = 0;

    double value() const { return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total); }

    friend bool operator==(const Rate &, const Rate &) = default;
};

/// Share of `mode` records whose predicted answer equals the ground truth; absent answers are wrong.
inline Rate qa_accuracy(const std::vector<PredictionRecord> & records, const EpisodeMap & gts, PredictionMode mode) {
    check_resolvable(records, gts);
    Rate r;
    for (const auto & rec : records) {
        if (rec.mode != mode) {
            continue;
        }
        ++r.total;
        const auto & ep = gts.find(rec.episode_id)->second;
        r.hits += rec.predicted_answer && *rec.predicted_answer == ep.gt_answer ? 1 : 0;
    }
    return r;
}

inline const std::vector<double> kDefaultThresholds = { 0.3, 0.5, 0.7 };

struct GroundingMetrics {
    std::size_t         count = 0;  // records on anomaly episodes
    double              miou  = 0.0;
    std::vector<double> thresholds;
    std::vector<Rate>   recall;  // recall[i] pairs with thresholds[i]

    friend bool operator==(const GroundingMetrics &, const GroundingMetrics &) = default;
};

inline void validate_thresholds(const std::vector<double> & thresholds) {
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        if (!(thresholds[i] > 0.0 && thresholds[i] <= 1.0)) {
            throw ConfigError("thresholds must lie in (0, 1]");
        }
        if (i > 0 && thresholds[i] < thresholds[i - 1]) {
            throw ConfigError("thresholds must be sorted ascending");
        }
    }
}

/// IoU of one record against its episode; absent predictions score 0.
inline double record_iou(const PredictionRecord & rec, const Episode & ep) {
    if (!rec.predicted_interval || !ep.gt_interval) {
        return 0.0;
    }
    return temporal_iou(*rec.predicted_interval, *ep.gt_interval);
}

/// mIoU and R@t over records whose episode is an anomaly.
inline GroundingMetrics grounding_metrics(const std::vector<PredictionRecord> & records, const EpisodeMap & gts,
                                          const std::vector<double> & thresholds = kDefaultThresholds) {
    validate_thresholds(thresholds);
    check_resolvable(records, gts);
    GroundingMetrics m;
    m.thresholds = thresholds;
    m.recall.assign(thresholds.size(), Rate{});
    double sum = 0.0;
    for (const auto & rec : records) {
        const auto & ep = gts.find(rec.episode_id)->second;
        if (!ep.is_anomaly) {
            continue;
        }
        const double iou = record_iou(rec, ep);
        ++m.count;
        sum += iou;
        for (std::size_t i = 0; i < thresholds.size(); ++i) {
            ++m.recall[i].total;
            m.recall[i].hits += iou >= thresholds[i] ? 1 : 0;
        }
    }
    m.miou = m.count == 0 ? 0.0 : sum / static_cast<double>(m.count);
    return m;
}

struct JudgeScores {
    double cls = 0.0;
    double km  = 0.0;
    double flu = 0.0;
    double inf = 0.0;
    double fac = 0.0;
    double total = 0.0;

    double dimension_sum() const { return cls + km + flu + inf + fac; }

    void validate() const {
        for (double v : { cls, km, flu, inf, fac }) {
            if (!(v >= 0.0 && v <= 10.0)) {
                throw InputError("judge score outside [0, 10]");
            }
        }
        if (std::abs(total - dimension_sum()) > 1e-9) {
            throw InputError("judge total does not equal the sum of its dimensions");
        }
    }

    static JudgeScores from_dimensions(double cls, double km, double flu, double inf, double fac) {
        JudgeScores s{ cls, km, flu, inf, fac, 0.0 };
        s.total = s.dimension_sum();
        return s;
    }

    friend bool operator==(const JudgeScores &, const JudgeScores &) = default;
};

/// One judge line. `reported_total` keeps a supplied total that disagrees with the dimension sum.
struct JudgeRow {
    std::string           episode_id;
    std::string           dataset;
    JudgeScores           scores;
    std::optional<double> reported_total;
};

inline JudgeRow judge_row_from_json(const json & j) {
    JudgeRow row;
    try {
        row.episode_id = j.value("episode_id", "");
        row.dataset    = j.value("dataset", "");
        row.scores     = JudgeScores::from_dimensions(j.at("cls").get<double>(), j.at("km").get<double>(),
                                                      j.at("flu").get<double>(), j.at("inf").get<double>(),
                                                      j.at("fac").get<double>());
        if (j.contains("total") && !j["total"].is_null()) {
            const double t = j["total"].get<double>();
            if (std::abs(t - row.scores.total) > 1e-9) {
                row.reported_total = t;
            }
        }
    } catch (const json::exception & e) {
        throw InputError(std::string("judge scores: ") + e.what());
    }
    row.scores.validate();
    return row;
}

/// Dimension-wise mean; the total is the sum of the mean dimensions.
inline JudgeScores aggregate_judges(const std::vector<JudgeScores> & rows) {
    if (rows.empty()) {
        throw InputError("aggregate_judges: no scores");
    }
    double cls = 0, km = 0, flu = 0, inf = 0, fac = 0;
    for (const auto & r : rows) {
        r.validate();
        cls += r.cls;
        km += r.km;
        flu += r.flu;
        inf += r.inf;
        fac += r.fac;
    }
    const double n = static_cast<double>(rows.size());
    return JudgeScores::from_dimensions(cls / n, km / n, flu / n, inf / n, fac / n);
}

struct DatasetReport {
    std::string                dataset;
    std::size_t                records = 0;
    Rate                       acc_without_think;
    Rate                       acc_with_think;
    GroundingMetrics           grounding;
    std::optional<JudgeScores> judges;
    std::size_t                judge_rows = 0;
    std::size_t                judge_total_discrepancies = 0;

    friend bool operator==(const DatasetReport &, const DatasetReport &) = default;
};

struct EvalReport {
    std::vector<double>        thresholds = kDefaultThresholds;
    std::vector<DatasetReport> datasets;

    friend bool operator==(const EvalReport &, const EvalReport &) = default;
};

/// Groups by the episode's dataset tag. Every dataset present in `gts` gets a row, with zero
/// counts when no prediction references it. Grounding is measured on with-think records, so each
/// episode contributes one interval.
inline EvalReport build_eval_report(const std::vector<PredictionRecord> & records, const EpisodeMap & gts,
                                    const std::vector<JudgeRow> & judges = {},
                                    const std::vector<double> & thresholds = kDefaultThresholds) {
    validate_thresholds(thresholds);
    check_resolvable(records, gts);
    std::map<std::string, std::vector<PredictionRecord>> by_dataset;
    for (const auto & [id, ep] : gts) {
        by_dataset[ep.dataset_tag];
    }
    for (const auto & rec : records) {
        by_dataset[gts.find(rec.episode_id)->second.dataset_tag].push_back(rec);
    }
    std::map<std::string, std::vector<const JudgeRow *>> judges_by_dataset;
    for (const auto & row : judges) {
        std::string ds = row.dataset;
        if (ds.empty()) {
            auto it = gts.find(row.episode_id);
            if (it == gts.end()) {
                throw UnresolvedEpisodes({ row.episode_id });
            }
            ds = it->second.dataset_tag;
        }
        judges_by_dataset[ds].push_back(&row);
        by_dataset[ds];
    }

    EvalReport report;
    report.thresholds = thresholds;
    for (const auto & [name, recs] : by_dataset) {
        DatasetReport d;
        d.dataset           = name;
        d.records           = recs.size();
        d.acc_without_think = qa_accuracy(recs, gts, PredictionMode::WithoutThink);
        d.acc_with_think    = qa_accuracy(recs, gts, PredictionMode::WithThink);
        std::vector<PredictionRecord> reasoning;
        std::copy_if(recs.begin(), recs.end(), std::back_inserter(reasoning),
                     [](const PredictionRecord & r) { return r.mode == PredictionMode::WithThink; });
        d.grounding = grounding_metrics(reasoning, gts, thresholds);
        auto jit = judges_by_dataset.find(name);
        if (jit != judges_by_dataset.end() && !jit->second.empty()) {
            std::vector<JudgeScores> rows;
            for (const auto * row : jit->second) {
                rows.push_back(row->scores);
                d.judge_total_discrepancies += row->reported_total ? 1 : 0;
            }
            d.judges     = aggregate_judges(rows);
            d.judge_rows = rows.size();
        }
        report.datasets.push_back(std::move(d));
    }
    return report;
}

inline json rate_json(const Rate & r) {
    return { { "hits", r.hits }, { "total", r.total }, { "rate", r.value() } };
}

inline Rate rate_from_json(const json & j) {
    return { j.at("hits").get<std::size_t>(), j.at("total").get<std::size_t>() };
}

inline json to_json(const EvalReport & report) {
    json j;
    j["thresholds"] = report.thresholds;
    j["datasets"]   = json::array();
    for (const auto & d : report.datasets) {
        json jd;
        jd["dataset"]           = d.dataset;
        jd["records"]           = d.records;
        jd["acc_without_think"] = rate_json(d.acc_without_think);
        jd["acc_with_think"]    = rate_json(d.acc_with_think);
        json g;
        g["count"]  = d.grounding.count;
        g["miou"]   = d.grounding.miou;
        g["recall"] = json::array();
        for (std::size_t i = 0; i < d.grounding.thresholds.size(); ++i) {
            auto r = rate_json(d.grounding.recall[i]);
            r["threshold"] = d.grounding.thresholds[i];
            g["recall"].push_back(std::move(r));
        }
        jd["grounding"] = std::move(g);
        if (d.judges) {
            jd["judges"] = {
                { "cls", d.judges->cls }, { "km", d.judges->km },   { "flu", d.judges->flu },
                { "inf", d.judges->inf }, { "fac", d.judges->fac }, { "total", d.judges->total },
            };
        } else {
            jd["judges"] = nullptr;
        }
        jd["judge_rows"]                = d.judge_rows;
        jd["judge_total_discrepancies"] = d.judge_total_discrepancies;
        j["datasets"].push_back(std::move(jd));
    }
    return j;
}

inline EvalReport eval_report_from_json(const json & j) {
    EvalReport report;
    try {
        report.thresholds = j.at("thresholds").get<std::vector<double>>();
        for (const auto & jd : j.at("datasets")) {
            DatasetReport d;
            d.dataset           = jd.at("dataset").get<std::string>();
            d.records           = jd.at("records").get<std::size_t>();
            d.acc_without_think = rate_from_json(jd.at("acc_without_think"));
            d.acc_with_think    = rate_from_json(jd.at("acc_with_think"));
            const auto & g      = jd.at("grounding");
            d.grounding.count   = g.at("count").get<std::size_t>();
            d.grounding.miou    = g.at("miou").get<double>();
            for (const auto & r : g.at("recall")) {
                d.grounding.thresholds.push_back(r.at("threshold").get<double>());
                d.grounding.recall.push_back(rate_from_json(r));
            }
            const auto & jj = jd.at("judges");
            if (!jj.is_null()) {
                d.judges = JudgeScores{ jj.at("cls").get<double>(), jj.at("km").get<double>(),
                                        jj.at("flu").get<double>(), jj.at("inf").get<double>(),
                                        jj.at("fac").get<double>(), jj.at("total").get<double>() };
            }
            d.judge_rows                = jd.at("judge_rows").get<std::size_t>();
            d.judge_total_discrepancies = jd.at("judge_total_discrepancies").get<std::size_t>();
            report.datasets.push_back(std::move(d));
        }
    } catch (const json::exception & e) {
        throw InputError(std::string("eval report: ") + e.what());
    }
    return report;
}

enum class ReportFormat { Json, Markdown, Csv };

namespace detail {

inline std::string pct(const Rate & r) {
    return r.total == 0 ? "-" : format_fixed(100.0 * r.value(), 2);
}

inline std::string threshold_label(double t) {
    auto s = format_fixed(t, 2);
    while (s.back() == '0') {
        s.pop_back();
    }
    if (s.back() == '.') {
        s.pop_back();
    }
    return "R@" + s;
}

inline bool has_judges(const EvalReport & report) {
    return std::any_of(report.datasets.begin(), report.datasets.end(), [](const DatasetReport & d) { return d.judges.has_value(); });
}

inline std::vector<std::string> header(const EvalReport & report) {
    std::vector<std::string> cols = { "Dataset", "Records", "Acc w/o think", "Acc w/ think", "mIoU" };
    for (double t : report.thresholds) {
        cols.push_back(threshold_label(t));
    }
    if (has_judges(report)) {
        for (const char * c : { "CLS", "KM", "FLU", "INF", "FAC", "Total" }) {
            cols.emplace_back(c);
        }
    }
    return cols;
}

inline std::vector<std::string> row_cells(const DatasetReport & d, std::size_t n_thresholds, bool judge_columns) {
    std::vector<std::string> cells = { d.dataset.empty() ? "(untagged)" : d.dataset, std::to_string(d.records),
                                       pct(d.acc_without_think), pct(d.acc_with_think) };
    const bool grounded = d.grounding.count > 0;
    cells.push_back(grounded ? format_fixed(100.0 * d.grounding.miou, 2) : "-");
    for (std::size_t i = 0; i < n_thresholds; ++i) {
        cells.push_back(i < d.grounding.recall.size() ? pct(d.grounding.recall[i]) : "-");
    }
    if (!judge_columns) {
        return cells;
    }
    if (d.judges) {
        for (double v : { d.judges->cls, d.judges->km, d.judges->flu, d.judges->inf, d.judges->fac, d.judges->total }) {
            cells.push_back(format_fixed(v, 2));
        }
    } else {
        cells.insert(cells.end(), 6, "-");
    }
    return cells;
}

}  // namespace detail

/// Accuracy, mIoU and recall are rendered as percentages with two decimals; "-" marks an empty denominator.
/// Judge columns appear only when some dataset has judge scores.
inline std::string render_report(const EvalReport & report, ReportFormat format) {
    if (format == ReportFormat::Json) {
        return to_json(report).dump(2) + "\n";
    }
    const auto cols = detail::header(report);
    std::string out;
    if (format == ReportFormat::Markdown) {
        auto line = [&](const std::vector<std::string> & cells) {
            out += "|";
            for (const auto & c : cells) {
                out += " " + c + " |";
            }
            out += "\n";
        };
        line(cols);
        out += "|";
        for (std::size_t i = 0; i < cols.size(); ++i) {
            out += i == 0 ? " --- |" : " ---: |";
        }
        out += "\n";
        for (const auto & d : report.datasets) {
            line(detail::row_cells(d, report.thresholds.size(), detail::has_judges(report)));
        }
        return out;
    }
    auto csv_cell = [](const std::string & s) {
        if (s.find_first_of(",\"\n") == std::string::npos) {
            return s;
        }
        std::string q = "\"";
        for (char c : s) {
            q += c == '"' ? std::string("\"\"") : std::string(1, c);
        }
        return q + "\"";
    };
    auto line = [&](const std::vector<std::string> & cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            out += (i ? "," : "") + csv_cell(cells[i]);
        }
        out += "\n";
    };
    line(cols);
    for (const auto & d : report.datasets) {
        line(detail::row_cells(d, report.thresholds.size(), detail::has_judges(report)));
    }
    return out;
}

}  // namespace reflectrl
