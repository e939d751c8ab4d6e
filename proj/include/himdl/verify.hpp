#pragma once

// Graded verification: confusion counts over rain-rate thresholds and the
// categorical/error scores computed from them (POD, FAR, ETS, RMSE, ME).
// Scores whose denominator is empty are reported as absent, never as zero.

#include <himdl/common.hpp>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace himdl {

struct GradeThresholds {
    std::vector<double> values;

    GradeThresholds() : values(standard()) {}
    explicit GradeThresholds(std::vector<double> v) : values(std::move(v)) {
        if (values.empty())
            throw std::invalid_argument("GradeThresholds: empty");
        for (std::size_t i = 1; i < values.size(); ++i)
            if (!(values[i] > values[i - 1]))
                throw std::invalid_argument(
                    "GradeThresholds: must be strictly increasing");
    }

    // The twelve standard grades (mm/h).
    static std::vector<double> standard() {
        return {0.0, 0.1, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 15.0, 20.0, 30.0};
    }

    std::size_t size() const { return values.size(); }
};

struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t tn = 0;

    std::uint64_t total() const { return tp + fp + fn + tn; }
};

inline ConfusionCounts confusion(std::span<const double> retrievals,
                                 std::span<const double> observations,
                                 double threshold) {
    if (retrievals.size() != observations.size())
        throw std::invalid_argument("confusion: length mismatch");
    ConfusionCounts c;
    for (std::size_t i = 0; i < retrievals.size(); ++i) {
        const bool ret_hit = retrievals[i] >= threshold;
        const bool obs_hit = observations[i] >= threshold;
        if (ret_hit && obs_hit) ++c.tp;
        else if (ret_hit && !obs_hit) ++c.fp;
        else if (!ret_hit && obs_hit) ++c.fn;
        else ++c.tn;
    }
    return c;
}

inline std::optional<double> pod(const ConfusionCounts& c) {
    const std::uint64_t den = c.tp + c.fn;
    if (den == 0) return std::nullopt;
    return static_cast<double>(c.tp) / static_cast<double>(den);
}

inline std::optional<double> far(const ConfusionCounts& c) {
    const std::uint64_t den = c.fp + c.tn;
    if (den == 0) return std::nullopt;
    return static_cast<double>(c.fp) / static_cast<double>(den);
}

// Equitable threat score with the random-hits correction
// hits_random = (TP+FP)(TP+FN)/n; ranges over [-1/3, 1].
inline std::optional<double> ets(const ConfusionCounts& c) {
    const double n = static_cast<double>(c.total());
    if (n == 0.0) return std::nullopt;
    const double tp = static_cast<double>(c.tp);
    const double hits_random = (tp + static_cast<double>(c.fp)) *
                               (tp + static_cast<double>(c.fn)) / n;
    const double den =
        tp + static_cast<double>(c.fp) + static_cast<double>(c.fn) -
        hits_random;
    if (den == 0.0) return std::nullopt;
    return (tp - hits_random) / den;
}

struct GradedErrors {
    double rmse = 0.0;
    double me = 0.0;  // mean(retrieval - observation): negative = underestimation
};

// Error scores over the grade "observation >= threshold".
inline std::optional<GradedErrors> graded_errors(
    std::span<const double> retrievals, std::span<const double> observations,
    double threshold) {
    if (retrievals.size() != observations.size())
        throw std::invalid_argument("graded_errors: length mismatch");
    double se = 0.0, e = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < retrievals.size(); ++i) {
        if (observations[i] >= threshold) {
            const double diff = retrievals[i] - observations[i];
            se += diff * diff;
            e += diff;
            ++n;
        }
    }
    if (n == 0) return std::nullopt;
    return GradedErrors{std::sqrt(se / static_cast<double>(n)),
                        e / static_cast<double>(n)};
}

struct GradeRow {
    double threshold = 0.0;
    std::uint64_t grade_count = 0;  // samples with observation >= threshold
    ConfusionCounts counts;
    std::optional<double> rmse;
    std::optional<double> me;
    std::optional<double> pod;
    std::optional<double> far;
    std::optional<double> ets;
};

struct GradedReport {
    std::vector<GradeRow> rows;

    const GradeRow& at_threshold(double th) const {
        for (const auto& r : rows)
            if (r.threshold == th) return r;
        throw std::invalid_argument("GradedReport: unknown threshold");
    }

    const GradeRow& top_grade() const {
        if (rows.empty()) throw std::logic_error("GradedReport: empty");
        return rows.back();
    }
};

inline GradedReport full_report(std::span<const double> retrievals,
                                std::span<const double> observations,
                                const GradeThresholds& thresholds = {}) {
    if (retrievals.size() != observations.size())
        throw std::invalid_argument("full_report: length mismatch");
    GradedReport rep;
    rep.rows.reserve(thresholds.size());
    for (double th : thresholds.values) {
        GradeRow row;
        row.threshold = th;
        row.counts = confusion(retrievals, observations, th);
        row.grade_count = row.counts.tp + row.counts.fn;
        row.pod = pod(row.counts);
        row.far = far(row.counts);
        row.ets = ets(row.counts);
        if (const auto err = graded_errors(retrievals, observations, th)) {
            row.rmse = err->rmse;
            row.me = err->me;
        }
        rep.rows.push_back(row);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Serialization. Column names and order are fixed:
//   threshold,count,tp,fp,fn,tn,rmse,me,pod,far,ets
// Absent scores serialize as empty CSV fields / JSON nulls.
// ---------------------------------------------------------------------------

namespace detail {
inline std::string fmt_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}
inline std::string fmt_opt(const std::optional<double>& v) {
    return v ? fmt_num(*v) : std::string();
}
}  // namespace detail

inline std::string report_csv_header() {
    return "threshold,count,tp,fp,fn,tn,rmse,me,pod,far,ets";
}

inline std::string to_csv(const GradedReport& rep) {
    std::string out = report_csv_header() + "\n";
    for (const auto& r : rep.rows) {
        out += detail::fmt_num(r.threshold);
        out += ',' + std::to_string(r.grade_count);
        out += ',' + std::to_string(r.counts.tp);
        out += ',' + std::to_string(r.counts.fp);
        out += ',' + std::to_string(r.counts.fn);
        out += ',' + std::to_string(r.counts.tn);
        out += ',' + detail::fmt_opt(r.rmse);
        out += ',' + detail::fmt_opt(r.me);
        out += ',' + detail::fmt_opt(r.pod);
        out += ',' + detail::fmt_opt(r.far);
        out += ',' + detail::fmt_opt(r.ets);
        out += '\n';
    }
    return out;
}

inline nlohmann::ordered_json to_json(const GradeRow& r) {
    auto opt = [](const std::optional<double>& v) {
        return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
    };
    return nlohmann::ordered_json{
        {"threshold", r.threshold}, {"count", r.grade_count},
        {"tp", r.counts.tp},        {"fp", r.counts.fp},
        {"fn", r.counts.fn},        {"tn", r.counts.tn},
        {"rmse", opt(r.rmse)},      {"me", opt(r.me)},
        {"pod", opt(r.pod)},        {"far", opt(r.far)},
        {"ets", opt(r.ets)}};
}

inline nlohmann::ordered_json to_json(const GradedReport& rep) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& r : rep.rows) rows.push_back(to_json(r));
    return nlohmann::ordered_json{{"rows", std::move(rows)}};
}

}  // namespace himdl
