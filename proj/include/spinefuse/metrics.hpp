#pragma once

#include "spinefuse/error.hpp"
#include "spinefuse/fusion.hpp"
#include "spinefuse/labels.hpp"
#include "spinefuse/volume.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <tuple>
#include <vector>

namespace spinefuse {

struct VertebraOutcome {
    int label_gt = 0;
    /// 0 when the vertebra was not matched.
    int label_pred = 0;
    /// NaN when the vertebra was not matched.
    double error_mm = std::numeric_limits<double>::quiet_NaN();
};

struct EvalResult {
    double id_rate = 0.0;
    /// Mean over matched pairs only; 0 when nothing matched.
    double l_error_mm = 0.0;
    std::vector<VertebraOutcome> per_vertebra;
    int total = 0;
    int matched = 0;
    int missed = 0;
    int spurious = 0;
};

/// Greedy one-to-one matching of ground truth to predictions by ascending
/// distance (ties by gt then prediction index) within match_radius_mm.
/// Id-Rate counts correct labels over all ground truth; L-Error averages
/// distance over matched pairs.
inline EvalResult evaluate(std::span<const LabeledCentroid3> pred, const Annotation3& gt, double match_radius_mm = 20.0) {
    if (gt.empty()) fail_data("evaluation needs a non-empty ground truth");
    if (!(match_radius_mm > 0.0)) fail_config("match radius must be > 0");
    const auto& truth = gt.entries();

    std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        for (std::size_t j = 0; j < pred.size(); ++j) {
            const double d = (truth[i].center - pred[j].center).norm();
            if (d <= match_radius_mm) pairs.emplace_back(d, i, j);
        }
    }
    std::sort(pairs.begin(), pairs.end());

    EvalResult r;
    r.total = static_cast<int>(truth.size());
    r.per_vertebra.resize(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) r.per_vertebra[i].label_gt = truth[i].label.index;
    std::vector<bool> gt_used(truth.size(), false), pred_used(pred.size(), false);
    int correct = 0;
    double error_sum = 0.0;
    for (const auto& [d, i, j] : pairs) {
        if (gt_used[i] || pred_used[j]) continue;
        gt_used[i] = pred_used[j] = true;
        r.per_vertebra[i].label_pred = pred[j].label.index;
        r.per_vertebra[i].error_mm = d;
        ++r.matched;
        error_sum += d;
        if (pred[j].label == truth[i].label) ++correct;
    }
    r.missed = r.total - r.matched;
    r.spurious = static_cast<int>(pred.size()) - r.matched;
    r.id_rate = static_cast<double>(correct) / r.total;
    r.l_error_mm = r.matched > 0 ? error_sum / r.matched : 0.0;
    return r;
}

inline nlohmann::json eval_to_json(const EvalResult& r) {
    auto per = nlohmann::json::array();
    for (const auto& v : r.per_vertebra) {
        nlohmann::json item = {{"label_gt", label_name(VertebraLabel{v.label_gt})}};
        item["label_pred"] = v.label_pred > 0 ? nlohmann::json(label_name(VertebraLabel{v.label_pred})) : nlohmann::json(nullptr);
        item["error_mm"] = std::isnan(v.error_mm) ? nlohmann::json(nullptr) : nlohmann::json(v.error_mm);
        per.push_back(std::move(item));
    }
    return {{"id_rate", r.id_rate},   {"l_error_mm", r.l_error_mm}, {"total", r.total},
            {"matched", r.matched},   {"missed", r.missed},         {"spurious", r.spurious},
            {"per_vertebra", std::move(per)}};
}

struct SampleStats {
    double mean = 0.0;
    double stdev = 0.0;  // sample standard deviation (n - 1)
    int count = 0;
};

inline SampleStats sample_stats(std::span<const double> values) {
    SampleStats s;
    s.count = static_cast<int>(values.size());
    if (values.empty()) return s;
    for (double v : values) s.mean += v;
    s.mean /= s.count;
    if (s.count > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.stdev = std::sqrt(ss / (s.count - 1));
    }
    return s;
}

} // namespace spinefuse
