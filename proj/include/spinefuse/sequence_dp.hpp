#pragma once

#include "spinefuse/error.hpp"
#include "spinefuse/ident2d.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <vector>

namespace spinefuse {

/// Rewards in the chain recurrence: beta for staying on the diagonal,
/// alpha for an off-by-one neighbour.
struct DpParams {
    double alpha = 0.1;
    double beta = 0.8;

    void validate() const {
        if (!(alpha >= 0.0 && alpha <= beta && beta <= 1.0 && beta > 0.0)) {
            fail_config("DP parameters require 0 <= alpha <= beta <= 1 and beta > 0");
        }
    }
};

struct DpResult {
    RowMatrix opt;
    double best_score = 0.0;
    /// 1-based column of the last-row maximum (smallest on ties).
    int best_last_col = 1;
    double seq_loss = 0.0;
};

/// OPT[i,j] = P[i,j] on the first row and column; elsewhere
/// OPT[i-1,j-1] + max(alpha P[i,j-1], beta P[i,j], alpha P[i,j+1]) with
/// P[i,c+1] taken as 0.
inline DpResult dp_table(const ProbMap& pm, const DpParams& params) {
    params.validate();
    const auto& p = pm.p;
    const Eigen::Index n = p.rows(), c = p.cols();
    if (n < 1 || c < 1) fail_config("dp_table needs a non-empty probability map");

    DpResult r;
    r.opt.resize(n, c);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < c; ++j) {
            if (i == 0 || j == 0) {
                r.opt(i, j) = p(i, j);
                continue;
            }
            const double right = j + 1 < c ? params.alpha * p(i, j + 1) : 0.0;
            const double step = std::max({params.alpha * p(i, j - 1), params.beta * p(i, j), right});
            r.opt(i, j) = r.opt(i - 1, j - 1) + step;
        }
    }
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < c; ++j) {
        if (r.opt(n - 1, j) > r.opt(n - 1, best)) best = j;
    }
    r.best_last_col = static_cast<int>(best) + 1;
    r.best_score = r.opt(n - 1, best);
    r.seq_loss = 1.0 - r.best_score / (params.beta * static_cast<double>(n));
    return r;
}

/// 1 - max(OPT[n,:]) / (beta n). Not clamped; confident sequences go below 0.
inline double sequence_loss(const ProbMap& pm, const DpParams& params) { return dp_table(pm, params).seq_loss; }

struct LabelCorrection {
    /// Final 1-based labels, one per row.
    std::vector<int> labels;
    /// False when the anchored chain would run below label 1; `labels` then
    /// holds the per-row argmax instead.
    bool anchored = true;
    std::vector<int> row_argmax;
    DpResult dp;
};

/// Labels j* - n + 1 .. j*, anchored at the DP argmax j* of the last row.
inline LabelCorrection correct_labels(const ProbMap& pm, const DpParams& params) {
    LabelCorrection out;
    out.dp = dp_table(pm, params);
    out.row_argmax = single_view_labels(pm);
    const int n = pm.rows();
    const int first = out.dp.best_last_col - n + 1;
    if (first < 1) {
        out.anchored = false;
        out.labels = out.row_argmax;
        return out;
    }
    out.labels.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.labels[static_cast<std::size_t>(i)] = first + i;
    return out;
}

inline nlohmann::json dp_result_to_json(const DpResult& r) {
    auto table = nlohmann::json::array();
    for (Eigen::Index i = 0; i < r.opt.rows(); ++i) {
        auto row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < r.opt.cols(); ++j) row.push_back(r.opt(i, j));
        table.push_back(std::move(row));
    }
    return {{"table", std::move(table)},
            {"best_score", r.best_score},
            {"best_last_col", r.best_last_col},
            {"seq_loss", r.seq_loss}};
}

} // namespace spinefuse
