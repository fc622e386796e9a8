#pragma once

#include "spinefuse/detect2d.hpp"
#include "spinefuse/error.hpp"
#include "spinefuse/geometry.hpp"
#include "spinefuse/ident2d.hpp"
#include "spinefuse/labels.hpp"
#include "spinefuse/sequence_dp.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace spinefuse {

// ---------------------------------------------------------------------------
// Cross-view correspondence.

enum class AlignmentStatus {
    rank,        // one-to-one with the reference view's detections
    dp_aligned,  // some detections unmatched or new; aligned by gapped DP
    empty,       // view had no detections
};

struct CorrespondenceMember {
    int view;       // position in the input view list
    int detection;  // index into CorrespondenceSet::views[view]
};

struct CorrespondenceSet {
    /// Per-view detections, sorted along the spine.
    std::vector<std::vector<Detection2D>> views;
    int reference_count = 0;
    int reference_view = 0;
    /// One group per vertebra, in spine order. Every reference detection
    /// starts a group; detections no view could account for start new ones.
    std::vector<std::vector<CorrespondenceMember>> groups;
    /// Per view, for each sorted detection, its group or -1 when dropped.
    std::vector<std::vector<int>> assignment;
    std::vector<AlignmentStatus> status;
};

namespace detail {

// Order-preserving partial matching of `a` to `b` minimizing the sum of
// |a_i - b_j| over matched pairs plus `gap` per unmatched element on either
// side. Returns, for each element of `a`, its match in `b` or -1.
inline std::vector<int> gapped_align(const std::vector<double>& a, const std::vector<double>& b, double gap) {
    const std::size_t s = a.size(), l = b.size();
    std::vector<std::vector<double>> f(s + 1, std::vector<double>(l + 1, 0.0));
    for (std::size_t i = 1; i <= s; ++i) f[i][0] = f[i - 1][0] + gap;
    for (std::size_t j = 1; j <= l; ++j) f[0][j] = f[0][j - 1] + gap;
    auto match_cost = [&](std::size_t i, std::size_t j) { return f[i - 1][j - 1] + std::abs(a[i - 1] - b[j - 1]); };
    for (std::size_t i = 1; i <= s; ++i) {
        for (std::size_t j = 1; j <= l; ++j) {
            f[i][j] = std::min({match_cost(i, j), f[i - 1][j] + gap, f[i][j - 1] + gap});
        }
    }
    std::vector<int> out(s, -1);
    std::size_t i = s, j = l;
    while (i > 0 && j > 0) {
        if (f[i][j] == match_cost(i, j)) {
            out[i - 1] = static_cast<int>(j - 1);
            --i, --j;
        } else if (f[i][j] == f[i - 1][j] + gap) {
            --i;
        } else {
            --j;
        }
    }
    return out;
}

} // namespace detail

/// Groups detections of the same vertebra across views.
///
/// The reference count is the most common non-empty per-view count (larger
/// wins ties; the lower median when every count is distinct) and the
/// reference view the first view with that count; its detections seed one
/// group each. Every other view, in input order, is aligned to the current
/// group mean v's by gapped DP, with the gap cost half the median spacing of
/// the reference detections. Unmatched detections open new groups, which
/// survive only with support from at least half of the non-empty views (and
/// never fewer than 2), so a vertebra missed by the reference view is
/// recovered while one-off false positives are dropped.
inline CorrespondenceSet match_views(std::span<const std::vector<Detection2D>> dets_per_view,
                                     RowOrder order = RowOrder::ascending_v) {
    if (dets_per_view.size() < 2) fail_config("match_views needs at least 2 views");
    CorrespondenceSet cs;
    const int k_views = static_cast<int>(dets_per_view.size());
    cs.views.assign(dets_per_view.begin(), dets_per_view.end());
    for (auto& v : cs.views) sort_by_v(v, order);

    std::map<int, int> frequency;
    std::vector<int> counts;
    for (const auto& v : cs.views) {
        if (v.empty()) continue;
        frequency[static_cast<int>(v.size())] += 1;
        counts.push_back(static_cast<int>(v.size()));
    }
    if (counts.empty()) fail_data("no detections in any view");

    int best_freq = 0;
    for (const auto& [count, freq] : frequency) {
        if (freq >= best_freq) {
            best_freq = freq;
            cs.reference_count = count;
        }
    }
    if (best_freq == 1 && counts.size() > 1) {
        std::sort(counts.begin(), counts.end());
        cs.reference_count = counts[(counts.size() - 1) / 2];
    }
    for (int k = 0; k < k_views; ++k) {
        if (static_cast<int>(cs.views[k].size()) == cs.reference_count) {
            cs.reference_view = k;
            break;
        }
    }

    // Spine coordinate: v, negated for descending order, so groups ascend.
    auto spine_v = [order](const Detection2D& d) { return order == RowOrder::ascending_v ? d.uv[1] : -d.uv[1]; };

    struct Cluster {
        double v_sum = 0.0;
        bool reference = false;
        std::vector<CorrespondenceMember> members;
        double mean() const { return v_sum / static_cast<double>(members.size()); }
    };
    std::vector<Cluster> clusters;
    const auto& ref = cs.views[cs.reference_view];
    for (std::size_t i = 0; i < ref.size(); ++i) {
        clusters.push_back({spine_v(ref[i]), true, {{cs.reference_view, static_cast<int>(i)}}});
    }
    double gap = 1e12;  // no spacing information: match as much as possible
    if (ref.size() >= 2) {
        std::vector<double> spacing;
        for (std::size_t i = 1; i < ref.size(); ++i) spacing.push_back(spine_v(ref[i]) - spine_v(ref[i - 1]));
        std::nth_element(spacing.begin(), spacing.begin() + (spacing.size() - 1) / 2, spacing.end());
        const double median = spacing[(spacing.size() - 1) / 2];
        if (median > 0.0) gap = 0.5 * median;
    }

    for (int k = 0; k < k_views; ++k) {
        if (k == cs.reference_view || cs.views[k].empty()) continue;
        std::vector<double> vs, means;
        for (const auto& d : cs.views[k]) vs.push_back(spine_v(d));
        for (const auto& c : clusters) means.push_back(c.mean());
        const auto match = detail::gapped_align(vs, means, gap);
        std::vector<Cluster> fresh;
        for (std::size_t i = 0; i < vs.size(); ++i) {
            const CorrespondenceMember m{k, static_cast<int>(i)};
            if (match[i] >= 0) {
                auto& c = clusters[static_cast<std::size_t>(match[i])];
                c.v_sum += vs[i];
                c.members.push_back(m);
            } else {
                fresh.push_back({vs[i], false, {m}});
            }
        }
        for (auto& c : fresh) clusters.push_back(std::move(c));
        std::stable_sort(clusters.begin(), clusters.end(),
                         [](const Cluster& a, const Cluster& b) { return a.mean() < b.mean(); });
    }

    int non_empty = 0;
    for (const auto& v : cs.views) non_empty += v.empty() ? 0 : 1;
    const std::size_t min_support = static_cast<std::size_t>(std::max(2, (non_empty + 1) / 2));

    cs.assignment.resize(static_cast<std::size_t>(k_views));
    for (int k = 0; k < k_views; ++k) cs.assignment[k].assign(cs.views[k].size(), -1);
    std::vector<int> reference_hits(static_cast<std::size_t>(k_views), 0);
    for (auto& c : clusters) {
        if (!c.reference && c.members.size() < min_support) continue;
        const int group = static_cast<int>(cs.groups.size());
        for (const auto& m : c.members) {
            cs.assignment[m.view][static_cast<std::size_t>(m.detection)] = group;
            if (c.reference) reference_hits[static_cast<std::size_t>(m.view)] += 1;
        }
        std::sort(c.members.begin(), c.members.end(),
                  [](const auto& a, const auto& b) { return a.view < b.view; });
        cs.groups.push_back(std::move(c.members));
    }

    cs.status.resize(static_cast<std::size_t>(k_views));
    for (int k = 0; k < k_views; ++k) {
        const int size = static_cast<int>(cs.views[k].size());
        if (size == 0) {
            cs.status[k] = AlignmentStatus::empty;
        } else if (size == cs.reference_count && reference_hits[static_cast<std::size_t>(k)] == size) {
            cs.status[k] = AlignmentStatus::rank;
        } else {
            cs.status[k] = AlignmentStatus::dp_aligned;
        }
    }
    return cs;
}

// ---------------------------------------------------------------------------
// Least-squares intersection of lines.

struct Triangulation {
    Vec3 point;
    /// Sum of squared perpendicular distances from `point` to the lines.
    double residual = 0.0;
    double condition = 0.0;
};

/// Sum over lines of (a - p)^T (I - n n^T) (a - p).
inline double perpendicular_residual(std::span<const Line3> lines, const Vec3& p) {
    double sum = 0.0;
    for (const auto& l : lines) {
        const Vec3 w = l.a - p;
        sum += (w - w.dot(l.n) * l.n).squaredNorm();
    }
    return sum;
}

/// Solves S p = q with S = sum(I - n n^T), q = sum(I - n n^T) a, the
/// stationarity condition of perpendicular_residual. Work is done relative
/// to the mean anchor point for conditioning.
inline Triangulation triangulate(std::span<const Line3> lines) {
    if (lines.size() < 2) fail_config("triangulate needs at least 2 lines, got " + std::to_string(lines.size()));
    Vec3 shift = Vec3::Zero();
    for (const auto& l : lines) {
        if (!l.a.allFinite() || !l.n.allFinite() || std::abs(l.n.norm() - 1.0) > 1e-12) {
            fail_config("line directions must be finite unit vectors");
        }
        shift += l.a;
    }
    shift /= static_cast<double>(lines.size());

    Eigen::Matrix3d s = Eigen::Matrix3d::Zero();
    Vec3 q = Vec3::Zero();
    for (const auto& l : lines) {
        const Eigen::Matrix3d proj = Eigen::Matrix3d::Identity() - l.n * l.n.transpose();
        s += proj;
        q += proj * (l.a - shift);
    }

    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(s);
    const double lmin = eig.eigenvalues().minCoeff(), lmax = eig.eigenvalues().maxCoeff();
    const double condition = lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity();
    if (!(condition <= 1e8)) {
        std::string views;
        for (const auto& l : lines) views += (views.empty() ? "" : ",") + std::to_string(l.view);
        fail_numeric("degenerate line bundle (near-parallel, condition " + std::to_string(condition) +
                     ") from views [" + views + "]");
    }
    const Eigen::LDLT<Eigen::Matrix3d> ldlt(s);
    Vec3 local = ldlt.solve(q);
    local += ldlt.solve(q - s * local);  // one refinement step

    Triangulation t;
    t.point = local + shift;
    t.residual = perpendicular_residual(lines, t.point);
    t.condition = condition;
    return t;
}

// ---------------------------------------------------------------------------
// Sequence-weighted voting.

/// W_k = (1 - L_k) / sum_a (1 - L_a).
inline std::vector<double> vote_weights(std::span<const double> losses) {
    if (losses.empty()) fail_config("voting needs at least one view");
    double total = 0.0;
    for (double l : losses) total += 1.0 - l;
    if (!(total > 0.0)) fail_numeric("voting weights do not normalize: sum(1 - L_s) <= 0");
    std::vector<double> w;
    w.reserve(losses.size());
    for (double l : losses) w.push_back((1.0 - l) / total);
    return w;
}

/// V = sum_k W_k P_k over maps of identical shape.
inline ProbMap vote_probmaps(std::span<const ProbMap> maps, std::span<const double> losses) {
    if (maps.empty() || maps.size() != losses.size()) fail_config("vote_probmaps needs one loss per map");
    for (const auto& m : maps) {
        if (m.p.rows() != maps[0].p.rows() || m.p.cols() != maps[0].p.cols()) {
            fail_config("vote_probmaps: probability maps differ in shape");
        }
    }
    const auto w = vote_weights(losses);
    ProbMap v{RowMatrix::Zero(maps[0].p.rows(), maps[0].p.cols()), -1};
    for (std::size_t k = 0; k < maps.size(); ++k) v.p += w[k] * maps[k].p;
    return v;
}

// ---------------------------------------------------------------------------
// Full fusion.

struct LabeledCentroid3 {
    Vec3 center;
    VertebraLabel label;
    int support = 0;
    double residual = 0.0;
};

inline nlohmann::json centroids_to_json(std::span<const LabeledCentroid3> centroids) {
    auto out = nlohmann::json::array();
    for (const auto& c : centroids) {
        out.push_back({{"label", label_name(c.label)},
                       {"center_mm", {c.center[0], c.center[1], c.center[2]}},
                       {"support", c.support},
                       {"residual", c.residual}});
    }
    return out;
}

/// One view's inputs: detections and a probability map with one row per
/// detection, in the same order.
struct ViewObservation {
    ProjectionGeometry geometry;
    std::vector<Detection2D> detections;
    ProbMap probmap;
};

struct UnlocalizedGroup {
    int group = 0;
    int label = 0;
    int support = 0;
    std::string reason;
};

struct FusionResult {
    std::vector<LabeledCentroid3> centroids;
    std::vector<UnlocalizedGroup> unlocalized;
    CorrespondenceSet correspondence;
    /// Per view (input order); views without detections carry no loss and
    /// weight 0.
    std::vector<std::optional<double>> view_losses;
    std::vector<double> view_weights;
    ProbMap voted;
    LabelCorrection labels;
};

/// Matches detections across views, triangulates each correspondence
/// group, votes the probability maps weighted by each view's sequence loss
/// and labels the groups with the DP-anchored consecutive chain.
inline FusionResult fuse_all(std::span<const ViewObservation> views, const DpParams& params,
                             RowOrder order = RowOrder::ascending_v) {
    if (views.size() < 2) fail_config("fusion needs K >= 2 views, got " + std::to_string(views.size()));
    params.validate();
    const std::size_t k_views = views.size();
    int categories = -1;

    // Sort each view's detections by v, carrying the probability rows along.
    std::vector<std::vector<Detection2D>> sorted(k_views);
    std::vector<RowMatrix> rows(k_views);
    FusionResult result;
    result.view_losses.assign(k_views, std::nullopt);
    for (std::size_t k = 0; k < k_views; ++k) {
        const auto& obs = views[k];
        if (obs.detections.empty()) continue;
        if (obs.probmap.p.rows() != static_cast<Eigen::Index>(obs.detections.size())) {
            fail_config("view " + std::to_string(k) + ": probability map rows must match detections");
        }
        if (categories < 0) categories = obs.probmap.categories();
        if (obs.probmap.categories() != categories) fail_config("views disagree on the category count");
        std::vector<int> permutation(obs.detections.size());
        std::iota(permutation.begin(), permutation.end(), 0);
        std::stable_sort(permutation.begin(), permutation.end(), [&](int a, int b) {
            return spine_before(obs.detections[a], obs.detections[b], order);
        });
        rows[k].resize(obs.probmap.p.rows(), obs.probmap.p.cols());
        for (std::size_t i = 0; i < permutation.size(); ++i) {
            sorted[k].push_back(obs.detections[permutation[i]]);
            rows[k].row(static_cast<Eigen::Index>(i)) = obs.probmap.p.row(permutation[i]);
        }
        result.view_losses[k] = sequence_loss(ProbMap{rows[k], static_cast<int>(k)}, params);
    }
    if (categories < 0) fail_data("no detections in any view");

    result.correspondence = match_views(sorted, order);
    const auto& cs = result.correspondence;

    std::vector<double> losses;
    for (const auto& l : result.view_losses) {
        if (l) losses.push_back(*l);
    }
    const auto compact_weights = vote_weights(losses);
    result.view_weights.assign(k_views, 0.0);
    for (std::size_t k = 0, c = 0; k < k_views; ++k) {
        if (result.view_losses[k]) result.view_weights[k] = compact_weights[c++];
    }

    // Weighted vote per correspondence row; a row missing from some views is
    // renormalized over the weights of the views that observed it.
    const int n = static_cast<int>(cs.groups.size());
    result.voted = ProbMap{RowMatrix::Zero(n, categories), -1};
    for (int r = 0; r < n; ++r) {
        double wsum = 0.0;
        for (const auto& m : cs.groups[static_cast<std::size_t>(r)]) {
            const double w = result.view_weights[static_cast<std::size_t>(m.view)];
            result.voted.p.row(r) += w * rows[static_cast<std::size_t>(m.view)].row(m.detection);
            wsum += w;
        }
        if (wsum > 0.0) {
            result.voted.p.row(r) /= wsum;
        } else {
            result.voted.p.row(r).setConstant(1.0 / categories);
        }
    }
    result.labels = correct_labels(result.voted, params);

    for (int r = 0; r < n; ++r) {
        const auto& group = cs.groups[static_cast<std::size_t>(r)];
        const int label = result.labels.labels[static_cast<std::size_t>(r)];
        const int support = static_cast<int>(group.size());
        if (support < 2) {
            result.unlocalized.push_back({r, label, support, "fewer than 2 supporting views"});
            continue;
        }
        std::vector<Line3> lines;
        for (const auto& m : group) {
            const auto& obs = views[static_cast<std::size_t>(m.view)];
            lines.push_back(backproject_pixel(obs.geometry, sorted[static_cast<std::size_t>(m.view)][m.detection].uv));
        }
        try {
            const auto t = triangulate(lines);
            result.centroids.push_back({t.point, VertebraLabel{label}, support, t.residual});
        } catch (const Error& e) {
            result.unlocalized.push_back({r, label, support, e.what()});
        }
    }
    std::stable_sort(result.centroids.begin(), result.centroids.end(),
                     [](const auto& a, const auto& b) { return a.label < b.label; });
    return result;
}

} // namespace spinefuse
