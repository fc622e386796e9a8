#pragma once

#include "spinefuse/detect2d.hpp"
#include "spinefuse/error.hpp"
#include "spinefuse/geometry.hpp"
#include "spinefuse/labels.hpp"
#include "spinefuse/random.hpp"

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace spinefuse {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// n x c per-vertebra class probabilities for one view; rows follow the
/// order of the detections they were aggregated from.
struct ProbMap {
    RowMatrix p;
    int view_index = 0;

    int rows() const { return static_cast<int>(p.rows()); }
    int categories() const { return static_cast<int>(p.cols()); }

    void validate() const {
        if (p.rows() < 1 || p.cols() < 1) fail_config("probability map must be at least 1x1");
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            double sum = 0.0;
            for (Eigen::Index j = 0; j < p.cols(); ++j) {
                const double v = p(i, j);
                if (!(v >= 0.0 && v <= 1.0 + 1e-12)) fail_config("probability map entries must lie in [0, 1]");
                sum += v;
            }
            if (std::abs(sum - 1.0) > 1e-6) {
                fail_config("probability map row " + std::to_string(i) + " sums to " + std::to_string(sum));
            }
        }
    }
};

inline nlohmann::json probmap_to_json(const ProbMap& pm) {
    auto rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < pm.p.rows(); ++i) {
        auto row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < pm.p.cols(); ++j) row.push_back(pm.p(i, j));
        rows.push_back(std::move(row));
    }
    return {{"view", pm.view_index}, {"labels_c", pm.categories()}, {"rows", std::move(rows)}};
}

inline ProbMap probmap_from_json(const nlohmann::json& j) {
    try {
        const int c = j.at("labels_c").get<int>();
        const auto& rows = j.at("rows");
        ProbMap pm{RowMatrix(static_cast<Eigen::Index>(rows.size()), c), j.at("view").get<int>()};
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != static_cast<std::size_t>(c)) fail_data("probability map row has wrong length");
            for (int k = 0; k < c; ++k) pm.p(static_cast<Eigen::Index>(i), k) = rows[i][k].get<double>();
        }
        return pm;
    } catch (const nlohmann::json::exception& e) {
        fail_data(std::string("malformed probability map: ") + e.what());
    }
}

/// Ground-truth class per detector pixel; 0 marks background.
struct LabelImage {
    DetectorGrid grid;
    std::vector<int> labels;

    int at(int iu, int iv) const { return labels[static_cast<std::size_t>(iv) * grid.nu + iu]; }
};

struct ProjectedLabel {
    VertebraLabel label;
    Vec2 uv;
};

/// Each pixel takes the label of the nearest projected centroid within
/// radius_mm, else background.
inline LabelImage label_image_from_centroids(std::span<const ProjectedLabel> centroids, const DetectorGrid& grid,
                                             double radius_mm) {
    grid.validate();
    LabelImage out{grid, std::vector<int>(grid.pixel_count(), 0)};
    const double r2 = radius_mm * radius_mm;
    for (int iv = 0; iv < grid.nv; ++iv) {
        for (int iu = 0; iu < grid.nu; ++iu) {
            const Vec2 uv = grid.pixel_to_uv(iu, iv);
            double best = r2;
            int label = 0;
            for (const auto& c : centroids) {
                const double d2 = (c.uv - uv).squaredNorm();
                if (d2 < best || (d2 == best && (label == 0 || c.label.index < label))) {
                    best = d2;
                    label = c.label.index;
                }
            }
            out.labels[static_cast<std::size_t>(iv) * grid.nu + iu] = label;
        }
    }
    return out;
}

/// Stand-in for the identification network's per-pixel softmax.
struct ClassifierOracleSpec {
    /// Row-stochastic c x c matrix: row t is the output for true class t+1.
    RowMatrix confusion;
    /// Dirichlet concentration of per-pixel noise around the confusion row;
    /// none = exact.
    std::optional<double> pixel_noise;
    std::uint64_t seed = 0;

    int categories() const { return static_cast<int>(confusion.rows()); }

    void validate() const {
        if (confusion.rows() < 1 || confusion.rows() != confusion.cols()) fail_config("confusion must be square");
        for (Eigen::Index i = 0; i < confusion.rows(); ++i) {
            if ((confusion.row(i).array() < 0.0).any() || std::abs(confusion.row(i).sum() - 1.0) > 1e-9) {
                fail_config("confusion rows must be non-negative and sum to 1");
            }
        }
        if (pixel_noise && !(*pixel_noise > 0.0)) fail_config("pixel noise concentration must be > 0");
    }
};

/// Confusion that leaks `eps` to each adjacent label (one side only at the
/// ends) and keeps the rest on the true label.
inline RowMatrix neighbor_confusion(int c, double eps) {
    if (c < 1) fail_config("category count must be >= 1");
    if (!(eps >= 0.0 && eps <= 0.5)) fail_config("neighbour confusion must be in [0, 0.5]");
    RowMatrix m = RowMatrix::Zero(c, c);
    for (int t = 0; t < c; ++t) {
        double kept = 1.0;
        if (t > 0) m(t, t - 1) = eps, kept -= eps;
        if (t + 1 < c) m(t, t + 1) = eps, kept -= eps;
        m(t, t) = kept;
    }
    return m;
}

/// Per-pixel class probabilities, either stored densely or produced on
/// demand by the classifier oracle.
class PixelProbField {
public:
    /// Dense field, values pixel-major with c entries per pixel.
    PixelProbField(DetectorGrid grid, int categories, std::vector<float> values)
        : grid_(grid), categories_(categories), dense_(std::move(values)) {
        grid_.validate();
        if (categories_ < 1) fail_config("category count must be >= 1");
        if (dense_.size() != grid_.pixel_count() * static_cast<std::size_t>(categories_)) {
            fail_config("dense probability field has the wrong size");
        }
        for (std::size_t px = 0; px < grid_.pixel_count(); ++px) {
            double sum = 0.0;
            for (int k = 0; k < categories_; ++k) {
                const float v = dense_[px * categories_ + k];
                if (!(v >= 0.0f)) fail_config("probability field values must be >= 0");
                sum += v;
            }
            if (std::abs(sum - 1.0) > 1e-6) fail_config("probability field pixels must sum to 1");
        }
    }

    /// Oracle-backed field.
    PixelProbField(std::shared_ptr<const LabelImage> labels, ClassifierOracleSpec spec)
        : grid_(labels->grid), categories_(spec.categories()), labels_(std::move(labels)), spec_(std::move(spec)) {
        spec_.validate();
    }

    const DetectorGrid& grid() const noexcept { return grid_; }
    int categories() const noexcept { return categories_; }

    void probabilities(int iu, int iv, std::span<double> out) const {
        const std::size_t flat = static_cast<std::size_t>(iv) * grid_.nu + iu;
        if (!labels_) {
            for (int k = 0; k < categories_; ++k) out[k] = dense_[flat * categories_ + k];
            return;
        }
        const int truth = labels_->labels[flat];
        if (truth < 0 || truth > categories_) fail_config("label image holds a label outside [0, c]");
        if (truth == 0) {
            for (int k = 0; k < categories_; ++k) out[k] = 1.0 / categories_;
            return;
        }
        const auto row = spec_.confusion.row(truth - 1);
        if (!spec_.pixel_noise) {
            for (int k = 0; k < categories_; ++k) out[k] = row(k);
            return;
        }
        // Dirichlet draw centered on the confusion row: unbiased per pixel.
        SplitMix64 rng(derive_seed(spec_.seed, flat, 0x6669656c64ULL));
        const double kappa = *spec_.pixel_noise;
        double sum = 0.0;
        for (int k = 0; k < categories_; ++k) {
            out[k] = 0.0;
            if (row(k) > 0.0) {
                std::gamma_distribution<double> gamma(kappa * row(k), 1.0);
                out[k] = gamma(rng);
            }
            sum += out[k];
        }
        if (sum > 0.0) {
            for (int k = 0; k < categories_; ++k) out[k] /= sum;
        } else {
            for (int k = 0; k < categories_; ++k) out[k] = row(k);
        }
    }

private:
    DetectorGrid grid_;
    int categories_;
    std::vector<float> dense_;
    std::shared_ptr<const LabelImage> labels_;
    ClassifierOracleSpec spec_;
};

/// Oracle field: per pixel, the confusion row of the true class, or a
/// Dirichlet sample with that mean when pixel_noise is set. Pure in (labels, spec).
inline PixelProbField oracle_field(std::shared_ptr<const LabelImage> labels, ClassifierOracleSpec spec) {
    if (!labels) fail_config("oracle_field needs a label image");
    return PixelProbField(std::move(labels), std::move(spec));
}

struct AggregateResult {
    ProbMap map;
    /// Index into the input detections for each row of `map`.
    std::vector<int> rows_from;
    /// Detections whose square held no pixel centers.
    std::vector<int> excluded;
};

/// Row i is the mean probability vector over pixels whose centers lie in
/// the half-open axis-aligned square [c - s/2, c + s/2)^2 around detection
/// i, renormalized. Squares are clipped at the panel border; rows keep the
/// input order.
inline AggregateResult aggregate_probmap(const PixelProbField& field, std::span<const Detection2D> dets,
                                         double square_mm = 22.0, int view_index = 0) {
    if (!(square_mm > 0.0)) fail_config("aggregation square must be > 0 mm");
    if (dets.empty()) fail_config("aggregate_probmap needs at least one detection");
    const auto& g = field.grid();
    const int c = field.categories();
    std::vector<Eigen::RowVectorXd> rows;
    AggregateResult result;
    std::vector<double> px(static_cast<std::size_t>(c));
    for (std::size_t d = 0; d < dets.size(); ++d) {
        const Vec2 lo = g.uv_to_pixel(dets[d].uv - Vec2(0.5 * square_mm, 0.5 * square_mm));
        const Vec2 hi = g.uv_to_pixel(dets[d].uv + Vec2(0.5 * square_mm, 0.5 * square_mm));
        const int u0 = std::max(0, static_cast<int>(std::ceil(lo[0])));
        const int v0 = std::max(0, static_cast<int>(std::ceil(lo[1])));
        const int u1 = std::min(g.nu, static_cast<int>(std::ceil(hi[0])));
        const int v1 = std::min(g.nv, static_cast<int>(std::ceil(hi[1])));
        if (u1 <= u0 || v1 <= v0) {
            result.excluded.push_back(static_cast<int>(d));
            continue;
        }
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(c);
        for (int iv = v0; iv < v1; ++iv) {
            for (int iu = u0; iu < u1; ++iu) {
                field.probabilities(iu, iv, px);
                for (int k = 0; k < c; ++k) acc[k] += px[static_cast<std::size_t>(k)];
            }
        }
        acc /= acc.sum();
        rows.push_back(std::move(acc));
        result.rows_from.push_back(static_cast<int>(d));
    }
    result.map.view_index = view_index;
    result.map.p.resize(static_cast<Eigen::Index>(rows.size()), c);
    for (std::size_t i = 0; i < rows.size(); ++i) result.map.p.row(static_cast<Eigen::Index>(i)) = rows[i];
    return result;
}

/// Per-row argmax as 1-based labels; ties go to the smaller index.
inline std::vector<int> single_view_labels(const ProbMap& pm) {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(pm.rows()));
    for (Eigen::Index i = 0; i < pm.p.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index j = 1; j < pm.p.cols(); ++j) {
            if (pm.p(i, j) > pm.p(i, best)) best = j;
        }
        out.push_back(static_cast<int>(best) + 1);
    }
    return out;
}

} // namespace spinefuse
