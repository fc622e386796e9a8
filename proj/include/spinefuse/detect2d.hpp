#pragma once

#include "spinefuse/error.hpp"
#include "spinefuse/geometry.hpp"
#include "spinefuse/random.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace spinefuse {

/// A 2D centroid on one view's detector, in detector mm about its center.
struct Detection2D {
    Vec2 uv = Vec2::Zero();
    double score = 1.0;
    int view_index = 0;
};

/// Row order of per-view probability maps along the spine. Labels must
/// ascend in this order: ascending_v suits volumes whose labels grow with
/// +z (the synthetic phantom), descending_v the usual head-at-+z scans.
enum class RowOrder { ascending_v, descending_v };

/// Strict ordering of detections along the spine (v, then u).
inline bool spine_before(const Detection2D& a, const Detection2D& b, RowOrder order = RowOrder::ascending_v) {
    const double av = order == RowOrder::ascending_v ? a.uv[1] : -a.uv[1];
    const double bv = order == RowOrder::ascending_v ? b.uv[1] : -b.uv[1];
    return av < bv || (av == bv && a.uv[0] < b.uv[0]);
}

inline void sort_by_v(std::vector<Detection2D>& dets, RowOrder order = RowOrder::ascending_v) {
    std::stable_sort(dets.begin(), dets.end(),
                     [order](const Detection2D& a, const Detection2D& b) { return spine_before(a, b, order); });
}

/// Per-pixel heatmap in [0, 1], stored u-fastest like DrrImage.
struct Heatmap2D {
    DetectorGrid grid;
    std::vector<float> values;

    float at(int iu, int iv) const { return values[static_cast<std::size_t>(iv) * grid.nu + iu]; }
};

/// Pixelwise max of unnormalized Gaussians exp(-r^2 / (2 sigma^2)), r in
/// pixels, one per centroid (given in detector mm).
inline Heatmap2D synth_heatmap(std::span<const Vec2> centroids_uv, const DetectorGrid& grid, double sigma_px) {
    if (!(sigma_px > 0.0)) fail_config("heatmap sigma must be > 0");
    grid.validate();
    Heatmap2D h{grid, std::vector<float>(grid.pixel_count(), 0.0f)};
    // exp(-32) ~ 1e-14: anything farther is below float resolution of 1.
    const double cutoff = 8.0 * sigma_px;
    const double inv_two_var = 1.0 / (2.0 * sigma_px * sigma_px);
    for (const auto& uv : centroids_uv) {
        const Vec2 c = grid.uv_to_pixel(uv);
        const int u0 = std::max(0, static_cast<int>(std::floor(c[0] - cutoff)));
        const int u1 = std::min(grid.nu - 1, static_cast<int>(std::ceil(c[0] + cutoff)));
        const int v0 = std::max(0, static_cast<int>(std::floor(c[1] - cutoff)));
        const int v1 = std::min(grid.nv - 1, static_cast<int>(std::ceil(c[1] + cutoff)));
        for (int iv = v0; iv <= v1; ++iv) {
            for (int iu = u0; iu <= u1; ++iu) {
                const double du = iu - c[0], dv = iv - c[1];
                const auto value = static_cast<float>(std::exp(-(du * du + dv * dv) * inv_two_var));
                auto& slot = h.values[static_cast<std::size_t>(iv) * grid.nu + iu];
                slot = std::max(slot, value);
            }
        }
    }
    return h;
}

namespace detail {

// Centroid of a window profile after subtracting its minimum; `fallback`
// when the profile is flat.
inline double profile_centroid(const double* profile, int count, int first, int fallback) {
    double lowest = profile[0];
    for (int i = 1; i < count; ++i) lowest = std::min(lowest, profile[i]);
    double wsum = 0.0, sum = 0.0;
    for (int i = 0; i < count; ++i) {
        wsum += profile[i] - lowest;
        sum += (profile[i] - lowest) * (first + i);
    }
    return wsum > 0.0 ? sum / wsum : static_cast<double>(fallback);
}

} // namespace detail

/// Density-peaks selection on a heatmap. Pixel intensity is the density
/// rho; delta is the distance to the nearest pixel ranked higher, where
/// pixels are ranked by (rho, then lower flat index) so plateaus yield a
/// single peak. Pixels with rho >= rho_min and delta >= delta_min_px are
/// peaks. Each peak is refined to the intensity-weighted centroid of its
/// 5x5 neighbourhood, taken per axis on the window's marginal profiles with
/// the profile minimum subtracted.
/// Results are sorted by v.
inline std::vector<Detection2D> find_peaks(const Heatmap2D& h, double rho_min, double delta_min_px,
                                           int view_index = 0) {
    if (!(rho_min >= 0.0) || !(delta_min_px >= 0.0)) fail_config("peak thresholds must be >= 0");
    const auto& g = h.grid;
    const int nu = g.nu, nv = g.nv;
    auto ranks_above = [&](int iu, int iv, float rho, std::size_t flat) {
        const std::size_t other = static_cast<std::size_t>(iv) * nu + iu;
        const float r = h.values[other];
        return r > rho || (r == rho && other < flat);
    };

    // A pixel's delta only involves pixels ranked above it, so restricting
    // the candidate set to rho >= rho_min changes nothing.
    const double limit2 = delta_min_px * delta_min_px;
    const int reach = static_cast<int>(std::ceil(delta_min_px));
    std::vector<Detection2D> peaks;
    for (int iv = 0; iv < nv; ++iv) {
        for (int iu = 0; iu < nu; ++iu) {
            const std::size_t flat = static_cast<std::size_t>(iv) * nu + iu;
            const float rho = h.values[flat];
            if (!(rho > 0.0f) || rho < rho_min) continue;
            // delta >= delta_min iff no higher-ranked pixel lies strictly closer.
            bool dominated = false;
            for (int dv = -reach; dv <= reach && !dominated; ++dv) {
                const int qv = iv + dv;
                if (qv < 0 || qv >= nv) continue;
                for (int du = -reach; du <= reach; ++du) {
                    const int qu = iu + du;
                    if (qu < 0 || qu >= nu || (du == 0 && dv == 0)) continue;
                    if (static_cast<double>(du * du + dv * dv) >= limit2) continue;
                    if (ranks_above(qu, qv, rho, flat)) {
                        dominated = true;
                        break;
                    }
                }
            }
            if (dominated) continue;

            const int u0 = std::max(0, iu - 2), u1 = std::min(nu - 1, iu + 2);
            const int v0 = std::max(0, iv - 2), v1 = std::min(nv - 1, iv + 2);
            double profile_u[5] = {}, profile_v[5] = {};
            for (int qv = v0; qv <= v1; ++qv) {
                for (int qu = u0; qu <= u1; ++qu) {
                    profile_u[qu - u0] += h.at(qu, qv);
                    profile_v[qv - v0] += h.at(qu, qv);
                }
            }
            const double fu = detail::profile_centroid(profile_u, u1 - u0 + 1, u0, iu);
            const double fv = detail::profile_centroid(profile_v, v1 - v0 + 1, v0, iv);
            const Vec2 px(fu, fv);
            peaks.push_back({g.pixel_to_uv(px[0], px[1]), static_cast<double>(rho), view_index});
        }
    }
    sort_by_v(peaks);
    return peaks;
}

/// Stand-in for the localization network.
struct DetectorOracleSpec {
    double noise_sigma_px = 0.0;
    double p_miss = 0.0;
    /// Poisson mean of spurious detections per view.
    double p_spurious = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(noise_sigma_px >= 0.0)) fail_config("detector noise sigma must be >= 0");
        if (!(p_miss >= 0.0 && p_miss <= 1.0)) fail_config("p_miss must be in [0, 1]");
        if (!(p_spurious >= 0.0 && p_spurious < 1.0)) fail_config("p_spurious must be in [0, 1)");
    }
};

/// Drops each ground-truth centroid with p_miss, jitters survivors by
/// N(0, sigma^2) pixels per axis, then appends Poisson(p_spurious) uniform
/// false positives. Detections landing off the panel are discarded.
inline std::vector<Detection2D> oracle_detect(std::span<const Vec2> gt_uv, const DetectorOracleSpec& spec,
                                              const DetectorGrid& grid, int view_index = 0) {
    spec.validate();
    grid.validate();
    SplitMix64 rng(derive_seed(spec.seed, 0x646574656374ULL));
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<Detection2D> out;
    for (const auto& uv : gt_uv) {
        const bool missed = rng.uniform() < spec.p_miss;
        const double eu = noise(rng), ev = noise(rng);
        if (missed) continue;
        const Vec2 p = uv + Vec2(eu * spec.noise_sigma_px * grid.pu, ev * spec.noise_sigma_px * grid.pv);
        if (grid.contains(p)) out.push_back({p, 1.0, view_index});
    }
    if (spec.p_spurious > 0.0) {
        std::poisson_distribution<int> spurious(spec.p_spurious);
        const int count = spurious(rng);
        for (int i = 0; i < count; ++i) {
            const double fu = rng.uniform() * grid.nu - 0.5, fv = rng.uniform() * grid.nv - 0.5;
            out.push_back({grid.pixel_to_uv(fu, fv), 1.0, view_index});
        }
    }
    return out;
}

inline nlohmann::json detections_to_json(std::span<const Detection2D> dets) {
    auto out = nlohmann::json::array();
    for (const auto& d : dets) {
        out.push_back({{"view", d.view_index}, {"uv_mm", {d.uv[0], d.uv[1]}}, {"score", d.score}});
    }
    return out;
}

inline std::vector<Detection2D> detections_from_json(const nlohmann::json& j) {
    if (!j.is_array()) fail_data("detections must be a JSON array");
    std::vector<Detection2D> out;
    try {
        for (const auto& item : j) {
            const auto& uv = item.at("uv_mm");
            out.push_back({Vec2(uv.at(0).get<double>(), uv.at(1).get<double>()), item.at("score").get<double>(),
                           item.at("view").get<int>()});
        }
    } catch (const nlohmann::json::exception& e) {
        fail_data(std::string("malformed detections: ") + e.what());
    }
    return out;
}

} // namespace spinefuse
