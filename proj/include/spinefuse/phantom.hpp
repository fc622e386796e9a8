#pragma once

#include "spinefuse/labels.hpp"
#include "spinefuse/random.hpp"
#include "spinefuse/volume.hpp"

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace spinefuse {

/// Synthetic spine: a water cylinder along z with `count` bone ellipsoids
/// stacked along +z. Labels ascend with z.
struct PhantomSpec {
    Dims3 dims{160, 160, 200};
    double spacing_mm = 1.0;
    int count = 5;
    int first_label = 21;  // L1
    int categories = kDefaultCategories;
    double vertebra_spacing_mm = 30.0;
    Vec3 semi_axes_mm{20.0, 15.0, 10.0};
    double body_radius_mm = 70.0;
    double mu_bone = 0.05;
    /// Lateral (x) offset of each vertebra = curvature * dz^2, dz measured
    /// from the stack center.
    double curvature_per_mm = 0.0;
    /// Each center coordinate jitters uniformly within +-jitter_mm.
    double jitter_mm = 0.0;
    std::uint64_t seed = 0;
};

struct Phantom {
    Volume3 volume;
    Annotation3 annotation;
};

namespace detail {

// Fraction of the 2x2x2 sub-samples of a voxel that satisfy `inside`.
template <typename Inside>
double occupancy(const Vec3& center, double h, Inside&& inside) {
    int hits = 0;
    for (int dz = -1; dz <= 1; dz += 2)
        for (int dy = -1; dy <= 1; dy += 2)
            for (int dx = -1; dx <= 1; dx += 2)
                hits += inside(center + 0.25 * h * Vec3(dx, dy, dz)) ? 1 : 0;
    return hits / 8.0;
}

} // namespace detail

inline Phantom make_phantom(const PhantomSpec& spec) {
    check_category_count(spec.categories);
    if (spec.count < 1) fail_config("phantom needs at least one vertebra");
    if (spec.count > spec.categories) {
        fail_config("phantom vertebra count " + std::to_string(spec.count) + " exceeds category count " +
                    std::to_string(spec.categories));
    }
    if (spec.first_label < 1 || spec.first_label + spec.count - 1 > spec.categories) {
        fail_config("phantom labels " + std::to_string(spec.first_label) + ".." +
                    std::to_string(spec.first_label + spec.count - 1) + " fall outside [1, " +
                    std::to_string(spec.categories) + "]");
    }
    if (!(spec.spacing_mm > 0.0)) fail_config("phantom spacing must be > 0");
    if (spec.jitter_mm < 0.0 || spec.vertebra_spacing_mm <= 0.0 || spec.body_radius_mm <= 0.0 ||
        (spec.semi_axes_mm.array() <= 0.0).any()) {
        fail_config("phantom sizes must be positive");
    }

    const Vec3 spacing = Vec3::Constant(spec.spacing_mm);
    Volume3 frame(spec.dims, spacing, Vec3::Zero());
    const Vec3 origin = -frame.center();  // volume centered on the world origin
    const Vec3 half_extent = frame.center();

    SplitMix64 rng(derive_seed(spec.seed, 0x7068616e746f6dULL));
    std::vector<AnnotatedCentroid> centers;
    for (int i = 0; i < spec.count; ++i) {
        const double dz = (i - (spec.count - 1) / 2.0) * spec.vertebra_spacing_mm;
        Vec3 c(spec.curvature_per_mm * dz * dz, 0.0, dz);
        for (int a = 0; a < 3; ++a) c[a] += spec.jitter_mm * (2.0 * rng.uniform() - 1.0);
        for (int a = 0; a < 3; ++a) {
            if (std::abs(c[a]) + spec.semi_axes_mm[a] > half_extent[a]) {
                fail_config("phantom vertebra " + std::to_string(i) + " does not fit in the requested dims");
            }
        }
        centers.push_back({VertebraLabel{spec.first_label + i}, c});
    }
    if (spec.body_radius_mm > std::min(half_extent[0], half_extent[1])) {
        fail_config("phantom body radius does not fit in the requested dims");
    }

    const auto& d = spec.dims;
    const double h = spec.spacing_mm;
    std::vector<float> data(Volume3::voxel_count(d), 0.0f);
    const double r2 = spec.body_radius_mm * spec.body_radius_mm;

    // Water cylinder: occupancy depends on (x, y) only.
    std::vector<double> body(static_cast<std::size_t>(d[0]) * d[1]);
    for (int j = 0; j < d[1]; ++j) {
        for (int i = 0; i < d[0]; ++i) {
            const Vec3 p = origin + h * Vec3(i, j, 0);
            body[static_cast<std::size_t>(j) * d[0] + i] =
                detail::occupancy(p, h, [&](const Vec3& q) { return q[0] * q[0] + q[1] * q[1] <= r2; });
        }
    }
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i)
                data[frame.index(i, j, k)] = static_cast<float>(kMuWater * body[static_cast<std::size_t>(j) * d[0] + i]);

    const Vec3 inv_axes2 = spec.semi_axes_mm.cwiseProduct(spec.semi_axes_mm).cwiseInverse();
    for (const auto& entry : centers) {
        const Vec3& c = entry.center;
        int lo[3], hi[3];
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::max(0, static_cast<int>(std::floor((c[a] - spec.semi_axes_mm[a] - origin[a]) / h)) - 1);
            hi[a] = std::min(d[a] - 1, static_cast<int>(std::ceil((c[a] + spec.semi_axes_mm[a] - origin[a]) / h)) + 1);
        }
        auto inside = [&](const Vec3& q) { return (q - c).cwiseAbs2().dot(inv_axes2) <= 1.0; };
        for (int k = lo[2]; k <= hi[2]; ++k)
            for (int j = lo[1]; j <= hi[1]; ++j)
                for (int i = lo[0]; i <= hi[0]; ++i) {
                    const double frac = detail::occupancy(origin + h * Vec3(i, j, k), h, inside);
                    if (frac > 0.0) {
                        auto& value = data[frame.index(i, j, k)];
                        value = static_cast<float>(value + frac * (spec.mu_bone - kMuWater));
                    }
                }
    }

    return Phantom{Volume3(d, spacing, origin, std::move(data)), Annotation3(std::move(centers))};
}

} // namespace spinefuse
