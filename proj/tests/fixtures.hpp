#pragma once

// Analytic test objects shared by the DRR unit tests and the acceptance gate.

#include <spinefuse/drr.hpp>
#include <spinefuse/volume.hpp>

#include <cmath>

namespace fixtures {

using spinefuse::Vec3;
using spinefuse::Volume3;

// Axis-aligned cube of side `side` mm and attenuation mu, centered on the
// origin, at 1 mm voxels with voxel centers on half-integers. The trilinear
// ramp at each face makes every straight chord through it exactly side long.
inline Volume3 cube_volume(double side, double mu, int margin = 10) {
    const int inside = static_cast<int>(side);
    const int n = inside + 2 * margin;
    const Vec3 origin = Vec3::Constant(-(n - 1) / 2.0);
    Volume3 frame({n, n, n}, Vec3::Ones(), origin);
    std::vector<float> data(Volume3::voxel_count(frame.dims()), 0.0f);
    for (int k = margin; k < margin + inside; ++k)
        for (int j = margin; j < margin + inside; ++j)
            for (int i = margin; i < margin + inside; ++i) data[frame.index(i, j, k)] = static_cast<float>(mu);
    return Volume3(frame.dims(), Vec3::Ones(), origin, std::move(data));
}

// Ball of radius r centered on the origin; surface voxels hold their
// partial-volume fraction, estimated on a sub x sub x sub lattice.
inline Volume3 sphere_volume(double r, double mu, double spacing, int sub = 8) {
    const int n = static_cast<int>(std::ceil(2.0 * (r + 3.0 * spacing) / spacing)) | 1;
    const Vec3 origin = Vec3::Constant(-(n - 1) / 2.0 * spacing);
    Volume3 frame({n, n, n}, Vec3::Constant(spacing), origin);
    std::vector<float> data(Volume3::voxel_count(frame.dims()), 0.0f);
    const double band = std::sqrt(3.0) * 0.5 * spacing;
    for (int k = 0; k < n; ++k)
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i) {
                const Vec3 c = frame.voxel_center(i, j, k);
                const double d = c.norm();
                double frac = 0.0;
                if (d <= r - band) {
                    frac = 1.0;
                } else if (d < r + band) {
                    int hits = 0;
                    for (int a = 0; a < sub; ++a)
                        for (int b = 0; b < sub; ++b)
                            for (int e = 0; e < sub; ++e) {
                                const Vec3 q = c + spacing * (Vec3(a, b, e) + Vec3::Constant(0.5 - sub / 2.0)) / sub;
                                hits += q.squaredNorm() <= r * r ? 1 : 0;
                            }
                    frac = static_cast<double>(hits) / (sub * sub * sub);
                }
                data[frame.index(i, j, k)] = static_cast<float>(mu * frac);
            }
    return Volume3(frame.dims(), frame.spacing(), origin, std::move(data));
}

} // namespace fixtures
