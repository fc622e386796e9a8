#pragma once

#include "spinefuse/error.hpp"
#include "spinefuse/geometry.hpp"
#include "spinefuse/parallel.hpp"
#include "spinefuse/volume.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#if defined(__AVX2__)
#include <immintrin.h>
#endif

namespace spinefuse {

/// Line-integral image (dimensionless, sum of mu * ds). Pixels are stored
/// u-fastest: index = iv * nu + iu.
struct DrrImage {
    ProjectionGeometry geometry;
    std::vector<float> pixels;

    float at(int iu, int iv) const { return pixels[static_cast<std::size_t>(iv) * geometry.detector().nu + iu]; }
};

/// Volume prepared for repeated ray casting: a copy with a one-voxel zero
/// border (so the interpolation stencil never needs bounds checks) and the
/// index-space box outside of which every sample is exactly zero.
class RayCastVolume {
public:
    explicit RayCastVolume(const Volume3& v)
        : dims_(v.dims()), spacing_(v.spacing()), origin_(v.origin()),
          stride_y_(static_cast<std::size_t>(v.dims()[0]) + 2),
          stride_z_(stride_y_ * (static_cast<std::size_t>(v.dims()[1]) + 2)) {
        padded_.assign(stride_z_ * (static_cast<std::size_t>(dims_[2]) + 2), 0.0f);
        int lo[3] = {dims_[0], dims_[1], dims_[2]};
        int hi[3] = {-1, -1, -1};
        for (int k = 0; k < dims_[2]; ++k)
            for (int j = 0; j < dims_[1]; ++j)
                for (int i = 0; i < dims_[0]; ++i) {
                    const float value = v.at(i, j, k);
                    padded_[offset(i + 1, j + 1, k + 1)] = value;
                    if (value != 0.0f) {
                        lo[0] = std::min(lo[0], i), lo[1] = std::min(lo[1], j), lo[2] = std::min(lo[2], k);
                        hi[0] = std::max(hi[0], i), hi[1] = std::max(hi[1], j), hi[2] = std::max(hi[2], k);
                    }
                }
        empty_ = hi[0] < 0;
        for (int a = 0; a < 3; ++a) {
            // Samples are nonzero only strictly inside (lo - 1, hi + 1).
            support_lo_[a] = lo[a] - 1.0;
            support_hi_[a] = hi[a] + 1.0;
        }
    }

    /// Line integral from `from` towards `to`, sampled at the midpoints of
    /// `step`-long segments measured from `from`.
    double integrate(const Vec3& from, const Vec3& to, double step) const {
        if (empty_) return 0.0;
        const Vec3 delta = to - from;
        const double length = delta.norm();
        if (!(length > 0.0)) return 0.0;
        const Vec3 dir = delta / length;
        const Vec3 q0 = (from - origin_).cwiseQuotient(spacing_);
        const Vec3 dq = dir.cwiseQuotient(spacing_);

        double t_enter = 0.0;
        double t_exit = length;
        for (int a = 0; a < 3; ++a) {
            if (dq[a] == 0.0) {
                if (!(q0[a] > support_lo_[a] && q0[a] < support_hi_[a])) return 0.0;
                continue;
            }
            double t1 = (support_lo_[a] - q0[a]) / dq[a];
            double t2 = (support_hi_[a] - q0[a]) / dq[a];
            if (t1 > t2) std::swap(t1, t2);
            t_enter = std::max(t_enter, t1);
            t_exit = std::min(t_exit, t2);
        }
        if (!(t_exit > t_enter)) return 0.0;

        const long m_lo = static_cast<long>(std::ceil(t_enter / step - 0.5));
        const long m_hi = static_cast<long>(std::floor(t_exit / step - 0.5));
        if (m_hi < m_lo) return 0.0;

        // Padded index space (unpadded index + 1), rebased at the first sample.
        const double t_first = (static_cast<double>(m_lo) + 0.5) * step;
        const float px = static_cast<float>(q0[0] + 1.0 + t_first * dq[0]),
                    py = static_cast<float>(q0[1] + 1.0 + t_first * dq[1]),
                    pz = static_cast<float>(q0[2] + 1.0 + t_first * dq[2]);
        const float sx = static_cast<float>(dq[0] * step), sy = static_cast<float>(dq[1] * step),
                    sz = static_cast<float>(dq[2] * step);
        const long samples = m_hi - m_lo + 1;
#if defined(__AVX2__) && defined(__FMA__) && !defined(SPINEFUSE_NO_SIMD)
        const double sum = accumulate_avx2(px, py, pz, sx, sy, sz, samples);
#else
        const double sum = accumulate_scalar(px, py, pz, sx, sy, sz, samples);
#endif
        return std::max(0.0, sum * step);
    }

private:
    // Sample positions are clamped into the padded grid so the stencil stays
    // in bounds; the clamped band only ever touches the zero border.
    double accumulate_scalar(float px, float py, float pz, float sx, float sy, float sz, long samples) const {
        const float hi_x = dims_[0] + kEdge, hi_y = dims_[1] + kEdge, hi_z = dims_[2] + kEdge;
        const float* base = padded_.data();
        const std::size_t syd = stride_y_, szd = stride_z_;
        double sum = 0.0;
        for (long m = 0; m < samples; ++m) {
            const float tm = static_cast<float>(m);
            const float x = std::clamp(px + tm * sx, 0.0f, hi_x);
            const float y = std::clamp(py + tm * sy, 0.0f, hi_y);
            const float z = std::clamp(pz + tm * sz, 0.0f, hi_z);
            const int ix = static_cast<int>(x), iy = static_cast<int>(y), iz = static_cast<int>(z);
            const float fx = x - ix, fy = y - iy, fz = z - iz;
            const float* c = base + ix + syd * iy + szd * iz;
            const float c00 = c[0] + fx * (c[1] - c[0]);
            const float c10 = c[syd] + fx * (c[syd + 1] - c[syd]);
            const float c01 = c[szd] + fx * (c[szd + 1] - c[szd]);
            const float c11 = c[szd + syd] + fx * (c[szd + syd + 1] - c[szd + syd]);
            const float c0 = c00 + fy * (c10 - c00);
            const float c1 = c01 + fy * (c11 - c01);
            sum += c0 + fz * (c1 - c0);
        }
        return sum;
    }

#if defined(__AVX2__) && defined(__FMA__) && !defined(SPINEFUSE_NO_SIMD)
    // Eight samples per iteration; lanes are reduced in a fixed order so the
    // result does not depend on which thread runs the ray.
    double accumulate_avx2(float px, float py, float pz, float sx, float sy, float sz, long samples) const {
        const __m256 lane = _mm256_setr_ps(0, 1, 2, 3, 4, 5, 6, 7);
        const __m256 zero = _mm256_setzero_ps();
        const __m256 hi_x = _mm256_set1_ps(dims_[0] + kEdge), hi_y = _mm256_set1_ps(dims_[1] + kEdge),
                     hi_z = _mm256_set1_ps(dims_[2] + kEdge);
        const __m256 vpx = _mm256_set1_ps(px), vpy = _mm256_set1_ps(py), vpz = _mm256_set1_ps(pz);
        const __m256 vsx = _mm256_set1_ps(sx), vsy = _mm256_set1_ps(sy), vsz = _mm256_set1_ps(sz);
        const __m256i stride_y = _mm256_set1_epi32(static_cast<int>(stride_y_));
        const __m256i stride_z = _mm256_set1_epi32(static_cast<int>(stride_z_));
        const float* b000 = padded_.data();
        const float* b100 = b000 + 1;
        const float* b010 = b000 + stride_y_;
        const float* b110 = b010 + 1;
        const float* b001 = b000 + stride_z_;
        const float* b101 = b001 + 1;
        const float* b011 = b001 + stride_y_;
        const float* b111 = b011 + 1;

        __m256 acc = zero;
        for (long m = 0; m < samples; m += 8) {
            const __m256 tm = _mm256_add_ps(_mm256_set1_ps(static_cast<float>(m)), lane);
            const __m256 x = _mm256_min_ps(_mm256_max_ps(_mm256_fmadd_ps(tm, vsx, vpx), zero), hi_x);
            const __m256 y = _mm256_min_ps(_mm256_max_ps(_mm256_fmadd_ps(tm, vsy, vpy), zero), hi_y);
            const __m256 z = _mm256_min_ps(_mm256_max_ps(_mm256_fmadd_ps(tm, vsz, vpz), zero), hi_z);
            const __m256i ix = _mm256_cvttps_epi32(x), iy = _mm256_cvttps_epi32(y), iz = _mm256_cvttps_epi32(z);
            const __m256 fx = _mm256_sub_ps(x, _mm256_cvtepi32_ps(ix));
            const __m256 fy = _mm256_sub_ps(y, _mm256_cvtepi32_ps(iy));
            const __m256 fz = _mm256_sub_ps(z, _mm256_cvtepi32_ps(iz));
            const __m256i idx = _mm256_add_epi32(
                ix, _mm256_add_epi32(_mm256_mullo_epi32(iy, stride_y), _mm256_mullo_epi32(iz, stride_z)));

            const __m256 v000 = _mm256_i32gather_ps(b000, idx, 4), v100 = _mm256_i32gather_ps(b100, idx, 4);
            const __m256 v010 = _mm256_i32gather_ps(b010, idx, 4), v110 = _mm256_i32gather_ps(b110, idx, 4);
            const __m256 v001 = _mm256_i32gather_ps(b001, idx, 4), v101 = _mm256_i32gather_ps(b101, idx, 4);
            const __m256 v011 = _mm256_i32gather_ps(b011, idx, 4), v111 = _mm256_i32gather_ps(b111, idx, 4);
            const __m256 c00 = _mm256_fmadd_ps(fx, _mm256_sub_ps(v100, v000), v000);
            const __m256 c10 = _mm256_fmadd_ps(fx, _mm256_sub_ps(v110, v010), v010);
            const __m256 c01 = _mm256_fmadd_ps(fx, _mm256_sub_ps(v101, v001), v001);
            const __m256 c11 = _mm256_fmadd_ps(fx, _mm256_sub_ps(v111, v011), v011);
            const __m256 c0 = _mm256_fmadd_ps(fy, _mm256_sub_ps(c10, c00), c00);
            const __m256 c1 = _mm256_fmadd_ps(fy, _mm256_sub_ps(c11, c01), c01);
            __m256 value = _mm256_fmadd_ps(fz, _mm256_sub_ps(c1, c0), c0);
            if (samples - m < 8) {
                const __m256 live = _mm256_cmp_ps(tm, _mm256_set1_ps(static_cast<float>(samples)), _CMP_LT_OQ);
                value = _mm256_and_ps(value, live);
            }
            acc = _mm256_add_ps(acc, value);
        }
        alignas(32) float lanes[8];
        _mm256_store_ps(lanes, acc);
        double sum = 0.0;
        for (float v : lanes) sum += v;
        return sum;
    }
#endif

    // Largest clamped coordinate: keeps the stencil's upper corner inside
    // the padded grid (index n + 1).
    static constexpr float kEdge = 0.999f;

    std::size_t offset(int i, int j, int k) const {
        return static_cast<std::size_t>(i) + stride_y_ * j + stride_z_ * k;
    }

    Dims3 dims_;
    Vec3 spacing_;
    Vec3 origin_;
    std::size_t stride_y_;
    std::size_t stride_z_;
    std::vector<float> padded_;
    bool empty_ = true;
    double support_lo_[3]{};
    double support_hi_[3]{};
};

inline DrrImage render_drr(const RayCastVolume& volume, const ProjectionGeometry& g, double step_mm = 0.5,
                           unsigned threads = 1) {
    if (!(step_mm > 0.0) || !std::isfinite(step_mm)) fail_config("ray step must be > 0");
    const auto& det = g.detector();
    DrrImage image{g, std::vector<float>(det.pixel_count(), 0.0f)};
    parallel_for(static_cast<std::size_t>(det.nv), threads, [&](std::size_t row) {
        const int iv = static_cast<int>(row);
        float* out = image.pixels.data() + row * det.nu;
        for (int iu = 0; iu < det.nu; ++iu) {
            const Vec3 target = g.detector_point(det.pixel_to_uv(iu, iv));
            out[iu] = static_cast<float>(volume.integrate(g.source(), target, step_mm));
        }
    });
    return image;
}

/// Convenience overload; prefer the RayCastVolume one when rendering many views.
inline DrrImage render_drr(const Volume3& v, const ProjectionGeometry& g, double step_mm = 0.5, unsigned threads = 1) {
    return render_drr(RayCastVolume(v), g, step_mm, threads);
}

// ---------------------------------------------------------------------------
// 16-bit PGM + JSON sidecar.

inline nlohmann::json geometry_to_json(const ProjectionGeometry& g) {
    const auto& d = g.detector();
    return {
        {"view_index", g.view_index()},
        {"view_count", g.view_count()},
        {"theta_deg", g.theta_deg()},
        {"sad_mm", g.sad()},
        {"sdd_mm", g.sdd()},
        {"detector", {{"nu", d.nu}, {"nv", d.nv}, {"pu_mm", d.pu}, {"pv_mm", d.pv}}},
        {"isocenter_mm", detail::vec3_to_json(g.isocenter())},
    };
}

inline ProjectionGeometry geometry_from_json(const nlohmann::json& j) {
    try {
        const auto& d = j.at("detector");
        DetectorGrid grid{d.at("nu").get<int>(), d.at("nv").get<int>(), d.at("pu_mm").get<double>(),
                          d.at("pv_mm").get<double>()};
        return ProjectionGeometry(j.at("view_index").get<int>(), j.at("view_count").get<int>(),
                                  j.at("sad_mm").get<double>(), j.at("sdd_mm").get<double>(), grid,
                                  detail::vec3_from_json(j.at("isocenter_mm"), "isocenter_mm"));
    } catch (const nlohmann::json::exception& e) {
        fail_data(std::string("malformed geometry JSON: ") + e.what());
    }
}

enum class PgmTransform {
    line_integral,  // sample * scale recovers the line integral
    display,        // 65535 * exp(-line integral), for viewing only
};

/// Writes `<stem>.pgm` (P5, maxval 65535, big-endian samples) and the
/// `<stem>.json` sidecar. File row 0 is the top of the panel (largest v).
inline void write_drr_pgm(const std::filesystem::path& pgm_path, const DrrImage& image,
                          PgmTransform transform = PgmTransform::line_integral) {
    const auto& det = image.geometry.detector();
    double peak = 0.0;
    for (float v : image.pixels) peak = std::max(peak, static_cast<double>(v));
    const double scale = transform == PgmTransform::line_integral ? (peak > 0.0 ? peak / 65535.0 : 1.0) : 0.0;

    std::string bytes = "P5\n" + std::to_string(det.nu) + " " + std::to_string(det.nv) + "\n65535\n";
    const std::size_t header_size = bytes.size();
    bytes.resize(header_size + det.pixel_count() * 2);
    std::size_t pos = header_size;
    for (int r = 0; r < det.nv; ++r) {
        const int iv = det.nv - 1 - r;
        for (int iu = 0; iu < det.nu; ++iu) {
            const double value = image.at(iu, iv);
            const double q = transform == PgmTransform::line_integral ? value / scale : 65535.0 * std::exp(-value);
            const auto sample = static_cast<std::uint16_t>(std::clamp(std::lround(q), 0L, 65535L));
            bytes[pos++] = static_cast<char>(sample >> 8);
            bytes[pos++] = static_cast<char>(sample & 0xff);
        }
    }
    detail::write_text_file(pgm_path, bytes);

    nlohmann::json sidecar = {
        {"scale", scale},
        {"transform", transform == PgmTransform::line_integral ? "line_integral" : "display_exp_neg"},
        {"row_order", "v_descending"},
        {"geometry", geometry_to_json(image.geometry)},
    };
    auto side = pgm_path;
    side.replace_extension(".json");
    detail::write_text_file(side, sidecar.dump(2) + "\n");
}

/// Reads a line-integral PGM written by write_drr_pgm, recovering values
/// to within half a quantization step (scale / 2).
inline DrrImage read_drr_pgm(const std::filesystem::path& pgm_path) {
    auto side = pgm_path;
    side.replace_extension(".json");
    const auto sidecar = detail::read_json_file(side);
    double scale = 0.0;
    try {
        if (sidecar.at("transform").get<std::string>() != "line_integral") {
            fail_data("only line_integral PGMs can be read back: " + pgm_path.string());
        }
        scale = sidecar.at("scale").get<double>();
    } catch (const nlohmann::json::exception& e) {
        fail_data(std::string("malformed DRR sidecar: ") + e.what());
    }
    auto geometry = geometry_from_json(sidecar.at("geometry"));
    const auto& det = geometry.detector();

    std::ifstream in(pgm_path, std::ios::binary);
    if (!in) fail_data("cannot open " + pgm_path.string());
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    in.get();
    if (!in || magic != "P5" || maxval != 65535 || w != det.nu || h != det.nv) {
        fail_data("unexpected PGM header in " + pgm_path.string());
    }
    std::vector<unsigned char> raw(det.pixel_count() * 2);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) fail_data("short PGM payload in " + pgm_path.string());

    DrrImage image{geometry, std::vector<float>(det.pixel_count())};
    std::size_t pos = 0;
    for (int r = 0; r < det.nv; ++r) {
        const int iv = det.nv - 1 - r;
        for (int iu = 0; iu < det.nu; ++iu, pos += 2) {
            const unsigned sample = (static_cast<unsigned>(raw[pos]) << 8) | raw[pos + 1];
            image.pixels[static_cast<std::size_t>(iv) * det.nu + iu] = static_cast<float>(sample * scale);
        }
    }
    return image;
}

} // namespace spinefuse
