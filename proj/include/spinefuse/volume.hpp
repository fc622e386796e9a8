#pragma once

#include "spinefuse/error.hpp"
#include "spinefuse/labels.hpp"

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace spinefuse {

using Vec3 = Eigen::Vector3d;
using Dims3 = std::array<int, 3>;

/// Linear water-scaled attenuation of water, 1/mm.
inline constexpr double kMuWater = 0.02;

inline double hu_to_mu(double hu) { return std::max(0.0, kMuWater * (1.0 + hu / 1000.0)); }

/// Axis-aligned voxel grid of attenuation values (1/mm). Voxel (0,0,0) is
/// centered at `origin`; data is x-fastest, then y, then z. Immutable once
/// built.
class Volume3 {
public:
    Volume3(Dims3 dims, Vec3 spacing, Vec3 origin, std::vector<float> data)
        : dims_(dims), spacing_(std::move(spacing)), origin_(std::move(origin)), data_(std::move(data)) {
        for (int a = 0; a < 3; ++a) {
            if (dims_[a] < 1) fail_data("volume dims must be >= 1");
            if (!(spacing_[a] > 0.0) || !std::isfinite(spacing_[a])) fail_data("volume spacing must be > 0");
            if (!std::isfinite(origin_[a])) fail_data("volume origin must be finite");
        }
        if (data_.size() != voxel_count(dims_)) {
            fail_data("volume payload has " + std::to_string(data_.size()) + " values, dims require " +
                      std::to_string(voxel_count(dims_)));
        }
        for (float v : data_) {
            if (!std::isfinite(v)) fail_data("volume contains non-finite values");
        }
    }

    /// Zero-filled volume.
    Volume3(Dims3 dims, Vec3 spacing, Vec3 origin)
        : Volume3(dims, std::move(spacing), std::move(origin), std::vector<float>(voxel_count(dims), 0.0f)) {}

    static std::size_t voxel_count(const Dims3& d) {
        if (d[0] < 1 || d[1] < 1 || d[2] < 1) fail_data("volume dims must be >= 1");
        return static_cast<std::size_t>(d[0]) * d[1] * d[2];
    }

    const Dims3& dims() const noexcept { return dims_; }
    const Vec3& spacing() const noexcept { return spacing_; }
    const Vec3& origin() const noexcept { return origin_; }
    std::span<const float> data() const noexcept { return data_; }

    std::size_t index(int i, int j, int k) const noexcept {
        return static_cast<std::size_t>(i) + static_cast<std::size_t>(dims_[0]) * (j + static_cast<std::size_t>(dims_[1]) * k);
    }
    float at(int i, int j, int k) const noexcept { return data_[index(i, j, k)]; }

    Vec3 voxel_center(int i, int j, int k) const {
        return origin_ + spacing_.cwiseProduct(Vec3(i, j, k));
    }
    /// Continuous voxel-index coordinates of a world point.
    Vec3 to_index(const Vec3& world) const { return (world - origin_).cwiseQuotient(spacing_); }

    /// World-space midpoint of the voxel-center grid.
    Vec3 center() const {
        return origin_ + spacing_.cwiseProduct(Vec3(dims_[0] - 1, dims_[1] - 1, dims_[2] - 1)) * 0.5;
    }

private:
    Dims3 dims_;
    Vec3 spacing_;
    Vec3 origin_;
    std::vector<float> data_;
};

/// Trilinear interpolation in world coordinates. Neighbours outside the grid
/// count as air (0), so anything more than one voxel beyond the outer voxel
/// centers samples to 0.
inline double sample_trilinear(const Volume3& v, const Vec3& p) {
    const Vec3 idx = v.to_index(p);
    const auto& d = v.dims();
    double fl[3];
    int i0[3];
    for (int a = 0; a < 3; ++a) {
        if (!(idx[a] > -1.0 && idx[a] < d[a])) return 0.0;
        fl[a] = std::floor(idx[a]);
        i0[a] = static_cast<int>(fl[a]);
    }
    const double fx = idx[0] - fl[0], fy = idx[1] - fl[1], fz = idx[2] - fl[2];
    auto value = [&](int i, int j, int k) -> double {
        if (i < 0 || j < 0 || k < 0 || i >= d[0] || j >= d[1] || k >= d[2]) return 0.0;
        return v.at(i, j, k);
    };
    const int x = i0[0], y = i0[1], z = i0[2];
    const double c00 = value(x, y, z) * (1 - fx) + value(x + 1, y, z) * fx;
    const double c10 = value(x, y + 1, z) * (1 - fx) + value(x + 1, y + 1, z) * fx;
    const double c01 = value(x, y, z + 1) * (1 - fx) + value(x + 1, y, z + 1) * fx;
    const double c11 = value(x, y + 1, z + 1) * (1 - fx) + value(x + 1, y + 1, z + 1) * fx;
    const double c0 = c00 * (1 - fy) + c10 * fy;
    const double c1 = c01 * (1 - fy) + c11 * fy;
    return c0 * (1 - fz) + c1 * fz;
}

/// Trilinear resampling onto an isotropic grid with the same origin. Each
/// axis keeps the largest count of `target` steps that stays inside the
/// original voxel-center extent.
inline Volume3 resample_isotropic(const Volume3& v, double target) {
    if (!(target > 0.0) || !std::isfinite(target)) fail_config("resample target spacing must be > 0");
    Dims3 out_dims{};
    for (int a = 0; a < 3; ++a) {
        const double extent = (v.dims()[a] - 1) * v.spacing()[a];
        out_dims[a] = static_cast<int>(std::floor(extent / target + 1e-9)) + 1;
    }
    std::vector<float> out(Volume3::voxel_count(out_dims));
    std::size_t n = 0;
    for (int k = 0; k < out_dims[2]; ++k) {
        for (int j = 0; j < out_dims[1]; ++j) {
            for (int i = 0; i < out_dims[0]; ++i) {
                const Vec3 p = v.origin() + target * Vec3(i, j, k);
                out[n++] = static_cast<float>(sample_trilinear(v, p));
            }
        }
    }
    return Volume3(out_dims, Vec3::Constant(target), v.origin(), std::move(out));
}

// ---------------------------------------------------------------------------
// File I/O: `<name>.json` header + `<name>.raw` little-endian float32 payload.

enum class VolumeUnits { hu, mu_per_mm };

namespace detail {

inline std::filesystem::path raw_path_for(const std::filesystem::path& header) {
    auto raw = header;
    raw.replace_extension(".raw");
    return raw;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail_data("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail_data("malformed JSON in " + path.string() + ": " + e.what());
    }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail_data("cannot write " + path.string());
    out << text;
    if (!out) fail_data("write failed: " + path.string());
}

inline Vec3 vec3_from_json(const nlohmann::json& j, const char* what) {
    if (!j.is_array() || j.size() != 3) fail_data(std::string(what) + " must be a 3-element array");
    Vec3 out;
    for (int a = 0; a < 3; ++a) {
        if (!j[a].is_number()) fail_data(std::string(what) + " must be numeric");
        out[a] = j[a].get<double>();
    }
    return out;
}

inline nlohmann::json vec3_to_json(const Vec3& v) { return nlohmann::json::array({v[0], v[1], v[2]}); }

inline std::uint32_t byteswap32(std::uint32_t x) {
    return (x >> 24) | ((x >> 8) & 0xff00u) | ((x << 8) & 0xff0000u) | (x << 24);
}

} // namespace detail

/// Writes header and raw payload. The payload is the stored attenuation
/// values, bit for bit, tagged `mu_per_mm`.
inline void save_volume(const std::filesystem::path& header_path, const Volume3& v) {
    nlohmann::json header = {
        {"dims", {v.dims()[0], v.dims()[1], v.dims()[2]}},
        {"spacing_mm", detail::vec3_to_json(v.spacing())},
        {"origin_mm", detail::vec3_to_json(v.origin())},
        {"dtype", "f32le"},
        {"units", "mu_per_mm"},
    };
    detail::write_text_file(header_path, header.dump(2) + "\n");

    std::vector<std::uint32_t> words(v.data().size());
    std::memcpy(words.data(), v.data().data(), words.size() * sizeof(float));
    if constexpr (std::endian::native == std::endian::big) {
        for (auto& w : words) w = detail::byteswap32(w);
    }
    const auto raw = detail::raw_path_for(header_path);
    std::ofstream out(raw, std::ios::binary);
    if (!out) fail_data("cannot write " + raw.string());
    out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
    if (!out) fail_data("write failed: " + raw.string());
}

/// Reads a header+raw pair. `hu` payloads are converted to attenuation.
inline Volume3 load_volume(const std::filesystem::path& header_path) {
    const auto header = detail::read_json_file(header_path);
    Dims3 dims{};
    try {
        const auto& jd = header.at("dims");
        if (!jd.is_array() || jd.size() != 3) fail_data("dims must be a 3-element array");
        for (int a = 0; a < 3; ++a) {
            if (!jd[a].is_number_integer()) fail_data("dims must be integers");
            const auto value = jd[a].get<long long>();
            if (value < 1 || value > (1 << 20)) fail_data("dims out of range");
            dims[a] = static_cast<int>(value);
        }
        if (header.at("dtype").get<std::string>() != "f32le") fail_data("unsupported dtype (expected f32le)");
    } catch (const nlohmann::json::exception& e) {
        fail_data("malformed volume header " + header_path.string() + ": " + e.what());
    }
    Vec3 spacing, origin;
    VolumeUnits units{};
    try {
        spacing = detail::vec3_from_json(header.at("spacing_mm"), "spacing_mm");
        origin = detail::vec3_from_json(header.at("origin_mm"), "origin_mm");
        const auto u = header.at("units").get<std::string>();
        if (u == "hu") {
            units = VolumeUnits::hu;
        } else if (u == "mu_per_mm") {
            units = VolumeUnits::mu_per_mm;
        } else {
            fail_data("unknown units: " + u);
        }
    } catch (const nlohmann::json::exception& e) {
        fail_data("malformed volume header " + header_path.string() + ": " + e.what());
    }

    const std::size_t count = Volume3::voxel_count(dims);
    const auto raw = detail::raw_path_for(header_path);
    std::ifstream in(raw, std::ios::binary | std::ios::ate);
    if (!in) fail_data("cannot open " + raw.string());
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes != count * 4) {
        fail_data("raw payload is " + std::to_string(bytes) + " bytes, header dims require " +
                  std::to_string(count * 4));
    }
    in.seekg(0);
    std::vector<std::uint32_t> words(count);
    in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(bytes));
    if (!in) fail_data("short read on " + raw.string());
    if constexpr (std::endian::native == std::endian::big) {
        for (auto& w : words) w = detail::byteswap32(w);
    }
    std::vector<float> data(count);
    std::memcpy(data.data(), words.data(), count * sizeof(float));
    for (float& value : data) {
        if (!std::isfinite(value)) fail_data("volume payload contains non-finite values");
        if (units == VolumeUnits::hu) value = static_cast<float>(hu_to_mu(value));
    }
    return Volume3(dims, spacing, origin, std::move(data));
}

// ---------------------------------------------------------------------------
// Annotations.

struct AnnotatedCentroid {
    VertebraLabel label;
    Vec3 center;
};

/// Ground-truth centroids, sorted by label with unique labels.
class Annotation3 {
public:
    Annotation3() = default;

    explicit Annotation3(std::vector<AnnotatedCentroid> entries) : entries_(std::move(entries)) {
        std::sort(entries_.begin(), entries_.end(),
                  [](const auto& a, const auto& b) { return a.label < b.label; });
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            if (!entries_[i].center.allFinite()) fail_data("annotation center must be finite");
            if (i > 0 && entries_[i].label == entries_[i - 1].label) {
                fail_data("duplicate annotation label " + label_name(entries_[i].label));
            }
        }
    }

    const std::vector<AnnotatedCentroid>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

private:
    std::vector<AnnotatedCentroid> entries_;
};

inline nlohmann::json annotation_to_json(const Annotation3& a) {
    auto out = nlohmann::json::array();
    for (const auto& e : a.entries()) {
        out.push_back({{"label", label_name(e.label)}, {"center_mm", detail::vec3_to_json(e.center)}});
    }
    return out;
}

inline Annotation3 annotation_from_json(const nlohmann::json& j) {
    if (!j.is_array()) fail_data("annotation must be a JSON array");
    std::vector<AnnotatedCentroid> entries;
    try {
        for (const auto& item : j) {
            entries.push_back({parse_label(item.at("label").get<std::string>()),
                               detail::vec3_from_json(item.at("center_mm"), "center_mm")});
        }
    } catch (const nlohmann::json::exception& e) {
        fail_data(std::string("malformed annotation: ") + e.what());
    }
    return Annotation3(std::move(entries));
}

inline void save_annotation(const std::filesystem::path& path, const Annotation3& a) {
    detail::write_text_file(path, annotation_to_json(a).dump(2) + "\n");
}

inline Annotation3 load_annotation(const std::filesystem::path& path) {
    return annotation_from_json(detail::read_json_file(path));
}

} // namespace spinefuse
