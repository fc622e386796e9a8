#pragma once

#include "spinefuse/error.hpp"
#include "spinefuse/volume.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace spinefuse {

using Vec2 = Eigen::Vector2d;

/// Pixel grid of the flat-panel detector. Pixel (iu, iv) is centered at
/// u = (iu - (nu-1)/2) * pu, v = (iv - (nv-1)/2) * pv, in mm about the
/// detector center.
struct DetectorGrid {
    int nu = 512;
    int nv = 512;
    double pu = 1.0;
    double pv = 1.0;

    void validate() const {
        if (nu < 1 || nv < 1) fail_config("detector dims must be >= 1");
        if (!(pu > 0.0) || !(pv > 0.0)) fail_config("detector pitch must be > 0");
    }

    std::size_t pixel_count() const { return static_cast<std::size_t>(nu) * nv; }

    /// Continuous pixel coordinates to detector mm.
    Vec2 pixel_to_uv(double fu, double fv) const {
        return {(fu - 0.5 * (nu - 1)) * pu, (fv - 0.5 * (nv - 1)) * pv};
    }
    Vec2 uv_to_pixel(const Vec2& uv) const {
        return {uv[0] / pu + 0.5 * (nu - 1), uv[1] / pv + 0.5 * (nv - 1)};
    }
    /// Inside the physical panel (pixel edges inclusive).
    bool contains(const Vec2& uv) const {
        return std::abs(uv[0]) <= 0.5 * nu * pu && std::abs(uv[1]) <= 0.5 * nv * pv;
    }
};

/// One view of a circular source trajectory about the world z axis.
class ProjectionGeometry {
public:
    ProjectionGeometry(int view_index, int view_count, double sad, double sdd, DetectorGrid detector, Vec3 iso)
        : view_index_(view_index), view_count_(view_count), sad_(sad), sdd_(sdd), detector_(detector),
          iso_(std::move(iso)) {
        if (view_count_ < 1) fail_config("view count K must be >= 1");
        if (view_index_ < 0 || view_index_ >= view_count_) fail_config("view index out of range");
        if (!(sad_ > 0.0) || !(sdd_ > sad_)) fail_config("geometry requires 0 < sad < sdd");
        detector_.validate();
        if (!iso_.allFinite()) fail_config("isocenter must be finite");

        theta_deg_ = view_index_ * 360.0 / view_count_;
        const double t = theta_deg_ * std::numbers::pi / 180.0;
        rotation_ = Eigen::AngleAxisd(t, Vec3::UnitZ()).toRotationMatrix();
        source_ = iso_ + rotation_ * Vec3(sad_, 0.0, 0.0);
        detector_center_ = iso_ + rotation_ * Vec3(sad_ - sdd_, 0.0, 0.0);
        u_axis_ = rotation_ * Vec3::UnitY();
        v_axis_ = Vec3::UnitZ();
    }

    int view_index() const noexcept { return view_index_; }
    int view_count() const noexcept { return view_count_; }
    double theta_deg() const noexcept { return theta_deg_; }
    double sad() const noexcept { return sad_; }
    double sdd() const noexcept { return sdd_; }
    const DetectorGrid& detector() const noexcept { return detector_; }
    const Vec3& isocenter() const noexcept { return iso_; }

    /// R_z(theta): rotated view frame to world.
    const Eigen::Matrix3d& rotation() const noexcept { return rotation_; }
    const Vec3& source() const noexcept { return source_; }
    const Vec3& detector_center() const noexcept { return detector_center_; }
    const Vec3& u_axis() const noexcept { return u_axis_; }
    const Vec3& v_axis() const noexcept { return v_axis_; }

    /// World position of a detector point given in mm.
    Vec3 detector_point(const Vec2& uv) const { return detector_center_ + uv[0] * u_axis_ + uv[1] * v_axis_; }

private:
    int view_index_;
    int view_count_;
    double sad_;
    double sdd_;
    DetectorGrid detector_;
    Vec3 iso_;
    double theta_deg_ = 0.0;
    Eigen::Matrix3d rotation_;
    Vec3 source_;
    Vec3 detector_center_;
    Vec3 u_axis_;
    Vec3 v_axis_;
};

/// A 3D line through `a` with unit direction `n`. `view` records which
/// projection produced it (-1 when synthetic).
struct Line3 {
    Vec3 a;
    Vec3 n;
    int view = -1;
};

/// K views at theta_k = k * 360 / K.
inline std::vector<ProjectionGeometry> make_views(int count, double sad, double sdd, const DetectorGrid& detector,
                                                  const Vec3& iso) {
    if (count < 1) fail_config("view count K must be >= 1, got " + std::to_string(count));
    std::vector<ProjectionGeometry> views;
    views.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) views.emplace_back(k, count, sad, sdd, detector, iso);
    return views;
}

/// Perspective projection of a world point onto the detector (mm).
inline Vec2 project_point(const ProjectionGeometry& g, const Vec3& p) {
    const Vec3 local = g.rotation().transpose() * (p - g.isocenter());
    const double depth = g.sad() - local[0];
    if (!(depth > 1e-9 * g.sad())) {
        fail_numeric("point at or behind the source plane of view " + std::to_string(g.view_index()));
    }
    const double scale = g.sdd() / depth;
    return {scale * local[1], scale * local[2]};
}

/// Ray from the source through a detector point.
inline Line3 backproject_pixel(const ProjectionGeometry& g, const Vec2& uv) {
    return Line3{g.source(), (g.detector_point(uv) - g.source()).normalized(), g.view_index()};
}

} // namespace spinefuse
