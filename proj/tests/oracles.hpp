#pragma once

// Reference implementations used only by the tests. They are deliberately
// naive and share no code with the library.

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;

// Reward for entering cell (i, j) from (i-1, j-1). Out-of-range columns read 0.
inline double step_reward(const Mat& p, std::size_t i, std::size_t j, double alpha, double beta) {
    const std::size_t c = p[i].size();
    const double left = j >= 1 ? alpha * p[i][j - 1] : 0.0;
    const double mid = beta * p[i][j];
    const double right = j + 1 < c ? alpha * p[i][j + 1] : 0.0;
    return std::max({left, mid, right});
}

// Walks every diagonal chain from each first-row and first-column start and
// keeps, per cell, the best chain value that reaches it.
inline Mat enumerate_chains(const Mat& p, double alpha, double beta) {
    const std::size_t n = p.size(), c = p[0].size();
    Mat best(n, std::vector<double>(c, -1.0));
    std::vector<std::pair<std::size_t, std::size_t>> starts;
    for (std::size_t j = 0; j < c; ++j) starts.emplace_back(0, j);
    for (std::size_t i = 1; i < n; ++i) starts.emplace_back(i, 0);
    for (auto [i0, j0] : starts) {
        double value = p[i0][j0];
        best[i0][j0] = std::max(best[i0][j0], value);
        for (std::size_t i = i0 + 1, j = j0 + 1; i < n && j < c; ++i, ++j) {
            value += step_reward(p, i, j, alpha, beta);
            best[i][j] = std::max(best[i][j], value);
        }
    }
    return best;
}

// Sum of squared perpendicular distances from p to the lines (a_k, n_k).
inline double perpendicular_sum(const std::vector<Eigen::Vector3d>& a, const std::vector<Eigen::Vector3d>& n,
                                const Eigen::Vector3d& p) {
    double sum = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const Eigen::Vector3d w = p - a[k];
        const Eigen::Vector3d perp = w - n[k] * n[k].dot(w);
        sum += perp.dot(perp);
    }
    return sum;
}

// Derivative-free coordinate descent: along each axis the objective is an
// exact parabola, so three evaluations give the line minimum.
inline Eigen::Vector3d minimize_perpendicular_sum(const std::vector<Eigen::Vector3d>& a,
                                                  const std::vector<Eigen::Vector3d>& n, Eigen::Vector3d p,
                                                  int max_sweeps = 200000) {
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double moved = 0.0;
        for (int axis = 0; axis < 3; ++axis) {
            const double h = 1.0;
            Eigen::Vector3d lo = p, hi = p;
            lo[axis] -= h;
            hi[axis] += h;
            const double f0 = perpendicular_sum(a, n, p);
            const double fl = perpendicular_sum(a, n, lo);
            const double fh = perpendicular_sum(a, n, hi);
            const double curvature = fl - 2.0 * f0 + fh;
            if (!(curvature > 0.0)) continue;
            const double t = 0.5 * h * (fl - fh) / curvature;
            p[axis] += t;
            moved = std::max(moved, std::abs(t));
        }
        if (moved < 1e-13) break;
    }
    return p;
}

// Chord length of the ray (origin o, unit direction d) through a sphere.
inline double sphere_chord(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Eigen::Vector3d& c, double r) {
    const Eigen::Vector3d w = c - o;
    const double along = w.dot(d);
    const double b2 = w.squaredNorm() - along * along;
    return b2 < r * r ? 2.0 * std::sqrt(r * r - b2) : 0.0;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("spinefuse_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace oracle
