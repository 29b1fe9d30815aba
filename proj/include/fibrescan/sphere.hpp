#ifndef FIBRESCAN_SPHERE_HPP
#define FIBRESCAN_SPHERE_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "fibrescan/core.hpp"

namespace fibrescan {

enum class Axis { X = 0, Y = 1, Z = 2 };

// Geodesic metric on S^2: rho(u,v) = arccos<u,v>, with the inner product
// clamped to [-1,1] against floating-point drift.
inline double geodesic_distance(const UnitVector3& u, const UnitVector3& v) {
    require_unit(u, "geodesic_distance");
    require_unit(v, "geodesic_distance");
    const double d = std::clamp(u.dot(v), -1.0, 1.0);
    return std::acos(d);
}

// Maps u to the hemisphere with nonnegative coordinate on `axis` by negating
// the whole vector if needed. Idempotent; preserves the spanned line.
inline UnitVector3 fold_to_hemisphere(const UnitVector3& u, Axis axis) {
    const double c = u[static_cast<int>(axis)];
    return c < 0.0 ? -u : u;
}

inline UnitVector3 sample_uniform_sphere(Rng& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Vec3 v;
    do {
        v = Vec3(g(rng), g(rng), g(rng));
    } while (v.norm2() < 1e-24);
    return v.normalized();
}

// Axially symmetric one-parameter direction distribution
//   f(u; beta) = (beta / 4pi) * (1 + (beta^2 - 1) (u.axis)^2)^(-3/2),
// the angular central Gaussian with covariance diag(beta^-2, 1, 1) in the
// frame of `preferred_axis`. beta = 1 is uniform, beta < 1 concentrates
// along the axis.
struct AcgParams {
    UnitVector3 preferred_axis{0.0, 0.0, 1.0};
    double beta = 1.0;
};

inline double acg_pdf(const UnitVector3& u, const AcgParams& p) {
    if (p.beta <= 0.0) throw std::invalid_argument("acg_pdf: beta must be > 0");
    const double t = u.dot(p.preferred_axis);
    const double q = 1.0 + (p.beta * p.beta - 1.0) * t * t;
    return p.beta / (4.0 * std::numbers::pi) * std::pow(q, -1.5);
}

namespace detail {

// Orthonormal basis completion (Duff et al. branchless frame).
inline std::array<Vec3, 2> orthonormal_complement(const UnitVector3& n) {
    const double s = std::copysign(1.0, n.z);
    const double a = -1.0 / (s + n.z);
    const double b = n.x * n.y * a;
    Vec3 u{1.0 + s * n.x * n.x * a, s * b, -s * n.x};
    Vec3 v{b, s + n.y * n.y * a, -n.y};
    return {u, v};
}

}  // namespace detail

// Draws from acg_pdf by inversion in the axial coordinate t = u.axis:
// the marginal CDF is G(t) = (1 + beta t / sqrt(1 + (beta^2-1) t^2)) / 2,
// inverted in closed form; azimuth is uniform.
inline UnitVector3 sample_acg(const AcgParams& p, Rng& rng) {
    if (p.beta <= 0.0) throw std::invalid_argument("sample_acg: beta must be > 0");
    require_unit(p.preferred_axis, "sample_acg");
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double v = 2.0 * unif(rng) - 1.0;
    const double b2 = p.beta * p.beta;
    const double t = v / std::sqrt(b2 - (b2 - 1.0) * v * v);
    const double s = std::sqrt(std::max(0.0, 1.0 - t * t));
    const double phi = 2.0 * std::numbers::pi * unif(rng);
    const auto [e1, e2] = detail::orthonormal_complement(p.preferred_axis);
    return (p.preferred_axis * t + e1 * (s * std::cos(phi)) + e2 * (s * std::sin(phi)))
        .normalized();
}

namespace detail {

// Jacobi rotations for a symmetric 3x3 matrix. Returns eigenvalues and the
// corresponding orthonormal eigenvectors (columns).
struct Eigen3 {
    std::array<double, 3> values;
    std::array<Vec3, 3> vectors;
};

inline Eigen3 jacobi_eigen3(std::array<std::array<double, 3>, 3> a) {
    std::array<std::array<double, 3>, 3> v{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        if (off < 1e-30) break;
        for (int p = 0; p < 2; ++p) {
            for (int q = p + 1; q < 3; ++q) {
                if (std::abs(a[p][q]) < 1e-300) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = std::copysign(1.0, theta) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < 3; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (int k = 0; k < 3; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (int k = 0; k < 3; ++k) {
                    const double vkp = v[k][p], vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    Eigen3 e;
    e.values = {a[0][0], a[1][1], a[2][2]};
    for (int j = 0; j < 3; ++j) e.vectors[j] = Vec3(v[0][j], v[1][j], v[2][j]);
    return e;
}

}  // namespace detail

// Sign convention for axis-valued outputs: fold to z >= 0, breaking ties at
// z == 0 by x >= 0, then y >= 0.
inline UnitVector3 canonical_axis_sign(const UnitVector3& u) {
    if (u.z > 0.0) return u;
    if (u.z < 0.0) return -u;
    if (u.x > 0.0) return u;
    if (u.x < 0.0) return -u;
    return u.y >= 0.0 ? u : -u;
}

// Principal axis of a weighted direction sample: the top eigenvector of the
// scatter matrix sum_i w_i u_i u_i^T. Invariant under negating any sample.
inline UnitVector3 principal_axis(std::span<const UnitVector3> samples,
                                  std::span<const double> weights = {}) {
    if (samples.empty()) throw empty_cell_error("principal_axis: empty sample");
    if (!weights.empty() && weights.size() != samples.size())
        throw std::invalid_argument("principal_axis: weight/sample size mismatch");
    std::array<std::array<double, 3>, 3> s{};
    double wtot = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double w = weights.empty() ? 1.0 : weights[i];
        if (w < 0.0) throw std::invalid_argument("principal_axis: negative weight");
        const Vec3& u = samples[i];
        s[0][0] += w * u.x * u.x;
        s[0][1] += w * u.x * u.y;
        s[0][2] += w * u.x * u.z;
        s[1][1] += w * u.y * u.y;
        s[1][2] += w * u.y * u.z;
        s[2][2] += w * u.z * u.z;
        wtot += w;
    }
    if (wtot <= 0.0) throw empty_cell_error("principal_axis: zero total weight");
    s[1][0] = s[0][1];
    s[2][0] = s[0][2];
    s[2][1] = s[1][2];
    const auto e = detail::jacobi_eigen3(s);
    int best = 0;
    for (int j = 1; j < 3; ++j)
        if (e.values[j] > e.values[best]) best = j;
    return canonical_axis_sign(e.vectors[best].normalized());
}

// Manifold constants entering the nearest-neighbor entropy estimator:
// sigma(B_delta(x)) ~ c delta^d as delta -> 0. For S^2, d = 2 and c = pi
// (geodesic ball area 2 pi (1 - cos delta)).
struct ManifoldSpec {
    int dim = 2;
    double density_constant = std::numbers::pi;

    static ManifoldSpec sphere2() { return {2, std::numbers::pi}; }
};

}  // namespace fibrescan

#endif
