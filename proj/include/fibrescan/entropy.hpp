#ifndef FIBRESCAN_ENTROPY_HPP
#define FIBRESCAN_ENTROPY_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "fibrescan/core.hpp"
#include "fibrescan/grid.hpp"
#include "fibrescan/sphere.hpp"

namespace fibrescan {

inline constexpr double kEulerGamma = 0.5772156649;  // Euler-Mascheroni

// ---------------------------------------------------------------------------
// nearest-neighbor search on S^2
//
// Uniform hash over the embedding cube [-1,1]^3. Chord and geodesic distance
// are monotonically related (chord = 2 sin(rho/2)), so chord-space nearest
// neighbors are geodesic nearest neighbors.

class SphereNeighborGrid {
public:
    explicit SphereNeighborGrid(std::span<const UnitVector3> pts, double cell = 0.0)
        : pts_(pts.begin(), pts.end()) {
        cell_ = cell > 0.0 ? cell : std::max(0.02, 4.0 / std::sqrt(double(pts.size()) + 1.0));
        nside_ = std::max(1, int(std::ceil(2.0 / cell_)));
        cell_ = 2.0 / nside_;  // exact tiling of [-1,1]
        buckets_.assign(std::size_t(nside_) * nside_ * nside_, {});
        for (std::size_t i = 0; i < pts_.size(); ++i)
            buckets_[bucket_of(pts_[i])].push_back(i);
    }

    // Geodesic distance to the nearest neighbor distinct from index `self`
    // (pass size() to disable self-exclusion).
    double nn_distance(const UnitVector3& q, std::size_t self) const {
        const int gx = coord(q.x), gy = coord(q.y), gz = coord(q.z);
        double best2 = std::numeric_limits<double>::infinity();
        const int rmax = nside_;  // worst case scans everything
        for (int ring = 0; ring <= rmax; ++ring) {
            // no point in a farther ring can beat the current best
            const double reach = double(ring - 1) * cell_;
            if (ring > 0 && best2 <= reach * reach) break;
            if (!scan_ring(q, gx, gy, gz, ring, self, best2) && ring > 0 &&
                best2 < std::numeric_limits<double>::infinity())
                break;
        }
        const double chord = std::sqrt(best2);
        return 2.0 * std::asin(std::clamp(chord / 2.0, 0.0, 1.0));
    }

    // Indices of points with geodesic distance <= rho from q.
    void ball(const UnitVector3& q, double rho, std::vector<std::size_t>& out) const {
        out.clear();
        const double chord = 2.0 * std::sin(std::clamp(rho, 0.0, std::numbers::pi) / 2.0);
        const double c2 = chord * chord;
        const int lo[3] = {coord(q.x - chord), coord(q.y - chord), coord(q.z - chord)};
        const int hi[3] = {coord(q.x + chord), coord(q.y + chord), coord(q.z + chord)};
        for (int gz = lo[2]; gz <= hi[2]; ++gz)
            for (int gy = lo[1]; gy <= hi[1]; ++gy)
                for (int gx = lo[0]; gx <= hi[0]; ++gx)
                    for (std::size_t idx : buckets_[blin(gx, gy, gz)])
                        if ((pts_[idx] - q).norm2() <= c2) out.push_back(idx);
    }

    std::size_t size() const { return pts_.size(); }

private:
    int coord(double v) const {
        int c = int(std::floor((v + 1.0) / cell_));
        return std::clamp(c, 0, nside_ - 1);
    }
    std::size_t blin(int x, int y, int z) const {
        return (std::size_t(z) * nside_ + y) * nside_ + x;
    }
    std::size_t bucket_of(const UnitVector3& p) const {
        return blin(coord(p.x), coord(p.y), coord(p.z));
    }
    bool scan_ring(const UnitVector3& q, int gx, int gy, int gz, int ring,
                   std::size_t self, double& best2) const {
        bool any = false;
        const int x0 = gx - ring, x1 = gx + ring;
        const int y0 = gy - ring, y1 = gy + ring;
        const int z0 = gz - ring, z1 = gz + ring;
        for (int z = z0; z <= z1; ++z) {
            if (z < 0 || z >= nside_) continue;
            for (int y = y0; y <= y1; ++y) {
                if (y < 0 || y >= nside_) continue;
                for (int x = x0; x <= x1; ++x) {
                    if (x < 0 || x >= nside_) continue;
                    // only the shell of the ring
                    if (ring > 0 && x != x0 && x != x1 && y != y0 && y != y1 &&
                        z != z0 && z != z1)
                        continue;
                    any = true;
                    for (std::size_t idx : buckets_[blin(x, y, z)]) {
                        if (idx == self) continue;
                        const double d2 = (pts_[idx] - q).norm2();
                        if (d2 < best2) best2 = d2;
                    }
                }
            }
        }
        return any;
    }

    std::vector<UnitVector3> pts_;
    std::vector<std::vector<std::size_t>> buckets_;
    double cell_ = 0.1;
    int nside_ = 1;
};

// rho_i = min_{j != i} rho(xi_i, xi_j) for all i.
inline std::vector<double> nn_distances(std::span<const UnitVector3> samples) {
    if (samples.size() < 2)
        throw std::invalid_argument("nn_distances: need at least 2 samples");
    SphereNeighborGrid grid(samples);
    std::vector<double> out(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i)
        out[i] = grid.nn_distance(samples[i], i);
    return out;
}

// ---------------------------------------------------------------------------
// nearest-neighbor (Dobrushin) estimator

struct NnConfig {
    double penalty_radius = 0.01;  // rho_0, radians
    ManifoldSpec manifold = ManifoldSpec::sphere2();
};

struct NnDiagnostics {
    std::size_t total = 0;
    std::size_t used = 0;  // rho_i > rho_0
};

// Unpenalized estimator: (d/N) sum ln rho_i + ln(c (N-1)) + gamma.
// Requires every rho_i > 0.
inline double nn_entropy(std::span<const UnitVector3> samples,
                         const ManifoldSpec& manifold = ManifoldSpec::sphere2()) {
    const auto rho = nn_distances(samples);
    const double n = double(rho.size());
    double s = 0.0;
    for (double r : rho) {
        if (r <= 0.0)
            throw zero_distance_error("nn_entropy: zero nearest-neighbor distance");
        s += std::log(r);
    }
    return manifold.dim / n * s + std::log(manifold.density_constant * (n - 1.0)) +
           kEulerGamma;
}

// Penalized variant: only indices with rho_i > rho_0 contribute, and the
// filtered count replaces N throughout.
inline double nn_entropy_penalized(std::span<const UnitVector3> samples,
                                   const NnConfig& cfg,
                                   NnDiagnostics* diag = nullptr) {
    const auto rho = nn_distances(samples);
    double s = 0.0;
    std::size_t kept = 0;
    for (double r : rho) {
        if (r > cfg.penalty_radius) {
            s += std::log(r);
            ++kept;
        }
    }
    if (diag) *diag = {rho.size(), kept};
    if (kept < 2)
        throw degenerate_sample_error(
            "nn_entropy_penalized: fewer than 2 distances above the penalty radius");
    return cfg.manifold.dim / double(kept) * s +
           std::log(cfg.manifold.density_constant * double(kept - 1)) + kEulerGamma;
}

// ---------------------------------------------------------------------------
// plug-in (kernel) estimator

enum class KernelId { Epanechnikov };

struct PluginConfig {
    double bandwidth = 0.25;  // radians
    KernelId kernel = KernelId::Epanechnikov;
    // Cubic index sub-window B of the given radius (in cells) around each
    // evaluation cell; negative radius means "all available samples".
    int subwindow_radius = -1;
};

namespace detail {

inline double epanechnikov(double t) {
    return t <= 1.0 ? 0.75 * (1.0 - t * t) : 0.0;
}

// Spherical mass of one raw kernel bump:
//   A(h) = (2 pi / h^2) int_0^min(1, pi/h) K(t) sin^2(h t) / t dt.
// The kernel is divided by A(h) so the estimated density integrates to one.
inline double kernel_bump_mass(double h) {
    const double upper = std::min(1.0, std::numbers::pi / h);
    const int n = 2048;  // Simpson; integrand is smooth and vanishes at 0
    const double dt = upper / n;
    auto f = [&](double t) {
        if (t <= 0.0) return 0.0;
        const double s = std::sin(h * t);
        return epanechnikov(t) * s * s / t;
    };
    double acc = f(0.0) + f(upper);
    for (int i = 1; i < n; ++i) acc += f(i * dt) * (i % 2 ? 4.0 : 2.0);
    return 2.0 * std::numbers::pi / (h * h) * acc * dt / 3.0;
}

struct KernelEval {
    double h;
    double inv_mass;  // 1/A(h)

    explicit KernelEval(const PluginConfig& cfg)
        : h(cfg.bandwidth), inv_mass(1.0 / kernel_bump_mass(cfg.bandwidth)) {
        if (cfg.bandwidth <= 0.0)
            throw std::invalid_argument("PluginConfig: bandwidth must be > 0");
    }

    // One summand of the kernel density at geodesic distance rho, with the
    // removable singularity |sin rho|/rho extended to 1 at rho = 0.
    double term(double rho) const {
        const double t = rho / h;
        if (t > 1.0) return 0.0;
        const double radial = rho > 0.0 ? std::abs(std::sin(rho)) / (h * h * rho)
                                        : 1.0 / (h * h);
        return radial * epanechnikov(t) * inv_mass;
    }
};

}  // namespace detail

// Kernel density estimate at y from the given samples (all of them; the
// translated-window bookkeeping lives in plugin_entropy).
inline double kernel_density_at(const UnitVector3& y,
                                std::span<const UnitVector3> samples,
                                const PluginConfig& cfg) {
    if (samples.empty())
        throw std::invalid_argument("kernel_density_at: empty sample");
    const detail::KernelEval k(cfg);
    double acc = 0.0;
    for (const auto& x : samples) acc += k.term(geodesic_distance(y, x));
    return acc / double(samples.size());
}

struct PluginDiagnostics {
    std::size_t evaluations = 0;
    std::size_t dropped = 0;  // zero-density evaluations excluded from the mean
};

// Plug-in entropy of a direction sample: -(1/N) sum ln f_hat(X_i), the
// density at each point estimated from the whole sample (leave-none-out,
// matching the translated-window definition where B covers the data).
inline double plugin_entropy_samples(std::span<const UnitVector3> samples,
                                     const PluginConfig& cfg,
                                     PluginDiagnostics* diag = nullptr) {
    if (samples.empty())
        throw std::invalid_argument("plugin_entropy_samples: empty sample");
    const detail::KernelEval k(cfg);
    SphereNeighborGrid grid(samples, 2.0 * std::sin(std::min(cfg.bandwidth, 3.0) / 2.0));
    const double n = double(samples.size());
    double acc = 0.0;
    std::size_t dropped = 0;
    std::vector<std::size_t> hood;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        grid.ball(samples[i], cfg.bandwidth, hood);
        double dens = 0.0;
        for (std::size_t j : hood)
            dens += k.term(geodesic_distance(samples[i], samples[j]));
        dens /= n;
        if (dens > 0.0)
            acc += std::log(dens);
        else
            ++dropped;
    }
    if (diag) *diag = {samples.size(), dropped};
    if (dropped == samples.size())
        throw estimation_failed_error("plugin_entropy: all density evaluations were zero");
    return -acc / double(samples.size() - dropped);
}

// Windowed plug-in estimator over a direction field: for each member cell i
// of S_l the density is estimated from the occupied cells of the translated
// sub-window B + i (cubic radius cfg.subwindow_radius; negative = all of S_l).
inline double plugin_entropy(const DirectionField& field,
                             std::span<const std::size_t> window_cells,
                             const PluginConfig& cfg,
                             PluginDiagnostics* diag = nullptr) {
    if (window_cells.empty())
        throw std::invalid_argument("plugin_entropy: empty window");
    if (cfg.subwindow_radius < 0) {
        std::vector<UnitVector3> samples;
        samples.reserve(window_cells.size());
        for (auto t : window_cells) samples.push_back(field.directions[t]);
        return plugin_entropy_samples(samples, cfg, diag);
    }
    const detail::KernelEval k(cfg);
    const int R = cfg.subwindow_radius;
    const auto& g = field.grid;
    double acc = 0.0;
    std::size_t dropped = 0;
    for (auto t : window_cells) {
        const int i = int(t % g.n1);
        const int j = int((t / g.n1) % g.n2);
        const int kk = int(t / (std::size_t(g.n1) * g.n2));
        const UnitVector3& y = field.directions[t];
        double dens = 0.0;
        std::size_t used = 0;
        for (int dz = -R; dz <= R; ++dz) {
            const int z = kk + dz;
            if (z < 0 || z >= g.n3) continue;
            for (int dy = -R; dy <= R; ++dy) {
                const int yj = j + dy;
                if (yj < 0 || yj >= g.n2) continue;
                for (int dx = -R; dx <= R; ++dx) {
                    const int xi = i + dx;
                    if (xi < 0 || xi >= g.n1) continue;
                    const auto u = (std::size_t(z) * g.n2 + yj) * g.n1 + xi;
                    if (!field.mask[u]) continue;
                    dens += k.term(geodesic_distance(y, field.directions[u]));
                    ++used;
                }
            }
        }
        if (used == 0)
            throw std::invalid_argument("plugin_entropy: empty translated sub-window");
        dens /= double(used);
        if (dens > 0.0)
            acc += std::log(dens);
        else
            ++dropped;
    }
    if (diag) *diag = {window_cells.size(), dropped};
    if (dropped == window_cells.size())
        throw estimation_failed_error("plugin_entropy: all density evaluations were zero");
    return -acc / double(window_cells.size() - dropped);
}

// ---------------------------------------------------------------------------
// reference entropy by spherical quadrature

// E_f = -int_{S^2} f ln f dsigma for a normalized density given as a callable
// of the unit vector. Product Gauss(phi is uniform) x Simpson(t) rule with
// doubling until two consecutive refinements agree to 1e-5.
inline double reference_entropy(const std::function<double(const UnitVector3&)>& f) {
    auto integrate = [&](int nt, int nphi, bool neg_log) {
        // t = cos(theta) in [-1,1] via composite Simpson, phi uniform trapezoid
        const double dt = 2.0 / nt;
        const double dphi = 2.0 * std::numbers::pi / nphi;
        double total = 0.0;
        for (int a = 0; a <= nt; ++a) {
            const double t = -1.0 + a * dt;
            const double s = std::sqrt(std::max(0.0, 1.0 - t * t));
            double ring = 0.0;
            for (int b = 0; b < nphi; ++b) {
                const double phi = b * dphi;
                const UnitVector3 u{s * std::cos(phi), s * std::sin(phi), t};
                const double fv = f(u);
                if (fv < 0.0)
                    throw std::invalid_argument("reference_entropy: negative density");
                if (neg_log)
                    ring += fv > 0.0 ? -fv * std::log(fv) : 0.0;
                else
                    ring += fv;
            }
            const double w = (a == 0 || a == nt) ? 1.0 : (a % 2 ? 4.0 : 2.0);
            total += w * ring;
        }
        return total * dt / 3.0 * dphi;
    };

    double prev = 0.0, cur = 0.0;
    for (int n = 128; n <= 4096; n *= 2) {
        cur = integrate(n, n, true);
        if (n > 128 && std::abs(cur - prev) < 1e-5) break;
        prev = cur;
    }
    const double mass = integrate(2048, 2048, false);
    if (std::abs(mass - 1.0) > 1e-3)
        throw std::invalid_argument("reference_entropy: density is not normalized");
    return cur;
}

}  // namespace fibrescan

#endif
