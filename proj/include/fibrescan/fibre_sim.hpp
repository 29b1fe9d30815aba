#ifndef FIBRESCAN_FIBRE_SIM_HPP
#define FIBRESCAN_FIBRE_SIM_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "fibrescan/core.hpp"
#include "fibrescan/grid.hpp"
#include "fibrescan/sphere.hpp"

namespace fibrescan {

// Straight fibre modelled as a spherocylinder: centerline segment p0-p1
// dilated by `radius`. Coordinates in voxels.
struct Fibre {
    Vec3 p0, p1;
    double radius = 1.0;

    Vec3 center() const { return (p0 + p1) * 0.5; }
    double length() const { return (p1 - p0).norm(); }
    UnitVector3 direction() const { return (p1 - p0).normalized(); }
};

// Minimal Euclidean distance between two closed segments [a0,a1], [b0,b1].
inline double segment_distance(const Vec3& a0, const Vec3& a1, const Vec3& b0,
                               const Vec3& b1) {
    const Vec3 d1 = a1 - a0;
    const Vec3 d2 = b1 - b0;
    const Vec3 r = a0 - b0;
    const double A = d1.norm2();
    const double E = d2.norm2();
    if (A <= 0.0 || E <= 0.0)
        throw std::invalid_argument("segment_distance: degenerate segment");
    const double B = d1.dot(d2);
    const double C = d1.dot(r);
    const double F = d2.dot(r);
    const double den = A * E - B * B;
    double s = den > 1e-14 * A * E ? std::clamp((B * F - C * E) / den, 0.0, 1.0) : 0.0;
    double t = (B * s + F) / E;
    if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-C / A, 0.0, 1.0);
    } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((B - C) / A, 0.0, 1.0);
    }
    return ((a0 + d1 * s) - (b0 + d2 * t)).norm();
}

// One constant-distribution slab of the RSA system: fibre centers fall into
// [lo, hi) on the layer axis, directions follow `acg`.
struct RsaLayer {
    double lo = 0.0, hi = 0.0;  // voxel range on the layer axis
    AcgParams acg;
    std::size_t count = 0;
};

struct RsaConfig {
    Vec3 dims{0, 0, 0};  // domain size in voxels
    double fibre_length = 100.0;
    double radius = 4.0;
    Axis layer_axis = Axis::Y;
    std::vector<RsaLayer> layers;
    std::size_t max_attempts = 10000;  // per fibre

    void validate() const {
        if (dims.x <= 0 || dims.y <= 0 || dims.z <= 0)
            throw std::invalid_argument("RsaConfig: nonpositive domain");
        if (fibre_length <= 0 || radius <= 0)
            throw std::invalid_argument("RsaConfig: nonpositive fibre geometry");
        if (layers.empty()) throw std::invalid_argument("RsaConfig: no layers");
        double edge = 0.0;
        for (const auto& l : layers) {
            if (l.lo != edge)
                throw std::invalid_argument("RsaConfig: layers must tile the axis");
            if (l.hi <= l.lo) throw std::invalid_argument("RsaConfig: empty layer");
            edge = l.hi;
        }
        const double extent = layer_axis == Axis::X   ? dims.x
                              : layer_axis == Axis::Y ? dims.y
                                                      : dims.z;
        if (edge != extent)
            throw std::invalid_argument("RsaConfig: layers do not cover the domain");
    }
};

namespace detail {

// Spatial hash over fibre centers. Cell edge = fibre length + diameter, so
// any two overlapping capsules have centers within one cell in each axis.
class FibreHash {
public:
    FibreHash(const Vec3& dims, double reach) : reach_(reach) {
        nx_ = std::max(1, int(dims.x / reach));
        ny_ = std::max(1, int(dims.y / reach));
        nz_ = std::max(1, int(dims.z / reach));
        cx_ = dims.x / nx_;
        cy_ = dims.y / ny_;
        cz_ = dims.z / nz_;
    }
    void insert(const Vec3& c, std::size_t idx) {
        cells_[key(c)].push_back(idx);
    }
    template <class Fn>
    bool any_neighbor(const Vec3& c, Fn&& reject) const {
        const int gx = int(c.x / cx_), gy = int(c.y / cy_), gz = int(c.z / cz_);
        for (int z = gz - 1; z <= gz + 1; ++z)
            for (int y = gy - 1; y <= gy + 1; ++y)
                for (int x = gx - 1; x <= gx + 1; ++x) {
                    if (x < 0 || y < 0 || z < 0 || x >= nx_ || y >= ny_ || z >= nz_)
                        continue;
                    auto it = cells_.find(pack(x, y, z));
                    if (it == cells_.end()) continue;
                    for (std::size_t idx : it->second)
                        if (reject(idx)) return true;
                }
        return false;
    }

private:
    std::uint64_t pack(int x, int y, int z) const {
        return (std::uint64_t(z) << 42) | (std::uint64_t(y) << 21) | std::uint64_t(x);
    }
    std::uint64_t key(const Vec3& c) const {
        return pack(std::clamp(int(c.x / cx_), 0, nx_ - 1),
                    std::clamp(int(c.y / cy_), 0, ny_ - 1),
                    std::clamp(int(c.z / cz_), 0, nz_ - 1));
    }
    std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
    double reach_, cx_, cy_, cz_;
    int nx_, ny_, nz_;
};

}  // namespace detail

// Random sequential adsorption of non-overlapping fibres. Placement order is
// layer by layer; each fibre is drawn (center uniform in its slab, direction
// from the layer distribution), kept entirely inside the domain including the
// radius, and accepted iff its centerline keeps distance >= 2 radius from all
// accepted centerlines.
inline std::vector<Fibre> generate_rsa(const RsaConfig& cfg, Rng& rng) {
    cfg.validate();
    std::vector<Fibre> fibres;
    std::size_t total = 0;
    for (const auto& l : cfg.layers) total += l.count;
    fibres.reserve(total);

    detail::FibreHash hash(cfg.dims, cfg.fibre_length + 2.0 * cfg.radius);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double r = cfg.radius;
    const double half = cfg.fibre_length / 2.0;
    const int ax = static_cast<int>(cfg.layer_axis);

    for (const auto& layer : cfg.layers) {
        for (std::size_t n = 0; n < layer.count; ++n) {
            bool placed = false;
            for (std::size_t att = 0; att < cfg.max_attempts && !placed; ++att) {
                Vec3 c{unif(rng) * cfg.dims.x, unif(rng) * cfg.dims.y,
                       unif(rng) * cfg.dims.z};
                if (ax == 0) c.x = layer.lo + unif(rng) * (layer.hi - layer.lo);
                if (ax == 1) c.y = layer.lo + unif(rng) * (layer.hi - layer.lo);
                if (ax == 2) c.z = layer.lo + unif(rng) * (layer.hi - layer.lo);
                const UnitVector3 u = sample_acg(layer.acg, rng);
                const Vec3 p0 = c - u * half;
                const Vec3 p1 = c + u * half;
                const auto inside = [&](const Vec3& p) {
                    return p.x >= r && p.y >= r && p.z >= r && p.x <= cfg.dims.x - r &&
                           p.y <= cfg.dims.y - r && p.z <= cfg.dims.z - r;
                };
                if (!inside(p0) || !inside(p1)) continue;
                const bool overlap = hash.any_neighbor(c, [&](std::size_t idx) {
                    return segment_distance(p0, p1, fibres[idx].p0, fibres[idx].p1) <
                           2.0 * r;
                });
                if (overlap) continue;
                hash.insert(c, fibres.size());
                fibres.push_back({p0, p1, r});
                placed = true;
            }
            if (!placed)
                throw partial_packing_error("generate_rsa: attempts exhausted",
                                            fibres.size());
        }
    }
    return fibres;
}

namespace detail {

// Split a segment at the cell-boundary crossings of a cubic grid with edge
// `delta` and hand each piece (cell linear index, length, midpoint param) to
// the sink.
template <class Fn>
inline void walk_cells(const Vec3& p0, const Vec3& p1, double delta, int n1, int n2,
                       int n3, Fn&& sink) {
    const Vec3 d = p1 - p0;
    const double len = d.norm();
    if (len <= 0.0) return;
    std::vector<double> cuts{0.0, 1.0};
    for (int axis = 0; axis < 3; ++axis) {
        const double a = p0[axis], b = p1[axis];
        const int lo = int(std::floor(std::min(a, b) / delta));
        const int hi = int(std::floor(std::max(a, b) / delta));
        for (int c = lo + 1; c <= hi; ++c) {
            const double t = (c * delta - a) / (b - a);
            if (t > 0.0 && t < 1.0) cuts.push_back(t);
        }
    }
    std::sort(cuts.begin(), cuts.end());
    for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
        const double t0 = cuts[s], t1 = cuts[s + 1];
        if (t1 - t0 <= 1e-12) continue;
        const double tm = 0.5 * (t0 + t1);
        const Vec3 m = p0 + d * tm;
        const int i = int(m.x / delta), j = int(m.y / delta), k = int(m.z / delta);
        if (i < 0 || j < 0 || k < 0 || i >= n1 || j >= n2 || k >= n3) continue;
        sink((std::size_t(k) * n2 + j) * n1 + i, (t1 - t0) * len);
    }
}

}  // namespace detail

// Per-cell average local direction: principal axis of length-weighted tangent
// directions of the centerline pieces inside the cell. Cells whose total
// intersecting centerline length is below `min_length` (default delta/2) stay
// unoccupied.
inline DirectionField local_direction_field(std::span<const Fibre> fibres, int delta,
                                            int n1, int n2, int n3,
                                            double min_length = -1.0) {
    if (delta < 1) throw std::invalid_argument("local_direction_field: delta < 1");
    if (min_length < 0.0) min_length = delta / 2.0;
    GridSpec g;
    g.delta = delta;
    g.n1 = n1;
    g.n2 = n2;
    g.n3 = n3;

    // accumulate the 3x3 scatter of tangents (length-weighted) per cell
    struct Scatter {
        double xx = 0, xy = 0, xz = 0, yy = 0, yz = 0, zz = 0, w = 0;
    };
    std::vector<Scatter> acc(g.cell_count());
    for (const auto& f : fibres) {
        const UnitVector3 u = f.direction();
        detail::walk_cells(f.p0, f.p1, double(delta), n1, n2, n3,
                           [&](std::size_t cell, double len) {
                               auto& s = acc[cell];
                               s.xx += len * u.x * u.x;
                               s.xy += len * u.x * u.y;
                               s.xz += len * u.x * u.z;
                               s.yy += len * u.y * u.y;
                               s.yz += len * u.y * u.z;
                               s.zz += len * u.z * u.z;
                               s.w += len;
                           });
    }
    DirectionField field(g);
    for (std::size_t t = 0; t < acc.size(); ++t) {
        const auto& s = acc[t];
        if (s.w < min_length) continue;
        const auto e = detail::jacobi_eigen3(
            {{{s.xx, s.xy, s.xz}, {s.xy, s.yy, s.yz}, {s.xz, s.yz, s.zz}}});
        int best = 0;
        for (int j = 1; j < 3; ++j)
            if (e.values[j] > e.values[best]) best = j;
        field.directions[t] = canonical_axis_sign(e.vectors[best].normalized());
        field.mask[t] = 1;
    }
    return field;
}

// Binary voxelization of the dilated fibre system: voxel centers within
// `radius` of a centerline are set. Voxel (i,j,k) has center (i+1/2, ...).
inline std::vector<std::uint8_t> voxelize(std::span<const Fibre> fibres, int n1,
                                          int n2, int n3) {
    if (n1 <= 0 || n2 <= 0 || n3 <= 0)
        throw std::invalid_argument("voxelize: nonpositive dims");
    std::vector<std::uint8_t> vol(std::size_t(n1) * n2 * n3, 0);
    for (const auto& f : fibres) {
        const double r = f.radius;
        const Vec3 lo{std::min(f.p0.x, f.p1.x) - r, std::min(f.p0.y, f.p1.y) - r,
                      std::min(f.p0.z, f.p1.z) - r};
        const Vec3 hi{std::max(f.p0.x, f.p1.x) + r, std::max(f.p0.y, f.p1.y) + r,
                      std::max(f.p0.z, f.p1.z) + r};
        const int i0 = std::max(0, int(std::floor(lo.x - 0.5)));
        const int j0 = std::max(0, int(std::floor(lo.y - 0.5)));
        const int k0 = std::max(0, int(std::floor(lo.z - 0.5)));
        const int i1 = std::min(n1 - 1, int(std::ceil(hi.x - 0.5)));
        const int j1 = std::min(n2 - 1, int(std::ceil(hi.y - 0.5)));
        const int k1 = std::min(n3 - 1, int(std::ceil(hi.z - 0.5)));
        const Vec3 d = f.p1 - f.p0;
        const double dd = d.norm2();
        for (int k = k0; k <= k1; ++k)
            for (int j = j0; j <= j1; ++j)
                for (int i = i0; i <= i1; ++i) {
                    const Vec3 c{i + 0.5, j + 0.5, k + 0.5};
                    const double t =
                        dd > 0.0 ? std::clamp((c - f.p0).dot(d) / dd, 0.0, 1.0) : 0.0;
                    if (((f.p0 + d * t) - c).norm2() <= r * r)
                        vol[(std::size_t(k) * n2 + j) * n1 + i] = 1;
                }
    }
    return vol;
}

// m-dependent Gaussian test field: standard normal values constant on each
// m^3 block anchored at 1 + m k, independent across blocks. Each block value
// comes from its own child stream (splitmix64 of the seed and the block
// linear index), so the field is reproducible regardless of evaluation order.
inline ScalarField3 generate_block_gaussian_field(int n1, int n2, int n3, int m,
                                                  std::uint64_t seed) {
    if (m < 1) throw std::invalid_argument("generate_block_gaussian_field: m < 1");
    ScalarField3 f = ScalarField3::full(n1, n2, n3);
    const int b1 = (n1 + m - 1) / m, b2 = (n2 + m - 1) / m, b3 = (n3 + m - 1) / m;
    std::vector<double> block(std::size_t(b1) * b2 * b3);
    for (std::size_t b = 0; b < block.size(); ++b) {
        Rng rng = make_rng(seed, b);
        std::normal_distribution<double> g(0.0, 1.0);
        block[b] = g(rng);
    }
    for (int k = 0; k < n3; ++k)
        for (int j = 0; j < n2; ++j)
            for (int i = 0; i < n1; ++i)
                f.values[f.lin(i, j, k)] =
                    block[(std::size_t(k / m) * b2 + j / m) * b1 + i / m];
    return f;
}

struct AnomalyBox {
    Index3 origin;  // 1-based cell coordinates
    Index3 extent;  // cells per axis
};

// Adds the shift h on the box (model s_k = xi_k + h 1{k in I}).
inline ScalarField3 inject_anomaly(const ScalarField3& field, const AnomalyBox& box,
                                   double h) {
    if (box.origin.i1 < 1 || box.origin.i2 < 1 || box.origin.i3 < 1 ||
        box.extent.i1 < 1 || box.extent.i2 < 1 || box.extent.i3 < 1 ||
        box.origin.i1 + box.extent.i1 - 1 > field.n1 ||
        box.origin.i2 + box.extent.i2 - 1 > field.n2 ||
        box.origin.i3 + box.extent.i3 - 1 > field.n3)
        throw std::invalid_argument("inject_anomaly: box out of bounds");
    ScalarField3 out = field;
    for (int k = box.origin.i3 - 1; k < box.origin.i3 - 1 + box.extent.i3; ++k)
        for (int j = box.origin.i2 - 1; j < box.origin.i2 - 1 + box.extent.i2; ++j)
            for (int i = box.origin.i1 - 1; i < box.origin.i1 - 1 + box.extent.i1; ++i)
                out.values[out.lin(i, j, k)] += h;
    return out;
}

}  // namespace fibrescan

#endif
