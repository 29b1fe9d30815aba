#ifndef FIBRESCAN_GRID_HPP
#define FIBRESCAN_GRID_HPP

#include <cstdint>
#include <vector>

#include "fibrescan/core.hpp"

namespace fibrescan {

// Cell partition of the observation volume: cubic cells of edge `delta`
// voxels, n1 x n2 x n3 of them, grouped into M^3-cell scanning windows.
// Trailing cells that do not fill a complete window are discarded.
struct GridSpec {
    int delta = 1;
    int n1 = 0, n2 = 0, n3 = 0;
    int window_factor = 1;  // M

    int m1() const { return n1 / window_factor; }
    int m2() const { return n2 / window_factor; }
    int m3() const { return n3 / window_factor; }
    std::size_t cell_count() const {
        return std::size_t(n1) * std::size_t(n2) * std::size_t(n3);
    }
    std::size_t window_count() const {
        return std::size_t(m1()) * std::size_t(m2()) * std::size_t(m3());
    }

    void validate() const {
        if (delta < 1) throw std::invalid_argument("GridSpec: delta must be >= 1");
        if (n1 < 1 || n2 < 1 || n3 < 1)
            throw std::invalid_argument("GridSpec: cell counts must be >= 1");
        if (window_factor < 1)
            throw std::invalid_argument("GridSpec: window factor must be >= 1");
        if (window_factor > std::min({n1, n2, n3}))
            throw std::invalid_argument("GridSpec: window factor exceeds grid");
    }
};

// Dense scalar field over a 3D index grid with an occupancy mask. Values are
// meaningful exactly where the mask is set.
struct ScalarField3 {
    int n1 = 0, n2 = 0, n3 = 0;
    std::vector<double> values;
    std::vector<std::uint8_t> mask;

    ScalarField3() = default;
    ScalarField3(int a, int b, int c)
        : n1(a), n2(b), n3(c),
          values(std::size_t(a) * b * c, 0.0),
          mask(std::size_t(a) * b * c, 0) {}

    static ScalarField3 full(int a, int b, int c, double v = 0.0) {
        ScalarField3 f(a, b, c);
        std::fill(f.values.begin(), f.values.end(), v);
        std::fill(f.mask.begin(), f.mask.end(), std::uint8_t(1));
        return f;
    }

    std::size_t size() const { return values.size(); }
    std::size_t lin(int i, int j, int k) const {
        return (std::size_t(k) * n2 + j) * n1 + i;
    }
    Index3 unlin(std::size_t t) const {
        const int i = int(t % n1);
        const int j = int((t / n1) % n2);
        const int k = int(t / (std::size_t(n1) * n2));
        return {i, j, k};
    }
    double& at(int i, int j, int k) { return values[lin(i, j, k)]; }
    double at(int i, int j, int k) const { return values[lin(i, j, k)]; }
    bool occupied(int i, int j, int k) const { return mask[lin(i, j, k)] != 0; }
    void set(int i, int j, int k, double v) {
        const auto t = lin(i, j, k);
        values[t] = v;
        mask[t] = 1;
    }
    std::size_t occupied_count() const {
        std::size_t n = 0;
        for (auto m : mask) n += m;
        return n;
    }
    bool in_bounds(int i, int j, int k) const {
        return i >= 0 && i < n1 && j >= 0 && j < n2 && k >= 0 && k < n3;
    }
};

// Sparse-by-mask field of unit directions on the cell grid (the sample
// {X_i, i in J}).
struct DirectionField {
    GridSpec grid;
    std::vector<UnitVector3> directions;  // dense, valid where mask set
    std::vector<std::uint8_t> mask;

    DirectionField() = default;
    explicit DirectionField(const GridSpec& g)
        : grid(g), directions(g.cell_count()), mask(g.cell_count(), 0) {}

    std::size_t lin(int i, int j, int k) const {
        return (std::size_t(k) * grid.n2 + j) * grid.n1 + i;
    }
    void set(int i, int j, int k, const UnitVector3& u) {
        const auto t = lin(i, j, k);
        directions[t] = u;
        mask[t] = 1;
    }
    bool occupied(int i, int j, int k) const { return mask[lin(i, j, k)] != 0; }
    std::size_t occupied_count() const {
        std::size_t n = 0;
        for (auto m : mask) n += m;
        return n;
    }
};

// Window partition: for each window l (linear index over the m1 x m2 x m3
// window grid) the member cells S_l, i.e. occupied cells falling inside it.
struct WindowPartition {
    int m1 = 0, m2 = 0, m3 = 0;
    std::vector<std::vector<std::size_t>> members;  // cell linear indices

    std::size_t window_count() const {
        return std::size_t(m1) * std::size_t(m2) * std::size_t(m3);
    }
    std::size_t wlin(int a, int b, int c) const {
        return (std::size_t(c) * m2 + b) * m1 + a;
    }
    Index3 wunlin(std::size_t t) const {
        const int a = int(t % m1);
        const int b = int((t / m1) % m2);
        const int c = int(t / (std::size_t(m1) * m2));
        return {a, b, c};
    }
};

// Assigns every occupied cell to its window by floor division; cells past
// M * m_i on any axis are dropped.
template <class MaskedField>
inline WindowPartition partition_windows(const GridSpec& grid, const MaskedField& field) {
    grid.validate();
    const int M = grid.window_factor;
    WindowPartition part;
    part.m1 = grid.m1();
    part.m2 = grid.m2();
    part.m3 = grid.m3();
    part.members.assign(part.window_count(), {});
    for (int k = 0; k < grid.n3; ++k) {
        const int wc = k / M;
        if (wc >= part.m3) continue;
        for (int j = 0; j < grid.n2; ++j) {
            const int wb = j / M;
            if (wb >= part.m2) continue;
            for (int i = 0; i < grid.n1; ++i) {
                const int wa = i / M;
                if (wa >= part.m1) continue;
                if (!field.occupied(i, j, k)) continue;
                part.members[part.wlin(wa, wb, wc)].push_back(
                    (std::size_t(k) * grid.n2 + j) * grid.n1 + i);
            }
        }
    }
    return part;
}

}  // namespace fibrescan

#endif
