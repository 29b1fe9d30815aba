#ifndef FIBRESCAN_FIELDS_HPP
#define FIBRESCAN_FIELDS_HPP

#include <array>
#include <optional>
#include <vector>

#include "fibrescan/entropy.hpp"
#include "fibrescan/grid.hpp"
#include "fibrescan/sphere.hpp"

namespace fibrescan {

// Per-window aggregate: member count, coordinate-wise mean of folded local
// directions (MLD), optional entropy estimate.
struct WindowAggregate {
    std::size_t window = 0;  // linear window index
    std::size_t count = 0;   // |S_l|
    Vec3 mld{};              // means of (|x|, |y|, |z|)
    std::optional<double> entropy;
};

// Folded coordinate attribute fields on the small-cell grid:
// x~ = |x|, y~ = |y|, z~ = |z| per occupied cell.
inline std::array<ScalarField3, 3> fold_attributes(const DirectionField& field) {
    const auto& g = field.grid;
    std::array<ScalarField3, 3> out{ScalarField3(g.n1, g.n2, g.n3),
                                    ScalarField3(g.n1, g.n2, g.n3),
                                    ScalarField3(g.n1, g.n2, g.n3)};
    for (std::size_t t = 0; t < field.mask.size(); ++t) {
        if (!field.mask[t]) continue;
        const auto& u = field.directions[t];
        out[0].values[t] = std::abs(u.x);
        out[1].values[t] = std::abs(u.y);
        out[2].values[t] = std::abs(u.z);
        out[0].mask[t] = out[1].mask[t] = out[2].mask[t] = 1;
    }
    return out;
}

// Coordinate-wise means of folded directions over each window; empty windows
// are omitted from the result.
inline std::vector<WindowAggregate> compute_mld(const DirectionField& field,
                                                const WindowPartition& part) {
    std::vector<WindowAggregate> out;
    out.reserve(part.window_count());
    for (std::size_t l = 0; l < part.window_count(); ++l) {
        const auto& cells = part.members[l];
        if (cells.empty()) continue;
        Vec3 m{};
        for (auto t : cells) {
            const auto& u = field.directions[t];
            m += Vec3(std::abs(u.x), std::abs(u.y), std::abs(u.z));
        }
        out.push_back({l, cells.size(), m / double(cells.size()), std::nullopt});
    }
    return out;
}

struct EntropyFieldConfig {
    NnConfig nn{};
    std::size_t min_filtered = 8;  // minimum members surviving the penalty filter
};

// Per-window penalized nearest-neighbor entropy of the member directions.
// Field directions are axial representatives already canonicalized to the
// upper hemisphere upstream, so no re-folding happens here. Windows whose
// filtered member count falls below the threshold are left unoccupied.
inline ScalarField3 entropy_field(const DirectionField& field,
                                  const WindowPartition& part,
                                  const EntropyFieldConfig& cfg = {}) {
    ScalarField3 out(part.m1, part.m2, part.m3);
    std::vector<UnitVector3> members;
    for (std::size_t l = 0; l < part.window_count(); ++l) {
        const auto& cells = part.members[l];
        if (cells.size() < 2) continue;
        members.clear();
        members.reserve(cells.size());
        for (auto t : cells) members.push_back(field.directions[t]);
        NnDiagnostics diag;
        try {
            const double e = nn_entropy_penalized(members, cfg.nn, &diag);
            if (diag.used < cfg.min_filtered) continue;
            const auto w = part.wunlin(l);
            out.set(w.i1, w.i2, w.i3, e);
        } catch (const degenerate_sample_error&) {
            // all members within the penalty radius of each other: excluded
        }
    }
    return out;
}

}  // namespace fibrescan

#endif
