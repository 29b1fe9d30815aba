#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fibrescan/fields.hpp"

using namespace fibrescan;

namespace {

DirectionField uniform_field(const GridSpec& g, double occupancy, Rng& rng) {
    DirectionField f(g);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    for (int k = 0; k < g.n3; ++k)
        for (int j = 0; j < g.n2; ++j)
            for (int i = 0; i < g.n1; ++i)
                if (coin(rng) < occupancy) f.set(i, j, k, sample_uniform_sphere(rng));
    return f;
}

}  // namespace

TEST_CASE("partition_windows arithmetic") {
    GridSpec g{1, 10, 10, 10, 5};
    Rng rng = make_rng(31);
    auto f = uniform_field(g, 1.0, rng);
    const auto part = partition_windows(g, f);
    REQUIRE(part.window_count() == 8);
    std::size_t total = 0;
    for (const auto& m : part.members) {
        CHECK(m.size() <= 125);
        total += m.size();
    }
    CHECK(total == 1000);

    GridSpec bad{1, 4, 10, 10, 5};
    CHECK_THROWS_AS(partition_windows(bad, f), std::invalid_argument);
}

TEST_CASE("partition_windows drops trailing cells and matches floor division") {
    GridSpec g{1, 11, 7, 9, 3};  // windows: 3 x 2 x 3
    Rng rng = make_rng(32);
    const auto f = uniform_field(g, 0.6, rng);
    const auto part = partition_windows(g, f);
    REQUIRE(part.m1 == 3);
    REQUIRE(part.m2 == 2);
    REQUIRE(part.m3 == 3);

    // brute-force assignment oracle
    std::vector<std::vector<std::size_t>> oracle(part.window_count());
    std::size_t assigned = 0;
    for (int k = 0; k < g.n3; ++k)
        for (int j = 0; j < g.n2; ++j)
            for (int i = 0; i < g.n1; ++i) {
                if (!f.occupied(i, j, k)) continue;
                const int a = i / 3, b = j / 3, c = k / 3;
                if (a >= 3 || b >= 2 || c >= 3) continue;
                oracle[part.wlin(a, b, c)].push_back(f.lin(i, j, k));
                ++assigned;
            }
    std::size_t got = 0;
    for (std::size_t l = 0; l < part.window_count(); ++l) {
        CHECK(part.members[l] == oracle[l]);
        got += part.members[l].size();
    }
    CHECK(got == assigned);
}

TEST_CASE("fold_attributes folds coordinates") {
    GridSpec g{1, 2, 1, 1, 1};
    DirectionField f(g);
    f.set(0, 0, 0, {-0.6, 0.8, 0.0});
    f.set(1, 0, 0, {0.0, 0.0, 1.0});
    const auto attrs = fold_attributes(f);
    CHECK(attrs[0].at(0, 0, 0) == Catch::Approx(0.6));
    CHECK(attrs[1].at(0, 0, 0) == Catch::Approx(0.8));
    CHECK(attrs[2].at(0, 0, 0) == Catch::Approx(0.0));
    CHECK(attrs[2].at(1, 0, 0) == Catch::Approx(1.0));
    CHECK(attrs[0].at(1, 0, 0) == Catch::Approx(0.0));

    Rng rng = make_rng(33);
    GridSpec g2{1, 6, 6, 6, 2};
    const auto rf = uniform_field(g2, 0.8, rng);
    const auto a2 = fold_attributes(rf);
    for (int d = 0; d < 3; ++d)
        for (std::size_t t = 0; t < a2[d].size(); ++t)
            if (a2[d].mask[t]) {
                CHECK(a2[d].values[t] >= 0.0);
                CHECK(a2[d].values[t] <= 1.0);
            }
}

TEST_CASE("compute_mld hand cases and naive oracle") {
    GridSpec g{1, 2, 2, 2, 2};
    DirectionField f(g);
    f.set(0, 0, 0, {1, 0, 0});
    f.set(1, 0, 0, {0, 1, 0});
    const auto part = partition_windows(g, f);
    const auto mld = compute_mld(f, part);
    REQUIRE(mld.size() == 1);
    CHECK(mld[0].count == 2);
    CHECK(mld[0].mld.x == Catch::Approx(0.5));
    CHECK(mld[0].mld.y == Catch::Approx(0.5));
    CHECK(mld[0].mld.z == Catch::Approx(0.0));

    // random window: naive re-summation oracle, permutation invariance
    Rng rng = make_rng(34);
    GridSpec g2{1, 8, 8, 8, 4};
    const auto rf = uniform_field(g2, 0.7, rng);
    const auto p2 = partition_windows(g2, rf);
    const auto m2 = compute_mld(rf, p2);
    for (const auto& w : m2) {
        double sx = 0.0, sy = 0.0, sz = 0.0;
        auto cells = p2.members[w.window];
        std::reverse(cells.begin(), cells.end());  // order must not matter
        for (auto t : cells) {
            sx += std::abs(rf.directions[t].x);
            sy += std::abs(rf.directions[t].y);
            sz += std::abs(rf.directions[t].z);
        }
        CHECK(w.mld.x == Catch::Approx(sx / cells.size()).margin(1e-12));
        CHECK(w.mld.y == Catch::Approx(sy / cells.size()).margin(1e-12));
        CHECK(w.mld.z == Catch::Approx(sz / cells.size()).margin(1e-12));
        CHECK(w.mld.x <= 1.0 + 1e-12);
    }
}

TEST_CASE("entropy_field estimates uniform windows and excludes degenerate ones") {
    GridSpec g{1, 10, 5, 5, 5};  // 2 windows of up to 125 cells
    Rng rng = make_rng(35);
    DirectionField f(g);
    // window 0: uniform directions; window 1: all identical
    for (int k = 0; k < 5; ++k)
        for (int j = 0; j < 5; ++j)
            for (int i = 0; i < 5; ++i) f.set(i, j, k, sample_uniform_sphere(rng));
    for (int k = 0; k < 5; ++k)
        for (int j = 0; j < 5; ++j)
            for (int i = 5; i < 10; ++i) f.set(i, j, k, {0, 0, 1});
    const auto part = partition_windows(g, f);
    const auto ent = entropy_field(f, part);
    REQUIRE(ent.n1 == 2);
    CHECK(ent.occupied(0, 0, 0));
    CHECK_FALSE(ent.occupied(1, 0, 0));  // all rho_i = 0: excluded
    CHECK(std::abs(ent.at(0, 0, 0) - std::log(4 * std::numbers::pi)) < 0.45);
}

TEST_CASE("entropy_field mean over uniform 64-member windows") {
    GridSpec g{1, 4, 4, 4, 4};
    Rng rng = make_rng(36);
    double acc = 0.0;
    const int reps = 100;
    for (int r = 0; r < reps; ++r) {
        const auto f = uniform_field(g, 1.0, rng);
        const auto part = partition_windows(g, f);
        const auto ent = entropy_field(f, part);
        REQUIRE(ent.occupied(0, 0, 0));
        acc += ent.at(0, 0, 0);
    }
    CHECK(std::abs(acc / reps - 2.50) < 0.07);
}

TEST_CASE("entropy_field is deterministic") {
    GridSpec g{1, 5, 5, 5, 5};
    Rng rng = make_rng(37);
    const auto f = uniform_field(g, 0.9, rng);
    const auto part = partition_windows(g, f);
    const auto e1 = entropy_field(f, part);
    const auto e2 = entropy_field(f, part);
    for (std::size_t t = 0; t < e1.size(); ++t) {
        CHECK(e1.mask[t] == e2.mask[t]);
        if (e1.mask[t]) CHECK(e1.values[t] == e2.values[t]);
    }
}
