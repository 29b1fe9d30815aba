#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "fibrescan/fibre_sim.hpp"

using namespace fibrescan;

namespace {

// brute-force oracle: minimize over a parameter grid
double segdist_grid(const Vec3& a0, const Vec3& a1, const Vec3& b0, const Vec3& b1,
                    int steps = 1000) {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= steps; ++i) {
        const Vec3 p = a0 + (a1 - a0) * (double(i) / steps);
        for (int j = 0; j <= steps; ++j) {
            const Vec3 q = b0 + (b1 - b0) * (double(j) / steps);
            best = std::min(best, (p - q).norm());
        }
    }
    return best;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace

TEST_CASE("segment distance basic cases") {
    CHECK(segment_distance({0, 0, 0}, {1, 0, 0}, {0, 0, 3}, {1, 0, 3}) ==
          Catch::Approx(3.0));
    // crossing segments sharing their midpoint
    CHECK(segment_distance({-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}) ==
          Catch::Approx(0.0).margin(1e-12));
    CHECK_THROWS_AS(segment_distance({0, 0, 0}, {0, 0, 0}, {1, 1, 1}, {2, 2, 2}),
                    std::invalid_argument);
}

TEST_CASE("segment distance matches the grid-search oracle") {
    Rng rng = make_rng(41);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int t = 0; t < 20; ++t) {
        const Vec3 a0{u(rng), u(rng), u(rng)}, a1{u(rng), u(rng), u(rng)};
        const Vec3 b0{u(rng), u(rng), u(rng)}, b1{u(rng), u(rng), u(rng)};
        if ((a1 - a0).norm() < 1e-6 || (b1 - b0).norm() < 1e-6) continue;
        const double fast = segment_distance(a0, a1, b0, b1);
        const double slow = segdist_grid(a0, a1, b0, b1);
        CHECK(fast <= slow + 1e-12);
        CHECK(std::abs(fast - slow) < 1e-3 * std::max(1.0, slow) + 2e-2);
    }
}

TEST_CASE("rsa with zero fibres") {
    RsaConfig cfg;
    cfg.dims = {100, 100, 100};
    cfg.fibre_length = 30;
    cfg.radius = 2;
    cfg.layers = {{0.0, 100.0, {{1, 0, 0}, 0.5}, 0}};
    Rng rng = make_rng(42);
    CHECK(generate_rsa(cfg, rng).empty());
}

TEST_CASE("rsa keeps pairwise clearance and stays in the domain") {
    RsaConfig cfg;
    cfg.dims = {150, 150, 150};
    cfg.fibre_length = 40;
    cfg.radius = 3;
    cfg.layers = {{0.0, 150.0, {{1, 0, 0}, 0.3}, 120}};
    Rng rng = make_rng(43);
    const auto fibres = generate_rsa(cfg, rng);
    REQUIRE(fibres.size() == 120);
    for (std::size_t i = 0; i < fibres.size(); ++i) {
        for (const Vec3& p : {fibres[i].p0, fibres[i].p1}) {
            CHECK(p.x >= cfg.radius);
            CHECK(p.x <= cfg.dims.x - cfg.radius);
            CHECK(p.y >= cfg.radius);
            CHECK(p.z >= cfg.radius);
        }
        for (std::size_t j = i + 1; j < fibres.size(); ++j)
            CHECK(segment_distance(fibres[i].p0, fibres[i].p1, fibres[j].p0,
                                   fibres[j].p1) >= 2.0 * cfg.radius - 1e-9);
    }
}

TEST_CASE("rsa is deterministic for a fixed seed") {
    RsaConfig cfg;
    cfg.dims = {120, 120, 120};
    cfg.fibre_length = 30;
    cfg.radius = 2;
    cfg.layers = {{0.0, 120.0, {{0, 1, 0}, 0.2}, 60}};
    Rng r1 = make_rng(44), r2 = make_rng(44);
    const auto f1 = generate_rsa(cfg, r1);
    const auto f2 = generate_rsa(cfg, r2);
    REQUIRE(f1.size() == f2.size());
    for (std::size_t i = 0; i < f1.size(); ++i) {
        CHECK(f1[i].p0.x == f2[i].p0.x);
        CHECK(f1[i].p1.z == f2[i].p1.z);
    }
}

TEST_CASE("rsa layered concentration orders as configured") {
    RsaConfig cfg;
    cfg.dims = {200, 210, 200};
    cfg.fibre_length = 50;
    cfg.radius = 2;
    cfg.layer_axis = Axis::Y;
    cfg.layers = {{0.0, 70.0, {{1, 0, 0}, 0.1}, 90},
                  {70.0, 140.0, {{0, 1, 0}, 0.5}, 90},
                  {140.0, 210.0, {{1, 0, 0}, 0.1}, 90}};
    Rng rng = make_rng(45);
    const auto fibres = generate_rsa(cfg, rng);
    // per-layer top eigenvalue fraction of the direction scatter
    auto concentration = [&](double lo, double hi) {
        std::vector<UnitVector3> dirs;
        for (const auto& f : fibres) {
            const double y = f.center().y;
            if (y >= lo && y < hi) dirs.push_back(f.direction());
        }
        double sxx = 0, sxy = 0, sxz = 0, syy = 0, syz = 0, szz = 0;
        for (const auto& u : dirs) {
            sxx += u.x * u.x;
            sxy += u.x * u.y;
            sxz += u.x * u.z;
            syy += u.y * u.y;
            syz += u.y * u.z;
            szz += u.z * u.z;
        }
        const auto e = detail::jacobi_eigen3(
            {{{sxx, sxy, sxz}, {sxy, syy, syz}, {sxz, syz, szz}}});
        const double top = std::max({e.values[0], e.values[1], e.values[2]});
        return top / double(dirs.size());
    };
    const double outer1 = concentration(0, 70);
    const double middle = concentration(70, 140);
    const double outer2 = concentration(140, 210);
    CHECK(outer1 > middle);
    CHECK(outer2 > middle);
}

TEST_CASE("rsa reports partial packings") {
    RsaConfig cfg;
    cfg.dims = {40, 40, 40};
    cfg.fibre_length = 20;
    cfg.radius = 6;  // only a handful fit
    cfg.layers = {{0.0, 40.0, {{1, 0, 0}, 1.0}, 500}};
    cfg.max_attempts = 200;
    Rng rng = make_rng(46);
    CHECK_THROWS_AS(generate_rsa(cfg, rng), partial_packing_error);
}

TEST_CASE("local direction field of a single straight fibre") {
    std::vector<Fibre> fibres{{{5, 12, 12}, {55, 12, 12}, 2.0}};
    const auto field = local_direction_field(fibres, 8, 8, 3, 3);
    std::size_t occupied = 0;
    for (int k = 0; k < 3; ++k)
        for (int j = 0; j < 3; ++j)
            for (int i = 0; i < 8; ++i)
                if (field.occupied(i, j, k)) {
                    ++occupied;
                    const auto& u = field.directions[field.lin(i, j, k)];
                    CHECK(std::abs(u.x) == Catch::Approx(1.0));
                    CHECK(u.x >= 0.0);
                }
    CHECK(occupied >= 6);

    const auto empty = local_direction_field(std::vector<Fibre>{}, 8, 8, 3, 3);
    CHECK(empty.occupied_count() == 0);
}

TEST_CASE("local direction field matches a dense-sampling oracle") {
    RsaConfig cfg;
    cfg.dims = {96, 96, 96};
    cfg.fibre_length = 30;
    cfg.radius = 2;
    cfg.layers = {{0.0, 96.0, {{0, 0, 1}, 0.4}, 60}};
    Rng rng = make_rng(47);
    const auto fibres = generate_rsa(cfg, rng);
    const int delta = 12, n = 8;
    const auto field = local_direction_field(fibres, delta, n, n, n);

    // oracle: sample tangent points every 0.1 voxel along each centerline
    struct Acc {
        std::vector<UnitVector3> dirs;
        std::vector<double> w;
    };
    std::vector<Acc> acc(std::size_t(n) * n * n);
    for (const auto& f : fibres) {
        const double len = f.length();
        const UnitVector3 u = f.direction();
        const int steps = int(len / 0.1);
        for (int s = 0; s < steps; ++s) {
            const Vec3 p = f.p0 + (f.p1 - f.p0) * ((s + 0.5) / double(steps));
            const int i = int(p.x / delta), j = int(p.y / delta), k = int(p.z / delta);
            if (i < 0 || j < 0 || k < 0 || i >= n || j >= n || k >= n) continue;
            auto& a = acc[(std::size_t(k) * n + j) * n + i];
            a.dirs.push_back(u);
            a.w.push_back(len / steps);
        }
    }
    std::size_t checked = 0;
    for (int k = 0; k < n; ++k)
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i) {
                const auto t = (std::size_t(k) * n + j) * n + i;
                if (!field.occupied(i, j, k) || acc[t].dirs.size() < 10) continue;
                const auto oracle = principal_axis(acc[t].dirs, acc[t].w);
                const auto& impl = field.directions[t];
                const double angle =
                    std::atan2(oracle.cross(impl).norm(), std::abs(oracle.dot(impl)));
                CHECK(angle < 0.02);
                ++checked;
            }
    CHECK(checked > 50);
}

TEST_CASE("voxelize basic properties") {
    CHECK(voxelize(std::vector<Fibre>{}, 10, 10, 10) ==
          std::vector<std::uint8_t>(1000, 0));

    // long axis-aligned fibre through voxel centers
    std::vector<Fibre> fibres{{{20.5, 30.5, 30.5}, {220.5, 30.5, 30.5}, 4.0}};
    const auto vol = voxelize(fibres, 240, 60, 60);
    std::size_t count = 0;
    for (auto v : vol) count += v;
    const double expected = std::numbers::pi * 16.0 * 200.0;
    CHECK(std::abs(double(count) - expected) / expected < 0.05);
    // voxel on the centerline
    CHECK(vol[(std::size_t(30) * 60 + 30) * 240 + 100] == 1);
}

TEST_CASE("block gaussian field: structure and marginals") {
    // m = 1: i.i.d. N(0,1); Kolmogorov-Smirnov against the normal CDF
    const auto f1 = generate_block_gaussian_field(47, 47, 47, 1, 51);
    std::vector<double> v(f1.values.begin(), f1.values.begin() + 100000);
    std::sort(v.begin(), v.end());
    double dmax = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double c = normal_cdf(v[i]);
        dmax = std::max(dmax, std::abs(c - double(i + 1) / v.size()));
        dmax = std::max(dmax, std::abs(c - double(i) / v.size()));
    }
    CHECK(dmax < 1.949 / std::sqrt(double(v.size())));  // alpha = 0.001

    // any m: within-block values exactly equal
    const auto f3 = generate_block_gaussian_field(30, 30, 30, 7, 52);
    for (int k = 0; k < 30; ++k)
        for (int j = 0; j < 30; ++j)
            for (int i = 0; i < 30; ++i)
                CHECK(f3.at(i, j, k) == f3.at(7 * (i / 7), 7 * (j / 7), 7 * (k / 7)));

    // m = 10, 80^3: variance of block representatives near 1
    const auto f2 = generate_block_gaussian_field(80, 80, 80, 10, 53);
    double mean = 0.0, var = 0.0;
    std::vector<double> reps;
    for (int k = 0; k < 80; k += 10)
        for (int j = 0; j < 80; j += 10)
            for (int i = 0; i < 80; i += 10) reps.push_back(f2.at(i, j, k));
    for (double r : reps) mean += r;
    mean /= double(reps.size());
    for (double r : reps) var += (r - mean) * (r - mean);
    var /= double(reps.size() - 1);
    CHECK(var > 0.95);
    CHECK(var < 1.05);
}

TEST_CASE("block gaussian field decorrelates beyond m") {
    const int n = 40, m = 4;
    const auto f = generate_block_gaussian_field(n, n, n, m, 54);
    int pass = 0, total = 0;
    for (int lag : {5, 6, 7, 8}) {
        for (int axis = 0; axis < 3; ++axis) {
            double acc = 0.0;
            std::size_t cnt = 0;
            for (int k = 0; k < n - (axis == 2 ? lag : 0); ++k)
                for (int j = 0; j < n - (axis == 1 ? lag : 0); ++j)
                    for (int i = 0; i < n - (axis == 0 ? lag : 0); ++i) {
                        const double a = f.at(i, j, k);
                        const double b = f.at(i + (axis == 0 ? lag : 0),
                                               j + (axis == 1 ? lag : 0),
                                               k + (axis == 2 ? lag : 0));
                        acc += a * b;
                        ++cnt;
                    }
            ++total;
            if (std::abs(acc / double(cnt)) < 3.0 / std::sqrt(double(cnt) / (m * m * m)))
                ++pass;
        }
    }
    CHECK(double(pass) >= 0.95 * double(total) - 1e-9);
}

TEST_CASE("inject_anomaly adds the shift exactly on the box") {
    ScalarField3 zero = ScalarField3::full(10, 10, 10, 0.0);
    const AnomalyBox box{{3, 4, 5}, {4, 3, 2}};
    const auto same = inject_anomaly(zero, box, 0.0);
    CHECK(same.values == zero.values);

    const auto ind = inject_anomaly(zero, box, 1.0);
    double inside = 0.0, total = 0.0;
    for (double v : ind.values) total += v;
    for (int k = 4; k < 6; ++k)
        for (int j = 3; j < 6; ++j)
            for (int i = 2; i < 6; ++i) inside += ind.at(i, j, k);
    CHECK(inside == Catch::Approx(4.0 * 3.0 * 2.0));
    CHECK(total == Catch::Approx(inside));

    const auto shifted = inject_anomaly(zero, box, 2.5);
    double in_mean = 0.0, out_mean = 0.0;
    std::size_t nin = 0, nout = 0;
    for (int k = 0; k < 10; ++k)
        for (int j = 0; j < 10; ++j)
            for (int i = 0; i < 10; ++i) {
                const bool in = i >= 2 && i < 6 && j >= 3 && j < 6 && k >= 4 && k < 6;
                (in ? in_mean : out_mean) += shifted.at(i, j, k);
                ++(in ? nin : nout);
            }
    CHECK(in_mean / nin - out_mean / nout == Catch::Approx(2.5));

    CHECK_THROWS_AS(inject_anomaly(zero, AnomalyBox{{9, 1, 1}, {4, 1, 1}}, 1.0),
                    std::invalid_argument);
}
