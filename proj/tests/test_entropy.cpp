#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "fibrescan/entropy.hpp"

using namespace fibrescan;
using std::numbers::pi;

namespace {

const double kLn4Pi = std::log(4.0 * pi);

std::vector<UnitVector3> uniform_sample(std::size_t n, Rng& rng) {
    std::vector<UnitVector3> s;
    s.reserve(n);
    for (std::size_t i = 0; i < n; ++i) s.push_back(sample_uniform_sphere(rng));
    return s;
}

// O(N^2) oracle for nearest-neighbor geodesic distances.
std::vector<double> nn_brute(const std::vector<UnitVector3>& s) {
    std::vector<double> out(s.size(), std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (i == j) continue;
            out[i] = std::min(out[i], geodesic_distance(s[i], s[j]));
        }
    return out;
}

UnitVector3 rotate_zx(const UnitVector3& u, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    return UnitVector3{c * u.x - s * u.z, u.y, s * u.x + c * u.z}.normalized();
}

}  // namespace

TEST_CASE("nn distances match the brute-force oracle") {
    Rng rng = make_rng(21);
    for (std::size_t n : {5u, 60u, 500u, 2000u}) {
        const auto s = uniform_sample(n, rng);
        const auto fast = nn_distances(s);
        const auto slow = nn_brute(s);
        for (std::size_t i = 0; i < n; ++i)
            CHECK(fast[i] == Catch::Approx(slow[i]).margin(1e-14));
    }
}

TEST_CASE("nn distances simple cases") {
    const UnitVector3 a{1, 0, 0};
    const UnitVector3 b{std::cos(0.3), std::sin(0.3), 0.0};
    const auto d = nn_distances(std::vector<UnitVector3>{a, b});
    CHECK(d[0] == Catch::Approx(0.3));
    CHECK(d[1] == Catch::Approx(0.3));

    const auto dup = nn_distances(std::vector<UnitVector3>{a, a, b});
    CHECK(dup[0] == Catch::Approx(0.0).margin(1e-15));
    CHECK(dup[1] == Catch::Approx(0.0).margin(1e-15));
    CHECK_THROWS_AS(nn_distances(std::vector<UnitVector3>{a}), std::invalid_argument);
}

TEST_CASE("nn entropy closed form at N=2") {
    const double rho = 0.42;
    const UnitVector3 a{1, 0, 0};
    const UnitVector3 b{std::cos(rho), std::sin(rho), 0.0};
    const double e = nn_entropy(std::vector<UnitVector3>{a, b});
    CHECK(e == Catch::Approx(2.0 * std::log(rho) + std::log(pi) + kEulerGamma));
}

TEST_CASE("nn entropy estimates uniform entropy") {
    Rng rng = make_rng(22);
    double mean = 0.0, var = 0.0;
    const int reps = 50;
    std::vector<double> vals;
    for (int r = 0; r < reps; ++r) vals.push_back(nn_entropy(uniform_sample(125, rng)));
    for (double v : vals) mean += v;
    mean /= reps;
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= (reps - 1);
    CHECK(std::abs(mean - 2.51) < 0.1);
    CHECK(var < 0.05);
}

TEST_CASE("nn entropy is rotation invariant") {
    Rng rng = make_rng(23);
    const auto s = uniform_sample(80, rng);
    std::vector<UnitVector3> r;
    for (const auto& u : s) r.push_back(rotate_zx(u, 0.7712));
    CHECK(nn_entropy(s) == Catch::Approx(nn_entropy(r)).margin(1e-12));
}

TEST_CASE("nn entropy error decreases with sample size") {
    Rng rng = make_rng(24);
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t n : {16u, 64u, 256u, 1024u}) {
        double err = 0.0;
        const int reps = 200;
        for (int r = 0; r < reps; ++r)
            err += std::abs(nn_entropy(uniform_sample(n, rng)) - kLn4Pi);
        err /= reps;
        CHECK(err < prev);
        prev = err;
    }
}

TEST_CASE("penalized estimator equals plain when the filter passes everything") {
    Rng rng = make_rng(25);
    const auto s = uniform_sample(100, rng);  // typical NN distance ~0.2 >> 0.01
    NnConfig cfg;
    NnDiagnostics diag;
    const double pen = nn_entropy_penalized(s, cfg, &diag);
    CHECK(diag.used == s.size());
    CHECK(pen == Catch::Approx(nn_entropy(s)).margin(1e-14));
}

TEST_CASE("penalized estimator drops duplicated points per the filtered formula") {
    Rng rng = make_rng(26);
    auto s = uniform_sample(40, rng);
    auto dup = s;
    dup.insert(dup.end(), s.begin(), s.end());  // every rho_i = 0 for pairs
    // hand oracle: duplicates are filtered out entirely, so the estimate is the
    // formula over the distinct points' distances with the filtered count...
    // but every point has an exact duplicate, so all rho_i = 0 and we must fail
    NnConfig cfg;
    CHECK_THROWS_AS(nn_entropy_penalized(dup, cfg), degenerate_sample_error);

    // half duplicated: distinct half keeps rho_i > 0
    auto half = s;
    half.insert(half.end(), s.begin(), s.begin() + 20);
    NnDiagnostics diag;
    const double pen = nn_entropy_penalized(half, cfg, &diag);
    const auto rho = nn_distances(half);
    double acc = 0.0;
    std::size_t kept = 0;
    for (double r : rho)
        if (r > cfg.penalty_radius) {
            acc += std::log(r);
            ++kept;
        }
    const double oracle =
        2.0 / double(kept) * acc + std::log(pi * double(kept - 1)) + kEulerGamma;
    CHECK(diag.used == kept);
    CHECK(pen == Catch::Approx(oracle).margin(1e-14));
}

TEST_CASE("penalized estimator rejects fully degenerate samples") {
    std::vector<UnitVector3> same(10, UnitVector3{0, 0, 1});
    CHECK_THROWS_AS(nn_entropy_penalized(same, NnConfig{}), degenerate_sample_error);
}

TEST_CASE("kernel density at the removable singularity") {
    PluginConfig cfg;
    cfg.bandwidth = 0.25;
    const UnitVector3 y{0, 0, 1};
    const double d = kernel_density_at(y, std::vector<UnitVector3>{y}, cfg);
    // single sample at distance zero: K(0)/h^2 with the normalized kernel
    const double expected =
        0.75 / detail::kernel_bump_mass(cfg.bandwidth) / (cfg.bandwidth * cfg.bandwidth);
    CHECK(d == Catch::Approx(expected));
    CHECK_THROWS_AS(kernel_density_at(y, std::vector<UnitVector3>{}, cfg),
                    std::invalid_argument);
}

TEST_CASE("kernel density integrates to one over the sphere") {
    Rng rng = make_rng(27);
    const auto s = uniform_sample(400, rng);
    PluginConfig cfg;
    cfg.bandwidth = 0.35;
    // equal-area Fibonacci lattice quadrature, 10^4 nodes
    const int n = 10000;
    double acc = 0.0;
    const double ga = pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
        const double z = 1.0 - 2.0 * (i + 0.5) / n;
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = ga * i;
        acc += kernel_density_at({r * std::cos(phi), r * std::sin(phi), z}, s, cfg);
    }
    acc *= 4.0 * pi / n;
    CHECK(acc == Catch::Approx(1.0).margin(0.02));
}

TEST_CASE("kernel density of a large uniform sample is near 1/4pi") {
    Rng rng = make_rng(28);
    const auto s = uniform_sample(1000000, rng);
    PluginConfig cfg;
    cfg.bandwidth = 0.3;
    const double d = kernel_density_at({0.3, -0.5, std::sqrt(1 - 0.09 - 0.25)}, s, cfg);
    CHECK(std::abs(d - 1.0 / (4.0 * pi)) < 0.1 / (4.0 * pi));
}

TEST_CASE("plug-in entropy shows the small-sample negative bias") {
    Rng rng = make_rng(29);
    PluginConfig cfg;
    cfg.bandwidth = 0.05;
    for (std::size_t n : {12500u, 62500u}) {
        const double est = plugin_entropy_samples(uniform_sample(n, rng), cfg);
        CHECK(est < kLn4Pi);
    }
}

TEST_CASE("plug-in entropy on a point mass is negative and h-decreasing") {
    std::vector<UnitVector3> same(200, UnitVector3{0, 0, 1});
    PluginConfig a, b;
    a.bandwidth = 0.3;
    b.bandwidth = 0.1;
    const double ea = plugin_entropy_samples(same, a);
    const double eb = plugin_entropy_samples(same, b);
    CHECK(ea < 0.0);
    CHECK(eb < ea);
}

TEST_CASE("reference entropy of standard densities") {
    const double uni = reference_entropy(
        [](const UnitVector3&) { return 1.0 / (4.0 * pi); });
    CHECK(uni == Catch::Approx(kLn4Pi).margin(1e-4));

    const AcgParams b1{{0, 0, 1}, 1.0};
    CHECK(reference_entropy([&](const UnitVector3& u) { return acg_pdf(u, b1); }) ==
          Catch::Approx(kLn4Pi).margin(1e-4));

    // frozen quadrature values (independent 1-d integration of the marginal)
    const AcgParams b05{{0, 1, 0}, 0.5};
    CHECK(reference_entropy([&](const UnitVector3& u) { return acg_pdf(u, b05); }) ==
          Catch::Approx(2.3309).margin(2e-3));
    const AcgParams b01{{1, 0, 0}, 0.1};
    const double e01 =
        reference_entropy([&](const UnitVector3& u) { return acg_pdf(u, b01); });
    CHECK(e01 == Catch::Approx(0.4824).margin(2e-3));
    CHECK(e01 < kLn4Pi);

    CHECK_THROWS_AS(reference_entropy([](const UnitVector3&) { return 1.0; }),
                    std::invalid_argument);
}
