#ifndef FIBRESCAN_CHANGEPOINT_HPP
#define FIBRESCAN_CHANGEPOINT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fibrescan/core.hpp"
#include "fibrescan/grid.hpp"

namespace fibrescan {

// Candidate anomaly box on the attribute grid. Origins sit on the Delta_0
// lattice (1 + Delta_0 i), extents are multiples of Delta_1; the box covers
// cells [origin, origin + extent - 1] per axis. Cached cardinalities count
// occupied cells only.
struct BoxParam {
    Index3 origin;  // 1-based
    Index3 extent;  // cells per axis
    std::int64_t inside = 0;   // |I ∩ J|
    std::int64_t outside = 0;  // |I^c ∩ J|
};

// Lattice of candidate boxes. `min_extent_factor` is the minimal l_j; the
// conventional "minimal edge length" L_M maps to ceil(L_M / Delta_1).
struct ThetaGrid {
    int delta0 = 1;
    int delta1 = 1;
    int min_extent_factor = 1;
    double gamma0 = 0.05;
    double gamma1 = 0.5;

    static int factor_from_edge(int min_edge, int delta1) {
        return (min_edge + delta1 - 1) / delta1;
    }
    void validate() const {
        if (delta0 < 1 || delta1 < 1)
            throw std::invalid_argument("ThetaGrid: offsets must be >= 1");
        if (min_extent_factor < 1)
            throw std::invalid_argument("ThetaGrid: min extent factor must be >= 1");
        if (!(gamma0 >= 0.0 && gamma0 < gamma1 && gamma1 <= 1.0))
            throw std::invalid_argument("ThetaGrid: need 0 <= gamma0 < gamma1 <= 1");
    }
};

// Prefix sums over a masked scalar field: O(1) box sums and occupied-cell
// counts after an O(n) build. Unoccupied cells contribute value 0, count 0.
class PrefixSums3 {
public:
    explicit PrefixSums3(const ScalarField3& f)
        : n1_(f.n1), n2_(f.n2), n3_(f.n3),
          sum_((std::size_t(n1_) + 1) * (n2_ + 1) * (n3_ + 1), 0.0),
          cnt_((std::size_t(n1_) + 1) * (n2_ + 1) * (n3_ + 1), 0) {
        for (int k = 1; k <= n3_; ++k)
            for (int j = 1; j <= n2_; ++j)
                for (int i = 1; i <= n1_; ++i) {
                    const auto t = f.lin(i - 1, j - 1, k - 1);
                    const double v = f.mask[t] ? f.values[t] : 0.0;
                    const std::int64_t c = f.mask[t] ? 1 : 0;
                    sum_[p(i, j, k)] = v + sum_[p(i - 1, j, k)] + sum_[p(i, j - 1, k)] +
                                       sum_[p(i, j, k - 1)] - sum_[p(i - 1, j - 1, k)] -
                                       sum_[p(i - 1, j, k - 1)] - sum_[p(i, j - 1, k - 1)] +
                                       sum_[p(i - 1, j - 1, k - 1)];
                    cnt_[p(i, j, k)] = c + cnt_[p(i - 1, j, k)] + cnt_[p(i, j - 1, k)] +
                                       cnt_[p(i, j, k - 1)] - cnt_[p(i - 1, j - 1, k)] -
                                       cnt_[p(i - 1, j, k - 1)] - cnt_[p(i, j - 1, k - 1)] +
                                       cnt_[p(i - 1, j - 1, k - 1)];
                }
        total_sum_ = sum_[p(n1_, n2_, n3_)];
        total_cnt_ = cnt_[p(n1_, n2_, n3_)];
    }

    double box_sum(const BoxParam& b) const {
        return corners(sum_, b);
    }
    std::int64_t box_count(const BoxParam& b) const {
        return corners(cnt_, b);
    }
    double total_sum() const { return total_sum_; }
    std::int64_t total_count() const { return total_cnt_; }
    int n1() const { return n1_; }
    int n2() const { return n2_; }
    int n3() const { return n3_; }

private:
    std::size_t p(int i, int j, int k) const {
        return (std::size_t(k) * (n2_ + 1) + j) * (n1_ + 1) + i;
    }
    template <class T>
    T corners(const std::vector<T>& a, const BoxParam& b) const {
        const int x0 = b.origin.i1 - 1, y0 = b.origin.i2 - 1, z0 = b.origin.i3 - 1;
        const int x1 = x0 + b.extent.i1, y1 = y0 + b.extent.i2, z1 = z0 + b.extent.i3;
        return a[p(x1, y1, z1)] - a[p(x0, y1, z1)] - a[p(x1, y0, z1)] -
               a[p(x1, y1, z0)] + a[p(x0, y0, z1)] + a[p(x0, y1, z0)] +
               a[p(x1, y0, z0)] - a[p(x0, y0, z0)];
    }

    int n1_, n2_, n3_;
    std::vector<double> sum_;
    std::vector<std::int64_t> cnt_;
    double total_sum_ = 0.0;
    std::int64_t total_cnt_ = 0;
};

// All candidate boxes satisfying the lattice, minimum-extent and
// volume-fraction constraints. |I ∩ J| counts occupied cells; the gamma
// window is taken against the full grid size n1 n2 n3. Boxes with an empty
// side or with more occupied cells inside than outside are dropped: the tail
// bounds assume |I| <= |I^c| and the statistic needs both means. Lexicographic
// order in (origin, extent).
inline std::vector<BoxParam> enumerate_theta(const PrefixSums3& sums,
                                             const ThetaGrid& grid) {
    grid.validate();
    const int n1 = sums.n1(), n2 = sums.n2(), n3 = sums.n3();
    const double W = double(n1) * n2 * n3;
    const double lo = grid.gamma0 * W, hi = grid.gamma1 * W;
    std::vector<BoxParam> out;
    for (int o3 = 1; o3 <= n3; o3 += grid.delta0)
        for (int o2 = 1; o2 <= n2; o2 += grid.delta0)
            for (int o1 = 1; o1 <= n1; o1 += grid.delta0)
                for (int l3 = grid.min_extent_factor; o3 + l3 * grid.delta1 - 1 <= n3; ++l3)
                    for (int l2 = grid.min_extent_factor; o2 + l2 * grid.delta1 - 1 <= n2;
                         ++l2)
                        for (int l1 = grid.min_extent_factor;
                             o1 + l1 * grid.delta1 - 1 <= n1; ++l1) {
                            BoxParam b;
                            b.origin = {o1, o2, o3};
                            b.extent = {l1 * grid.delta1, l2 * grid.delta1,
                                        l3 * grid.delta1};
                            const auto in = sums.box_count(b);
                            if (double(in) < lo || double(in) > hi) continue;
                            b.inside = in;
                            b.outside = sums.total_count() - in;
                            if (b.inside <= 0 || b.outside <= 0 || b.inside > b.outside)
                                continue;
                            out.push_back(b);
                        }
    std::sort(out.begin(), out.end(), [](const BoxParam& a, const BoxParam& b) {
        if (a.origin != b.origin) return a.origin < b.origin;
        return a.extent < b.extent;
    });
    return out;
}

// Inside-vs-outside mean difference Z(theta) over occupied cells.
inline double z_statistic(const PrefixSums3& sums, const BoxParam& box) {
    const auto in_cnt = sums.box_count(box);
    const auto out_cnt = sums.total_count() - in_cnt;
    if (in_cnt <= 0 || out_cnt <= 0)
        throw undefined_statistic_error("z_statistic: empty inside or outside");
    const double in_sum = sums.box_sum(box);
    const double out_sum = sums.total_sum() - in_sum;
    return in_sum / double(in_cnt) - out_sum / double(out_cnt);
}

struct ScanResult {
    double statistic = 0.0;  // T_W = max |Z|
    BoxParam argmax;
};

// T_W = max over Theta_0 of |Z(theta)|; the first maximizer in lexicographic
// order wins ties.
inline ScanResult scan_statistic(const PrefixSums3& sums,
                                 std::span<const BoxParam> theta) {
    if (theta.empty()) throw std::invalid_argument("scan_statistic: empty Theta_0");
    ScanResult best;
    best.statistic = -1.0;
    for (const auto& b : theta) {
        const double z = std::abs(z_statistic(sums, b));
        if (z > best.statistic) {
            best.statistic = z;
            best.argmax = b;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// tail bounds for the m-dependent scan statistic

// Bernstein-condition parameters: dependence range m, variance bound sigma^2,
// a.s. bound M0 (= sigma for Gaussian fields); H = M0.
struct TailBoundParams {
    int m = 1;
    double sigma2 = 1.0;
    double M0 = 1.0;

    void validate() const {
        if (m < 1) throw std::invalid_argument("TailBoundParams: m must be >= 1");
        if (sigma2 <= 0.0 || M0 <= 0.0)
            throw std::invalid_argument("TailBoundParams: sigma2, M0 must be > 0");
    }
};

// ln of the per-theta tail bound on P(|eta(theta)| >= y): Gaussian regime for
// |I^c| <= sigma^2 |W| / (y M0), exponential regime beyond.
inline double log_eta_tail_bound(double y, double inside, double outside, double W,
                                 const TailBoundParams& p) {
    p.validate();
    if (y <= 0.0) throw std::invalid_argument("eta_tail_bound: y must be > 0");
    if (inside > outside)
        throw std::invalid_argument("eta_tail_bound: requires |I| <= |I^c|");
    const double m3 = double(p.m) * p.m * p.m;
    const double ln2 = std::log(2.0);
    if (outside <= p.sigma2 * W / (y * p.M0)) {
        return ln2 - y * y * inside * outside / (4.0 * m3 * p.sigma2 * W);
    }
    return ln2 - y * inside / (2.0 * p.M0 * m3) +
           p.sigma2 * W * inside / (4.0 * p.M0 * p.M0 * m3 * outside);
}

inline double eta_tail_bound(double y, double inside, double outside, double W,
                             const TailBoundParams& p) {
    return std::exp(log_eta_tail_bound(y, inside, outside, W, p));
}

// Distinct (|I|, |I^c|) pairs with multiplicities; one bound evaluation per
// group instead of per theta.
struct ThetaGroups {
    struct Group {
        double inside;
        double outside;
        double mult;
    };
    std::vector<Group> groups;
    double W = 0.0;            // occupied-cell count of the window
    std::size_t count = 0;     // |Theta_0|
};

inline ThetaGroups group_theta(std::span<const BoxParam> theta, double W) {
    std::map<std::pair<std::int64_t, std::int64_t>, double> acc;
    for (const auto& b : theta) ++acc[{b.inside, b.outside}];
    ThetaGroups g;
    g.W = W;
    g.count = theta.size();
    g.groups.reserve(acc.size());
    for (const auto& [key, mult] : acc)
        g.groups.push_back({double(key.first), double(key.second), mult});
    return g;
}

// ln of the family bound sum_theta P(|eta(theta)| >= y), evaluated group-wise
// in log space so 1e-300-scale values survive.
inline double log_family_tail_bound(double y, const ThetaGroups& theta,
                                    const TailBoundParams& p) {
    if (theta.groups.empty())
        return -std::numeric_limits<double>::infinity();
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> logs;
    logs.reserve(theta.groups.size());
    for (const auto& g : theta.groups) {
        const double lt = std::log(g.mult) + log_eta_tail_bound(y, g.inside, g.outside,
                                                                theta.W, p);
        logs.push_back(lt);
        mx = std::max(mx, lt);
    }
    if (!std::isfinite(mx)) return mx;
    double acc = 0.0;
    for (double lt : logs) acc += std::exp(lt - mx);
    return mx + std::log(acc);
}

inline double family_tail_bound(double y, const ThetaGroups& theta,
                                const TailBoundParams& p) {
    return std::exp(log_family_tail_bound(y, theta, p));
}

// Critical value per the minimum-y characterization: the smallest y with
// family bound <= alpha, found by doubling then bisection to 1e-6.
inline double critical_value(const ThetaGroups& theta, const TailBoundParams& p,
                             double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("critical_value: alpha must be in (0,1)");
    const double la = std::log(alpha);
    double hi = std::sqrt(p.sigma2);
    int guard = 0;
    while (log_family_tail_bound(hi, theta, p) > la) {
        hi *= 2.0;
        if (++guard > 200)
            throw no_critical_value_error("critical_value: bound never drops below alpha");
    }
    double lo = 0.0;
    while (hi - lo > 1e-6) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= 0.0) break;
        if (log_family_tail_bound(mid, theta, p) <= la)
            hi = mid;
        else
            lo = mid;
    }
    return hi;
}

// p-value bound: family bound at the observed statistic, capped at 1.
inline double p_value_bound(double t_stat, const ThetaGroups& theta,
                            const TailBoundParams& p) {
    if (t_stat < 0.0) throw std::invalid_argument("p_value_bound: negative statistic");
    if (t_stat == 0.0) return 1.0;
    return std::min(1.0, family_tail_bound(t_stat, theta, p));
}

// Approximate admissible dependence range: m^3 <= gamma0 |W| / (4 ln(2|Theta0|/alpha)).
inline double admissible_m_bound(double W, double theta_count, double gamma0,
                                 double alpha) {
    if (W <= 0.0 || theta_count <= 0.0 || gamma0 <= 0.0 || !(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("admissible_m_bound: bad arguments");
    return std::cbrt(gamma0 * W / (4.0 * std::log(2.0 * theta_count / alpha)));
}

// ---------------------------------------------------------------------------
// covariance-based estimation of the dependence range

// Empirical covariance at lag h with separate sample means over the index
// sets K and K+h.
inline double lag_covariance(const ScalarField3& f, int h1, int h2, int h3) {
    const int n1 = f.n1 - h1, n2 = f.n2 - h2, n3 = f.n3 - h3;
    if (n1 <= 1 || n2 <= 1 || n3 <= 1)
        throw std::invalid_argument("lag_covariance: lag too large");
    double m0 = 0.0, mh = 0.0;
    std::size_t cnt = 0;
    for (int k = 0; k < n3; ++k)
        for (int j = 0; j < n2; ++j)
            for (int i = 0; i < n1; ++i) {
                m0 += f.at(i, j, k);
                mh += f.at(i + h1, j + h2, k + h3);
                ++cnt;
            }
    m0 /= double(cnt);
    mh /= double(cnt);
    double acc = 0.0;
    for (int k = 0; k < n3; ++k)
        for (int j = 0; j < n2; ++j)
            for (int i = 0; i < n1; ++i)
                acc += (f.at(i, j, k) - m0) * (f.at(i + h1, j + h2, k + h3) - mh);
    return acc / double(cnt - 1);
}

// rho_max(i): the maximal empirical covariance over the three lag families
// with one coordinate pinned to i and the others in [1, i].
inline double lag_covariance_shell_max(const ScalarField3& f, int i) {
    double best = -std::numeric_limits<double>::infinity();
    for (int a = 1; a <= i; ++a)
        for (int b = 1; b <= i; ++b) {
            best = std::max(best, lag_covariance(f, i, a, b));
            best = std::max(best, lag_covariance(f, a, i, b));
            best = std::max(best, lag_covariance(f, a, b, i));
        }
    return best;
}

// Smallest m with rho_max(i) <= eps0 for all i in [m, max_lag]. By default the
// covariances are normalized by the field variance (correlation scale);
// `use_correlation = false` thresholds the raw covariance.
inline int estimate_m(const ScalarField3& f, double eps0, int max_lag,
                      bool use_correlation = true) {
    if (max_lag < 1 || max_lag >= std::min({f.n1, f.n2, f.n3}))
        throw std::invalid_argument("estimate_m: bad max_lag");
    const double var = lag_covariance(f, 0, 0, 0);
    if (var <= 0.0)
        throw degenerate_field_error("estimate_m: constant field");
    const double scale = use_correlation ? var : 1.0;
    std::vector<double> shell(max_lag + 1, 0.0);
    for (int i = 1; i <= max_lag; ++i)
        shell[i] = lag_covariance_shell_max(f, i) / scale;
    int m = max_lag + 1;
    for (int i = max_lag; i >= 1; --i) {
        if (shell[i] <= eps0)
            m = i;
        else
            break;
    }
    if (m > max_lag)
        throw error("estimate_m: covariance above threshold at max_lag");
    return m;
}

// ---------------------------------------------------------------------------
// attribute test suite

struct TestResult {
    std::string attribute;
    double statistic = 0.0;
    BoxParam argmax;
    double y_alpha = 0.0;
    double p_bound = 1.0;
    double log_p_bound = 0.0;
    bool reject = false;
    double sample_variance = 0.0;
    std::size_t theta_count = 0;
    TailBoundParams params;
};

struct AttributeInput {
    std::string name;
    const ScalarField3* field = nullptr;
    ThetaGrid theta;
    TailBoundParams tail;
};

inline double masked_variance(const ScalarField3& f) {
    double mean = 0.0;
    std::size_t n = 0;
    for (std::size_t t = 0; t < f.size(); ++t)
        if (f.mask[t]) {
            mean += f.values[t];
            ++n;
        }
    if (n < 2) return 0.0;
    mean /= double(n);
    double acc = 0.0;
    for (std::size_t t = 0; t < f.size(); ++t)
        if (f.mask[t]) acc += (f.values[t] - mean) * (f.values[t] - mean);
    return acc / double(n - 1);
}

// One attribute test at level `alpha_each`.
inline TestResult test_attribute(const std::string& name, const ScalarField3& field,
                                 const ThetaGrid& grid, const TailBoundParams& tail,
                                 double alpha_each) {
    PrefixSums3 sums(field);
    const auto theta = enumerate_theta(sums, grid);
    if (theta.empty())
        throw error("test_attribute(" + name + "): empty Theta_0");
    const auto groups = group_theta(theta, double(sums.total_count()));
    const auto scan = scan_statistic(sums, theta);
    TestResult r;
    r.attribute = name;
    r.statistic = scan.statistic;
    r.argmax = scan.argmax;
    r.theta_count = theta.size();
    r.params = tail;
    r.sample_variance = masked_variance(field);
    r.y_alpha = critical_value(groups, tail, alpha_each);
    r.log_p_bound =
        scan.statistic > 0.0
            ? std::min(0.0, log_family_tail_bound(scan.statistic, groups, tail))
            : 0.0;
    r.p_bound = p_value_bound(scan.statistic, groups, tail);
    r.reject = scan.statistic >= r.y_alpha;
    return r;
}

// Bonferroni suite over the three folded-coordinate fields and the entropy
// field: each attribute tested at alpha/4; overall rejection if any rejects.
inline std::vector<TestResult> run_attribute_suite(
    const ScalarField3& x_tilde, const ScalarField3& y_tilde,
    const ScalarField3& z_tilde, const ScalarField3& entropy,
    const ThetaGrid& direction_grid, const TailBoundParams& direction_tail,
    const ThetaGrid& entropy_grid, const TailBoundParams& entropy_tail,
    double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("run_attribute_suite: alpha must be in (0,1)");
    const double a4 = alpha / 4.0;
    std::vector<TestResult> out;
    out.push_back(test_attribute("x_tilde", x_tilde, direction_grid, direction_tail, a4));
    out.push_back(test_attribute("y_tilde", y_tilde, direction_grid, direction_tail, a4));
    out.push_back(test_attribute("z_tilde", z_tilde, direction_grid, direction_tail, a4));
    out.push_back(test_attribute("entropy", entropy, entropy_grid, entropy_tail, a4));
    return out;
}

inline bool suite_rejects(std::span<const TestResult> results) {
    return std::any_of(results.begin(), results.end(),
                       [](const TestResult& r) { return r.reject; });
}

}  // namespace fibrescan

#endif
