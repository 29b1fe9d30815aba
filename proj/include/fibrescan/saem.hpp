#ifndef FIBRESCAN_SAEM_HPP
#define FIBRESCAN_SAEM_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "fibrescan/core.hpp"

namespace fibrescan {

// Attribute vectors (dimension 1..4), row-major.
struct AttrMatrix {
    int dim = 1;
    std::vector<double> data;

    std::size_t rows() const { return data.size() / dim; }
    const double* row(std::size_t i) const { return data.data() + i * dim; }
    void push_row(std::span<const double> v) {
        data.insert(data.end(), v.begin(), v.end());
    }
};

namespace detail {

constexpr int kMaxDim = 4;

// Cholesky factorization of a small SPD matrix; returns false if a pivot is
// not positive.
inline bool cholesky(const double* a, int d, double* L) {
    for (int i = 0; i < d * d; ++i) L[i] = 0.0;
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = a[i * d + j];
            for (int k = 0; k < j; ++k) s -= L[i * d + k] * L[j * d + k];
            if (i == j) {
                if (s <= 0.0) return false;
                L[i * d + i] = std::sqrt(s);
            } else {
                L[i * d + j] = s / L[j * d + j];
            }
        }
    }
    return true;
}

}  // namespace detail

// One multivariate Gaussian component.
struct GaussComponent {
    int dim = 1;
    std::array<double, detail::kMaxDim> mean{};
    std::array<double, detail::kMaxDim * detail::kMaxDim> cov{};

    double& cov_at(int i, int j) { return cov[i * dim + j]; }
    double cov_at(int i, int j) const { return cov[i * dim + j]; }
};

struct MixtureParams {
    double beta = 0.5;  // weight of the first component
    GaussComponent comp1, comp2;
    bool regularized = false;  // a covariance needed the diagonal floor
};

namespace detail {

// Adds the floor 1e-8 tr(S)/d to the diagonal and Cholesky-factorizes.
// Returns false when the matrix stays non-SPD even with the floor.
struct CompChol {
    int dim;
    std::array<double, kMaxDim> mean;
    std::array<double, kMaxDim * kMaxDim> L;
    double logdet = 0.0;

    bool init(const GaussComponent& c, bool* flagged) {
        dim = c.dim;
        mean = c.mean;
        std::array<double, kMaxDim * kMaxDim> a = c.cov;
        double tr = 0.0;
        for (int i = 0; i < dim; ++i) tr += a[i * dim + i];
        const double floor = 1e-8 * tr / dim;
        for (int i = 0; i < dim; ++i) a[i * dim + i] += floor;
        if (floor > 0.0 && flagged) *flagged = true;
        if (!cholesky(a.data(), dim, L.data())) return false;
        logdet = 0.0;
        for (int i = 0; i < dim; ++i) logdet += 2.0 * std::log(L[i * dim + i]);
        return true;
    }

    double log_density(const double* x) const {
        // solve L w = (x - mean), quadratic form = |w|^2
        std::array<double, kMaxDim> w;
        for (int i = 0; i < dim; ++i) {
            double s = x[i] - mean[i];
            for (int k = 0; k < i; ++k) s -= L[i * dim + k] * w[k];
            w[i] = s / L[i * dim + i];
        }
        double q = 0.0;
        for (int i = 0; i < dim; ++i) q += w[i] * w[i];
        return -0.5 * (dim * std::log(2.0 * std::numbers::pi) + logdet + q);
    }
};

inline std::pair<CompChol, CompChol> factorize(const MixtureParams& p) {
    bool flagged = false;
    CompChol c1, c2;
    if (!c1.init(p.comp1, &flagged) || !c2.init(p.comp2, &flagged))
        throw degenerate_component_error("mixture: singular covariance");
    (void)flagged;
    return {c1, c2};
}

}  // namespace detail

// beta phi(x, delta1) + (1-beta) phi(x, delta2).
inline double mixture_density(std::span<const double> x, const MixtureParams& p) {
    auto [c1, c2] = detail::factorize(p);
    return p.beta * std::exp(c1.log_density(x.data())) +
           (1.0 - p.beta) * std::exp(c2.log_density(x.data()));
}

// Posterior probabilities q_l that x_l belongs to the first component,
// computed in log space.
inline std::vector<double> e_step(const AttrMatrix& data, const MixtureParams& p) {
    auto [c1, c2] = detail::factorize(p);
    const double lb1 = p.beta > 0.0 ? std::log(p.beta)
                                    : -std::numeric_limits<double>::infinity();
    const double lb2 = p.beta < 1.0 ? std::log(1.0 - p.beta)
                                    : -std::numeric_limits<double>::infinity();
    std::vector<double> q(data.rows());
    for (std::size_t i = 0; i < data.rows(); ++i) {
        const double a = lb1 + c1.log_density(data.row(i));
        const double b = lb2 + c2.log_density(data.row(i));
        const double mx = std::max(a, b);
        if (!std::isfinite(mx)) {
            q[i] = 0.5;
            continue;
        }
        q[i] = std::exp(a - mx) / (std::exp(a - mx) + std::exp(b - mx));
    }
    return q;
}

namespace detail {

inline GaussComponent weighted_component(const AttrMatrix& data,
                                         std::span<const double> w, double wsum) {
    GaussComponent c;
    c.dim = data.dim;
    for (std::size_t i = 0; i < data.rows(); ++i) {
        const double* x = data.row(i);
        for (int d = 0; d < data.dim; ++d) c.mean[d] += w[i] * x[d];
    }
    for (int d = 0; d < data.dim; ++d) c.mean[d] /= wsum;
    for (std::size_t i = 0; i < data.rows(); ++i) {
        const double* x = data.row(i);
        for (int a = 0; a < data.dim; ++a)
            for (int b = 0; b < data.dim; ++b)
                c.cov[a * data.dim + b] +=
                    w[i] * (x[a] - c.mean[a]) * (x[b] - c.mean[b]);
    }
    for (int t = 0; t < data.dim * data.dim; ++t) c.cov[t] /= wsum;
    return c;
}

}  // namespace detail

// EM M-step: posterior-weighted means, covariances and weight.
inline MixtureParams em_m_step(const AttrMatrix& data, std::span<const double> q) {
    if (q.size() != data.rows())
        throw std::invalid_argument("em_m_step: size mismatch");
    double s1 = 0.0;
    for (double v : q) s1 += v;
    const double s2 = double(q.size()) - s1;
    if (s1 < 1e-8 || s2 < 1e-8)
        throw degenerate_component_error("em_m_step: component weight vanished");
    std::vector<double> w2(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) w2[i] = 1.0 - q[i];
    MixtureParams p;
    p.comp1 = detail::weighted_component(data, q, s1);
    p.comp2 = detail::weighted_component(data, w2, s2);
    p.beta = s1 / double(q.size());
    return p;
}

struct SemResult {
    std::vector<std::uint8_t> labels;  // 1 = first component
    MixtureParams params;
};

// SEM step: hard Bernoulli imputation of the labels, then per-group moments.
// Empty groups are resampled up to 100 times.
inline SemResult sem_step(const AttrMatrix& data, std::span<const double> q, Rng& rng) {
    if (q.size() != data.rows())
        throw std::invalid_argument("sem_step: size mismatch");
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    SemResult r;
    r.labels.resize(q.size());
    for (int attempt = 0; attempt < 100; ++attempt) {
        std::size_t n1 = 0;
        for (std::size_t i = 0; i < q.size(); ++i) {
            r.labels[i] = unif(rng) < q[i] ? 1 : 0;
            n1 += r.labels[i];
        }
        if (n1 == 0 || n1 == q.size()) continue;
        std::vector<double> w(q.size());
        for (std::size_t i = 0; i < q.size(); ++i) w[i] = r.labels[i] ? 1.0 : 0.0;
        r.params.comp1 = detail::weighted_component(data, w, double(n1));
        for (std::size_t i = 0; i < q.size(); ++i) w[i] = 1.0 - w[i];
        r.params.comp2 =
            detail::weighted_component(data, w, double(q.size() - n1));
        r.params.beta = double(n1) / double(q.size());
        return r;
    }
    throw degenerate_component_error("sem_step: could not draw a two-group labeling");
}

struct SpatialConfig {
    double radius = 0.0;        // Chebyshev neighborhood radius (coordinate units)
    int min_neighbors = 3;      // a
    int admissible_fields = 1000;  // K
    int resample_cap = 10000;   // attempts per accumulated field
};

struct SaemConfig {
    double lambda_scale = 50.0;  // lambda_k = scale / (scale + k^2)
    double epsilon = 1e-4;
    int max_iterations = 500;
    SpatialConfig spatial;

    double lambda(int k) const { return lambda_scale / (lambda_scale + double(k) * k); }
};

struct SaemFit {
    MixtureParams params;     // final EM-branch parameters
    std::vector<double> q;    // q^(k0)
    int iterations = 0;
    bool converged = false;
};

// Median split along the first principal component of the attributes;
// q0 = 0.9 on the upper side, 0.1 on the lower.
inline std::vector<double> initial_posteriors(const AttrMatrix& data) {
    const std::size_t n = data.rows();
    if (n < 2) throw std::invalid_argument("initial_posteriors: need >= 2 rows");
    const int d = data.dim;
    std::array<double, detail::kMaxDim> mean{};
    for (std::size_t i = 0; i < n; ++i)
        for (int a = 0; a < d; ++a) mean[a] += data.row(i)[a];
    for (int a = 0; a < d; ++a) mean[a] /= double(n);
    std::array<double, detail::kMaxDim * detail::kMaxDim> cov{};
    for (std::size_t i = 0; i < n; ++i)
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b)
                cov[a * d + b] += (data.row(i)[a] - mean[a]) * (data.row(i)[b] - mean[b]);
    // power iteration for the top eigenvector (deterministic start)
    std::array<double, detail::kMaxDim> v{};
    v[0] = 1.0;
    for (int it = 0; it < 200; ++it) {
        std::array<double, detail::kMaxDim> w{};
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b) w[a] += cov[a * d + b] * v[b];
        double nw = 0.0;
        for (int a = 0; a < d; ++a) nw += w[a] * w[a];
        nw = std::sqrt(nw);
        if (nw <= 0.0) break;
        for (int a = 0; a < d; ++a) v[a] = w[a] / nw;
    }
    std::vector<double> proj(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (int a = 0; a < d; ++a) s += v[a] * (data.row(i)[a] - mean[a]);
        proj[i] = s;
    }
    std::vector<double> sorted = proj;
    std::nth_element(sorted.begin(), sorted.begin() + n / 2, sorted.end());
    const double med = sorted[n / 2];
    std::vector<double> q(n);
    for (std::size_t i = 0; i < n; ++i) q[i] = proj[i] >= med ? 0.9 : 0.1;
    return q;
}

// Stochastic-approximation EM: both branches start from the shared q^(k-1);
// posteriors mix as lambda_k q_SEM + (1 - lambda_k) q_EM; stops when the L1
// change drops to epsilon. Parameters are reported from the EM branch.
inline SaemFit saem_fit(const AttrMatrix& data, std::span<const double> q0,
                        const SaemConfig& cfg, Rng& rng) {
    if (data.rows() < 2) throw std::invalid_argument("saem_fit: need >= 2 rows");
    SaemFit fit;
    fit.q.assign(q0.begin(), q0.end());
    try {
        for (int k = 1; k <= cfg.max_iterations; ++k) {
            const MixtureParams em_params = em_m_step(data, fit.q);
            const auto q_em = e_step(data, em_params);
            const auto sem = sem_step(data, fit.q, rng);
            const auto q_sem = e_step(data, sem.params);
            const double lam = cfg.lambda(k);
            double diff = 0.0;
            for (std::size_t i = 0; i < fit.q.size(); ++i) {
                const double qn = lam * q_sem[i] + (1.0 - lam) * q_em[i];
                diff += std::abs(qn - fit.q[i]);
                fit.q[i] = qn;
            }
            fit.params = em_params;
            fit.iterations = k;
            if (diff <= cfg.epsilon) {
                fit.converged = true;
                break;
            }
        }
    } catch (const degenerate_component_error& e) {
        throw degenerate_fit_error(std::string("saem_fit: ") + e.what() + " at iteration " +
                                   std::to_string(fit.iterations + 1));
    }
    return fit;
}

struct SmoothDiagnostics {
    std::size_t fields_accumulated = 0;
    std::size_t repairs = 0;     // fields admissible after the flip pass
    std::size_t resamples = 0;   // fields thrown away
};

// Spatial smoothing: draws label fields from q0, repairs windows with fewer
// than `a` same-labeled neighbors inside the Chebyshev radius by flipping
// them all at once, resamples whole fields that stay inadmissible, and
// averages K admissible fields. Windows with fewer than `a` neighbors in
// total use their neighbor count as the threshold.
inline std::vector<double> spatial_smooth(std::span<const double> q0,
                                          std::span<const Vec3> coords,
                                          const SpatialConfig& cfg, Rng& rng,
                                          SmoothDiagnostics* diag = nullptr) {
    const std::size_t n = q0.size();
    if (coords.size() != n)
        throw std::invalid_argument("spatial_smooth: coordinate/posterior mismatch");
    if (cfg.radius <= 0.0)
        throw std::invalid_argument("spatial_smooth: radius must be > 0");

    std::vector<std::vector<std::uint32_t>> nbr(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const Vec3 d = coords[i] - coords[j];
            const double cheb =
                std::max({std::abs(d.x), std::abs(d.y), std::abs(d.z)});
            if (cheb <= cfg.radius) nbr[i].push_back(std::uint32_t(j));
        }
    std::vector<int> need(n);
    for (std::size_t i = 0; i < n; ++i)
        need[i] = std::min<std::size_t>(cfg.min_neighbors, nbr[i].size());

    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<std::uint8_t> y(n);
    std::vector<std::size_t> bad;
    std::vector<double> acc(n, 0.0);
    SmoothDiagnostics local;

    auto collect_bad = [&]() {
        bad.clear();
        for (std::size_t i = 0; i < n; ++i) {
            int same = 0;
            for (auto j : nbr[i]) same += (y[j] == y[i]);
            if (same < need[i]) bad.push_back(i);
        }
        return bad.empty();
    };

    for (int k = 0; k < cfg.admissible_fields; ++k) {
        bool admissible = false;
        for (int attempt = 0; attempt < cfg.resample_cap; ++attempt) {
            for (std::size_t i = 0; i < n; ++i) y[i] = unif(rng) < q0[i] ? 1 : 0;
            if (collect_bad()) {
                admissible = true;
                break;
            }
            for (auto i : bad) y[i] ^= 1;  // one simultaneous repair pass
            if (collect_bad()) {
                ++local.repairs;
                admissible = true;
                break;
            }
            ++local.resamples;
        }
        if (!admissible)
            throw smoothing_failed_error(
                "spatial_smooth: no admissible labeling within the resample cap");
        for (std::size_t i = 0; i < n; ++i) acc[i] += y[i];
        ++local.fields_accumulated;
    }
    for (auto& v : acc) v /= double(cfg.admissible_fields);
    if (diag) *diag = local;
    return acc;
}

enum class WindowLabel : std::uint8_t { Homogeneous = 0, Anomaly = 1 };

// Majority component (by beta) is "homogeneous"; windows with posterior
// q >= 1/2 for that component take its label.
inline std::vector<WindowLabel> classify(std::span<const double> q, double beta_hat) {
    std::vector<WindowLabel> out(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) {
        const bool first_side = q[i] >= 0.5;
        const bool anomalous = beta_hat >= 0.5 ? !first_side : first_side;
        out[i] = anomalous ? WindowLabel::Anomaly : WindowLabel::Homogeneous;
    }
    return out;
}

// 3 sigma rule baseline: flags values outside mean +- 3 sample standard
// deviations. Zero variance flags nothing.
inline std::vector<bool> three_sigma_baseline(std::span<const double> values) {
    if (values.size() < 2)
        throw std::invalid_argument("three_sigma_baseline: need >= 2 values");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= double(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= double(values.size() - 1);
    std::vector<bool> flags(values.size(), false);
    if (var <= 0.0) return flags;
    const double sd3 = 3.0 * std::sqrt(var);
    for (std::size_t i = 0; i < values.size(); ++i)
        flags[i] = std::abs(values[i] - mean) > sd3;
    return flags;
}

}  // namespace fibrescan

#endif
