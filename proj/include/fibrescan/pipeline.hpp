#ifndef FIBRESCAN_PIPELINE_HPP
#define FIBRESCAN_PIPELINE_HPP

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fibrescan/config.hpp"
#include "fibrescan/fields.hpp"
#include "fibrescan/io.hpp"
#include "fibrescan/version.hpp"

namespace fibrescan {

struct Report {
    json payload;
    bool anomaly = false;

    std::string to_json_text() const { return payload.dump(2) + "\n"; }
    std::string to_table_text() const;
};

namespace detail {

class StageTimer {
public:
    StageTimer() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_)
            .count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

inline std::string format_p(double p, double log10p) {
    char buf[64];
    if (p >= 1e-4) {
        std::snprintf(buf, sizeof buf, "%.4g", p);
    } else {
        // keep extreme bounds readable in scientific notation, never as 0
        const double e = std::floor(log10p);
        const double mant = std::pow(10.0, log10p - e);
        std::snprintf(buf, sizeof buf, "%.1fe%+03d", mant, int(e));
    }
    return buf;
}

}  // namespace detail

inline std::string Report::to_table_text() const {
    std::string out;
    out += "attribute    sample_var   statistic    p_value      decision\n";
    for (const auto& r : payload.at("test").at("attributes")) {
        char line[160];
        std::snprintf(line, sizeof line, "%-12s %-12.5f %-12.5f %-12s %s\n",
                      r.at("attribute").get<std::string>().c_str(),
                      r.at("sample_variance").get<double>(),
                      r.at("statistic").get<double>(),
                      detail::format_p(r.at("p_bound").get<double>(),
                                       r.at("log10_p_bound").get<double>())
                          .c_str(),
                      r.at("reject").get<bool>() ? "reject" : "-");
        out += line;
    }
    out += "verdict: ";
    out += anomaly ? "anomaly detected" : "no anomaly";
    out += "\n";
    if (payload.contains("cluster") && !payload.at("cluster").is_null()) {
        const auto& c = payload.at("cluster");
        char line[256];
        std::snprintf(line, sizeof line,
                      "cluster: %lld windows, %lld anomalous, beta_em=%.4f "
                      "beta_final=%.4f iters=%d\n",
                      c.at("windows").get<long long>(),
                      c.at("anomaly_windows").get<long long>(),
                      c.at("beta_em").get<double>(), c.at("beta_final").get<double>(),
                      c.at("iterations").get<int>());
        out += line;
    }
    return out;
}

// ---------------------------------------------------------------------------
// pipeline stages (library surface used by the CLI subcommands)

struct FieldsResult {
    DirectionField directions;
    std::array<ScalarField3, 3> folded;
    WindowPartition windows;
    std::vector<WindowAggregate> mld;
    ScalarField3 entropy;
};

inline DirectionField stage_directions(const PipelineConfig& cfg,
                                       std::vector<Fibre>* fibres_out, Rng& rng) {
    if (cfg.simulation) {
        auto fibres = generate_rsa(*cfg.simulation, rng);
        auto field = local_direction_field(fibres, cfg.grid.delta, cfg.grid.n1,
                                           cfg.grid.n2, cfg.grid.n3);
        field.grid = cfg.grid;  // carry the window factor
        if (fibres_out) *fibres_out = std::move(fibres);
        return field;
    }
    return load_direction_field_csv(*cfg.input_directions, cfg.grid);
}

inline FieldsResult stage_fields(const PipelineConfig& cfg, DirectionField directions) {
    FieldsResult r{std::move(directions), {}, {}, {}, {}};
    r.folded = fold_attributes(r.directions);
    r.windows = partition_windows(r.directions.grid, r.directions);
    r.mld = compute_mld(r.directions, r.windows);
    r.entropy = entropy_field(r.directions, r.windows, cfg.entropy);
    return r;
}

inline std::vector<TestResult> stage_test(const PipelineConfig& cfg,
                                          const FieldsResult& fields) {
    return run_attribute_suite(fields.folded[0], fields.folded[1], fields.folded[2],
                               fields.entropy, cfg.direction_theta, cfg.direction_tail,
                               cfg.entropy_theta, cfg.entropy_tail, cfg.alpha);
}

// ---------------------------------------------------------------------------
// clustering stage

struct ClusterOutput {
    std::vector<Index3> windows;  // 1-based window indices, row-aligned
    std::vector<double> q_final;
    std::vector<WindowLabel> labels;
    MixtureParams params;
    double beta_em = 0.0;
    double beta_final = 0.0;
    int iterations = 0;
    SmoothDiagnostics smooth;
    bool spatial_applied = true;
};

// Assembles the per-window attribute matrix (entropy, MLD or both),
// standardized coordinate-wise, fits the mixture with SAEM, smooths the
// posteriors spatially and labels the windows.
inline ClusterOutput cluster_windows(const FieldsResult& fields,
                                     ClusterAttributes mode, const SaemConfig& saem_cfg,
                                     int delta, int window_factor, std::uint64_t seed,
                                     bool apply_spatial = true) {
    const auto& part = fields.windows;
    // MLD lookup per window
    std::vector<const WindowAggregate*> agg(part.window_count(), nullptr);
    for (const auto& a : fields.mld) agg[a.window] = &a;

    ClusterOutput out;
    out.spatial_applied = apply_spatial;
    AttrMatrix data;
    data.dim = mode == ClusterAttributes::Entropy ? 1
               : mode == ClusterAttributes::Mld   ? 3
                                                  : 4;
    std::vector<Vec3> coords;
    for (std::size_t l = 0; l < part.window_count(); ++l) {
        const auto w = part.wunlin(l);
        const bool has_entropy = fields.entropy.occupied(w.i1, w.i2, w.i3);
        const bool has_mld = agg[l] != nullptr;
        double row[4];
        int d = 0;
        if (mode != ClusterAttributes::Mld) {
            if (!has_entropy) continue;
            row[d++] = fields.entropy.at(w.i1, w.i2, w.i3);
        }
        if (mode != ClusterAttributes::Entropy) {
            if (!has_mld) continue;
            row[d++] = agg[l]->mld.x;
            row[d++] = agg[l]->mld.y;
            row[d++] = agg[l]->mld.z;
        }
        data.push_row(std::span<const double>(row, std::size_t(d)));
        out.windows.push_back({w.i1 + 1, w.i2 + 1, w.i3 + 1});
        const double pitch = double(delta) * window_factor;
        coords.push_back({double(w.i1) * pitch, double(w.i2) * pitch,
                          double(w.i3) * pitch});
    }
    if (data.rows() < 2)
        throw degenerate_fit_error("cluster: fewer than 2 windows with attributes");

    // standardize each coordinate to zero mean / unit variance
    for (int d = 0; d < data.dim; ++d) {
        double mean = 0.0;
        for (std::size_t i = 0; i < data.rows(); ++i) mean += data.data[i * data.dim + d];
        mean /= double(data.rows());
        double var = 0.0;
        for (std::size_t i = 0; i < data.rows(); ++i) {
            const double c = data.data[i * data.dim + d] - mean;
            var += c * c;
        }
        var /= double(data.rows() - 1);
        const double sd = var > 0.0 ? std::sqrt(var) : 1.0;
        for (std::size_t i = 0; i < data.rows(); ++i)
            data.data[i * data.dim + d] = (data.data[i * data.dim + d] - mean) / sd;
    }

    Rng fit_rng = make_rng(seed, 2);
    const auto q0 = initial_posteriors(data);
    const auto fit = saem_fit(data, q0, saem_cfg, fit_rng);
    out.params = fit.params;
    out.beta_em = fit.params.beta;
    out.iterations = fit.iterations;

    if (apply_spatial) {
        Rng smooth_rng = make_rng(seed, 3);
        out.q_final =
            spatial_smooth(fit.q, coords, saem_cfg.spatial, smooth_rng, &out.smooth);
    } else {
        out.q_final = fit.q;
    }
    double qbar = 0.0;
    for (double v : out.q_final) qbar += v;
    out.beta_final = qbar / double(out.q_final.size());
    out.labels = classify(out.q_final, out.beta_final);
    return out;
}

inline json run_cluster_stage(const PipelineConfig& cfg, const FieldsResult& fields,
                              const std::filesystem::path& out_dir) {
    const auto c = cluster_windows(fields, cfg.cluster_attributes, cfg.saem,
                                   cfg.grid.delta, cfg.grid.window_factor, cfg.seed);
    save_posteriors_csv(out_dir / "posteriors.csv", c.windows, c.q_final, c.labels);
    atomic_write(out_dir / "mixture.json", mixture_to_json(c.params).dump(2) + "\n");

    long long anomalies = 0;
    Index3 lo{INT32_MAX, INT32_MAX, INT32_MAX}, hi{0, 0, 0};
    for (std::size_t i = 0; i < c.labels.size(); ++i) {
        if (c.labels[i] != WindowLabel::Anomaly) continue;
        ++anomalies;
        lo.i1 = std::min(lo.i1, c.windows[i].i1);
        lo.i2 = std::min(lo.i2, c.windows[i].i2);
        lo.i3 = std::min(lo.i3, c.windows[i].i3);
        hi.i1 = std::max(hi.i1, c.windows[i].i1);
        hi.i2 = std::max(hi.i2, c.windows[i].i2);
        hi.i3 = std::max(hi.i3, c.windows[i].i3);
    }
    const int pitch = cfg.grid.delta * cfg.grid.window_factor;
    json bbox = nullptr;
    if (anomalies > 0) {
        bbox = json{{"window_lo", {lo.i1, lo.i2, lo.i3}},
                    {"window_hi", {hi.i1, hi.i2, hi.i3}},
                    {"voxel_lo",
                     {(lo.i1 - 1) * pitch + 1, (lo.i2 - 1) * pitch + 1,
                      (lo.i3 - 1) * pitch + 1}},
                    {"voxel_hi", {hi.i1 * pitch, hi.i2 * pitch, hi.i3 * pitch}}};
    }
    return json{{"attributes",
                 cfg.cluster_attributes == ClusterAttributes::Entropy ? "entropy"
                 : cfg.cluster_attributes == ClusterAttributes::Mld   ? "mld"
                                                                      : "combined"},
                {"windows", (long long)c.windows.size()},
                {"anomaly_windows", anomalies},
                {"beta_em", c.beta_em},
                {"beta_final", c.beta_final},
                {"iterations", c.iterations},
                {"mixture", mixture_to_json(c.params)},
                {"anomaly_bbox", bbox},
                {"smooth",
                 {{"fields", c.smooth.fields_accumulated},
                  {"repairs", c.smooth.repairs},
                  {"resamples", c.smooth.resamples}}}};
}

// Full pipeline: simulate/load -> fields -> test -> cluster, persisting every
// intermediate artifact under cfg.output_dir.
inline Report run_pipeline(const PipelineConfig& cfg) {
    namespace fs = std::filesystem;
    const fs::path out(cfg.output_dir);
    Report report;
    report.payload["version"] = kVersion;
    report.payload["seed"] = cfg.seed;
    report.payload["config"] = cfg.raw_echo;
    report.payload["grid"] = {{"delta", cfg.grid.delta},
                              {"cells", {cfg.grid.n1, cfg.grid.n2, cfg.grid.n3}},
                              {"window_factor", cfg.grid.window_factor},
                              {"windows", {cfg.grid.m1(), cfg.grid.m2(), cfg.grid.m3()}}};
    json timings;

    std::vector<Fibre> fibres;
    DirectionField directions;
    {
        detail::StageTimer t;
        Rng rng = make_rng(cfg.seed, 1);
        try {
            directions = stage_directions(cfg, &fibres, rng);
        } catch (const std::exception& e) {
            throw error(std::string("stage simulate: ") + e.what());
        }
        if (cfg.simulation) {
            save_fibres_csv(out / "fibres.csv", fibres);
            report.payload["simulate"] = {{"fibres", fibres.size()}};
        }
        timings["simulate_s"] = t.seconds();
    }

    FieldsResult fields;
    {
        detail::StageTimer t;
        try {
            fields = stage_fields(cfg, std::move(directions));
        } catch (const std::exception& e) {
            throw error(std::string("stage fields: ") + e.what());
        }
        save_direction_field_csv(out / "directions.csv", fields.directions);
        save_attribute_field_csv(out / "attr_x.csv", fields.folded[0]);
        save_attribute_field_csv(out / "attr_y.csv", fields.folded[1]);
        save_attribute_field_csv(out / "attr_z.csv", fields.folded[2]);
        save_attribute_field_csv(out / "entropy.csv", fields.entropy);
        report.payload["fields"] = {
            {"occupied_cells", fields.directions.occupied_count()},
            {"entropy_windows", fields.entropy.occupied_count()}};
        timings["fields_s"] = t.seconds();
    }

    {
        detail::StageTimer t;
        std::vector<TestResult> results;
        try {
            results = stage_test(cfg, fields);
        } catch (const std::exception& e) {
            throw error(std::string("stage test: ") + e.what());
        }
        json arr = json::array();
        for (const auto& r : results) arr.push_back(test_result_to_json(r));
        report.anomaly = suite_rejects(results);
        report.payload["test"] = {{"alpha", cfg.alpha},
                                  {"alpha_each", cfg.alpha / 4.0},
                                  {"attributes", arr},
                                  {"reject", report.anomaly}};
        atomic_write(out / "test_results.json",
                     report.payload["test"].dump(2) + "\n");
        timings["test_s"] = t.seconds();
    }

    if (cfg.cluster_enabled) {
        detail::StageTimer t;
        try {
            report.payload["cluster"] = run_cluster_stage(cfg, fields, out);
        } catch (const std::exception& e) {
            throw error(std::string("stage cluster: ") + e.what());
        }
        timings["cluster_s"] = t.seconds();
    } else {
        report.payload["cluster"] = nullptr;
    }

    report.payload["timings"] = timings;
    report.payload["verdict"] = report.anomaly ? "anomaly" : "no_anomaly";
    atomic_write(out / "report.json", report.to_json_text());
    atomic_write(out / "report.txt", report.to_table_text());
    return report;
}

// Critical-value grid for user-supplied m and sigma^2 lists (Table-3-style).
inline json calibrate_table(int n1, int n2, int n3, const ThetaGrid& grid,
                            std::span<const int> m_list,
                            std::span<const double> sigma2_list, double alpha,
                            bool m0_is_sigma, double m0_value = 1.0) {
    ScalarField3 full = ScalarField3::full(n1, n2, n3);
    PrefixSums3 sums(full);
    const auto theta = enumerate_theta(sums, grid);
    const auto groups = group_theta(theta, double(sums.total_count()));
    json rows = json::array();
    for (double s2 : sigma2_list) {
        json row;
        row["sigma2"] = s2;
        json vals = json::object();
        for (int m : m_list) {
            TailBoundParams p{m, s2, m0_is_sigma ? std::sqrt(s2) : m0_value};
            vals["m=" + std::to_string(m)] = critical_value(groups, p, alpha);
        }
        row["y_alpha"] = vals;
        rows.push_back(row);
    }
    return json{{"dims", {n1, n2, n3}},
                {"theta_count", theta.size()},
                {"alpha", alpha},
                {"rows", rows}};
}

}  // namespace fibrescan

#endif
