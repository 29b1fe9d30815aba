// Command-line front end: simulate | fields | test | cluster | pipeline |
// calibrate. Exit codes: 0 no anomaly, 10 anomaly detected, 2 invalid
// config/arguments, 1 runtime error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "fibrescan/pipeline.hpp"

namespace fs = std::filesystem;
using namespace fibrescan;

namespace {

int log_level() {
    const char* env = std::getenv("FIBRESCAN_LOG");
    if (!env) return 1;
    const std::string s(env);
    if (s == "debug") return 2;
    if (s == "quiet" || s == "error") return 0;
    return 1;
}

void log_info(const std::string& msg) {
    if (log_level() >= 1) std::cerr << "[fibrescan] " << msg << "\n";
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw parse_error("cannot open config: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct CommonArgs {
    std::string config_path;
    std::int64_t seed_override = -1;
    std::string out_override;
    int threads = 1;
    std::string format = "text";
};

PipelineConfig load_config(const CommonArgs& args) {
    auto kv = KvConfig::parse(read_file(args.config_path));
    if (args.seed_override >= 0) kv.set("seed", std::to_string(args.seed_override));
    if (!args.out_override.empty()) kv.set("output", args.out_override);
    auto cfg = PipelineConfig::from_kv(kv);
    cfg.threads = args.threads;
    return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "configuration file")->required();
    cmd->add_option("--seed", args.seed_override, "override config seed");
    cmd->add_option("--out", args.out_override, "override output directory");
    cmd->add_option("--threads", args.threads, "worker threads (recorded; stages are deterministic)");
    cmd->add_option("--format", args.format, "output format: text|json")
        ->check(CLI::IsMember({"text", "json"}));
}

FieldsResult load_fields_artifacts(const PipelineConfig& cfg) {
    const fs::path out(cfg.output_dir);
    FieldsResult f;
    f.directions = load_direction_field_csv((out / "directions.csv").string(), cfg.grid);
    f.folded = fold_attributes(f.directions);
    f.windows = partition_windows(f.directions.grid, f.directions);
    f.mld = compute_mld(f.directions, f.windows);
    f.entropy = load_attribute_field_csv((out / "entropy.csv").string(), cfg.grid.m1(),
                                         cfg.grid.m2(), cfg.grid.m3());
    return f;
}

int cmd_simulate(const CommonArgs& args) {
    auto cfg = load_config(args);
    if (!cfg.simulation) throw parse_error("simulate: config has no simulation block");
    Rng rng = make_rng(cfg.seed, 1);
    const auto fibres = generate_rsa(*cfg.simulation, rng);
    const fs::path out(cfg.output_dir);
    save_fibres_csv(out / "fibres.csv", fibres);
    log_info("placed " + std::to_string(fibres.size()) + " fibres -> " +
             (out / "fibres.csv").string());
    return 0;
}

int cmd_fields(const CommonArgs& args) {
    auto cfg = load_config(args);
    const fs::path out(cfg.output_dir);
    DirectionField directions;
    if (cfg.simulation) {
        const auto fibres = load_fibres_csv(out / "fibres.csv");
        directions = local_direction_field(fibres, cfg.grid.delta, cfg.grid.n1,
                                           cfg.grid.n2, cfg.grid.n3);
        directions.grid = cfg.grid;
    } else {
        directions = load_direction_field_csv(*cfg.input_directions, cfg.grid);
    }
    const auto fields = stage_fields(cfg, std::move(directions));
    save_direction_field_csv(out / "directions.csv", fields.directions);
    save_attribute_field_csv(out / "attr_x.csv", fields.folded[0]);
    save_attribute_field_csv(out / "attr_y.csv", fields.folded[1]);
    save_attribute_field_csv(out / "attr_z.csv", fields.folded[2]);
    save_attribute_field_csv(out / "entropy.csv", fields.entropy);
    log_info("fields written to " + out.string());
    return 0;
}

int cmd_test(const CommonArgs& args) {
    auto cfg = load_config(args);
    const auto fields = load_fields_artifacts(cfg);
    const auto results = stage_test(cfg, fields);
    json arr = json::array();
    for (const auto& r : results) arr.push_back(test_result_to_json(r));
    const bool reject = suite_rejects(results);
    const json payload{{"alpha", cfg.alpha},
                       {"alpha_each", cfg.alpha / 4.0},
                       {"attributes", arr},
                       {"reject", reject}};
    atomic_write(fs::path(cfg.output_dir) / "test_results.json", payload.dump(2) + "\n");
    if (args.format == "json") {
        std::cout << payload.dump(2) << "\n";
    } else {
        Report r;
        r.payload["test"] = payload;
        r.anomaly = reject;
        std::cout << r.to_table_text();
    }
    return reject ? 10 : 0;
}

int cmd_cluster(const CommonArgs& args) {
    auto cfg = load_config(args);
    const auto fields = load_fields_artifacts(cfg);
    const auto payload = run_cluster_stage(cfg, fields, cfg.output_dir);
    if (args.format == "json")
        std::cout << payload.dump(2) << "\n";
    else
        std::cout << "windows: " << payload.at("windows")
                  << "  anomalous: " << payload.at("anomaly_windows")
                  << "  beta_final: " << payload.at("beta_final") << "\n";
    return 0;
}

int cmd_pipeline(const CommonArgs& args) {
    auto cfg = load_config(args);
    const auto report = run_pipeline(cfg);
    if (args.format == "json")
        std::cout << report.to_json_text();
    else
        std::cout << report.to_table_text();
    return report.anomaly ? 10 : 0;
}

int cmd_calibrate(const CommonArgs& args, const std::vector<int>& m_list,
                  const std::vector<double>& s2_list, const std::string& attribute) {
    auto cfg = load_config(args);
    const bool entropy = attribute == "entropy";
    const ThetaGrid theta = entropy ? cfg.entropy_theta : cfg.direction_theta;
    const int n1 = entropy ? cfg.grid.m1() : cfg.grid.n1;
    const int n2 = entropy ? cfg.grid.m2() : cfg.grid.n2;
    const int n3 = entropy ? cfg.grid.m3() : cfg.grid.n3;
    const auto table =
        calibrate_table(n1, n2, n3, theta, m_list, s2_list, cfg.alpha, true);
    if (args.format == "json") {
        std::cout << table.dump(2) << "\n";
        return 0;
    }
    std::cout << "critical values y_alpha (alpha=" << cfg.alpha
              << ", |Theta0|=" << table.at("theta_count") << ")\n";
    std::cout << "sigma2";
    for (int m : m_list) std::cout << "\tm=" << m;
    std::cout << "\n";
    for (const auto& row : table.at("rows")) {
        std::cout << row.at("sigma2");
        for (int m : m_list)
            std::cout << '\t' << row.at("y_alpha").at("m=" + std::to_string(m));
        std::cout << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"anomaly detection in simulated 3D fibre systems"};
    app.require_subcommand(1);

    CommonArgs args;
    std::vector<int> m_list{10, 9, 8, 7, 6, 5, 4, 3, 2};
    std::vector<double> s2_list{1.0};
    std::string attribute = "direction";

    auto* simulate = app.add_subcommand("simulate", "generate an RSA fibre system");
    add_common(simulate, args);
    auto* fields = app.add_subcommand("fields", "compute direction/attribute fields");
    add_common(fields, args);
    auto* test = app.add_subcommand("test", "run the change-point test suite");
    add_common(test, args);
    auto* cluster = app.add_subcommand("cluster", "run spatial SAEM clustering");
    add_common(cluster, args);
    auto* pipeline = app.add_subcommand("pipeline", "run all stages");
    add_common(pipeline, args);
    auto* calibrate = app.add_subcommand("calibrate", "critical-value table");
    add_common(calibrate, args);
    calibrate->add_option("--m", m_list, "dependence ranges");
    calibrate->add_option("--sigma2", s2_list, "variance bounds");
    calibrate->add_option("--attribute", attribute, "direction|entropy")
        ->check(CLI::IsMember({"direction", "entropy"}));

    CLI11_PARSE(app, argc, argv);

    try {
        if (simulate->parsed()) return cmd_simulate(args);
        if (fields->parsed()) return cmd_fields(args);
        if (test->parsed()) return cmd_test(args);
        if (cluster->parsed()) return cmd_cluster(args);
        if (pipeline->parsed()) return cmd_pipeline(args);
        if (calibrate->parsed()) return cmd_calibrate(args, m_list, s2_list, attribute);
    } catch (const parse_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid argument: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
