#ifndef FIBRESCAN_CONFIG_HPP
#define FIBRESCAN_CONFIG_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fibrescan/changepoint.hpp"
#include "fibrescan/fibre_sim.hpp"
#include "fibrescan/fields.hpp"
#include "fibrescan/saem.hpp"

namespace fibrescan {

// Flat key-value configuration with dotted section names:
//   # comment
//   simulation.dims = 500 500 500
//   test.direction.m = 3
class KvConfig {
public:
    static KvConfig parse(const std::string& text) {
        KvConfig cfg;
        cfg.raw_ = text;
        std::istringstream in(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                const auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw parse_error("config line " + std::to_string(lineno) +
                                  ": expected key = value");
            const std::string key = trim(line.substr(0, eq));
            const std::string val = trim(line.substr(eq + 1));
            if (key.empty())
                throw parse_error("config line " + std::to_string(lineno) + ": empty key");
            cfg.values_[key] = val;
        }
        return cfg;
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw parse_error("config: missing key '" + key + "'");
        return it->second;
    }
    std::string get_string(const std::string& key, const std::string& dflt) const {
        auto it = values_.find(key);
        return it == values_.end() ? dflt : it->second;
    }
    double get_double(const std::string& key) const { return to_double(key, get_string(key)); }
    double get_double(const std::string& key, double dflt) const {
        return has(key) ? get_double(key) : dflt;
    }
    long long get_int(const std::string& key) const {
        const auto s = get_string(key);
        try {
            std::size_t pos = 0;
            const long long v = std::stoll(s, &pos);
            if (pos != s.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw parse_error("config: key '" + key + "': bad integer '" + s + "'");
        }
    }
    long long get_int(const std::string& key, long long dflt) const {
        return has(key) ? get_int(key) : dflt;
    }
    bool get_bool(const std::string& key, bool dflt) const {
        if (!has(key)) return dflt;
        const auto s = get_string(key);
        if (s == "true" || s == "1" || s == "yes") return true;
        if (s == "false" || s == "0" || s == "no") return false;
        throw parse_error("config: key '" + key + "': bad boolean '" + s + "'");
    }
    std::vector<double> get_doubles(const std::string& key) const {
        std::istringstream in(get_string(key));
        std::vector<double> out;
        std::string tok;
        while (in >> tok) out.push_back(to_double(key, tok));
        return out;
    }
    void set(const std::string& key, const std::string& val) { values_[key] = val; }
    const std::map<std::string, std::string>& values() const { return values_; }
    const std::string& raw() const { return raw_; }

private:
    static double to_double(const std::string& key, const std::string& s) {
        try {
            std::size_t pos = 0;
            const double v = std::stod(s, &pos);
            if (pos != s.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw parse_error("config: key '" + key + "': bad number '" + s + "'");
        }
    }
    std::map<std::string, std::string> values_;
    std::string raw_;
};

inline Axis axis_from_string(const std::string& s) {
    if (s == "x" || s == "X") return Axis::X;
    if (s == "y" || s == "Y") return Axis::Y;
    if (s == "z" || s == "Z") return Axis::Z;
    throw parse_error("bad axis '" + s + "'");
}

enum class ClusterAttributes { Entropy, Mld, Combined };

inline ClusterAttributes cluster_attributes_from_string(const std::string& s) {
    if (s == "entropy") return ClusterAttributes::Entropy;
    if (s == "mld") return ClusterAttributes::Mld;
    if (s == "combined") return ClusterAttributes::Combined;
    throw parse_error("cluster.attributes must be entropy, mld or combined");
}

// Parsed pipeline configuration (simulate -> fields -> test -> cluster).
struct PipelineConfig {
    // exactly one of the two input modes
    std::optional<RsaConfig> simulation;
    std::optional<std::string> input_directions;  // CSV path

    GridSpec grid;  // delta + window factor; cell counts derived from dims
    int dims_vox[3] = {0, 0, 0};

    EntropyFieldConfig entropy;

    double alpha = 0.05;
    ThetaGrid direction_theta;
    TailBoundParams direction_tail;
    ThetaGrid entropy_theta;
    TailBoundParams entropy_tail;

    ClusterAttributes cluster_attributes = ClusterAttributes::Combined;
    SaemConfig saem;
    bool cluster_enabled = true;

    std::uint64_t seed = 0;
    std::string output_dir = "out";
    int threads = 1;
    std::string raw_echo;

    static PipelineConfig from_kv(const KvConfig& kv) {
        PipelineConfig c;
        c.raw_echo = kv.raw();

        const bool has_sim = kv.has("simulation.layers");
        const bool has_input = kv.has("input.directions");
        if (has_sim == has_input)
            throw parse_error(
                "config: exactly one of simulation.* and input.directions required");

        const auto dims = kv.get_doubles("dims");
        if (dims.size() != 3 || dims[0] < 1 || dims[1] < 1 || dims[2] < 1)
            throw parse_error("config: dims must be three positive numbers");
        for (int i = 0; i < 3; ++i) c.dims_vox[i] = int(dims[i]);

        if (has_sim) {
            RsaConfig r;
            r.dims = {dims[0], dims[1], dims[2]};
            r.fibre_length = kv.get_double("simulation.fibre_length", 100.0);
            r.radius = kv.get_double("simulation.fibre_radius", 4.0);
            r.layer_axis = axis_from_string(kv.get_string("simulation.layer_axis", "y"));
            r.max_attempts = std::size_t(kv.get_int("simulation.max_attempts", 10000));
            const int nlayers = int(kv.get_int("simulation.layers"));
            for (int i = 1; i <= nlayers; ++i) {
                const std::string p = "simulation.layer." + std::to_string(i) + ".";
                RsaLayer layer;
                const auto range = kv.get_doubles(p + "range");
                if (range.size() != 2)
                    throw parse_error("config: " + p + "range must be two numbers");
                layer.lo = range[0];
                layer.hi = range[1];
                layer.acg.preferred_axis =
                    axis_vector(axis_from_string(kv.get_string(p + "axis")));
                layer.acg.beta = kv.get_double(p + "beta");
                layer.count = std::size_t(kv.get_int(p + "count"));
                r.layers.push_back(layer);
            }
            r.validate();
            c.simulation = r;
        } else {
            c.input_directions = kv.get_string("input.directions");
        }

        c.grid.delta = int(kv.get_int("grid.delta"));
        c.grid.window_factor = int(kv.get_int("grid.window_factor"));
        c.grid.n1 = c.dims_vox[0] / c.grid.delta;
        c.grid.n2 = c.dims_vox[1] / c.grid.delta;
        c.grid.n3 = c.dims_vox[2] / c.grid.delta;
        c.grid.validate();

        c.entropy.nn.penalty_radius = kv.get_double("entropy.penalty_radius", 0.01);
        c.entropy.min_filtered = std::size_t(kv.get_int("entropy.min_filtered", 8));

        c.alpha = kv.get_double("test.alpha", 0.05);
        if (!(c.alpha > 0.0 && c.alpha < 1.0))
            throw parse_error("config: test.alpha must be in (0,1)");
        c.direction_theta = parse_theta(kv, "test.direction.");
        c.direction_tail = parse_tail(kv, "test.direction.");
        c.entropy_theta = parse_theta(kv, "test.entropy.");
        c.entropy_tail = parse_tail(kv, "test.entropy.");

        c.cluster_attributes = cluster_attributes_from_string(
            kv.get_string("cluster.attributes", "combined"));
        c.saem.lambda_scale = kv.get_double("cluster.lambda_scale", 50.0);
        c.saem.epsilon = kv.get_double("cluster.epsilon", 1e-4);
        c.saem.max_iterations = int(kv.get_int("cluster.max_iterations", 500));
        c.saem.spatial.radius = kv.get_double(
            "cluster.spatial.radius", double(c.grid.delta * c.grid.window_factor));
        c.saem.spatial.min_neighbors = int(kv.get_int("cluster.spatial.min_neighbors", 3));
        c.saem.spatial.admissible_fields = int(kv.get_int("cluster.spatial.fields", 1000));
        c.saem.spatial.resample_cap = int(kv.get_int("cluster.spatial.resample_cap", 10000));
        c.cluster_enabled = kv.get_bool("cluster.enabled", true);

        c.seed = std::uint64_t(kv.get_int("seed", 0));
        c.output_dir = kv.get_string("output", "out");
        return c;
    }

    static Vec3 axis_vector(Axis a) {
        switch (a) {
            case Axis::X: return {1.0, 0.0, 0.0};
            case Axis::Y: return {0.0, 1.0, 0.0};
            default: return {0.0, 0.0, 1.0};
        }
    }

private:
    static ThetaGrid parse_theta(const KvConfig& kv, const std::string& p) {
        ThetaGrid t;
        t.delta0 = int(kv.get_int(p + "delta0", 1));
        t.delta1 = int(kv.get_int(p + "delta1", 1));
        if (kv.has(p + "min_edge"))
            t.min_extent_factor =
                ThetaGrid::factor_from_edge(int(kv.get_int(p + "min_edge")), t.delta1);
        else
            t.min_extent_factor = int(kv.get_int(p + "min_extent_factor", 1));
        t.gamma0 = kv.get_double(p + "gamma0", 0.05);
        t.gamma1 = kv.get_double(p + "gamma1", 0.5);
        t.validate();
        return t;
    }
    static TailBoundParams parse_tail(const KvConfig& kv, const std::string& p) {
        TailBoundParams t;
        t.m = int(kv.get_int(p + "m", 1));
        t.sigma2 = kv.get_double(p + "sigma2", 1.0);
        const auto m0 = kv.get_string(p + "M0", "sigma");
        t.M0 = m0 == "sigma" ? std::sqrt(t.sigma2) : std::stod(m0);
        t.validate();
        return t;
    }
};

}  // namespace fibrescan

#endif
