#ifndef FIBRESCAN_IO_HPP
#define FIBRESCAN_IO_HPP

#include <charconv>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fibrescan/changepoint.hpp"
#include "fibrescan/fibre_sim.hpp"
#include "fibrescan/grid.hpp"
#include "fibrescan/saem.hpp"

namespace fibrescan {

using json = nlohmann::json;

// All writes go through a temp file + rename so interrupted runs never leave
// truncated artifacts.
inline void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw error("cannot open for writing: " + tmp.string());
        out.write(bytes.data(), std::streamsize(bytes.size()));
        if (!out) throw error("short write: " + tmp.string());
    }
    fs::rename(tmp, path);
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_double(const std::string& s, const char* file, std::size_t lineno) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw parse_error(std::string(file) + ": line " + std::to_string(lineno) +
                          ": bad number '" + s + "'");
    }
}

inline int parse_int(const std::string& s, const char* file, std::size_t lineno) {
    int v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw parse_error(std::string(file) + ": line " + std::to_string(lineno) +
                          ": bad integer '" + s + "'");
    return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// fibre list CSV: p0x,p0y,p0z,p1x,p1y,p1z,radius

inline void save_fibres_csv(const std::filesystem::path& path,
                            std::span<const Fibre> fibres) {
    std::ostringstream out;
    out << "p0x,p0y,p0z,p1x,p1y,p1z,radius\n";
    out.precision(10);
    for (const auto& f : fibres)
        out << f.p0.x << ',' << f.p0.y << ',' << f.p0.z << ',' << f.p1.x << ','
            << f.p1.y << ',' << f.p1.z << ',' << f.radius << '\n';
    atomic_write(path, out.str());
}

inline std::vector<Fibre> load_fibres_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw error("cannot open: " + path.string());
    std::string line;
    std::getline(in, line);  // header
    std::vector<Fibre> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = detail::split_csv(line);
        if (f.size() != 7)
            throw parse_error(path.string() + ": line " + std::to_string(lineno) +
                              ": expected 7 fields");
        const char* n = path.c_str();
        out.push_back({{detail::parse_double(f[0], n, lineno),
                        detail::parse_double(f[1], n, lineno),
                        detail::parse_double(f[2], n, lineno)},
                       {detail::parse_double(f[3], n, lineno),
                        detail::parse_double(f[4], n, lineno),
                        detail::parse_double(f[5], n, lineno)},
                       detail::parse_double(f[6], n, lineno)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// DirectionField CSV: i1,i2,i3,x,y,z (1-based indices, occupied cells only)

inline void save_direction_field_csv(const std::filesystem::path& path,
                                     const DirectionField& field) {
    std::ostringstream out;
    out << "i1,i2,i3,x,y,z\n";
    out.precision(15);
    const auto& g = field.grid;
    for (int k = 0; k < g.n3; ++k)
        for (int j = 0; j < g.n2; ++j)
            for (int i = 0; i < g.n1; ++i) {
                const auto t = field.lin(i, j, k);
                if (!field.mask[t]) continue;
                const auto& u = field.directions[t];
                out << i + 1 << ',' << j + 1 << ',' << k + 1 << ',' << u.x << ','
                    << u.y << ',' << u.z << '\n';
            }
    atomic_write(path, out.str());
}

// Loads and validates a direction field: unit norms renormalized when the
// deviation is within 1e-3, rejected beyond; duplicate indices rejected.
inline DirectionField load_direction_field_csv(const std::filesystem::path& path,
                                               const GridSpec& grid) {
    std::ifstream in(path);
    if (!in) throw error("cannot open: " + path.string());
    DirectionField field(grid);
    std::string line;
    std::getline(in, line);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = detail::split_csv(line);
        if (f.size() != 6)
            throw parse_error(path.string() + ": line " + std::to_string(lineno) +
                              ": expected 6 fields");
        const char* n = path.c_str();
        const int i1 = detail::parse_int(f[0], n, lineno);
        const int i2 = detail::parse_int(f[1], n, lineno);
        const int i3 = detail::parse_int(f[2], n, lineno);
        if (i1 < 1 || i2 < 1 || i3 < 1 || i1 > grid.n1 || i2 > grid.n2 || i3 > grid.n3)
            throw parse_error(path.string() + ": line " + std::to_string(lineno) +
                              ": index out of range");
        Vec3 u{detail::parse_double(f[3], n, lineno),
               detail::parse_double(f[4], n, lineno),
               detail::parse_double(f[5], n, lineno)};
        const double norm = u.norm();
        if (std::abs(norm - 1.0) > 1e-3)
            throw parse_error(path.string() + ": line " + std::to_string(lineno) +
                              ": direction norm deviates beyond tolerance");
        u = u / norm;
        if (field.occupied(i1 - 1, i2 - 1, i3 - 1))
            throw parse_error(path.string() + ": line " + std::to_string(lineno) +
                              ": duplicate cell index");
        field.set(i1 - 1, i2 - 1, i3 - 1, u);
    }
    return field;
}

// ---------------------------------------------------------------------------
// attribute field CSV: i1,i2,i3,value

inline void save_attribute_field_csv(const std::filesystem::path& path,
                                     const ScalarField3& f) {
    std::ostringstream out;
    out << "i1,i2,i3,value\n";
    out.precision(15);
    for (int k = 0; k < f.n3; ++k)
        for (int j = 0; j < f.n2; ++j)
            for (int i = 0; i < f.n1; ++i)
                if (f.occupied(i, j, k))
                    out << i + 1 << ',' << j + 1 << ',' << k + 1 << ','
                        << f.at(i, j, k) << '\n';
    atomic_write(path, out.str());
}

inline ScalarField3 load_attribute_field_csv(const std::filesystem::path& path, int n1,
                                             int n2, int n3) {
    std::ifstream in(path);
    if (!in) throw error("cannot open: " + path.string());
    ScalarField3 f(n1, n2, n3);
    std::string line;
    std::getline(in, line);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto parts = detail::split_csv(line);
        if (parts.size() != 4)
            throw parse_error(path.string() + ": line " + std::to_string(lineno) +
                              ": expected 4 fields");
        const char* n = path.c_str();
        const int i1 = detail::parse_int(parts[0], n, lineno);
        const int i2 = detail::parse_int(parts[1], n, lineno);
        const int i3 = detail::parse_int(parts[2], n, lineno);
        if (i1 < 1 || i2 < 1 || i3 < 1 || i1 > n1 || i2 > n2 || i3 > n3)
            throw parse_error(path.string() + ": line " + std::to_string(lineno) +
                              ": index out of range");
        if (f.occupied(i1 - 1, i2 - 1, i3 - 1))
            throw parse_error(path.string() + ": line " + std::to_string(lineno) +
                              ": duplicate cell index");
        f.set(i1 - 1, i2 - 1, i3 - 1, detail::parse_double(parts[3], n, lineno));
    }
    return f;
}

// ---------------------------------------------------------------------------
// raw binary volume (little-endian uint8) + JSON sidecar

inline void save_volume_raw(const std::filesystem::path& path,
                            std::span<const std::uint8_t> volume, int n1, int n2,
                            int n3, double voxel_size_um = 1.0) {
    atomic_write(path, std::string(volume.begin(), volume.end()));
    json side;
    side["dims"] = {n1, n2, n3};
    side["voxel_size_um"] = voxel_size_um;
    side["dtype"] = "uint8";
    side["order"] = "i1 fastest";
    atomic_write(path.string() + ".json", side.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// results

inline json box_to_json(const BoxParam& b) {
    return json{{"origin", {b.origin.i1, b.origin.i2, b.origin.i3}},
                {"extent", {b.extent.i1, b.extent.i2, b.extent.i3}},
                {"inside", b.inside},
                {"outside", b.outside}};
}

inline json test_result_to_json(const TestResult& r) {
    return json{{"attribute", r.attribute},
                {"statistic", r.statistic},
                {"argmax", box_to_json(r.argmax)},
                {"y_alpha", r.y_alpha},
                {"p_bound", r.p_bound},
                {"log10_p_bound", r.log_p_bound / std::numbers::ln10},
                {"reject", r.reject},
                {"sample_variance", r.sample_variance},
                {"theta_count", r.theta_count},
                {"params",
                 {{"m", r.params.m}, {"sigma2", r.params.sigma2}, {"M0", r.params.M0}}}};
}

inline void save_posteriors_csv(const std::filesystem::path& path,
                                std::span<const Index3> windows,
                                std::span<const double> q,
                                std::span<const WindowLabel> labels) {
    std::ostringstream out;
    out << "l1,l2,l3,q,label\n";
    out.precision(10);
    for (std::size_t t = 0; t < q.size(); ++t)
        out << windows[t].i1 << ',' << windows[t].i2 << ',' << windows[t].i3 << ','
            << q[t] << ','
            << (labels[t] == WindowLabel::Anomaly ? "anomaly" : "homogeneous") << '\n';
    atomic_write(path, out.str());
}

inline json component_to_json(const GaussComponent& c) {
    json mean = json::array();
    json cov = json::array();
    for (int i = 0; i < c.dim; ++i) {
        mean.push_back(c.mean[i]);
        json row = json::array();
        for (int j = 0; j < c.dim; ++j) row.push_back(c.cov_at(i, j));
        cov.push_back(row);
    }
    return json{{"mean", mean}, {"cov", cov}};
}

inline json mixture_to_json(const MixtureParams& p) {
    return json{{"beta", p.beta},
                {"comp1", component_to_json(p.comp1)},
                {"comp2", component_to_json(p.comp2)}};
}

}  // namespace fibrescan

#endif
