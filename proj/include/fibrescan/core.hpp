#ifndef FIBRESCAN_CORE_HPP
#define FIBRESCAN_CORE_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace fibrescan {

// ---------------------------------------------------------------------------
// errors

// Base for data-dependent failures (as opposed to caller bugs, which throw
// std::invalid_argument).
class error : public std::runtime_error {
public:
    explicit error(const std::string& what) : std::runtime_error(what) {}
};

class empty_cell_error : public error {
public:
    using error::error;
};
class degenerate_sample_error : public error {
public:
    using error::error;
};
class estimation_failed_error : public error {
public:
    using error::error;
};
class zero_distance_error : public error {
public:
    using error::error;
};
class partial_packing_error : public error {
public:
    partial_packing_error(const std::string& what, std::size_t achieved)
        : error(what), achieved_count(achieved) {}
    std::size_t achieved_count;
};
class undefined_statistic_error : public error {
public:
    using error::error;
};
class no_critical_value_error : public error {
public:
    using error::error;
};
class degenerate_field_error : public error {
public:
    using error::error;
};
class degenerate_component_error : public error {
public:
    using error::error;
};
class degenerate_fit_error : public error {
public:
    using error::error;
};
class smoothing_failed_error : public error {
public:
    using error::error;
};
class parse_error : public error {
public:
    using error::error;
};

// ---------------------------------------------------------------------------
// 3-vector

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3() = default;
    Vec3(double xx, double yy, double zz) : x(xx), y(yy), z(zz) {}

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    Vec3& operator+=(const Vec3& o) {
        x += o.x; y += o.y; z += o.z;
        return *this;
    }

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm2() const { return dot(*this); }
    double norm() const { return std::sqrt(norm2()); }
    Vec3 normalized() const {
        const double n = norm();
        if (n == 0.0) throw std::invalid_argument("cannot normalize zero vector");
        return *this / n;
    }
    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

// Unit direction on S^2. Kept as a plain Vec3; call sites validate where the
// contract requires it.
using UnitVector3 = Vec3;

inline bool is_unit(const Vec3& v, double tol = 1e-6) {
    return std::abs(v.norm() - 1.0) <= tol;
}

inline void require_unit(const Vec3& v, const char* who) {
    if (!is_unit(v))
        throw std::invalid_argument(std::string(who) + ": input not unit-norm");
}

// ---------------------------------------------------------------------------
// grid index

struct Index3 {
    int i1 = 0, i2 = 0, i3 = 0;
    bool operator==(const Index3&) const = default;
    auto operator<=>(const Index3&) const = default;
};

// ---------------------------------------------------------------------------
// random streams
//
// All stochastic operations take an explicit engine. Child streams are derived
// from (seed, stream index) with splitmix64 so parallel consumers never share
// state and results do not depend on scheduling.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_stream(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(seed ^ splitmix64(stream + 1));
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(splitmix64(seed)); }

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
    return Rng(derive_stream(seed, stream));
}

}  // namespace fibrescan

#endif
