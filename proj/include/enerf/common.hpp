#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace enerf {

// All in-memory computation is double; checkpoints store float32.
using real = double;

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

using MatX = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<MatX>;
using ConstMapMat = Eigen::Map<const MatX>;

struct EnerfError : std::runtime_error {
    explicit EnerfError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : EnerfError {
    using EnerfError::EnerfError;
};

constexpr real kPi = 3.14159265358979323846;

// splitmix64: the mixing step behind the counter-based RNG below.
inline uint64_t hash_u64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
    return hash_u64(a ^ (0x9e3779b97f4a7c15ull + (b << 6) + (b >> 2)));
}

// Counter-based generator: a (key, counter) pair fully determines every draw,
// so results never depend on call interleaving or thread schedule.
class Rng {
public:
    explicit Rng(uint64_t key) : key_(key) {}

    static Rng keyed(std::initializer_list<uint64_t> parts) {
        uint64_t k = 0x2545f4914f6cdd1dull;
        for (uint64_t p : parts) k = hash_combine(k, p);
        return Rng(k);
    }

    // Uniform in [0, 1).
    real uniform() {
        uint64_t bits = hash_u64(key_ ^ hash_u64(counter_++));
        return static_cast<real>(bits >> 11) * 0x1.0p-53;
    }

    real uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller (one value per call, pair cached).
    real normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        real u1 = uniform();
        real u2 = uniform();
        u1 = std::max(u1, real(1e-300));
        real r = std::sqrt(-2.0 * std::log(u1));
        real a = 2.0 * kPi * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    uint64_t next_u64() { return hash_u64(key_ ^ hash_u64(counter_++)); }

private:
    uint64_t key_;
    uint64_t counter_ = 0;
    bool has_cached_ = false;
    real cached_ = 0;
};

inline Vec3 uniform_unit_vector(Rng& rng) {
    real z = rng.uniform(-1.0, 1.0);
    real phi = rng.uniform(0.0, 2.0 * kPi);
    real r = std::sqrt(std::max(real(0), 1.0 - z * z));
    return Vec3(r * std::cos(phi), r * std::sin(phi), z);
}

}  // namespace enerf
