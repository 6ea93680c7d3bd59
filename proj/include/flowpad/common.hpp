#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace flowpad {

// Error taxonomy. Contract errors mean the caller broke a precondition;
// the rest map onto the failure modes surfaced by the CLI (exit code 1
// for user errors, 2 for internal ones).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ProtocolViolation : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MetricUndefined : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EngineUnavailable : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

// Worker rng streams are derived from (global_seed, worker_id, epoch) so
// parallel loaders stay reproducible.
inline Rng make_rng(std::uint64_t global_seed, std::uint64_t worker_id = 0,
                    std::uint64_t epoch = 0) {
    std::seed_seq seq{global_seed, worker_id, epoch};
    return Rng(seq);
}

inline double urand(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int irand(Rng& rng, int lo, int hi) {  // inclusive bounds
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline double nrand(Rng& rng, double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(rng);
}

constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

}  // namespace flowpad
