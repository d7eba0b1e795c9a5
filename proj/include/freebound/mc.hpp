#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "freebound/model.hpp"

namespace freebound::mc {

struct MCConfig {
    std::int64_t paths = 20000;
    double dt = 0.01;
    double horizon = 0.0;  // 0 selects a horizon from the discounting margin
    std::uint64_t seed = 20240601ULL;
    // Shift boundary monitoring by 0.5826 sigma sqrt(dt) to offset the
    // late detection of crossings between grid times.
    bool continuity_correction = true;
};

// Horizon used when cfg.horizon is 0: e^{-(r-g)T} = 1e-4 with g the fastest
// first-moment growth rate of the two states.
double effective_horizon(const model::ProblemSpec& spec, const MCConfig& cfg);

// Independent stream per path; the stream depends only on (seed, path).
class PathRng {
public:
    PathRng(std::uint64_t seed, std::uint64_t path);
    // Further independent streams belonging to the same path (stream 0 is
    // the path's own stream).
    PathRng(std::uint64_t seed, std::uint64_t path, std::uint64_t stream);
    double normal() { return normal_(engine_); }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

// Running mean and variance (Welford); merge is associative.
struct Accumulator {
    std::int64_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double v);
    void merge(const Accumulator& o);
    double variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
    double std_error() const { return n > 0 ? std::sqrt(variance() / static_cast<double>(n)) : 0.0; }
};

struct Estimate {
    double mean = 0.0;
    double std_error = 0.0;
    std::int64_t n = 0;
};

Estimate summarize(const std::vector<double>& samples);

// One exact (or Euler, for custom kinds) step of a one-dimensional diffusion.
class Stepper {
public:
    Stepper(const model::DiffusionSpec& d, double dt);
    double step(double s, double normal) const;

private:
    const model::DiffusionSpec* d_;
    double dt_, drift_, vol_;
    bool gbm_;
};

}  // namespace freebound::mc
