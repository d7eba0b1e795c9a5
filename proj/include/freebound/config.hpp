#pragma once

#include <stdexcept>
#include <string>

#include "freebound/boundary.hpp"
#include "freebound/control.hpp"
#include "freebound/mc.hpp"
#include "freebound/model.hpp"
#include "freebound/oracle.hpp"

namespace freebound::config {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ControlMC {
    std::int64_t paths = 20000;
    double dt = 0.04;
    control::SplitConfig split{};
};

struct RunConfig {
    model::ProblemSpec problem = model::ProblemSpec::benchmark();
    boundary::SolverConfig solver{};  // solver.quad is the quadrature section
    control::SurfaceConfig surface{};
    mc::MCConfig mc{};
    ControlMC control{};
    oracle::LatticeConfig oracle{};
    int oracle_z_nodes = 20;
    std::string output = "out";

    // MC settings for the control commands: seed and horizon from mc.
    mc::MCConfig control_mc() const;
    // Surface settings with the solver section applied.
    control::SurfaceConfig surface_config() const;
};

// Every section and key is optional; unknown keys are rejected.
//
// {
//   "problem":    {"x": {"kind": "gbm", "mu": 0.01, "sigma": 0.2}, "y": {...}, "r": 0.1,
//                  "cost": {"kind": "spread_power" | "linear", "k0": 1, "delta": 2}},
//   "quadrature": {"time_nodes", "space_nodes", "t_min", "discount_tail", "tail_prob"},
//   "solver":     {"grid_points", "grid_lower_factor", "grid_quantile", "x_ref", "tol_boundary",
//                  "tol_residual", "tol_bisection", "max_iters", "init_scale"},
//   "surface":    {"z_per_decade", "z_min", "z_dense_max", "z_far_per_decade", "z_far_max",
//                  "tail_ratio", "z_limit", "decay_tol", "decay_count", "fd_step"},
//   "mc":         {"paths", "dt", "horizon", "seed", "continuity_correction"},
//   "control":    {"paths", "dt", "split": {"enabled", "start", "ratio", "factor", "max_levels"}},
//   "oracle":     {"x_nodes", "y_nodes", "dt", "quantile", "horizon", "x_center", "y_center",
//                  "tol", "max_sweeps", "z_nodes"},
//   "output":     "out"
// }
RunConfig parse(const std::string& json_text);
RunConfig load(const std::string& path);
// Canonical JSON of the full configuration, defaults included.
std::string dump(const RunConfig& cfg);

}  // namespace freebound::config
