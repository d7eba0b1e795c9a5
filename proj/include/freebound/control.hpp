#pragma once

#include <array>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "freebound/boundary.hpp"
#include "freebound/mc.hpp"
#include "freebound/value.hpp"

namespace freebound::control {

using boundary::Boundary;
using model::ProblemSpec;

struct SurfaceConfig {
    boundary::SolverConfig solver{};
    int z_per_decade = 12;       // geometric density of the dense part
    double z_min = 0.0;          // 0: a quarter of the smallest queried z
    double z_dense_max = 0.0;    // 0: 1e5 times the largest queried z (at least 1e5)
    int z_far_per_decade = 3;    // coarser nodes above the dense part, for path lookups
    double z_far_max = 0.0;      // 0: 1e11 times the largest queried z (at least 1e11)
    double tail_ratio = 10.0;    // spacing of the extension nodes
    double z_limit = 1e14;       // extension stops here
    double decay_tol = 1e-6;     // relative decay threshold of the q-integrand
    int decay_count = 3;         // consecutive nodes below the threshold
    double fd_step = 0.0;        // h for V_z; 0: 0.01 (1 + z)
};

double fd_step(const SurfaceConfig& cfg, double z);

// z* requested above the largest slice.
class CoverageError : public std::runtime_error {
public:
    CoverageError(const std::string& what, double x, double y, double z_top)
        : std::runtime_error(what), x_(x), y_(y), z_top_(z_top) {}
    double x() const { return x_; }
    double y() const { return y_; }
    double z_top() const { return z_top_; }

private:
    double x_, y_, z_top_;
};

// Slices y*(.;z_k) on an increasing z-grid with the pseudo-inverse lookup
// z*(x,y) = inf{z : y > y*(x;z)}, linear in z between slices and capped by
// zbar(x,y) where that is available.
class BoundarySurface {
public:
    BoundarySurface() = default;
    BoundarySurface(const ProblemSpec& spec, std::vector<Boundary> slices, const quadrature::QuadratureConfig& qc);

    const std::vector<double>& z_grid() const { return z_; }
    const std::vector<Boundary>& slices() const { return slices_; }
    const ProblemSpec& spec() const { return spec_; }
    const quadrature::QuadratureConfig& quadrature() const { return qc_; }

    double y_star(std::size_t k, double x) const { return curves_[k](x); }
    // y*(x;z) interpolated linearly in z between the bracketing slices.
    double y_star_at(double x, double z) const;
    double z_star(double x, double y) const;
    // Index k with z_k <= z < z_{k+1} (clamped to the grid).
    std::size_t bracket(double z) const;
    // v(x,y;z_k) - phi(x,z_k) on slice k.
    double excess(std::size_t k, double x, double y) const;
    // v(x,y;z_k) by the collocation form.
    double value(std::size_t k, double x, double y) const;
    // Index of the slice at z (exact match up to 1e-12 relative), or npos.
    std::size_t find(double z) const;

    // Appends slices above the current top; used by the decay monitor.
    void extend(std::vector<Boundary> more);

private:
    ProblemSpec spec_;
    quadrature::QuadratureConfig qc_;
    std::vector<double> z_;
    std::vector<Boundary> slices_;
    std::vector<boundary::BoundaryFunction> curves_;
    std::vector<std::shared_ptr<const boundary::GainEvaluator>> gains_;
};

// Dense geometric grid, a coarser continuation up to z_far_max, and z and
// z +/- h for every queried z.
std::vector<double> default_z_grid(const std::vector<double>& query_z, const SurfaceConfig& cfg);

// Solves every slice, warm-starting each one from the homothetic image of
// its lower neighbour. Throws boundary::NonConvergence naming the z value.
BoundarySurface build_surface(const ProblemSpec& spec, const std::vector<double>& z_grid, const SurfaceConfig& cfg);

// Adds slices at tail_ratio spacing until the q-integrand has decayed at
// every (x,y,z) in points, or z_limit is reached.
void extend_until_decayed(BoundarySurface& surface, const std::vector<std::array<double, 3>>& points,
                          const SurfaceConfig& cfg);

struct SurfaceCheck {
    std::vector<std::string> violations;
    bool ok() const { return violations.empty(); }
};

// Slice monotonicity, monotonicity of z*, z* <= zbar and finiteness on a
// sample grid.
SurfaceCheck check_surface(const BoundarySurface& s, const std::vector<double>& xs, const std::vector<double>& ys);

// zbar(x,y): root in z of c_z(x,z) + r y - mu2(y). NaN when not available.
double z_bar(const ProblemSpec& spec, double x, double y);

struct UReport {
    double Phi = 0.0;
    double integral = 0.0;  // int_z^{z_cut} (v - phi) dq
    double tail = 0.0;      // power-law estimate beyond z_cut
    double z_cut = 0.0;
    double U = 0.0;
    bool decayed = false;
};

// U(x,y,z) = Phi(x,z) - int_z^inf (v(x,y;q) - phi(x,q)) dq. Throws when the
// integrand has not decayed at the top slice.
UReport evaluate_U(const BoundarySurface& s, double x, double y, double z, const SurfaceConfig& cfg = {});

struct ControlPath {
    std::vector<double> times, x_path, y_path, nu, z_path;
};

// One path of the reflected control nu*_t = sup_{s<=t} [z*(X_s,Y_s) - z]^+.
ControlPath simulate_control(const ProblemSpec& spec, const BoundarySurface& s, double x, double y, double z,
                             const mc::MCConfig& cfg, std::uint64_t path = 0);

struct Policy {
    enum class Kind { Reflect, DoNothing, Jump };
    Kind kind = Kind::Reflect;
    double param = 0.0;  // Reflect: boundary scale shift delta; Jump: size K
    std::string name;

    static Policy optimal() { return {Kind::Reflect, 0.0, "optimal"}; }
    static Policy shifted(double delta);
    static Policy do_nothing() { return {Kind::DoNothing, 0.0, "do-nothing"}; }
    static Policy jump(double k);
};

struct JEstimate {
    std::string name;
    mc::Estimate est;
    bool exact = false;
};

// Splitting of paths on which e^{-rt/2} X_t / x climbs through the levels
// start * ratio^j. The running cost of such paths is of order e^{-rt} X_t^2
// and has a heavy right tail; each crossing replaces the path by `factor`
// independent continuations of weight 1/factor. Splitting depends on X only,
// so all policies still share their random numbers.
struct SplitConfig {
    bool enabled = true;
    double start = 4.0;
    double ratio = 1.2599210498948732;  // 2^{1/3}
    int factor = 2;
    int max_levels = 30;
};

// Control cost J for each policy on common random numbers. Fixed policies
// use closed-form Phi when available; simulated ones integrate the running
// cost along the path up to a horizon where the discount beats the growth of
// the second moments, plus the discounted purchases Y dnu. One sample per
// root path (the weighted sum over its split continuations).
std::vector<JEstimate> estimate_J(const ProblemSpec& spec, const BoundarySurface& s, double x, double y, double z,
                                  const std::vector<Policy>& policies, const mc::MCConfig& cfg,
                                  const SplitConfig& split = {});

std::vector<Policy> standard_alternatives();

struct Comparison {
    std::string name;
    double diff = 0.0;        // J_star - J_alt
    double pooled_se = 0.0;
    bool not_beaten = true;   // diff <= 3 pooled_se
};

struct ControlValueReport {
    double x = 0.0, y = 0.0, z = 0.0;
    double Phi = 0.0, phi = 0.0;
    UReport U;
    JEstimate J_star;
    std::vector<JEstimate> J_alternatives;
    std::vector<Comparison> comparisons;
    double h = 0.0;
    double Vz_fd = 0.0;
    double v_at_point = 0.0;
    bool u_matches_j = false;
    bool vz_matches_v = false;
    bool dominance_ok = false;
};

ControlValueReport verify_point(const ProblemSpec& spec, const BoundarySurface& s, double x, double y, double z,
                                const mc::MCConfig& cfg, const SurfaceConfig& scfg = {}, const SplitConfig& split = {});

std::vector<ControlValueReport> verify_theorem(const ProblemSpec& spec, const BoundarySurface& s,
                                               const std::vector<std::array<double, 3>>& points,
                                               const mc::MCConfig& cfg, const SurfaceConfig& scfg = {},
                                               const SplitConfig& split = {});

// First time nu* acts versus first time Y <= y*(X;z) on the same paths, as a
// two-sample Kolmogorov-Smirnov statistic over paths where either happens.
struct ActionTimeReport {
    double ks = 0.0;
    std::int64_t acted = 0, hit = 0;
};
ActionTimeReport first_action_vs_hit(const ProblemSpec& spec, const BoundarySurface& s, double x, double y, double z,
                                     const mc::MCConfig& cfg);

void write_surface_csv(const BoundarySurface& s, const std::vector<double>& xs, const std::vector<double>& ys,
                       const std::string& path);
void write_paths_csv(const std::vector<ControlPath>& paths, const std::string& path);
void write_report_csv(const std::vector<ControlValueReport>& reports, const std::string& path);

}  // namespace freebound::control
