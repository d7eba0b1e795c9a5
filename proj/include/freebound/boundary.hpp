#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "freebound/model.hpp"
#include "freebound/quadrature.hpp"

namespace freebound::boundary {

using model::ProblemSpec;

// F(x,y;z) = c_z(x,z) - mu2(y) + r y
double F(const ProblemSpec& spec, double x, double y, double z);

// Root in y of F(x,.;z) = 0, clamped to the closed state interval of Y.
double solve_threshold(const ProblemSpec& spec, double z, double x, double tol = 1e-10);

struct ThresholdCurve {
    std::shared_ptr<const ProblemSpec> spec;
    double z = 0.0;
    double theta_star = 0.0;  // sup of x with theta(x) at the lower end of I2
    double theta_sup = 0.0;   // inf of x with theta(x) at the upper end of I2

    double operator()(double x) const { return solve_threshold(*spec, z, x); }
};

ThresholdCurve make_threshold_curve(const ProblemSpec& spec, double z);

enum class Tri { False, True, Unknown };

struct RegionFlags {
    Tri continuation_nonempty = Tri::Unknown;
    Tri stopping_nonempty = Tri::Unknown;
};

RegionFlags check_regions_nonempty(const ProblemSpec& spec, double z, const quadrature::QuadratureConfig& qc = {});

struct EdgeResult {
    double x = 0.0;
    bool found = false;          // a sign change was located
    double g_at_start = 0.0;     // G just above theta_* (or theta^*)
    int iterations = 0;
};

// G(x) for the edge equations; level is the lower (or upper) end of I2.
double edge_function(const ProblemSpec& spec, double z, double x, double level, const quadrature::TimeQuadrature& tq,
                     const quadrature::SpaceQuadrature& sq);

EdgeResult edge_lower(const ProblemSpec& spec, double z, const ThresholdCurve& curve,
                      const quadrature::QuadratureConfig& qc = {}, double tol = 1e-10);
EdgeResult edge_upper(const ProblemSpec& spec, double z, const ThresholdCurve& curve,
                      const quadrature::QuadratureConfig& qc = {}, double tol = 1e-10);

struct SolverConfig {
    quadrature::QuadratureConfig quad{};
    int grid_points = 200;
    double grid_lower_factor = 0.9;  // grid starts at this multiple of x_*
    double grid_quantile = 1e-5;     // grid ends at the 1-q quantile of X_{t_max}
    double x_ref = 0.0;              // start point of that quantile; 0 means max(z, x_*)
    double tol_boundary = 1e-6;
    double tol_residual = 1e-5;
    double tol_bisection = 1e-10;
    int max_iters = 200;
    double init_scale = 1.0;         // initial iterate = init_scale * theta
    bool verbose = false;
};

enum class BoundaryFlag { Regular, StopEverywhere, NeverStop };

const char* to_string(BoundaryFlag f);

struct Boundary {
    double z = 0.0;
    std::vector<double> x_grid;
    std::vector<double> y_values;
    std::vector<double> theta;        // envelope on the grid
    std::vector<double> residuals;    // per-node residual profile
    double x_star = 0.0;
    double x_sup = model::kInf;
    double residual_sup = 0.0;
    int iterations = 0;
    bool converged = false;
    BoundaryFlag flag = BoundaryFlag::Regular;
    ThresholdCurve envelope;
};

class NonConvergence : public std::runtime_error {
public:
    NonConvergence(const std::string& what, Boundary last) : std::runtime_error(what), last_(std::move(last)) {}
    const Boundary& last() const { return last_; }

private:
    Boundary last_;
};

// Piecewise-linear (in log x) boundary through the grid values; y_lower at
// and below x_*, the envelope scaled to the outermost node beyond the grid.
class BoundaryFunction {
public:
    BoundaryFunction() = default;
    explicit BoundaryFunction(const Boundary& b);

    double operator()(double x) const;

    struct Location {
        double value = 0.0;
        int lo = -1;        // knot index of the left end, -1 when pinned
        double weight = 0;  // position between knot[lo] and knot[lo+1]
        double d_lo = 0.0, d_hi = 0.0;  // d value / d knot[lo], d knot[lo+1]
        int ratio_knot = -1;
        double ratio_slope = 0.0;  // d value / d knot[ratio_knot]
    };
    Location locate(double x, double log_x) const;

    // Knots correspond to the free grid nodes plus an optional pinned knot
    // at x_*; free_index maps a knot to its grid node (or -1).
    const std::vector<double>& log_knots() const { return log_knots_; }
    const std::vector<int>& free_index() const { return free_index_; }
    // Replaces the free knot values; v is indexed by grid node.
    void set_free_values(const std::vector<double>& v);

private:
    friend class FredholmSystem;
    ThresholdCurve envelope_;
    double y_lower_ = 0.0, y_upper_ = model::kInf;
    double x_star_ = 0.0, x_sup_ = model::kInf;
    bool log_scale_ = true;
    std::vector<double> knots_, log_knots_, values_, env_knots_;
    std::vector<int> free_index_;
    double theta_top_ = 0.0, theta_bottom_ = 0.0;
    BoundaryFlag flag_ = BoundaryFlag::Regular;
};

struct Discretization {
    quadrature::TimeQuadrature tq;
    quadrature::SpaceQuadrature sq;
};

Discretization make_discretization(const ProblemSpec& spec, const quadrature::QuadratureConfig& qc);

// U_b(x,y) = int e^{-rt} E[ (c_z(X_t) + r Y_t - mu2(Y_t)) 1{Y_t > b(X_t)} ] dt.
double gain_integral(const ProblemSpec& spec, double z, const std::function<double(double)>& candidate, double x,
                     double y, const Discretization& disc);

// Right-hand side of the boundary equation. Evaluated as -y + U_b(x,y),
// which equals the direct form term by term once y is written as the
// discounted integral of E[r Y_t - mu2(Y_t)].
double fredholm_rhs(const ProblemSpec& spec, double z, const std::function<double(double)>& candidate, double x,
                    double y, const Discretization& disc);

class FredholmSystem;

// U_b(x,y) for a fixed solved boundary using the precomputed fast kernels.
// Safe to call concurrently.
class GainEvaluator {
public:
    GainEvaluator(const ProblemSpec& spec, const Boundary& b, const quadrature::QuadratureConfig& qc = {});
    double operator()(double x, double y) const;
    // The same discounted integrand restricted to {Y <= b(X)}; equals
    // phi(x) + y - U_b(x,y) and is accurate far from the stopping set.
    double stop_integral(double x, double y) const;

private:
    std::shared_ptr<const FredholmSystem> sys_;
    BoundaryFlag flag_ = BoundaryFlag::Regular;
};

Boundary solve_boundary(const ProblemSpec& spec, double z, const SolverConfig& cfg = {});

// Solve starting from a caller-supplied iterate on the default grid for z.
Boundary solve_boundary_from(const ProblemSpec& spec, double z, const SolverConfig& cfg,
                             const std::function<double(double)>& initial);

// Residual profile of an arbitrary candidate on the grid of `reference`.
std::vector<double> residual_profile(const ProblemSpec& spec, const Boundary& reference,
                                     const std::vector<double>& candidate_values, const SolverConfig& cfg);

struct UniquenessReport {
    double distance = 0.0;
    bool within_tolerance = false;
    Boundary second;
};

UniquenessReport uniqueness_probe(const ProblemSpec& spec, double z, const Boundary& solved,
                                  const SolverConfig& cfg = {});

void write_boundary_csv(const Boundary& b, const std::string& path);

}  // namespace freebound::boundary
