#pragma once

#include <string>
#include <vector>

#include "freebound/boundary.hpp"
#include "freebound/mc.hpp"

namespace freebound::value {

using boundary::Boundary;
using model::ProblemSpec;

// phi(x,z) = int e^{-rt} E[c_z(X_t,z)] dt. Closed form for a GBM state with
// quadratic spread cost, otherwise tabulated from quadrature.
class MarginalCost {
public:
    MarginalCost(const ProblemSpec& spec, double z, const quadrature::QuadratureConfig& qc = {});
    double operator()(double x) const;
    bool closed_form() const { return closed_; }

private:
    bool closed_ = false;
    double z_ = 0.0, a_ = 0.0, b_ = 0.0;
    std::vector<double> lx_, val_;
};

// True when phi and Phi have closed forms (GBM state, quadratic spread cost).
bool closed_form_costs(const ProblemSpec& spec);

// Phi(x,z) = int e^{-rt} E[c(X_t,z)] dt, same conventions.
double total_cost_phi(const ProblemSpec& spec, double x, double z, const quadrature::QuadratureConfig& qc = {});

enum class Method { Analytic, MonteCarlo };

struct StoppingValue {
    double x = 0.0, y = 0.0, z = 0.0;
    double v = 0.0;
    Method method = Method::Analytic;
    double std_error = 0.0;
};

// v(x,y;z) = -y + U_b(x,y) for the solved boundary b.
class ValueFunction {
public:
    ValueFunction(const ProblemSpec& spec, const Boundary& b, const quadrature::QuadratureConfig& qc = {});
    // Exactly -y on the stopping set.
    double operator()(double x, double y) const { return y <= bf_(x) ? -y : -y + gain_(x, y); }
    const Boundary& boundary() const { return b_; }

private:
    Boundary b_;
    boundary::BoundaryFunction bf_;
    boundary::GainEvaluator gain_;
};

StoppingValue value_analytic(const ProblemSpec& spec, const Boundary& b, double x, double y,
                             const quadrature::QuadratureConfig& qc = {});

// First-grid-time test for {Y <= b(X)} along simulated paths.
class BoundaryHit {
public:
    BoundaryHit(const ProblemSpec& spec, const Boundary& b, double dt, bool correction);
    bool operator()(double x, double y) const;
    const boundary::BoundaryFunction& curve() const { return bf_; }

private:
    const ProblemSpec* spec_;
    boundary::BoundaryFunction bf_;
    double shift_ = 0.0;      // 0.5826 sqrt(dt), or 0 without correction
    double max_slope_ = 0.0;  // largest knot-to-knot slope of b
};

struct StoppingRule {
    enum class Kind { Boundary, FixedTime };
    Kind kind = Kind::FixedTime;
    const Boundary* boundary = nullptr;
    double time = 0.0;  // FixedTime; infinity means never stop

    static StoppingRule hitting(const Boundary& b) { return {Kind::Boundary, &b, 0.0}; }
    static StoppingRule at(double t) { return {Kind::FixedTime, nullptr, t}; }
};

// Monte Carlo estimate of Psi_{x,y,z}(tau). Boundary rules use
// Psi = phi(x) - E[e^{-r tau}(phi(X_tau) + Y_tau)]; fixed times integrate the
// running cost along the path.
StoppingValue payoff_of_rule(const ProblemSpec& spec, const StoppingRule& rule, double x, double y, double z,
                             const mc::MCConfig& cfg, const quadrature::QuadratureConfig& qc = {});

struct IbpEntry {
    double t = 0.0;
    mc::Estimate lhs;          // E[e^{-rt} Y_t]
    mc::Estimate rhs;          // y + E[int_0^t e^{-rs}(mu2(Y_s) - r Y_s) ds]
    mc::Estimate discrepancy;  // paired lhs - rhs
    double analytic = 0.0;     // y e^{(mu2 - r)t} for GBM, NaN otherwise
};

struct IbpReport {
    std::vector<IbpEntry> entries;
    double max_abs_discrepancy = 0.0;
    bool within_three_se = true;
};

IbpReport ibp_identity_check(const ProblemSpec& spec, const std::vector<double>& t_values, double y,
                             const mc::MCConfig& cfg);

struct ProbeReport {
    double v0 = 0.0;
    std::vector<double> times;
    std::vector<mc::Estimate> m;          // unstopped S-process
    std::vector<mc::Estimate> m_stopped;  // frozen at the hitting time
    std::vector<std::string> violations;
    bool supermartingale_ok = true;
    bool martingale_ok = true;
};

ProbeReport supermartingale_probe(const ProblemSpec& spec, const ValueFunction& v, double x, double y, double z,
                                  const std::vector<double>& times, const mc::MCConfig& cfg);

struct SmoothFitReport {
    double x = 0.0;       // grid node actually used
    double y_star = 0.0;
    std::vector<double> eps;
    std::vector<double> slopes;
    std::vector<bool> reliable;
    double extrapolated = 0.0;
    bool ok = false;  // at least two reliable slopes
};

// Forward differences of v in y from the boundary point at the grid node
// nearest x, extrapolated linearly to eps -> 0.
SmoothFitReport smooth_fit_probe(const ProblemSpec& spec, const ValueFunction& v, double x,
                                 const std::vector<double>& eps_list);

}  // namespace freebound::value
