#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace freebound::model {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Interval {
    double lower = 0.0;
    double upper = kInf;

    bool contains(double v) const { return v > lower && v < upper; }
    bool lower_finite() const { return lower > -kInf; }
    bool upper_finite() const { return upper < kInf; }
};

enum class DiffusionKind { GBM, Custom };

// Callbacks for a user-supplied diffusion. density/survival/pull are needed by
// the integral equation, drift/vol by the Euler scheme of the Monte Carlo code
// and by the Markov-chain oracle, quantile by the state-space quadrature.
struct CustomDiffusion {
    std::function<double(double)> drift;
    std::function<double(double)> vol;
    std::function<double(double t, double from, double to)> density;
    std::function<double(double t, double from, double a)> survival_above;
    // int_{lower}^{a} (r*eta - drift(eta)) p(t, from, eta) d eta
    std::function<double(double r, double t, double from, double a)> pull_below;
    std::function<double(double t, double from, double p)> quantile;
};

struct DiffusionSpec {
    DiffusionKind kind = DiffusionKind::GBM;
    std::vector<double> drift_params{0.0};
    std::vector<double> vol_params{0.2};
    Interval state{};
    CustomDiffusion custom{};

    static DiffusionSpec gbm(double mu, double sigma);

    double mu() const { return drift_params.at(0); }
    double sigma() const { return vol_params.at(0); }
    double drift(double s) const;
    double vol(double s) const;
};

enum class CostKind { SpreadPower, Custom };

// c(x,z) = K0 |x - z|^delta for the spread_power kind.
struct CostModel {
    CostKind kind = CostKind::SpreadPower;
    double k0 = 1.0;
    double delta = 2.0;
    double beta = 2.0;
    std::function<double(double x, double z)> custom_c;
    std::function<double(double x, double z)> custom_cz;

    static CostModel spread_power(double k0, double delta);
    // c(x,z) = k0 z: constant marginal cost, so stopping never pays when k0 > 0.
    static CostModel linear(double k0);

    double c(double x, double z) const;
    double cz(double x, double z) const;
};

struct ProblemSpec {
    DiffusionSpec x = DiffusionSpec::gbm(0.01, 0.20);
    DiffusionSpec y = DiffusionSpec::gbm(0.01, 0.15);
    CostModel cost = CostModel::spread_power(1.0, 2.0);
    double r = 0.10;

    static ProblemSpec benchmark() { return {}; }
    bool all_gbm() const { return x.kind == DiffusionKind::GBM && y.kind == DiffusionKind::GBM; }
};

enum class CheckStatus { Pass, Fail, Assumed };

struct Check {
    std::string name;
    CheckStatus status = CheckStatus::Pass;
    double quantity = 0.0;  // signed margin, negative when violated
    std::string detail;
};

struct ValidationReport {
    std::vector<Check> checks;
    bool all_pass() const;
    const Check* find(const std::string& name) const;
    std::string failures() const;
};

ValidationReport validate(const ProblemSpec& spec);

// Moment growth rate of E[X_t^q] = x^q e^{kappa t} for a GBM.
double gbm_moment_rate(const DiffusionSpec& d, double q);

double density(const DiffusionSpec& d, double t, double from, double to);
double survival_above(const DiffusionSpec& d, double t, double from, double a);
double discounted_pull_below(const DiffusionSpec& d, double r, double t, double from, double a);
// Complement of discounted_pull_below over the state interval, evaluated
// without subtraction for the GBM kind.
double discounted_pull_above(const DiffusionSpec& d, double r, double t, double from, double a);
double quantile(const DiffusionSpec& d, double t, double from, double p);

double norm_cdf(double x);
double norm_pdf(double x);
double norm_quantile(double p);

}  // namespace freebound::model
