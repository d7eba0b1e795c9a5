#include "freebound/model.hpp"

#include <gsl/gsl_cdf.h>

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace freebound::model {

namespace {

constexpr double kSqrt2 = 1.4142135623730951;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

void require_time(double t) {
    if (!(t > 0.0)) throw std::domain_error("transition time must be positive");
}

void require_custom(const std::function<double(double, double, double)>& f, const char* what) {
    if (!f) throw std::invalid_argument(std::string("custom diffusion has no ") + what + " callback");
}

// Standardized log-distance of the GBM marginal: P(S_t > a) = Phi(d).
double gbm_d(const DiffusionSpec& d, double t, double from, double a) {
    const double s = d.sigma();
    const double m = d.mu() - 0.5 * s * s;
    return (std::log(from / a) + m * t) / (s * std::sqrt(t));
}

}  // namespace

double norm_cdf(double x) { return 0.5 * std::erfc(-x / kSqrt2); }
double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }
double norm_quantile(double p) { return gsl_cdf_ugaussian_Pinv(p); }

DiffusionSpec DiffusionSpec::gbm(double mu, double sigma) {
    DiffusionSpec d;
    d.kind = DiffusionKind::GBM;
    d.drift_params = {mu};
    d.vol_params = {sigma};
    d.state = Interval{0.0, kInf};
    return d;
}

double DiffusionSpec::drift(double s) const {
    if (kind == DiffusionKind::GBM) return mu() * s;
    if (!custom.drift) throw std::invalid_argument("custom diffusion has no drift callback");
    return custom.drift(s);
}

double DiffusionSpec::vol(double s) const {
    if (kind == DiffusionKind::GBM) return sigma() * s;
    if (!custom.vol) throw std::invalid_argument("custom diffusion has no vol callback");
    return custom.vol(s);
}

CostModel CostModel::spread_power(double k0, double delta) {
    CostModel c;
    c.kind = CostKind::SpreadPower;
    c.k0 = k0;
    c.delta = delta;
    c.beta = delta;
    return c;
}

CostModel CostModel::linear(double k0) {
    CostModel c;
    c.kind = CostKind::Custom;
    c.k0 = k0;
    c.delta = 1.0;
    c.beta = 1.0;
    c.custom_c = [k0](double, double z) { return k0 * z; };
    c.custom_cz = [k0](double, double) { return k0; };
    return c;
}

double CostModel::c(double x, double z) const {
    if (kind == CostKind::Custom) return custom_c(x, z);
    return k0 * std::pow(std::abs(x - z), delta);
}

double CostModel::cz(double x, double z) const {
    if (kind == CostKind::Custom) return custom_cz(x, z);
    const double s = z - x;
    if (delta == 2.0) return 2.0 * k0 * s;
    return k0 * delta * std::copysign(std::pow(std::abs(s), delta - 1.0), s);
}

bool ValidationReport::all_pass() const {
    for (const auto& c : checks)
        if (c.status == CheckStatus::Fail) return false;
    return true;
}

const Check* ValidationReport::find(const std::string& name) const {
    for (const auto& c : checks)
        if (c.name == name) return &c;
    return nullptr;
}

std::string ValidationReport::failures() const {
    std::ostringstream os;
    for (const auto& c : checks) {
        if (c.status != CheckStatus::Fail) continue;
        if (os.tellp() > 0) os << "; ";
        os << c.name << " (" << c.detail << ")";
    }
    return os.str();
}

double gbm_moment_rate(const DiffusionSpec& d, double q) {
    return q * d.mu() + 0.5 * q * (q - 1.0) * d.sigma() * d.sigma();
}

namespace {

void add(ValidationReport& rep, std::string name, bool ok, double margin, std::string detail) {
    rep.checks.push_back({std::move(name), ok ? CheckStatus::Pass : CheckStatus::Fail, margin, std::move(detail)});
}

std::string fmt(const char* lhs, double a, const char* op, const char* rhs, double b) {
    std::ostringstream os;
    os << lhs << "=" << a << " " << op << " " << rhs << "=" << b;
    return os.str();
}

void check_diffusion(ValidationReport& rep, const DiffusionSpec& d, const std::string& tag) {
    if (d.kind == DiffusionKind::GBM) {
        add(rep, tag + ".nondegenerate", d.sigma() > 0.0, d.sigma(), fmt("sigma", d.sigma(), ">", "0", 0.0));
        const bool iv = d.state.lower == 0.0 && !d.state.upper_finite();
        add(rep, tag + ".state_interval", iv, iv ? 1.0 : -1.0, "GBM lives on (0, inf)");
        add(rep, tag + ".density", true, 1.0, "lognormal closed form");
        return;
    }
    // Sampled nondegeneracy on an interior grid.
    bool ok = static_cast<bool>(d.custom.vol);
    double worst = ok ? kInf : -1.0;
    if (ok) {
        const double lo = d.state.lower_finite() ? d.state.lower : -10.0;
        const double hi = d.state.upper_finite() ? d.state.upper : 10.0;
        for (int i = 1; i < 64; ++i) {
            const double s = lo + (hi - lo) * i / 64.0;
            const double v = d.custom.vol(s);
            worst = std::min(worst, v);
            if (!(v > 0.0)) ok = false;
        }
    }
    add(rep, tag + ".nondegenerate", ok, worst, "sampled volatility on 63 interior points");
    const bool has_density = static_cast<bool>(d.custom.density) && static_cast<bool>(d.custom.survival_above);
    add(rep, tag + ".density", has_density, has_density ? 1.0 : -1.0,
        has_density ? "callback supplied" : "density unavailable");
}

}  // namespace

ValidationReport validate(const ProblemSpec& spec) {
    ValidationReport rep;
    check_diffusion(rep, spec.x, "x");
    check_diffusion(rep, spec.y, "y");

    add(rep, "r.positive", spec.r > 0.0, spec.r, fmt("r", spec.r, ">", "0", 0.0));

    const auto& c = spec.cost;
    if (c.kind == CostKind::SpreadPower) {
        add(rep, "cost.k0", c.k0 >= 0.0, c.k0, fmt("K0", c.k0, ">=", "0", 0.0));
        add(rep, "cost.delta", c.delta > 1.0, c.delta - 1.0, fmt("delta", c.delta, ">", "1", 1.0));
        add(rep, "cost.cz_unbounded", c.k0 > 0.0 && c.delta > 1.0, c.k0, "c_z(x,z) -> inf as z -> inf");
    } else {
        // Sampled growth of c_z(1, z) over z = 1, 10, ..., 1e8.
        bool grows = true;
        double prev = c.cz(1.0, 1.0);
        const double first = prev;
        for (int k = 1; k <= 8; ++k) {
            const double v = c.cz(1.0, std::pow(10.0, k));
            if (!(v > prev)) grows = false;
            prev = v;
        }
        grows = grows && prev > first + 1.0;
        add(rep, "cost.cz_unbounded", grows, prev - first, "sampled c_z(1,z) for z up to 1e8");
    }
    {
        // Convexity in z and monotonicity of c_z in x, sampled on a 64-point grid.
        bool convex = true, mono = true;
        double worst_convex = 0.0, worst_mono = 0.0;
        const double tol = 1e-9;
        for (int i = 0; i < 64; ++i) {
            const double x = 0.05 + 4.0 * i / 63.0;
            for (int j = 1; j < 63; ++j) {
                const double z = 0.05 + 4.0 * j / 63.0, h = 4.0 / 63.0;
                const double d2 = c.c(x, z + h) - 2.0 * c.c(x, z) + c.c(x, z - h);
                worst_convex = std::min(worst_convex, d2);
                if (d2 < -tol) convex = false;
            }
            if (i > 0) {
                const double xp = 0.05 + 4.0 * (i - 1) / 63.0;
                for (int j = 0; j < 64; ++j) {
                    const double z = 0.05 + 4.0 * j / 63.0;
                    const double d1 = c.cz(x, z) - c.cz(xp, z);
                    worst_mono = std::max(worst_mono, d1);
                    if (d1 > tol) mono = false;
                }
            }
        }
        add(rep, "cost.convex_in_z", convex, worst_convex, "sampled second differences");
        add(rep, "cost.cz_nonincreasing_in_x", mono, -worst_mono, "sampled first differences");
    }

    if (spec.all_gbm()) {
        const double kappa = gbm_moment_rate(spec.x, c.beta);
        add(rep, "moment.x_beta", spec.r > kappa, spec.r - kappa, fmt("r", spec.r, ">", "kappa_{1,beta}", kappa));
        const double theta = spec.y.mu();
        add(rep, "moment.y_first", spec.r > theta, spec.r - theta, fmt("r", spec.r, ">", "theta_{1,1}", theta));
        add(rep, "y.supermartingale_class_d", spec.r > theta, spec.r - theta, "e^{-rt}Y_t for GBM with r > mu2");
        add(rep, "y.ry_minus_drift_increasing", spec.r > spec.y.mu(), spec.r - spec.y.mu(),
            fmt("r", spec.r, ">", "mu2", spec.y.mu()));
        add(rep, "y.drift_derivative_below_r", spec.r > spec.y.mu(), spec.r - spec.y.mu(),
            fmt("r", spec.r, ">", "mu2", spec.y.mu()));
    } else {
        // Sampled versions of the same conditions on the Y drift.
        bool inc = static_cast<bool>(spec.y.custom.drift);
        double worst = inc ? kInf : -1.0;
        if (inc) {
            const auto& st = spec.y.state;
            const double lo = st.lower_finite() ? st.lower : -10.0;
            const double hi = st.upper_finite() ? st.upper : 10.0;
            for (int i = 1; i < 63; ++i) {
                const double a = lo + (hi - lo) * i / 64.0, b = lo + (hi - lo) * (i + 1) / 64.0;
                const double slope = (spec.y.drift(b) - spec.y.drift(a)) / (b - a);
                worst = std::min(worst, spec.r - slope);
                if (!(spec.r - slope > 0.0)) inc = false;
            }
        }
        add(rep, "y.ry_minus_drift_increasing", inc, worst, "sampled drift slope below r");
        add(rep, "y.drift_derivative_below_r", inc, worst, "sampled drift slope below r");
        rep.checks.push_back({"moment.growth", CheckStatus::Assumed, 0.0, "not checkable for custom models"});
    }
    rep.checks.push_back({"density.product_integrability", CheckStatus::Assumed, 0.0,
                          "L^q integrability of density products is assumed"});
    return rep;
}

double density(const DiffusionSpec& d, double t, double from, double to) {
    require_time(t);
    if (d.kind == DiffusionKind::Custom) {
        require_custom(d.custom.density, "density");
        return d.custom.density(t, from, to);
    }
    if (!(to > 0.0)) return 0.0;
    const double s = d.sigma() * std::sqrt(t);
    const double z = (std::log(to / from) - (d.mu() - 0.5 * d.sigma() * d.sigma()) * t) / s;
    return norm_pdf(z) / (to * s);
}

double survival_above(const DiffusionSpec& d, double t, double from, double a) {
    require_time(t);
    if (a <= d.state.lower) return 1.0;
    if (a >= d.state.upper) return 0.0;
    if (d.kind == DiffusionKind::Custom) {
        require_custom(d.custom.survival_above, "survival_above");
        return d.custom.survival_above(t, from, a);
    }
    return norm_cdf(gbm_d(d, t, from, a));
}

double discounted_pull_below(const DiffusionSpec& d, double r, double t, double from, double a) {
    require_time(t);
    if (a <= d.state.lower) return 0.0;
    if (d.kind == DiffusionKind::Custom) {
        if (!d.custom.pull_below) throw std::invalid_argument("custom diffusion has no pull_below callback");
        return d.custom.pull_below(r, t, from, std::min(a, d.state.upper));
    }
    const double mean = from * std::exp(d.mu() * t);
    if (a >= d.state.upper) return (r - d.mu()) * mean;
    // E[S_t 1{S_t <= a}] = mean * Phi(-(d + sigma sqrt t))
    const double dd = gbm_d(d, t, from, a) + d.sigma() * std::sqrt(t);
    return (r - d.mu()) * mean * norm_cdf(-dd);
}

double discounted_pull_above(const DiffusionSpec& d, double r, double t, double from, double a) {
    require_time(t);
    if (d.kind == DiffusionKind::Custom) {
        const double total = discounted_pull_below(d, r, t, from, d.state.upper);
        return total - discounted_pull_below(d, r, t, from, a);
    }
    const double mean = from * std::exp(d.mu() * t);
    if (a <= d.state.lower) return (r - d.mu()) * mean;
    if (a >= d.state.upper) return 0.0;
    const double dd = gbm_d(d, t, from, a) + d.sigma() * std::sqrt(t);
    return (r - d.mu()) * mean * norm_cdf(dd);
}

double quantile(const DiffusionSpec& d, double t, double from, double p) {
    require_time(t);
    if (d.kind == DiffusionKind::Custom) {
        require_custom(d.custom.quantile, "quantile");
        return d.custom.quantile(t, from, p);
    }
    const double s = d.sigma();
    return from * std::exp((d.mu() - 0.5 * s * s) * t + s * std::sqrt(t) * norm_quantile(p));
}

}  // namespace freebound::model
