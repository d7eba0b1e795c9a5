#include "freebound/value.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "freebound/parallel.hpp"

namespace freebound::value {

using model::DiffusionKind;
using model::kInf;

namespace {

bool quadratic_gbm(const ProblemSpec& spec) {
    return spec.x.kind == DiffusionKind::GBM && spec.cost.kind == model::CostKind::SpreadPower &&
           spec.cost.delta == 2.0;
}

double quad_phi(const ProblemSpec& spec, double z, double x, const boundary::Discretization& d) {
    double acc = 0.0;
    for (std::size_t m = 0; m < d.tq.dnodes.size(); ++m)
        acc += d.tq.dweights[m] * quadrature::weighted_space_integral(
                                      spec.x, d.tq.dnodes[m], x, [&](double xi) { return spec.cost.cz(xi, z); }, d.sq);
    return acc;
}

}  // namespace

bool closed_form_costs(const ProblemSpec& spec) { return quadratic_gbm(spec); }

MarginalCost::MarginalCost(const ProblemSpec& spec, double z, const quadrature::QuadratureConfig& qc) : z_(z) {
    if (quadratic_gbm(spec)) {
        closed_ = true;
        a_ = 2.0 * spec.cost.k0 * z / spec.r;
        b_ = 2.0 * spec.cost.k0 / (spec.r - spec.x.mu());
        return;
    }
    const auto d = boundary::make_discretization(spec, qc);
    const double c = std::max(1.0, z);
    const int n = 400;
    for (int i = 0; i < n; ++i) {
        const double lx = std::log(1e-3 * c) + std::log(1e7) * i / (n - 1);
        lx_.push_back(lx);
        val_.push_back(quad_phi(spec, z, std::exp(lx), d));
    }
}

double MarginalCost::operator()(double x) const {
    if (closed_) return a_ - b_ * x;
    const double lx = std::log(x);
    std::size_t j = static_cast<std::size_t>(std::upper_bound(lx_.begin(), lx_.end(), lx) - lx_.begin());
    j = std::clamp<std::size_t>(j, 1, lx_.size() - 1);
    const double w = (lx - lx_[j - 1]) / (lx_[j] - lx_[j - 1]);
    return (1.0 - w) * val_[j - 1] + w * val_[j];
}

double total_cost_phi(const ProblemSpec& spec, double x, double z, const quadrature::QuadratureConfig& qc) {
    if (quadratic_gbm(spec)) {
        const double mu = spec.x.mu(), k2 = model::gbm_moment_rate(spec.x, 2.0);
        return spec.cost.k0 * (x * x / (spec.r - k2) - 2.0 * z * x / (spec.r - mu) + z * z / spec.r);
    }
    const auto d = boundary::make_discretization(spec, qc);
    double acc = 0.0;
    for (std::size_t m = 0; m < d.tq.dnodes.size(); ++m)
        acc += d.tq.dweights[m] * quadrature::weighted_space_integral(
                                      spec.x, d.tq.dnodes[m], x, [&](double xi) { return spec.cost.c(xi, z); }, d.sq);
    return acc;
}

ValueFunction::ValueFunction(const ProblemSpec& spec, const Boundary& b, const quadrature::QuadratureConfig& qc)
    : b_(b), bf_(b), gain_(spec, b, qc) {}

StoppingValue value_analytic(const ProblemSpec& spec, const Boundary& b, double x, double y,
                             const quadrature::QuadratureConfig& qc) {
    const ValueFunction v(spec, b, qc);
    return {x, y, b.z, v(x, y), Method::Analytic, 0.0};
}

BoundaryHit::BoundaryHit(const ProblemSpec& spec, const Boundary& b, double dt, bool correction)
    : spec_(&spec), bf_(b), shift_(correction ? 0.5826 * std::sqrt(dt) : 0.0) {
    for (std::size_t i = 1; i < b.x_grid.size(); ++i)
        max_slope_ = std::max(max_slope_, (b.y_values[i] - b.y_values[i - 1]) / (b.x_grid[i] - b.x_grid[i - 1]));
    for (std::size_t i = 0; i < b.x_grid.size(); ++i)
        if (b.x_grid[i] > b.x_star && std::isfinite(b.y_values[i])) {
            max_slope_ = std::max(max_slope_, (b.y_values[i] - spec.y.state.lower) / (b.x_grid[i] - b.x_star));
            break;
        }
}

bool BoundaryHit::operator()(double x, double y) const {
    const double b = bf_(x);
    if (y <= b) return true;
    if (shift_ == 0.0 || !std::isfinite(b)) return false;
    // Distance Y - b(X) is compared with its local volatility.
    const double vy = spec_->y.vol(y), vx = spec_->x.vol(x);
    const double gap = y - b;
    if (gap > shift_ * (vy + max_slope_ * vx)) return false;
    const double h = 1e-4 * std::max(std::abs(x), 1e-8);
    const double slope = (bf_(x + h) - bf_(x - h)) / (2.0 * h);
    return gap <= shift_ * std::hypot(vy, slope * vx);
}

namespace {

struct Grid {
    int steps = 0;
    double dt = 0.0;
};

Grid grid_for(double T, double dt) {
    Grid g;
    g.steps = std::max(1, static_cast<int>(std::ceil(T / dt - 1e-9)));
    g.dt = T / g.steps;
    return g;
}

std::vector<double> run_paths(std::int64_t n, const std::function<double(std::int64_t)>& path) {
    std::vector<double> out(static_cast<std::size_t>(n));
    parallel_for(out.size(), [&](std::size_t i) { out[i] = path(static_cast<std::int64_t>(i)); });
    return out;
}

}  // namespace

StoppingValue payoff_of_rule(const ProblemSpec& spec, const StoppingRule& rule, double x, double y, double z,
                             const mc::MCConfig& cfg, const quadrature::QuadratureConfig& qc) {
    if (cfg.paths < 2) throw std::invalid_argument("at least two Monte Carlo paths are required");
    StoppingValue out{x, y, z, 0.0, Method::MonteCarlo, 0.0};
    const double r = spec.r;

    if (rule.kind == StoppingRule::Kind::Boundary) {
        const boundary::BoundaryFunction bf(*rule.boundary);
        if (y <= bf(x)) {
            out.v = -y;
            return out;
        }
        const MarginalCost phi(spec, z, qc);
        const double phi0 = phi(x);
        const Grid g = grid_for(mc::effective_horizon(spec, cfg), cfg.dt);
        const mc::Stepper sx(spec.x, g.dt), sy(spec.y, g.dt);
        const BoundaryHit hit(spec, *rule.boundary, g.dt, cfg.continuity_correction);
        const auto samples = run_paths(cfg.paths, [&](std::int64_t p) {
            mc::PathRng rng(cfg.seed, static_cast<std::uint64_t>(p));
            double X = x, Y = y;
            for (int k = 1; k <= g.steps; ++k) {
                X = sx.step(X, rng.normal());
                Y = sy.step(Y, rng.normal());
                if (hit(X, Y)) return phi0 - std::exp(-r * k * g.dt) * (phi(X) + Y);
            }
            return phi0;
        });
        const auto est = mc::summarize(samples);
        out.v = est.mean;
        out.std_error = est.std_error;
        return out;
    }

    if (rule.time <= 0.0) {
        out.v = -y;
        return out;
    }
    const bool never = !std::isfinite(rule.time);
    const double T = never ? mc::effective_horizon(spec, cfg) : rule.time;
    const Grid g = grid_for(T, cfg.dt);
    const mc::Stepper sx(spec.x, g.dt), sy(spec.y, g.dt);
    const MarginalCost phi(spec, z, qc);
    const auto samples = run_paths(cfg.paths, [&](std::int64_t p) {
        mc::PathRng rng(cfg.seed, static_cast<std::uint64_t>(p));
        double X = x, Y = y;
        double prev = spec.cost.cz(X, z), acc = 0.0;
        for (int k = 1; k <= g.steps; ++k) {
            X = sx.step(X, rng.normal());
            Y = sy.step(Y, rng.normal());
            const double cur = std::exp(-r * k * g.dt) * spec.cost.cz(X, z);
            acc += 0.5 * g.dt * (prev + cur);
            prev = cur;
        }
        const double disc = std::exp(-r * T);
        return never ? acc + disc * phi(X) : acc - disc * Y;
    });
    const auto est = mc::summarize(samples);
    out.v = est.mean;
    out.std_error = est.std_error;
    return out;
}

namespace {

// Step counts per segment between sorted checkpoints.
std::vector<Grid> segments(const std::vector<double>& times, double dt) {
    std::vector<Grid> segs;
    double prev = 0.0;
    for (double t : times) {
        const double len = t - prev;
        segs.push_back(len > 0.0 ? grid_for(len, dt) : Grid{0, 0.0});
        prev = t;
    }
    return segs;
}

}  // namespace

IbpReport ibp_identity_check(const ProblemSpec& spec, const std::vector<double>& t_values, double y,
                             const mc::MCConfig& cfg) {
    std::vector<double> times = t_values;
    std::sort(times.begin(), times.end());
    const auto segs = segments(times, cfg.dt);
    const double r = spec.r;
    const std::size_t nt = times.size();
    std::vector<double> lhs(static_cast<std::size_t>(cfg.paths) * nt), rhs(lhs.size());
    parallel_for(static_cast<std::size_t>(cfg.paths), [&](std::size_t p) {
        mc::PathRng rng(cfg.seed, p);
        double Y = y, t = 0.0, integral = 0.0;
        double prev = spec.y.drift(Y) - r * Y;
        for (std::size_t j = 0; j < nt; ++j) {
            const auto& sg = segs[j];
            const mc::Stepper sy(spec.y, sg.dt > 0.0 ? sg.dt : 1.0);
            for (int k = 0; k < sg.steps; ++k) {
                Y = sy.step(Y, rng.normal());
                t += sg.dt;
                const double cur = std::exp(-r * t) * (spec.y.drift(Y) - r * Y);
                integral += 0.5 * sg.dt * (prev + cur);
                prev = cur;
            }
            lhs[p * nt + j] = std::exp(-r * t) * Y;
            rhs[p * nt + j] = y + integral;
        }
    });
    IbpReport rep;
    for (std::size_t j = 0; j < nt; ++j) {
        mc::Accumulator a, b, d;
        for (std::int64_t p = 0; p < cfg.paths; ++p) {
            const auto i = static_cast<std::size_t>(p) * nt + j;
            a.add(lhs[i]);
            b.add(rhs[i]);
            d.add(lhs[i] - rhs[i]);
        }
        IbpEntry e;
        e.t = times[j];
        e.lhs = {a.mean, a.std_error(), a.n};
        e.rhs = {b.mean, b.std_error(), b.n};
        e.discrepancy = {d.mean, d.std_error(), d.n};
        e.analytic = spec.y.kind == DiffusionKind::GBM ? y * std::exp((spec.y.mu() - r) * times[j])
                                                       : std::numeric_limits<double>::quiet_NaN();
        rep.max_abs_discrepancy = std::max(rep.max_abs_discrepancy, std::abs(d.mean));
        if (std::abs(d.mean) > 3.0 * d.std_error() + 1e-12) rep.within_three_se = false;
        rep.entries.push_back(e);
    }
    return rep;
}

ProbeReport supermartingale_probe(const ProblemSpec& spec, const ValueFunction& v, double x, double y, double z,
                                  const std::vector<double>& times_in, const mc::MCConfig& cfg) {
    ProbeReport rep;
    rep.times = times_in;
    std::sort(rep.times.begin(), rep.times.end());
    rep.v0 = v(x, y);
    const auto segs = segments(rep.times, cfg.dt);
    const BoundaryHit hit(spec, v.boundary(), cfg.dt, cfg.continuity_correction);
    const double r = spec.r;
    const std::size_t nt = rep.times.size();
    const auto np = static_cast<std::size_t>(cfg.paths);
    std::vector<double> m(np * nt), ms(np * nt);
    parallel_for(np, [&](std::size_t p) {
        mc::PathRng rng(cfg.seed, p);
        double X = x, Y = y, t = 0.0, integral = 0.0;
        double prev = spec.cost.cz(X, z);
        bool stopped = hit.curve()(X) >= Y;
        double frozen = stopped ? rep.v0 : 0.0;
        for (std::size_t j = 0; j < nt; ++j) {
            const auto& sg = segs[j];
            const mc::Stepper sx(spec.x, sg.dt > 0.0 ? sg.dt : 1.0), sy(spec.y, sg.dt > 0.0 ? sg.dt : 1.0);
            for (int k = 0; k < sg.steps; ++k) {
                X = sx.step(X, rng.normal());
                Y = sy.step(Y, rng.normal());
                t += sg.dt;
                const double cur = std::exp(-r * t) * spec.cost.cz(X, z);
                integral += 0.5 * sg.dt * (prev + cur);
                prev = cur;
                if (!stopped && hit(X, Y)) {
                    stopped = true;
                    frozen = std::exp(-r * t) * v(X, Y) + integral;
                }
            }
            const double now = (t == 0.0 ? rep.v0 : std::exp(-r * t) * v(X, Y)) + integral;
            m[p * nt + j] = now;
            ms[p * nt + j] = stopped ? frozen : now;
        }
    });
    const auto column = [&](const std::vector<double>& src, std::size_t j) {
        mc::Accumulator a;
        for (std::size_t p = 0; p < np; ++p) a.add(src[p * nt + j]);
        return a;
    };
    for (std::size_t j = 0; j < nt; ++j) {
        const auto a = column(m, j), b = column(ms, j);
        rep.m.push_back({a.mean, a.std_error(), a.n});
        rep.m_stopped.push_back({b.mean, b.std_error(), b.n});
        if (std::abs(b.mean - rep.v0) > 3.0 * b.std_error() + 1e-9 * (1.0 + std::abs(rep.v0))) rep.martingale_ok = false;
    }
    for (std::size_t i = 0; i < nt; ++i)
        for (std::size_t j = i + 1; j < nt; ++j) {
            mc::Accumulator d;
            for (std::size_t p = 0; p < np; ++p) d.add(m[p * nt + j] - m[p * nt + i]);
            if (d.mean > 3.0 * d.std_error() + 1e-12) {
                std::ostringstream os;
                os << "m(" << rep.times[j] << ") exceeds m(" << rep.times[i] << ") by " << d.mean << " (se "
                   << d.std_error() << ")";
                rep.violations.push_back(os.str());
            }
        }
    rep.supermartingale_ok = rep.violations.empty();
    return rep;
}

SmoothFitReport smooth_fit_probe(const ProblemSpec& spec, const ValueFunction& v, double x,
                                 const std::vector<double>& eps_list) {
    const Boundary& b = v.boundary();
    SmoothFitReport rep;
    // Nearest grid node with an interior boundary value.
    std::size_t best = b.x_grid.size();
    for (std::size_t i = 0; i < b.x_grid.size(); ++i) {
        if (!(b.y_values[i] > spec.y.state.lower) || !(b.y_values[i] < spec.y.state.upper)) continue;
        if (best == b.x_grid.size() || std::abs(std::log(b.x_grid[i] / x)) < std::abs(std::log(b.x_grid[best] / x)))
            best = i;
    }
    if (best == b.x_grid.size()) return rep;
    rep.x = b.x_grid[best];
    rep.y_star = b.y_values[best];
    const double v0 = v(rep.x, rep.y_star);
    // Distance of the boundary value from -y* bounds the quadrature noise.
    const double noise = std::max(std::abs(v0 + rep.y_star), 1e-12 * (1.0 + rep.y_star));
    std::vector<std::pair<double, double>> good;
    for (double e : eps_list) {
        const double s = (v(rep.x, rep.y_star + e) - v0) / e;
        const bool ok = 2.0 * noise / e < 1e-3;
        rep.eps.push_back(e);
        rep.slopes.push_back(s);
        rep.reliable.push_back(ok);
        if (ok) good.emplace_back(e, s);
    }
    std::sort(good.begin(), good.end());
    if (good.size() >= 2) {
        const auto [e1, s1] = good[0];
        const auto [e2, s2] = good[1];
        rep.extrapolated = s1 - e1 * (s2 - s1) / (e2 - e1);
        rep.ok = true;
    } else if (good.size() == 1) {
        rep.extrapolated = good[0].second;
    }
    return rep;
}

}  // namespace freebound::value
