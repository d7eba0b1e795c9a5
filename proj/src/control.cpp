#include "freebound/control.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_interp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "freebound/parallel.hpp"

namespace freebound::control {

using model::kInf;

double fd_step(const SurfaceConfig& cfg, double z) { return cfg.fd_step > 0.0 ? cfg.fd_step : 0.01 * (1.0 + z); }

// ---------------------------------------------------------------------------
// Surface

BoundarySurface::BoundarySurface(const ProblemSpec& spec, std::vector<Boundary> slices,
                                 const quadrature::QuadratureConfig& qc)
    : spec_(spec), qc_(qc) {
    extend(std::move(slices));
}

void BoundarySurface::extend(std::vector<Boundary> more) {
    for (auto& b : more) {
        if (!z_.empty() && !(b.z > z_.back())) throw std::invalid_argument("surface slices must increase in z");
        z_.push_back(b.z);
        curves_.emplace_back(b);
        gains_.push_back(std::make_shared<const boundary::GainEvaluator>(spec_, b, qc_));
        slices_.push_back(std::move(b));
    }
}

std::size_t BoundarySurface::bracket(double z) const {
    if (z <= z_.front()) return 0;
    const auto it = std::upper_bound(z_.begin(), z_.end(), z);
    return static_cast<std::size_t>(it - z_.begin()) - 1;
}

std::size_t BoundarySurface::find(double z) const {
    for (std::size_t k = 0; k < z_.size(); ++k)
        if (std::abs(z_[k] - z) <= 1e-12 * std::max(1.0, std::abs(z))) return k;
    return static_cast<std::size_t>(-1);
}

double BoundarySurface::y_star_at(double x, double z) const {
    const std::size_t k = bracket(z);
    if (z <= z_.front()) return curves_.front()(x);
    if (k + 1 >= z_.size()) {
        if (z == z_.back()) return curves_.back()(x);
        std::ostringstream os;
        os << "z=" << z << " lies above the surface (top slice z=" << z_.back() << ")";
        throw CoverageError(os.str(), x, kInf, z_.back());
    }
    const double b0 = curves_[k](x), b1 = curves_[k + 1](x);
    const double w = (z - z_[k]) / (z_[k + 1] - z_[k]);
    return b0 + w * (b1 - b0);
}

double BoundarySurface::z_star(double x, double y) const {
    const std::size_t n = z_.size();
    const double zb = z_bar(spec_, x, y);
    // Below the grid only the bound z* <= min(z_0, zbar) is known.
    if (y > curves_[0](x)) return std::isfinite(zb) ? std::min(z_[0], zb) : z_[0];
    if (y <= curves_[n - 1](x)) {
        std::ostringstream os;
        os << "z*(" << x << "," << y << ") exceeds the top slice z=" << z_[n - 1];
        throw CoverageError(os.str(), x, y, z_[n - 1]);
    }
    std::size_t lo = 0, hi = n - 1;  // y <= b_lo(x), y > b_hi(x)
    while (hi - lo > 1) {
        const std::size_t mid = (lo + hi) / 2;
        if (y <= curves_[mid](x)) lo = mid;
        else hi = mid;
    }
    const double b0 = curves_[lo](x), b1 = curves_[hi](x);
    double zs = z_[lo];
    if (std::isfinite(b0) && b0 > b1) zs += (z_[hi] - z_[lo]) * (b0 - y) / (b0 - b1);
    if (std::isfinite(zb)) zs = std::min(zs, std::max(zb, z_[lo]));
    return zs;
}

double BoundarySurface::excess(std::size_t k, double x, double y) const { return -gains_[k]->stop_integral(x, y); }

double BoundarySurface::value(std::size_t k, double x, double y) const {
    return y <= curves_[k](x) ? -y : -y + (*gains_[k])(x, y);
}

std::vector<double> default_z_grid(const std::vector<double>& query_z, const SurfaceConfig& cfg) {
    if (query_z.empty()) throw std::invalid_argument("no z values to cover");
    const double qmin = *std::min_element(query_z.begin(), query_z.end());
    const double qmax = *std::max_element(query_z.begin(), query_z.end());
    double lo = cfg.z_min > 0.0 ? cfg.z_min : 0.25 * qmin;
    if (!(lo > 0.0)) lo = 1e-3;
    for (double z : query_z) lo = std::min(lo, 0.5 * (z - fd_step(cfg, z)));
    lo = std::max(lo, 1e-6);
    const double hi = cfg.z_dense_max > 0.0 ? cfg.z_dense_max : 1e5 * std::max(qmax, 1.0);
    std::vector<double> g;
    const int n = std::max(2, static_cast<int>(std::ceil(std::log10(hi / lo) * std::max(cfg.z_per_decade, 1))) + 1);
    for (int i = 0; i < n; ++i) g.push_back(lo * std::exp(std::log(hi / lo) * i / (n - 1)));
    const double far = cfg.z_far_max > 0.0 ? cfg.z_far_max : 1e11 * std::max(qmax, 1.0);
    if (far > hi && cfg.z_far_per_decade > 0) {
        const int m = static_cast<int>(std::ceil(std::log10(far / hi) * cfg.z_far_per_decade));
        for (int i = 1; i <= m; ++i) g.push_back(hi * std::exp(std::log(far / hi) * i / m));
    }
    for (double z : query_z) {
        const double h = fd_step(cfg, z);
        for (double v : {z - h, z, z + h})
            if (v > 0.0) g.push_back(v);
    }
    std::sort(g.begin(), g.end());
    std::vector<double> out;
    for (double v : g)
        if (out.empty() || v > out.back() * (1.0 + 1e-9)) out.push_back(v);
        else if (std::find(query_z.begin(), query_z.end(), v) != query_z.end()) out.back() = v;
    return out;
}

namespace {

boundary::SolverConfig slice_config(const SurfaceConfig& cfg, double z) {
    auto sc = cfg.solver;
    // Residuals and boundary values scale with z.
    const double scale = std::max(1.0, z);
    sc.tol_residual *= scale;
    sc.tol_boundary *= scale;
    return sc;
}

bool homothetic_states(const ProblemSpec& spec) { return spec.x.state.lower >= 0.0 && spec.y.state.lower >= 0.0; }

Boundary solve_slice(const ProblemSpec& spec, double z, const SurfaceConfig& cfg, const Boundary* below) {
    const auto sc = slice_config(cfg, z);
    if (below && below->flag == boundary::BoundaryFlag::Regular && below->z > 0.0) {
        const boundary::BoundaryFunction prev(*below);
        const double ratio = homothetic_states(spec) ? z / below->z : 1.0;
        try {
            return boundary::solve_boundary_from(spec, z, sc, [&](double x) { return ratio * prev(x / ratio); });
        } catch (const boundary::NonConvergence&) {
            // fall through to a cold start
        }
    }
    return boundary::solve_boundary(spec, z, sc);
}

}  // namespace

BoundarySurface build_surface(const ProblemSpec& spec, const std::vector<double>& z_grid, const SurfaceConfig& cfg) {
    if (z_grid.empty()) throw std::invalid_argument("empty z grid");
    for (std::size_t k = 1; k < z_grid.size(); ++k)
        if (!(z_grid[k] > z_grid[k - 1])) throw std::invalid_argument("z grid must be strictly increasing");
    std::vector<Boundary> slices;
    for (double z : z_grid) slices.push_back(solve_slice(spec, z, cfg, slices.empty() ? nullptr : &slices.back()));
    return BoundarySurface(spec, std::move(slices), cfg.solver.quad);
}

namespace {

struct Integrand {
    std::vector<double> s, h;  // log q and q * (v - phi)
};

Integrand integrand(const BoundarySurface& surf, double x, double y) {
    Integrand f;
    const auto& zg = surf.z_grid();
    f.s.resize(zg.size());
    f.h.resize(zg.size());
    parallel_for(zg.size(), [&](std::size_t k) {
        f.s[k] = std::log(zg[k]);
        f.h[k] = zg[k] * surf.excess(k, x, y);
    });
    return f;
}

// First slice index at which the integrand has stayed below the threshold for
// cfg.decay_count consecutive nodes at or above z; npos when never.
std::size_t cut_index(const BoundarySurface& surf, const Integrand& f, double x, double z, const SurfaceConfig& cfg) {
    const auto& zg = surf.z_grid();
    double scale = std::abs(value::total_cost_phi(surf.spec(), x, z, surf.quadrature()));
    for (std::size_t k = 0; k < zg.size(); ++k)
        if (zg[k] >= z) scale = std::max(scale, std::abs(f.h[k]));
    int run = 0;
    for (std::size_t k = 0; k < zg.size(); ++k) {
        if (zg[k] < z * (1.0 - 1e-12)) continue;
        run = std::abs(f.h[k]) < cfg.decay_tol * scale ? run + 1 : 0;
        if (run >= cfg.decay_count) return k;
    }
    return static_cast<std::size_t>(-1);
}

}  // namespace

void extend_until_decayed(BoundarySurface& surface, const std::vector<std::array<double, 3>>& points,
                          const SurfaceConfig& cfg) {
    for (;;) {
        bool all = true;
        for (const auto& p : points) {
            const auto f = integrand(surface, p[0], p[1]);
            if (cut_index(surface, f, p[0], p[2], cfg) == static_cast<std::size_t>(-1)) {
                all = false;
                break;
            }
        }
        const double top = surface.z_grid().back();
        if (all || top >= cfg.z_limit) return;
        const double z = top * cfg.tail_ratio;
        std::vector<Boundary> more;
        more.push_back(solve_slice(surface.spec(), z, cfg, &surface.slices().back()));
        surface.extend(std::move(more));
    }
}

UReport evaluate_U(const BoundarySurface& surf, double x, double y, double z, const SurfaceConfig& cfg) {
    const auto& zg = surf.z_grid();
    if (z < zg.front() * (1.0 - 1e-12)) {
        std::ostringstream os;
        os << "z=" << z << " lies below the surface (first slice z=" << zg.front() << ")";
        throw std::out_of_range(os.str());
    }
    UReport rep;
    rep.Phi = value::total_cost_phi(surf.spec(), x, z, surf.quadrature());
    const auto f = integrand(surf, x, y);
    const std::size_t j = cut_index(surf, f, x, z, cfg);
    if (j == static_cast<std::size_t>(-1)) {
        std::ostringstream os;
        os << "integrand v-phi at (" << x << "," << y << ") has not decayed by z_cut=" << zg.back()
           << "; extend the z grid";
        throw std::runtime_error(os.str());
    }
    rep.decayed = true;
    rep.z_cut = zg[j];
    const std::size_t n = j + 1;
    if (n >= 3) {
        gsl_interp* it = gsl_interp_alloc(gsl_interp_steffen, n);
        gsl_interp_accel* acc = gsl_interp_accel_alloc();
        gsl_interp_init(it, f.s.data(), f.h.data(), n);
        rep.integral = gsl_interp_eval_integ(it, f.s.data(), f.h.data(), std::log(z), f.s[j], acc);
        gsl_interp_accel_free(acc);
        gsl_interp_free(it);
    } else {
        for (std::size_t k = 1; k < n; ++k) {
            const double a = std::max(f.s[k - 1], std::log(z));
            if (f.s[k] > a) rep.integral += 0.5 * (f.h[k - 1] + f.h[k]) * (f.s[k] - a);
        }
    }
    // Power-law tail beyond z_cut from the last two nodes.
    if (j >= 1 && f.h[j] > 0.0 && f.h[j - 1] > 0.0) {
        const double slope = (std::log(f.h[j]) - std::log(f.h[j - 1])) / (f.s[j] - f.s[j - 1]);
        if (slope < 0.0) rep.tail = f.h[j] / -slope;
    }
    rep.U = rep.Phi - (rep.integral + rep.tail);
    return rep;
}

double z_bar(const ProblemSpec& spec, double x, double y) {
    const double m = spec.r * y - spec.y.drift(y);
    const auto& c = spec.cost;
    if (c.kind == model::CostKind::SpreadPower) {
        if (c.delta <= 1.0) return std::numeric_limits<double>::quiet_NaN();
        const double d = std::pow(std::abs(m) / (c.k0 * c.delta), 1.0 / (c.delta - 1.0));
        return m >= 0.0 ? x - d : x + d;
    }
    // c_z is nondecreasing in z; bracket the root and bisect.
    const auto g = [&](double z) { return c.cz(x, z) + m; };
    double lo = x - 1.0, hi = x + 1.0;
    for (int i = 0; i < 200 && g(lo) > 0.0; ++i) lo = x - 2.0 * (x - lo);
    for (int i = 0; i < 200 && g(hi) < 0.0; ++i) hi = x + 2.0 * (hi - x);
    if (g(lo) > 0.0 || g(hi) < 0.0) return std::numeric_limits<double>::quiet_NaN();
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (g(mid) < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

SurfaceCheck check_surface(const BoundarySurface& s, const std::vector<double>& xs, const std::vector<double>& ys) {
    SurfaceCheck out;
    const auto add = [&](const std::string& m) {
        if (out.violations.size() < 50) out.violations.push_back(m);
    };
    const auto& zg = s.z_grid();
    for (double x : xs)
        for (std::size_t k = 1; k < zg.size(); ++k) {
            const double a = s.y_star(k - 1, x), b = s.y_star(k, x);
            if (b > a + 1e-6 * (1.0 + std::abs(a))) {
                std::ostringstream os;
                os << "y*(" << x << ";" << zg[k] << ")=" << b << " exceeds y*(" << x << ";" << zg[k - 1] << ")=" << a;
                add(os.str());
            }
        }
    std::vector<double> zs(xs.size() * ys.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < xs.size(); ++i)
        for (std::size_t j = 0; j < ys.size(); ++j) {
            try {
                const double v = s.z_star(xs[i], ys[j]);
                zs[i * ys.size() + j] = v;
                if (!std::isfinite(v)) add("z* not finite at (" + std::to_string(xs[i]) + "," + std::to_string(ys[j]) + ")");
                const double zb = z_bar(s.spec(), xs[i], ys[j]);
                if (std::isfinite(zb) && v > zb + 1e-6 * (1.0 + std::abs(zb))) {
                    std::ostringstream os;
                    os << "z*(" << xs[i] << "," << ys[j] << ")=" << v << " exceeds zbar=" << zb;
                    add(os.str());
                }
            } catch (const CoverageError& e) {
                add(e.what());
            }
        }
    const auto tol = [](double a) { return 1e-9 * (1.0 + std::abs(a)); };
    for (std::size_t j = 0; j < ys.size(); ++j)
        for (std::size_t i = 1; i < xs.size(); ++i) {
            const double a = zs[(i - 1) * ys.size() + j], b = zs[i * ys.size() + j];
            if (b < a - tol(a)) {
                std::ostringstream os;
                os << "z* decreases in x at y=" << ys[j] << " between x=" << xs[i - 1] << " and x=" << xs[i];
                add(os.str());
            }
        }
    for (std::size_t i = 0; i < xs.size(); ++i)
        for (std::size_t j = 1; j < ys.size(); ++j) {
            const double a = zs[i * ys.size() + j - 1], b = zs[i * ys.size() + j];
            if (b > a + tol(a)) {
                std::ostringstream os;
                os << "z* increases in y at x=" << xs[i] << " between y=" << ys[j - 1] << " and y=" << ys[j];
                add(os.str());
            }
        }
    return out;
}

// ---------------------------------------------------------------------------
// Reflection

namespace {

// Reflects Z off the (possibly scaled) surface: returns max(Z, scale z*(X,Y)).
class Reflector {
public:
    Reflector(const BoundarySurface& s, double scale)
        : s_(&s), scale_(scale), spreadp_(s.spec().cost.kind == model::CostKind::SpreadPower) {}

    double push(double x, double y, double Z) {
        const double floor = s_->z_grid().front();
        if (spreadp_) {
            const double zb = z_bar(s_->spec(), x, y);
            if (std::isfinite(zb) && scale_ * std::max(zb, floor) <= Z) return Z;
        }
        const double zt = Z / scale_;
        if (zt >= floor) {
            if (zt != cached_z_) {
                cached_z_ = zt;
                k_ = s_->bracket(zt);
            }
            const auto& zg = s_->z_grid();
            double b;
            if (k_ + 1 < zg.size()) {
                const double w = (zt - zg[k_]) / (zg[k_ + 1] - zg[k_]);
                const double b0 = s_->y_star(k_, x);
                b = b0 + w * (s_->y_star(k_ + 1, x) - b0);
            } else {
                b = s_->y_star(k_, x);
            }
            if (y > b) return Z;
        }
        return std::max(Z, scale_ * s_->z_star(x, y));
    }

private:
    const BoundarySurface* s_;
    double scale_;
    bool spreadp_;
    double cached_z_ = -1.0;
    std::size_t k_ = 0;
};

struct TimeGrid {
    int steps = 0;
    double dt = 0.0;
};

// Horizon for the running cost: the discount must beat the growth of the
// second moments, which drive c.
double cost_horizon(const ProblemSpec& spec, const mc::MCConfig& cfg) {
    if (cfg.horizon > 0.0) return cfg.horizon;
    double g = 0.0;
    for (const auto* d : {&spec.x, &spec.y})
        if (d->kind == model::DiffusionKind::GBM) g = std::max({g, d->mu(), model::gbm_moment_rate(*d, 2.0)});
    return std::log(1e4) / std::max(spec.r - g, 0.01);
}

TimeGrid time_grid(double T, const mc::MCConfig& cfg) {
    TimeGrid g;
    g.steps = std::max(1, static_cast<int>(std::ceil(T / cfg.dt - 1e-9)));
    g.dt = T / g.steps;
    return g;
}

TimeGrid time_grid(const ProblemSpec& spec, const mc::MCConfig& cfg) {
    const double T = mc::effective_horizon(spec, cfg);
    TimeGrid g;
    g.steps = std::max(1, static_cast<int>(std::ceil(T / cfg.dt - 1e-9)));
    g.dt = T / g.steps;
    return g;
}

}  // namespace

ControlPath simulate_control(const ProblemSpec& spec, const BoundarySurface& s, double x, double y, double z,
                             const mc::MCConfig& cfg, std::uint64_t path) {
    const TimeGrid g = time_grid(spec, cfg);
    const mc::Stepper sx(spec.x, g.dt), sy(spec.y, g.dt);
    mc::PathRng rng(cfg.seed, path);
    Reflector refl(s, 1.0);
    ControlPath p;
    double X = x, Y = y;
    double Z = refl.push(X, Y, z);
    const auto record = [&](double t) {
        p.times.push_back(t);
        p.x_path.push_back(X);
        p.y_path.push_back(Y);
        p.nu.push_back(Z - z);
        p.z_path.push_back(Z);
    };
    record(0.0);
    for (int k = 1; k <= g.steps; ++k) {
        X = sx.step(X, rng.normal());
        Y = sy.step(Y, rng.normal());
        Z = refl.push(X, Y, Z);
        record(k * g.dt);
    }
    return p;
}

Policy Policy::shifted(double delta) {
    std::ostringstream os;
    os << "shift" << (delta >= 0 ? "+" : "") << delta;
    return {Kind::Reflect, delta, os.str()};
}

Policy Policy::jump(double k) {
    std::ostringstream os;
    os << "jump-" << k;
    return {Kind::Jump, k, os.str()};
}

std::vector<Policy> standard_alternatives() {
    return {Policy::do_nothing(), Policy::jump(0.5), Policy::jump(1.0), Policy::jump(2.0), Policy::shifted(0.1),
            Policy::shifted(-0.1)};
}

std::vector<JEstimate> estimate_J(const ProblemSpec& spec, const BoundarySurface& s, double x, double y, double z,
                                  const std::vector<Policy>& policies, const mc::MCConfig& cfg,
                                  const SplitConfig& split) {
    const bool closed = value::closed_form_costs(spec);
    const auto Phi = [&](double xv, double zv) { return value::total_cost_phi(spec, xv, zv); };
    std::vector<JEstimate> out(policies.size());
    std::vector<std::size_t> sim;  // policies needing simulation
    for (std::size_t j = 0; j < policies.size(); ++j) {
        const auto& p = policies[j];
        out[j].name = p.name;
        if (closed && p.kind == Policy::Kind::DoNothing) {
            out[j].est = {Phi(x, z), 0.0, cfg.paths};
            out[j].exact = true;
        } else if (closed && p.kind == Policy::Kind::Jump) {
            out[j].est = {p.param * y + Phi(x, z + p.param), 0.0, cfg.paths};
            out[j].exact = true;
        } else {
            sim.push_back(j);
        }
    }
    if (sim.empty()) return out;
    if (cfg.paths < 2) throw std::invalid_argument("at least two Monte Carlo paths are required");
    if (split.enabled && (split.factor < 2 || !(split.ratio > 1.0) || !(split.start > 0.0)))
        throw std::invalid_argument("splitting needs factor >= 2, ratio > 1 and start > 0");

    const TimeGrid g = time_grid(cost_horizon(spec, cfg), cfg);
    const mc::Stepper sx(spec.x, g.dt), sy(spec.y, g.dt);
    const double r = spec.r;
    const std::size_t ns = sim.size();
    const auto np = static_cast<std::size_t>(cfg.paths);
    const int max_levels = split.enabled ? split.max_levels : 0;
    std::vector<double> levels;
    for (int j = 0; j < max_levels; ++j) levels.push_back(split.start * std::pow(split.ratio, j) * std::abs(x));

    struct Particle {
        int k = 0;
        double X = 0.0, Y = 0.0, w = 1.0;
        int level = 0;
        std::uint64_t stream = 0;
        std::vector<double> Z, acc, prev;
        std::vector<Reflector> refl;
    };

    std::vector<double> samples(np * ns);
    parallel_for(np, [&](std::size_t path) {
        Particle root;
        root.X = x;
        root.Y = y;
        root.Z.assign(ns, z);
        root.acc.assign(ns, 0.0);
        root.prev.assign(ns, 0.0);
        for (std::size_t i = 0; i < ns; ++i) {
            const auto& p = policies[sim[i]];
            root.refl.emplace_back(s, 1.0 + (p.kind == Policy::Kind::Reflect ? p.param : 0.0));
            double Z0 = z;
            if (p.kind == Policy::Kind::Reflect) Z0 = root.refl[i].push(x, y, z);
            else if (p.kind == Policy::Kind::Jump) Z0 = z + p.param;
            root.acc[i] = y * (Z0 - z);
            root.Z[i] = Z0;
            root.prev[i] = spec.cost.c(x, Z0);
        }
        std::vector<double> total(ns, 0.0);
        std::uint64_t streams = 0;
        std::vector<Particle> stack{std::move(root)};
        while (!stack.empty()) {
            Particle p = std::move(stack.back());
            stack.pop_back();
            mc::PathRng rng(cfg.seed, path, p.stream);
            for (int k = p.k + 1; k <= g.steps; ++k) {
                p.X = sx.step(p.X, rng.normal());
                p.Y = sy.step(p.Y, rng.normal());
                const double t = k * g.dt;
                const double disc = std::exp(-r * t);
                for (std::size_t i = 0; i < ns; ++i) {
                    p.acc[i] += 0.5 * g.dt * (p.prev[i] + disc * spec.cost.c(p.X, p.Z[i]));
                    if (policies[sim[i]].kind == Policy::Kind::Reflect) {
                        const double Zn = p.refl[i].push(p.X, p.Y, p.Z[i]);
                        if (Zn > p.Z[i]) {
                            p.acc[i] += disc * p.Y * (Zn - p.Z[i]);
                            p.Z[i] = Zn;
                        }
                    }
                    p.prev[i] = disc * spec.cost.c(p.X, p.Z[i]);
                }
                if (p.level < max_levels && k < g.steps) {
                    const double ell = std::exp(-0.5 * r * t) * std::abs(p.X);
                    while (p.level < max_levels && ell >= levels[p.level]) {
                        ++p.level;
                        p.w /= split.factor;
                        for (int c = 1; c < split.factor; ++c) {
                            Particle child = p;
                            child.k = k;
                            child.stream = ++streams;
                            stack.push_back(std::move(child));
                        }
                    }
                }
            }
            for (std::size_t i = 0; i < ns; ++i) {
                if (!std::isfinite(p.acc[i])) {
                    std::ostringstream os;
                    os << "non-finite control cost on path " << path << " for policy " << policies[sim[i]].name
                       << " (X_T=" << p.X << ", Y_T=" << p.Y << ", Z_T=" << p.Z[i] << ")";
                    throw std::runtime_error(os.str());
                }
                total[i] += p.w * p.acc[i];
            }
        }
        for (std::size_t i = 0; i < ns; ++i) samples[path * ns + i] = total[i];
    });
    for (std::size_t i = 0; i < ns; ++i) {
        mc::Accumulator a;
        for (std::size_t p = 0; p < np; ++p) a.add(samples[p * ns + i]);
        out[sim[i]].est = {a.mean, a.std_error(), a.n};
    }
    return out;
}

ControlValueReport verify_point(const ProblemSpec& spec, const BoundarySurface& s, double x, double y, double z,
                                const mc::MCConfig& cfg, const SurfaceConfig& scfg, const SplitConfig& split) {
    ControlValueReport rep;
    rep.x = x;
    rep.y = y;
    rep.z = z;
    const auto k = s.find(z);
    if (k == static_cast<std::size_t>(-1)) {
        std::ostringstream os;
        os << "the surface has no slice at z=" << z;
        throw std::invalid_argument(os.str());
    }
    rep.Phi = value::total_cost_phi(spec, x, z, s.quadrature());
    rep.phi = value::MarginalCost(spec, z, s.quadrature())(x);
    rep.U = evaluate_U(s, x, y, z, scfg);
    rep.h = fd_step(scfg, z);
    const auto up = evaluate_U(s, x, y, z + rep.h, scfg);
    const auto dn = evaluate_U(s, x, y, z - rep.h, scfg);
    rep.Vz_fd = (up.U - dn.U) / (2.0 * rep.h);
    rep.v_at_point = s.value(k, x, y);
    rep.vz_matches_v = std::abs(rep.Vz_fd - rep.v_at_point) < 5e-3 * (1.0 + std::abs(rep.v_at_point));

    std::vector<Policy> pol{Policy::optimal()};
    for (const auto& p : standard_alternatives()) pol.push_back(p);
    auto J = estimate_J(spec, s, x, y, z, pol, cfg, split);
    rep.J_star = J.front();
    rep.J_alternatives.assign(J.begin() + 1, J.end());
    rep.u_matches_j = std::abs(rep.U.U - rep.J_star.est.mean) < 3.0 * rep.J_star.est.std_error;
    rep.dominance_ok = true;
    for (const auto& a : rep.J_alternatives) {
        Comparison c;
        c.name = a.name;
        c.diff = rep.J_star.est.mean - a.est.mean;
        c.pooled_se = std::hypot(rep.J_star.est.std_error, a.est.std_error);
        c.not_beaten = c.diff <= 3.0 * c.pooled_se;
        rep.dominance_ok = rep.dominance_ok && c.not_beaten;
        rep.comparisons.push_back(c);
    }
    return rep;
}

std::vector<ControlValueReport> verify_theorem(const ProblemSpec& spec, const BoundarySurface& s,
                                               const std::vector<std::array<double, 3>>& points,
                                               const mc::MCConfig& cfg, const SurfaceConfig& scfg,
                                               const SplitConfig& split) {
    std::vector<ControlValueReport> out;
    for (const auto& p : points) out.push_back(verify_point(spec, s, p[0], p[1], p[2], cfg, scfg, split));
    return out;
}

ActionTimeReport first_action_vs_hit(const ProblemSpec& spec, const BoundarySurface& s, double x, double y, double z,
                                     const mc::MCConfig& cfg) {
    const auto k = s.find(z);
    if (k == static_cast<std::size_t>(-1)) throw std::invalid_argument("the surface has no slice at the given z");
    const TimeGrid g = time_grid(spec, cfg);
    const mc::Stepper sx(spec.x, g.dt), sy(spec.y, g.dt);
    const auto np = static_cast<std::size_t>(cfg.paths);
    std::vector<double> act(np, kInf), hit(np, kInf);
    parallel_for(np, [&](std::size_t path) {
        mc::PathRng rng(cfg.seed, path);
        Reflector refl(s, 1.0);
        double X = x, Y = y;
        for (int step = 0; step <= g.steps; ++step) {
            if (step > 0) {
                X = sx.step(X, rng.normal());
                Y = sy.step(Y, rng.normal());
            }
            const double t = step * g.dt;
            if (act[path] == kInf && refl.push(X, Y, z) > z) act[path] = t;
            if (hit[path] == kInf && Y <= s.y_star(k, X)) hit[path] = t;
            if (act[path] < kInf && hit[path] < kInf) break;
        }
    });
    ActionTimeReport rep;
    std::vector<double> a, h;
    for (std::size_t p = 0; p < np; ++p) {
        if (act[p] < kInf) a.push_back(act[p]);
        if (hit[p] < kInf) h.push_back(hit[p]);
    }
    rep.acted = static_cast<std::int64_t>(a.size());
    rep.hit = static_cast<std::int64_t>(h.size());
    std::sort(a.begin(), a.end());
    std::sort(h.begin(), h.end());
    // Empirical CDFs over all paths; paths without an event sit at infinity.
    std::size_t i = 0, j = 0;
    const double n = static_cast<double>(np);
    while (i < a.size() || j < h.size()) {
        const double t = std::min(i < a.size() ? a[i] : kInf, j < h.size() ? h[j] : kInf);
        while (i < a.size() && a[i] <= t) ++i;
        while (j < h.size() && h[j] <= t) ++j;
        rep.ks = std::max(rep.ks, std::abs(static_cast<double>(i) - static_cast<double>(j)) / n);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::ofstream open_csv(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    return out;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

}  // namespace

void write_surface_csv(const BoundarySurface& s, const std::vector<double>& xs, const std::vector<double>& ys,
                       const std::string& path) {
    auto out = open_csv(path);
    out << "x,y,z_star\n";
    for (double x : xs)
        for (double y : ys) {
            std::string zs;
            try {
                zs = fmt(s.z_star(x, y));
            } catch (const CoverageError&) {
                zs = "nan";
            }
            out << fmt(x) << ',' << fmt(y) << ',' << zs << '\n';
        }
}

void write_paths_csv(const std::vector<ControlPath>& paths, const std::string& path) {
    auto out = open_csv(path);
    out << "path,t,x,y,nu,z\n";
    for (std::size_t p = 0; p < paths.size(); ++p) {
        const auto& c = paths[p];
        for (std::size_t k = 0; k < c.times.size(); ++k)
            out << p << ',' << fmt(c.times[k]) << ',' << fmt(c.x_path[k]) << ',' << fmt(c.y_path[k]) << ','
                << fmt(c.nu[k]) << ',' << fmt(c.z_path[k]) << '\n';
    }
}

void write_report_csv(const std::vector<ControlValueReport>& reports, const std::string& path) {
    auto out = open_csv(path);
    out << "point,Phi,U,J_star,J_star_se";
    if (!reports.empty())
        for (const auto& a : reports.front().J_alternatives) out << ",J_" << a.name << ",J_" << a.name << "_se";
    out << ",Vz_fd,v\n";
    for (const auto& r : reports) {
        out << '"' << fmt(r.x) << ',' << fmt(r.y) << ',' << fmt(r.z) << '"' << ',' << fmt(r.Phi) << ',' << fmt(r.U.U)
            << ',' << fmt(r.J_star.est.mean) << ',' << fmt(r.J_star.est.std_error);
        for (const auto& a : r.J_alternatives) out << ',' << fmt(a.est.mean) << ',' << fmt(a.est.std_error);
        out << ',' << fmt(r.Vz_fd) << ',' << fmt(r.v_at_point) << '\n';
    }
}

}  // namespace freebound::control
