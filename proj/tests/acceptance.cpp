// Acceptance suite on the benchmark instance: GBM(0.01, 0.20) and
// GBM(0.01, 0.15) states, r = 0.10, c(x,z) = (x - z)^2. Prints one line per
// criterion. Arguments select a subset of criteria by number.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "freebound/boundary.hpp"
#include "freebound/control.hpp"
#include "freebound/oracle.hpp"
#include "freebound/value.hpp"

using namespace freebound;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

const model::ProblemSpec kSpec = model::ProblemSpec::benchmark();
const std::vector<double> kZ{0.5, 1.0, 2.0};
const std::vector<std::array<double, 3>> kPoints{{1.0, 1.0, 1.0}, {1.5, 0.5, 1.0}, {0.8, 2.0, 0.5}};

std::map<double, boundary::Boundary>& slices() {
    static std::map<double, boundary::Boundary> s;
    if (s.empty())
        for (double z : kZ) s.emplace(z, boundary::solve_boundary(kSpec, z));
    return s;
}

const boundary::Boundary& slice(double z) { return slices().at(z); }

control::SurfaceConfig surface_config() { return {}; }

const control::BoundarySurface& surface() {
    static std::optional<control::BoundarySurface> s;
    if (!s) {
        const auto cfg = surface_config();
        s = control::build_surface(kSpec, control::default_z_grid({0.5, 1.0}, cfg), cfg);
        control::extend_until_decayed(*s, kPoints, cfg);
    }
    return *s;
}

mc::MCConfig control_mc() {
    mc::MCConfig m;
    m.paths = 20000;
    m.dt = 0.04;
    return m;
}

const std::vector<control::ControlValueReport>& reports() {
    static std::vector<control::ControlValueReport> r;
    if (r.empty()) r = control::verify_theorem(kSpec, surface(), kPoints, control_mc(), surface_config());
    return r;
}

Outcome fredholm_residual() {
    Outcome o{true, ""};
    for (double z : kZ) {
        const auto& b = slice(z);
        const bool ok = b.converged && b.residual_sup < 1e-5;
        o.pass = o.pass && ok;
        o.detail += fmt("z=%g residual %.2e; ", z, b.residual_sup);
    }
    o.detail += "tol 1e-5";
    return o;
}

Outcome envelope_monotonicity() {
    Outcome o{true, ""};
    double env_gap = 0.0, closed_gap = 0.0, x_drop = 0.0, z_rise = 0.0;
    std::vector<double> xs;
    for (double z : kZ) {
        const auto& b = slice(z);
        const auto curve = boundary::make_threshold_curve(kSpec, z);
        for (std::size_t i = 0; i < b.x_grid.size(); ++i) {
            const double x = b.x_grid[i];
            const double th = curve(x);
            env_gap = std::max(env_gap, b.y_values[i] - th);
            closed_gap = std::max(closed_gap, std::abs(th - std::max(0.0, 2.0 * (x - z) / 0.09)));
            if (i > 0) x_drop = std::max(x_drop, b.y_values[i - 1] - b.y_values[i]);
            xs.push_back(x);
        }
    }
    std::vector<boundary::BoundaryFunction> f;
    for (double z : kZ) f.emplace_back(slice(z));
    for (double x : xs)
        for (std::size_t k = 1; k < f.size(); ++k) z_rise = std::max(z_rise, f[k](x) - f[k - 1](x));
    // Interpolated slices are compared at every node of every slice, so a
    // rounding allowance relative to the boundary scale is kept.
    const double slack = 1e-9;
    o.pass = env_gap <= slack && x_drop <= slack && z_rise <= slack && closed_gap <= 1e-8;
    o.detail = fmt("max(y*-theta) %.1e, max x-decrease %.1e, max z-increase %.1e (tol %.0e); "
                   "|theta - closed form| %.1e (tol 1e-8)",
                   env_gap, x_drop, z_rise, slack, closed_gap);
    return o;
}

Outcome uniqueness() {
    const boundary::SolverConfig cfg;
    const auto rep = boundary::uniqueness_probe(kSpec, 1.0, slice(1.0), cfg);
    return {rep.distance < 10.0 * cfg.tol_boundary,
            fmt("z=1 two-start distance %.2e (tol %.1e)", rep.distance, 10.0 * cfg.tol_boundary)};
}

Outcome oracle_boundary() {
    const auto& b = slice(1.0);
    const boundary::BoundaryFunction curve(b);
    const auto [xc, yc] = oracle::stopping_center(kSpec, 1.0);
    oracle::LatticeConfig coarse;
    auto fine = coarse;
    fine.x_nodes *= 2;
    fine.y_nodes *= 2;
    fine.dt /= 2.0;
    const auto t1 = oracle::stopping_value_iteration(kSpec, oracle::make_lattice(kSpec, coarse, xc, yc), 1.0);
    const auto d1 = oracle::compare_boundary(t1, curve);
    const auto t2 = oracle::stopping_value_iteration(kSpec, oracle::make_lattice(kSpec, fine, xc, yc), 1.0);
    const auto d2 = oracle::compare_boundary(t2, curve);
    const bool ok = d1.columns > 0 && d1.within_one_cell && d2.mean_log_gap <= d1.mean_log_gap;
    return {ok, fmt("60x60: %d columns, max %d cells (same-column %d), mean log gap %.4f; 120x120 dt/2: mean log gap "
                    "%.4f (tol 1 cell, gap nonincreasing)",
                    d1.columns, d1.max_cells, d1.max_row_cells, d1.mean_log_gap, d2.mean_log_gap)};
}

Outcome value_consistency() {
    const auto& b = slice(1.0);
    const boundary::BoundaryFunction curve(b);
    std::mt19937_64 gen(7);
    std::uniform_real_distribution<double> ux(std::log(0.8), std::log(4.0)), uy(0.1, 1.5);
    mc::MCConfig m;
    m.paths = 20000;
    m.dt = 0.02;
    int bad = 0;
    double worst = 0.0;
    for (int k = 0; k < 20; ++k) {
        const double x = std::exp(ux(gen));
        const double y = std::max(curve(x), 0.05) * (1.0 + uy(gen));
        const double va = value::value_analytic(kSpec, b, x, y).v;
        const auto mcv = value::payoff_of_rule(kSpec, value::StoppingRule::hitting(b), x, y, 1.0, m);
        const double zscore = std::abs(va - mcv.v) / std::max(mcv.std_error, 1e-12);
        worst = std::max(worst, zscore);
        if (zscore >= 3.0) ++bad;
    }
    double edge = 0.0;
    const value::ValueFunction vf(kSpec, b);
    for (std::size_t i = 0; i < b.x_grid.size(); i += 7) {
        const double ys = b.y_values[i];
        if (!(ys > 0.0)) continue;
        edge = std::max(edge, std::abs(vf(b.x_grid[i], ys) + ys));
    }
    return {bad == 0 && edge < 1e-4,
            fmt("%d/20 points beyond 3 se (largest |z| %.2f); max |v(x,y*)+y*| %.1e (tol 1e-4)", bad, worst, edge)};
}

Outcome smooth_fit() {
    const auto& b = slice(1.0);
    const value::ValueFunction vf(kSpec, b);
    double worst = 0.0;
    int ok = 0;
    for (double x : {1.8, 2.2, 2.8, 3.5, 4.5}) {
        const auto r = value::smooth_fit_probe(kSpec, vf, x, {1e-3, 2e-3, 4e-3, 8e-3});
        if (r.ok) ++ok;
        worst = std::max(worst, std::abs(r.extrapolated + 1.0));
    }
    return {ok == 5 && worst < 5e-2, fmt("%d/5 probes usable, max |v_y + 1| %.2e (tol 5e-2)", ok, worst)};
}

Outcome martingale_probes() {
    const auto& b = slice(1.0);
    const value::ValueFunction vf(kSpec, b);
    mc::MCConfig m;
    m.paths = 10000;
    m.dt = 0.01;
    const auto r = value::supermartingale_probe(kSpec, vf, 1.0, 1.0, 1.0, {0.0, 1.0, 2.0, 4.0}, m);
    std::string means;
    for (std::size_t j = 0; j < r.times.size(); ++j)
        means += fmt("%s%.4f", j ? "," : "", r.m_stopped[j].mean);
    return {r.supermartingale_ok && r.martingale_ok,
            fmt("v0 %.4f, stopped means %s; %zu increases beyond 3 se", r.v0, means.c_str(), r.violations.size())};
}

Outcome ibp_identity() {
    mc::MCConfig m;
    m.paths = 20000;
    m.dt = 0.01;
    const double y = 1.0;
    const auto r = value::ibp_identity_check(kSpec, {0.5, 1.0, 5.0}, y, m);
    bool analytic = true;
    double worst = 0.0;
    for (const auto& e : r.entries) {
        const double zl = std::abs(e.lhs.mean - e.analytic) / e.lhs.std_error;
        const double zr = std::abs(e.rhs.mean - e.analytic) / e.rhs.std_error;
        worst = std::max({worst, zl, zr});
        analytic = analytic && zl < 3.0 && zr < 3.0;
    }
    return {r.within_three_se && analytic,
            fmt("max paired discrepancy %.2e within 3 se: %s; max |side - y e^{(mu2-r)t}| %.2f se", r.max_abs_discrepancy,
                r.within_three_se ? "yes" : "no", worst)};
}

Outcome verification() {
    Outcome o{true, ""};
    for (const auto& r : reports()) {
        const double vtol = 5e-3 * (1.0 + std::abs(r.v_at_point));
        o.pass = o.pass && r.u_matches_j && r.vz_matches_v;
        o.detail += fmt("(%g,%g,%g) U %.4f J %.4f+-%.4f, Vz %.5f v %.5f (tol %.1e); ", r.x, r.y, r.z, r.U.U,
                        r.J_star.est.mean, r.J_star.est.std_error, r.Vz_fd, r.v_at_point, vtol);
    }
    o.detail += "U-J tol 3 se";
    return o;
}

Outcome dominance() {
    Outcome o{true, ""};
    for (const auto& r : reports()) {
        double worst = -model::kInf;
        std::string name;
        for (const auto& c : r.comparisons) {
            const double ratio = c.diff / std::max(c.pooled_se, 1e-12);
            if (ratio > worst) {
                worst = ratio;
                name = c.name;
            }
        }
        o.pass = o.pass && r.dominance_ok;
        o.detail += fmt("(%g,%g,%g) closest %s at %.2f pooled se; ", r.x, r.y, r.z, name.c_str(), worst);
    }
    o.detail += "tol J* <= J_alt + 3 pooled se";
    return o;
}

Outcome control_oracle() {
    const auto& s = surface();
    oracle::LatticeConfig lc;
    const auto L = oracle::make_lattice(kSpec, lc, 1.0, 1.0);
    const auto z = oracle::default_z_nodes(kSpec, L, 20);
    const auto t = oracle::control_value_iteration(kSpec, L, z);
    const auto d = oracle::compare_action(t, [&](double x, double y) { return s.z_star(x, y); });
    return {d.unexplained == 0, fmt("60x60x20, dz %.3f: %ld raw mismatches of %ld nodes, %ld beyond one cell (tol 0)",
                                    z[0], d.mismatches, d.nodes, d.unexplained)};
}

std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

Outcome determinism() {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "freebound_acceptance";
    fs::create_directories(dir);
    const auto& s = surface();
    mc::MCConfig m;
    m.paths = 4;
    m.dt = 0.04;
    m.seed = 7;
    const auto run = [&](const std::string& tag) {
        std::vector<control::ControlPath> paths;
        for (std::uint64_t p = 0; p < 4; ++p) paths.push_back(control::simulate_control(kSpec, s, 1.0, 1.0, 1.0, m, p));
        control::write_paths_csv(paths, (dir / ("paths_" + tag + ".csv")).string());
        boundary::write_boundary_csv(boundary::solve_boundary(kSpec, 1.0), (dir / ("boundary_" + tag + ".csv")).string());
        mc::MCConfig mj = control_mc();
        mj.paths = 500;
        std::vector<control::ControlValueReport> reps{
            control::verify_point(kSpec, s, 1.0, 1.0, 1.0, mj, surface_config())};
        control::write_report_csv(reps, (dir / ("report_" + tag + ".csv")).string());
    };
    run("a");
    run("b");
    bool same = true;
    std::string detail;
    for (const char* f : {"paths", "boundary", "report"}) {
        const auto a = slurp((dir / (std::string(f) + "_a.csv")).string());
        const auto b = slurp((dir / (std::string(f) + "_b.csv")).string());
        const bool eq = !a.empty() && a == b;
        same = same && eq;
        detail += fmt("%s.csv %s (%zu bytes); ", f, eq ? "identical" : "DIFFERS", a.size());
    }
    fs::remove_all(dir);
    return {same, detail + "seed 7"};
}

struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all{
        {1, "Fredholm residual", fredholm_residual},
        {2, "envelope and monotonicity", envelope_monotonicity},
        {3, "uniqueness probe", uniqueness},
        {4, "oracle boundary agreement", oracle_boundary},
        {5, "value consistency", value_consistency},
        {6, "smooth fit", smooth_fit},
        {7, "supermartingale and martingale probes", martingale_probes},
        {8, "integration-by-parts identity", ibp_identity},
        {9, "verification of the control value", verification},
        {10, "policy dominance", dominance},
        {11, "control-oracle agreement", control_oracle},
        {12, "determinism", determinism},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    int failed = 0;
    for (const auto& c : all) {
        if (!only.empty() && !only.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] %2d %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
        std::fflush(stdout);
        if (!o.pass) ++failed;
    }
    std::printf("%d criteria failed\n", failed);
    return failed == 0 ? 0 : 1;
}
