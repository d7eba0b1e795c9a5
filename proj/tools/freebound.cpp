// Command-line front end: solve, surface, value, simulate, verify, oracle.
// Exit codes: 0 success, 1 usage or configuration error, 2 non-convergence or
// (with --check) a violated invariant.

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "freebound/boundary.hpp"
#include "freebound/config.hpp"
#include "freebound/control.hpp"
#include "freebound/oracle.hpp"
#include "freebound/parallel.hpp"
#include "freebound/value.hpp"

using namespace freebound;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0, kUsage = 1, kFailed = 2;

struct Options {
    std::string config_path;
    double z = 1.0;
    std::vector<std::string> points;
    std::int64_t seed = -1;
    int threads = 0;
    bool check = false;
    bool force = false;
    std::string out;
    std::int64_t paths = -1;
    std::string compare;
    bool control = false;
};

std::vector<double> parse_numbers(const std::string& s) {
    std::vector<double> v;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        std::size_t used = 0;
        double d = 0.0;
        try {
            d = std::stod(tok, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != tok.size()) throw config::ConfigError("not a number list: '" + s + "'");
        v.push_back(d);
    }
    return v;
}

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

std::string tag(double z) {
    std::string s = num(z);
    std::replace(s.begin(), s.end(), '.', 'p');
    return s;
}

struct Context {
    config::RunConfig cfg;
    Options opt;
    fs::path out;

    std::string file(const std::string& name) const { return (out / name).string(); }
};

Context setup(const Options& opt) {
    Context c;
    c.opt = opt;
    if (!opt.config_path.empty()) c.cfg = config::load(opt.config_path);
    if (opt.seed >= 0) c.cfg.mc.seed = static_cast<std::uint64_t>(opt.seed);
    if (opt.paths > 0) {
        c.cfg.mc.paths = opt.paths;
        c.cfg.control.paths = opt.paths;
    }
    if (opt.threads > 0) set_thread_count(opt.threads);
    c.out = opt.out.empty() ? fs::path(c.cfg.output) : fs::path(opt.out);
    fs::create_directories(c.out);

    const auto rep = model::validate(c.cfg.problem);
    if (!rep.all_pass()) {
        if (!opt.force) throw config::ConfigError("model assumptions fail: " + rep.failures() + " (use --force to run anyway)");
        std::printf("warning: running with failed assumptions: %s\n", rep.failures().c_str());
    }
    return c;
}

std::string solver_tolerances(const config::RunConfig& c) {
    std::ostringstream os;
    os << "tol_boundary=" << c.solver.tol_boundary << " tol_residual=" << c.solver.tol_residual
       << " max_iters=" << c.solver.max_iters << " grid_points=" << c.solver.grid_points
       << " time_nodes=" << c.solver.quad.time_nodes << " space_nodes=" << c.solver.quad.space_nodes;
    return os.str();
}

std::string mc_settings(const mc::MCConfig& m) {
    std::ostringstream os;
    os << "paths=" << m.paths << " dt=" << m.dt << " seed=" << m.seed << " continuity_correction="
       << (m.continuity_correction ? "on" : "off");
    return os.str();
}

std::vector<std::array<double, 3>> points_of(const Options& opt, std::vector<std::array<double, 3>> fallback) {
    if (opt.points.empty()) return fallback;
    std::vector<std::array<double, 3>> pts;
    for (const auto& s : opt.points) {
        const auto v = parse_numbers(s);
        if (v.size() == 3)
            pts.push_back({v[0], v[1], v[2]});
        else if (v.size() == 2)
            pts.push_back({v[0], v[1], opt.z});
        else
            throw config::ConfigError("--point expects x,y,z or x,y: '" + s + "'");
    }
    return pts;
}

// Boundary invariants for --check: nondecreasing, below the envelope, residual.
std::vector<std::string> boundary_violations(const boundary::Boundary& b, const config::RunConfig& c) {
    std::vector<std::string> v;
    for (std::size_t i = 0; i < b.x_grid.size(); ++i) {
        if (i > 0 && b.y_values[i] < b.y_values[i - 1]) v.push_back("y* decreases at x=" + num(b.x_grid[i]));
        if (b.y_values[i] > b.theta[i] * (1.0 + 1e-12)) v.push_back("y* above the envelope at x=" + num(b.x_grid[i]));
    }
    if (!(b.residual_sup < c.solver.tol_residual)) v.push_back("residual_sup " + num(b.residual_sup));
    return v;
}

int cmd_solve(const Options& opt) {
    const auto c = setup(opt);
    boundary::Boundary b;
    int code = kOk;
    try {
        b = boundary::solve_boundary(c.cfg.problem, opt.z, c.cfg.solver);
    } catch (const boundary::NonConvergence& e) {
        b = e.last();
        std::printf("error: %s\n", e.what());
        code = kFailed;
    }
    const auto path = c.file("boundary_z" + tag(opt.z) + ".csv");
    boundary::write_boundary_csv(b, path);
    std::printf("solve z=%g flag=%s converged=%s iterations=%d residual_sup=%.3e x_star=%g -> %s\n", opt.z,
                boundary::to_string(b.flag), b.converged ? "yes" : "no", b.iterations, b.residual_sup, b.x_star,
                path.c_str());
    std::printf("tolerances: %s\n", solver_tolerances(c.cfg).c_str());
    if (code == kOk && opt.check && b.flag == boundary::BoundaryFlag::Regular) {
        const auto v = boundary_violations(b, c.cfg);
        for (const auto& s : v) std::printf("check failed: %s\n", s.c_str());
        if (!v.empty()) code = kFailed;
    }
    return code;
}

// Slices around the queried capacities; `extend` adds the far slices that U needs.
control::BoundarySurface make_surface(const Context& c, const std::vector<std::array<double, 3>>& pts,
                                      bool extend = false) {
    std::vector<double> zs;
    for (const auto& p : pts) zs.push_back(p[2]);
    const auto scfg = c.cfg.surface_config();
    auto s = control::build_surface(c.cfg.problem, control::default_z_grid(zs, scfg), scfg);
    if (extend) control::extend_until_decayed(s, pts, scfg);
    return s;
}

std::string surface_tolerances(const config::RunConfig& c, const control::BoundarySurface& s) {
    std::ostringstream os;
    os << "slices=" << s.z_grid().size() << " z_range=[" << s.z_grid().front() << ", " << s.z_grid().back()
       << "] decay_tol=" << c.surface.decay_tol << " decay_count=" << c.surface.decay_count << " "
       << solver_tolerances(c);
    return os.str();
}

std::vector<double> log_space(double lo, double hi, int n) {
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i) v[i] = lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1));
    return v;
}

int cmd_surface(const Options& opt) {
    const auto c = setup(opt);
    const auto s = make_surface(c, {{opt.z, 1.0, opt.z}});
    const auto xs = log_space(0.25 * opt.z, 4.0 * opt.z, 20);
    const auto ys = log_space(0.05, 100.0, 20);
    const auto path = c.file("surface.csv");
    control::write_surface_csv(s, xs, ys, path);
    std::printf("surface z=%g -> %s\n", opt.z, path.c_str());
    std::printf("tolerances: %s\n", surface_tolerances(c.cfg, s).c_str());
    if (opt.check) {
        const auto chk = control::check_surface(s, xs, ys);
        for (const auto& v : chk.violations) std::printf("check failed: %s\n", v.c_str());
        if (!chk.ok()) return kFailed;
    }
    return kOk;
}

int cmd_value(const Options& opt) {
    const auto c = setup(opt);
    const auto pts = points_of(opt, {{1.0, 1.0, opt.z}});
    const auto path = c.file("value.csv");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "x,y,z,v,v_mc,v_mc_se\n";
    int code = kOk;
    for (const auto& p : pts) {
        const auto b = boundary::solve_boundary(c.cfg.problem, p[2], c.cfg.solver);
        const auto va = value::value_analytic(c.cfg.problem, b, p[0], p[1], c.cfg.solver.quad);
        const auto vm = value::payoff_of_rule(c.cfg.problem, value::StoppingRule::hitting(b), p[0], p[1], p[2],
                                              c.cfg.mc, c.cfg.solver.quad);
        char buf[256];
        std::snprintf(buf, sizeof buf, "%.12g,%.12g,%.12g,%.12g,%.12g,%.6g\n", p[0], p[1], p[2], va.v, vm.v,
                      vm.std_error);
        out << buf;
        const bool agree = std::abs(va.v - vm.v) < 3.0 * vm.std_error + 1e-12;
        std::printf("value (%g,%g,%g): analytic %.6f, MC %.6f +- %.6f%s\n", p[0], p[1], p[2], va.v, vm.v,
                    vm.std_error, agree ? "" : "  (differ by more than 3 se)");
        if (opt.check && !agree) code = kFailed;
    }
    std::printf("-> %s\ntolerances: %s; agreement 3 se; %s\n", path.c_str(), solver_tolerances(c.cfg).c_str(),
                mc_settings(c.cfg.mc).c_str());
    return code;
}

int cmd_simulate(const Options& opt) {
    const auto c = setup(opt);
    const auto pts = points_of(opt, {{1.0, 1.0, opt.z}});
    if (pts.size() != 1) throw config::ConfigError("simulate takes a single --point");
    const auto s = make_surface(c, pts);
    auto m = c.cfg.control_mc();
    const std::int64_t n = opt.paths > 0 ? opt.paths : 1;
    std::vector<control::ControlPath> paths;
    int code = kOk;
    for (std::int64_t k = 0; k < n; ++k) {
        paths.push_back(control::simulate_control(c.cfg.problem, s, pts[0][0], pts[0][1], pts[0][2], m,
                                                  static_cast<std::uint64_t>(k)));
        if (opt.check) {
            const auto& nu = paths.back().nu;
            for (std::size_t i = 0; i < nu.size(); ++i)
                if (!std::isfinite(nu[i]) || (i > 0 && nu[i] < nu[i - 1])) {
                    std::printf("check failed: path %lld nu not nondecreasing and finite at step %zu\n",
                                static_cast<long long>(k), i);
                    code = kFailed;
                    break;
                }
        }
    }
    const auto path = c.file("paths.csv");
    control::write_paths_csv(paths, path);
    m.paths = n;
    std::printf("simulate (%g,%g,%g) %lld paths -> %s\ntolerances: %s; %s\n", pts[0][0], pts[0][1], pts[0][2],
                static_cast<long long>(n), path.c_str(), surface_tolerances(c.cfg, s).c_str(), mc_settings(m).c_str());
    return code;
}

int cmd_verify(const Options& opt) {
    const auto c = setup(opt);
    const auto pts = points_of(opt, {{1.0, 1.0, 1.0}, {1.5, 0.5, 1.0}, {0.8, 2.0, 0.5}});
    const auto s = make_surface(c, pts, true);
    const auto m = c.cfg.control_mc();
    const auto reps = control::verify_theorem(c.cfg.problem, s, pts, m, c.cfg.surface_config(), c.cfg.control.split);
    const auto path = c.file("report.csv");
    control::write_report_csv(reps, path);
    bool ok = true;
    for (const auto& r : reps) {
        std::printf("(%g,%g,%g) U=%.6f J*=%.6f+-%.6f [%s] Vz_fd=%.6f v=%.6f [%s] dominance [%s]\n", r.x, r.y, r.z,
                    r.U.U, r.J_star.est.mean, r.J_star.est.std_error, r.u_matches_j ? "ok" : "FAIL", r.Vz_fd,
                    r.v_at_point, r.vz_matches_v ? "ok" : "FAIL", r.dominance_ok ? "ok" : "FAIL");
        for (const auto& cmp : r.comparisons)
            std::printf("    %-12s J*-J=%.6f pooled_se=%.6f %s\n", cmp.name.c_str(), cmp.diff, cmp.pooled_se,
                        cmp.not_beaten ? "optimal-not-beaten" : "BEATEN");
        ok = ok && r.u_matches_j && r.vz_matches_v && r.dominance_ok;
    }
    std::printf("-> %s\ntolerances: |U-J*| < 3 se; |Vz_fd - v| < 5e-3 (1+|v|); J* <= J_alt + 3 pooled se; %s; %s\n",
                path.c_str(), surface_tolerances(c.cfg, s).c_str(), mc_settings(m).c_str());
    return opt.check && !ok ? kFailed : kOk;
}

// Boundary CSV written by `solve`: a comment line, a header, then x,y_star,theta.
std::pair<double, std::vector<std::pair<double, double>>> read_boundary_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config::ConfigError("cannot read " + path);
    std::string line;
    double z = std::nan("");
    std::vector<std::pair<double, double>> pts;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto k = line.find("z=");
            if (k != std::string::npos) z = std::stod(line.substr(k + 2));
            continue;
        }
        if (line.rfind("x,", 0) == 0) continue;
        const auto v = parse_numbers(line);
        if (v.size() < 2) throw config::ConfigError("malformed row in " + path + ": " + line);
        pts.emplace_back(v[0], v[1]);
    }
    if (pts.size() < 2) throw config::ConfigError(path + " holds fewer than two boundary points");
    return {z, pts};
}

int cmd_oracle(const Options& opt) {
    auto c = setup(opt);
    const auto& p = c.cfg.problem;
    const auto& lc = c.cfg.oracle;
    std::string tol;
    {
        std::ostringstream os;
        os << "lattice=" << lc.x_nodes << "x" << lc.y_nodes << " dt=" << lc.dt << " quantile=" << lc.quantile
           << " value_iteration_tol=" << lc.tol;
        tol = os.str();
    }
    if (opt.control) {
        const double xc = lc.x_center > 0.0 ? lc.x_center : 1.0, yc = lc.y_center > 0.0 ? lc.y_center : 1.0;
        const auto L = oracle::make_lattice(p, lc, xc, yc);
        const auto zn = oracle::default_z_nodes(p, L, c.cfg.oracle_z_nodes);
        const auto t = oracle::control_value_iteration(p, L, zn, lc.tol, lc.max_sweeps);
        const auto path = c.file("oracle_control.csv");
        oracle::write_control_csv(t, path);
        std::printf("control oracle: %zu z nodes, dz=%g, %ld sweeps -> %s\ntolerances: %s\n", zn.size(), zn[0],
                    t.sweeps, path.c_str(), tol.c_str());
        if (opt.check) {
            const auto s = make_surface(c, {{1.0, 1.0, zn.front()}});
            const auto d = oracle::compare_action(t, [&](double x, double y) { return s.z_star(x, y); });
            std::printf("action mismatches: %ld raw, %ld beyond one cell (of %ld nodes)\n", d.mismatches,
                        d.unexplained, d.nodes);
            if (d.unexplained > 0) return kFailed;
        }
        return kOk;
    }

    double z = opt.z;
    std::vector<std::pair<double, double>> curve_pts;
    if (!opt.compare.empty()) {
        auto [zc, pts] = read_boundary_csv(opt.compare);
        if (std::isfinite(zc)) z = zc;
        curve_pts = std::move(pts);
    }
    auto [xc, yc] = oracle::stopping_center(p, z);
    if (lc.x_center > 0.0) xc = lc.x_center;
    if (lc.y_center > 0.0) yc = lc.y_center;
    const auto L = oracle::make_lattice(p, lc, xc, yc);
    const auto t = oracle::stopping_value_iteration(p, L, z, lc.tol, lc.max_sweeps);
    const auto path = c.file("oracle_stopping_z" + tag(z) + ".csv");
    oracle::write_stopping_csv(t, path);
    std::printf("stopping oracle z=%g: %ld sweeps -> %s\ntolerances: %s\n", z, t.sweeps, path.c_str(), tol.c_str());
    if (!curve_pts.empty()) {
        // Linear in x between the listed points, flat beyond them.
        const auto curve = [&](double x) {
            if (x <= curve_pts.front().first) return curve_pts.front().second;
            if (x >= curve_pts.back().first) return curve_pts.back().second;
            const auto it = std::upper_bound(curve_pts.begin(), curve_pts.end(), std::make_pair(x, -model::kInf));
            const auto& [x1, y1] = *it;
            const auto& [x0, y0] = *(it - 1);
            return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        };
        const auto d = oracle::compare_boundary(t, curve);
        std::printf("max cell discrepancy: %d (same-column %d) over %d columns; mean log gap %.4f\n", d.max_cells,
                    d.max_row_cells, d.columns, d.mean_log_gap);
        if (opt.check && !d.within_one_cell) return kFailed;
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Free-boundary solver for irreversible investment with a stochastic price"};
    app.require_subcommand(1);
    Options opt;
    const auto common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config_path, "JSON configuration file")->check(CLI::ExistingFile);
        sub->add_option("--seed", opt.seed, "Monte Carlo seed");
        sub->add_option("--threads", opt.threads, "worker threads (default: FREEBOUND_THREADS or 1)");
        sub->add_flag("--check", opt.check, "exit 2 when an invariant is violated");
        sub->add_flag("--force", opt.force, "run even when model assumptions fail");
        sub->add_option("--out", opt.out, "output directory (default from config, else ./out)");
    };
    auto* solve = app.add_subcommand("solve", "solve the stopping boundary y*(.;z)");
    solve->add_option("--z", opt.z, "capacity z");
    auto* surface = app.add_subcommand("surface", "build the surface z*(x,y) and sample it");
    surface->add_option("--z", opt.z, "capacity the sample grid is scaled to");
    auto* value = app.add_subcommand("value", "stopping value at points, analytic and Monte Carlo");
    value->add_option("--z", opt.z, "capacity for points given as x,y");
    value->add_option("--point", opt.points, "x,y,z (repeatable)");
    value->add_option("--paths", opt.paths, "Monte Carlo paths");
    auto* simulate = app.add_subcommand("simulate", "simulate the optimal capacity process");
    simulate->add_option("--z", opt.z, "initial capacity for a point given as x,y");
    simulate->add_option("--point", opt.points, "x,y,z start");
    simulate->add_option("--paths", opt.paths, "number of paths (default 1)");
    auto* verify = app.add_subcommand("verify", "compare U with simulated control costs");
    verify->add_option("--point", opt.points, "x,y,z (repeatable)");
    verify->add_option("--paths", opt.paths, "Monte Carlo paths");
    auto* orc = app.add_subcommand("oracle", "Markov-chain value iteration");
    orc->add_option("--z", opt.z, "capacity for the stopping oracle");
    orc->add_option("--compare", opt.compare, "boundary CSV to compare the stop mask against")
        ->check(CLI::ExistingFile);
    orc->add_flag("--control", opt.control, "run the control oracle instead");
    for (auto* s : {solve, surface, value, simulate, verify, orc}) common(s);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }
    try {
        if (*solve) return cmd_solve(opt);
        if (*surface) return cmd_surface(opt);
        if (*value) return cmd_value(opt);
        if (*simulate) return cmd_simulate(opt);
        if (*verify) return cmd_verify(opt);
        if (*orc) return cmd_oracle(opt);
    } catch (const config::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsage;
    } catch (const boundary::NonConvergence& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kFailed;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kFailed;
    }
    return kUsage;
}
