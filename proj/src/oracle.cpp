#include "freebound/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "freebound/boundary.hpp"
#include "freebound/control.hpp"

namespace freebound::oracle {

double Lattice::min_stay() const {
    double m = 1.0;
    for (std::size_t i = 0; i < nx(); ++i)
        for (std::size_t j = 0; j < ny(); ++j) m = std::min(m, stay(i, j));
    return m;
}

namespace {

std::vector<double> log_grid(double lo, double hi, int n) {
    std::vector<double> g(n);
    for (int i = 0; i < n; ++i) g[i] = lo * std::exp(std::log(hi / lo) * i / (n - 1));
    return g;
}

// Upwind probabilities of the log-coordinate chain for one state.
void chain_1d(const model::DiffusionSpec& d, const std::vector<double>& s, double dt, std::vector<double>& dn,
              std::vector<double>& up) {
    const std::size_t n = s.size();
    const double h = std::log(s[1] / s[0]);
    dn.assign(n, 0.0);
    up.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double vol = d.vol(s[i]) / s[i];
        const double drift = d.drift(s[i]) / s[i] - 0.5 * vol * vol;
        const double diff = 0.5 * vol * vol / (h * h);
        if (i > 0) dn[i] = dt * (diff + std::max(-drift, 0.0) / h);
        if (i + 1 < n) up[i] = dt * (diff + std::max(drift, 0.0) / h);
    }
}

struct Sweeper {
    const Lattice& L;
    // dst = beta * E[src(next)] for every node
    void expect(const std::vector<double>& src, std::vector<double>& dst) const {
        const std::size_t nx = L.nx(), ny = L.ny();
        const double beta = L.discount;
        for (std::size_t i = 0; i < nx; ++i) {
            const double* c = &src[i * ny];
            const double* lo = i > 0 ? &src[(i - 1) * ny] : c;
            const double* hi = i + 1 < nx ? &src[(i + 1) * ny] : c;
            double* out = &dst[i * ny];
            const double pdn = L.px_dn[i], pup = L.px_up[i];
            for (std::size_t j = 0; j < ny; ++j) {
                double e = L.stay(i, j) * c[j] + pdn * lo[j] + pup * hi[j];
                if (j > 0) e += L.py_dn[j] * c[j - 1];
                if (j + 1 < ny) e += L.py_up[j] * c[j + 1];
                out[j] = beta * e;
            }
        }
    }
};

double sup_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
    return m;
}

// Iterates v = op(run + beta E[v]) against an optional obstacle until the
// certified distance delta * beta / (1 - beta) drops below tol.
enum class Op { None, Max, Min };

long iterate(const Lattice& L, std::vector<double>& v, const std::vector<double>& run, const std::vector<double>* obstacle,
             Op op, double tol, long max_sweeps, std::vector<double>* deltas, const char* what) {
    const Sweeper sw{L};
    const double beta = L.discount;
    const double factor = beta / (1.0 - beta);
    std::vector<double> next(v.size());
    for (long s = 1; s <= max_sweeps; ++s) {
        sw.expect(v, next);
        for (std::size_t k = 0; k < v.size(); ++k) {
            double val = run[k] + next[k];
            if (op == Op::Max) val = std::max(val, (*obstacle)[k]);
            else if (op == Op::Min) val = std::min(val, (*obstacle)[k]);
            next[k] = val;
        }
        const double d = sup_diff(next, v);
        v.swap(next);
        if (deltas) deltas->push_back(d);
        if (d * factor <= tol) return s;
    }
    std::ostringstream os;
    os << what << ": value iteration did not reach " << tol << " in " << max_sweeps << " sweeps";
    throw std::runtime_error(os.str());
}

}  // namespace

Lattice make_lattice(const ProblemSpec& spec, const LatticeConfig& cfg, double x_center, double y_center) {
    if (cfg.x_nodes < 3 || cfg.y_nodes < 3) throw std::invalid_argument("the lattice needs at least 3 nodes per axis");
    if (!(cfg.dt > 0.0)) throw std::invalid_argument("the lattice time step must be positive");
    if (!(cfg.quantile > 0.0 && cfg.quantile < 0.5)) throw std::invalid_argument("lattice quantile must be in (0, 0.5)");
    if (!(x_center > 0.0 && y_center > 0.0)) throw std::invalid_argument("lattice centre must be positive");
    const double T = cfg.horizon > 0.0 ? cfg.horizon : 1.0 / spec.r;
    Lattice L;
    L.x = log_grid(model::quantile(spec.x, T, x_center, cfg.quantile),
                   model::quantile(spec.x, T, x_center, 1.0 - cfg.quantile), cfg.x_nodes);
    L.y = log_grid(model::quantile(spec.y, T, y_center, cfg.quantile),
                   model::quantile(spec.y, T, y_center, 1.0 - cfg.quantile), cfg.y_nodes);
    L.dt = cfg.dt;
    L.discount = std::exp(-spec.r * cfg.dt);
    chain_1d(spec.x, L.x, cfg.dt, L.px_dn, L.px_up);
    chain_1d(spec.y, L.y, cfg.dt, L.py_dn, L.py_up);
    const double m = L.min_stay();
    if (m < 0.0) {
        std::ostringstream os;
        os << "lattice time step " << cfg.dt << " gives a negative stay probability (" << m << "); reduce dt";
        throw std::invalid_argument(os.str());
    }
    return L;
}

std::pair<double, double> stopping_center(const ProblemSpec& spec, double z) {
    const auto curve = boundary::make_threshold_curve(spec, z);
    double xc = curve.theta_star;
    if (!(xc > 0.0) || !std::isfinite(xc)) xc = std::max(z, 1.0);
    xc *= 2.0;
    double yc = 0.5 * curve(xc);
    if (!(yc > 0.0) || !std::isfinite(yc)) yc = 1.0;
    return {xc, yc};
}

int StoppingTable::boundary_index(std::size_t i) const {
    int last = -1;
    for (std::size_t j = 0; j < lattice.ny(); ++j)
        if (stopped(i, j)) last = static_cast<int>(j);
    return last;
}

StoppingTable stopping_value_iteration(const ProblemSpec& spec, const Lattice& lattice, double z, double tol,
                                       long max_sweeps) {
    StoppingTable t;
    t.lattice = lattice;
    t.z = z;
    const auto& L = t.lattice;
    const std::size_t nx = L.nx(), ny = L.ny();
    std::vector<double> run(nx * ny), obstacle(nx * ny);
    for (std::size_t i = 0; i < nx; ++i)
        for (std::size_t j = 0; j < ny; ++j) {
            run[L.index(i, j)] = spec.cost.cz(L.x[i], z) * L.dt;
            obstacle[L.index(i, j)] = -L.y[j];
        }
    t.v = obstacle;
    t.sweeps = iterate(L, t.v, run, &obstacle, Op::Max, tol, max_sweeps, &t.deltas, "stopping oracle");
    std::vector<double> cont(nx * ny);
    Sweeper{L}.expect(t.v, cont);
    t.stop.assign(nx * ny, 0);
    for (std::size_t k = 0; k < cont.size(); ++k) t.stop[k] = obstacle[k] >= run[k] + cont[k] ? 1 : 0;
    return t;
}

std::vector<double> default_z_nodes(const ProblemSpec& spec, const Lattice& lattice, int n) {
    if (n < 2) throw std::invalid_argument("at least two z nodes are required");
    double top = 0.0;
    for (double x : lattice.x)
        for (double y : lattice.y) {
            const double zb = control::z_bar(spec, x, y);
            top = std::max(top, std::isfinite(zb) ? zb : x);
        }
    // zbar <= 0 everywhere: investing never pays, any range certifies.
    if (!(top > 0.0)) top = lattice.x.back();
    top *= 1.05;
    std::vector<double> z(n);
    for (int k = 0; k < n; ++k) z[k] = top * (k + 1) / n;
    return z;
}

ControlTable control_value_iteration(const ProblemSpec& spec, const Lattice& lattice, const std::vector<double>& z_nodes,
                                     double tol, long max_sweeps) {
    const std::size_t nz = z_nodes.size();
    if (nz < 2) throw std::invalid_argument("at least two z nodes are required");
    const double dz = z_nodes[1] - z_nodes[0];
    for (std::size_t k = 1; k < nz; ++k)
        if (!(std::abs(z_nodes[k] - z_nodes[k - 1] - dz) <= 1e-9 * std::max(1.0, std::abs(dz))) || !(dz > 0.0))
            throw std::invalid_argument("z nodes must be increasing with a constant step");
    ControlTable t;
    t.lattice = lattice;
    t.z = z_nodes;
    const auto& L = t.lattice;
    const std::size_t nx = L.nx(), ny = L.ny(), n = nx * ny;

    const auto running = [&](double z) {
        std::vector<double> run(n);
        for (std::size_t i = 0; i < nx; ++i)
            for (std::size_t j = 0; j < ny; ++j) run[L.index(i, j)] = spec.cost.c(L.x[i], z) * L.dt;
        return run;
    };
    const auto no_investment = [&](double z) {
        const auto run = running(z);
        std::vector<double> v(n, 0.0);
        t.sweeps += iterate(L, v, run, nullptr, Op::None, tol, max_sweeps, nullptr, "control oracle");
        return v;
    };

    t.V.assign(nz, {});
    t.invest.assign(nz, std::vector<char>(n, 0));
    t.V[nz - 1] = no_investment(z_nodes[nz - 1]);
    {
        const auto above = no_investment(z_nodes[nz - 1] + dz);
        for (std::size_t i = 0; i < nx; ++i)
            for (std::size_t j = 0; j < ny; ++j) {
                const std::size_t k = L.index(i, j);
                if (L.y[j] * dz + above[k] < t.V[nz - 1][k] - tol) {
                    std::ostringstream os;
                    os << "investment still pays at the top node z=" << z_nodes[nz - 1] << " (x=" << L.x[i]
                       << ", y=" << L.y[j] << "); raise the largest z node";
                    throw TerminalCertificationError(os.str(), z_nodes[nz - 1]);
                }
            }
    }
    std::vector<double> cont(n);
    for (std::size_t kz = nz - 1; kz-- > 0;) {
        const auto run = running(z_nodes[kz]);
        std::vector<double> obstacle(n);
        for (std::size_t i = 0; i < nx; ++i)
            for (std::size_t j = 0; j < ny; ++j) obstacle[L.index(i, j)] = L.y[j] * dz + t.V[kz + 1][L.index(i, j)];
        std::vector<double> v = t.V[kz + 1];
        t.sweeps += iterate(L, v, run, &obstacle, Op::Min, tol, max_sweeps, nullptr, "control oracle");
        Sweeper{L}.expect(v, cont);
        for (std::size_t k = 0; k < n; ++k) t.invest[kz][k] = obstacle[k] < run[k] + cont[k] ? 1 : 0;
        t.V[kz] = std::move(v);
    }
    return t;
}

void write_stopping_csv(const StoppingTable& t, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "# z=" << t.z << ",sweeps=" << t.sweeps << "\n";
    f << "x,y,v,stop\n";
    char buf[128];
    const auto& L = t.lattice;
    for (std::size_t i = 0; i < L.nx(); ++i)
        for (std::size_t j = 0; j < L.ny(); ++j) {
            std::snprintf(buf, sizeof buf, "%.12g,%.12g,%.12g,%d\n", L.x[i], L.y[j], t.value(i, j),
                          t.stopped(i, j) ? 1 : 0);
            f << buf;
        }
}

void write_control_csv(const ControlTable& t, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "x,y,z,V,invest\n";
    char buf[160];
    const auto& L = t.lattice;
    for (std::size_t k = 0; k < t.z.size(); ++k)
        for (std::size_t i = 0; i < L.nx(); ++i)
            for (std::size_t j = 0; j < L.ny(); ++j) {
                std::snprintf(buf, sizeof buf, "%.12g,%.12g,%.12g,%.12g,%d\n", L.x[i], L.y[j], t.z[k],
                              t.value(i, j, k), t.invests(i, j, k) ? 1 : 0);
                f << buf;
            }
}

}  // namespace freebound::oracle
