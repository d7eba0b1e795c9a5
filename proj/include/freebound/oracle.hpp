#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#include "freebound/model.hpp"

namespace freebound::oracle {

using model::ProblemSpec;

struct LatticeConfig {
    int x_nodes = 60;
    int y_nodes = 60;
    double dt = 0.01;
    double quantile = 1e-4;   // the grids span the q and 1-q quantiles
    double horizon = 0.0;     // time of those quantiles; 0 means 1/r
    double x_center = 0.0;    // start point of the quantiles; 0 picks a default
    double y_center = 0.0;
    double tol = 1e-9;        // certified sup-norm distance to the fixed point
    long max_sweeps = 10'000'000;
};

// Log-spaced (x,y) grid with a locally consistent Markov chain: upwind
// moves to the four neighbours, the rest of the mass stays. Outward moves at
// the edge rows are folded into the stay probability (reflecting edges).
struct Lattice {
    std::vector<double> x, y;
    double dt = 0.0;
    double discount = 1.0;           // e^{-r dt}
    std::vector<double> px_dn, px_up;  // per x index
    std::vector<double> py_dn, py_up;  // per y index

    std::size_t nx() const { return x.size(); }
    std::size_t ny() const { return y.size(); }
    std::size_t index(std::size_t i, std::size_t j) const { return i * y.size() + j; }
    double stay(std::size_t i, std::size_t j) const { return 1.0 - px_dn[i] - px_up[i] - py_dn[j] - py_up[j]; }
    // Smallest stay probability over the lattice; negative means dt is too large.
    double min_stay() const;
};

// Throws std::invalid_argument when a probability would be negative.
Lattice make_lattice(const ProblemSpec& spec, const LatticeConfig& cfg, double x_center, double y_center);

// Default centre for the stopping oracle at capacity z: x at twice the point
// where the envelope leaves the lower end of the Y interval, y at half the
// envelope there.
std::pair<double, double> stopping_center(const ProblemSpec& spec, double z);

struct StoppingTable {
    Lattice lattice;
    double z = 0.0;
    std::vector<double> v;       // row-major (x index, y index)
    std::vector<char> stop;      // v == -y
    std::vector<double> deltas;  // sup-norm change per sweep
    long sweeps = 0;

    double value(std::size_t i, std::size_t j) const { return v[lattice.index(i, j)]; }
    bool stopped(std::size_t i, std::size_t j) const { return stop[lattice.index(i, j)] != 0; }
    // Largest y index in the stop mask of column i, or -1 when it is empty.
    int boundary_index(std::size_t i) const;
};

// Value iteration of v = max(-y, c_z(x,z) dt + e^{-r dt} E[v(next)]).
StoppingTable stopping_value_iteration(const ProblemSpec& spec, const Lattice& lattice, double z,
                                       double tol = 1e-9, long max_sweeps = 10'000'000);

struct BoundaryDiscrepancy {
    int columns = 0;            // x columns where the curve lies inside the y grid
    int max_cells = 0;          // largest distance, in cells, to the continuous curve
    int max_row_cells = 0;      // largest distance within the same column only
    double max_log_gap = 0.0;   // largest |ln y_oracle - ln y*| over those columns
    double mean_log_gap = 0.0;  // mean of the same gap; the area between the curves per unit ln x
    bool within_one_cell = true;
};

// Compares the stop mask with a curve y*(x). In every interior column where
// y*(x) lies strictly inside the y grid, the oracle's last stopped node is
// measured against the path of the curve through the neighbouring column
// strips: the distance is the row gap to the range of rows the curve crosses
// between x[i-1] and x[i] or between x[i] and x[i+1]. A steep curve thus
// counts as near every row it passes within one column.
template <class Curve>
BoundaryDiscrepancy compare_boundary(const StoppingTable& t, const Curve& curve);

class TerminalCertificationError : public std::runtime_error {
public:
    TerminalCertificationError(const std::string& what, double z_max) : std::runtime_error(what), z_max_(z_max) {}
    double z_max() const { return z_max_; }

private:
    double z_max_;
};

struct ControlTable {
    Lattice lattice;
    std::vector<double> z;          // uniform, increasing
    std::vector<std::vector<double>> V;  // per z index, row-major (x, y)
    std::vector<std::vector<char>> invest;
    long sweeps = 0;

    double value(std::size_t i, std::size_t j, std::size_t k) const { return V[k][lattice.index(i, j)]; }
    bool invests(std::size_t i, std::size_t j, std::size_t k) const { return invest[k][lattice.index(i, j)] != 0; }
};

// Discrete impulse scheme V(z) = min(y dz + V(z + dz), c(x,z) dt + e^{-r dt} E[V(next, z)]),
// solved backward from the top node, where V is the no-investment cost. The
// top is certified by checking that one more impulse would not pay anywhere;
// otherwise TerminalCertificationError is thrown.
ControlTable control_value_iteration(const ProblemSpec& spec, const Lattice& lattice, const std::vector<double>& z_nodes,
                                     double tol = 1e-9, long max_sweeps = 10'000'000);

// Uniform z nodes dz, 2 dz, ..., n dz with n dz at 1.05 times the largest
// zbar over the lattice (or its largest x when zbar is unavailable).
std::vector<double> default_z_nodes(const ProblemSpec& spec, const Lattice& lattice, int n = 20);

struct ActionDiscrepancy {
    long nodes = 0;
    long mismatches = 0;      // raw disagreements
    long unexplained = 0;     // disagreements with no agreeing neighbour within one cell
};

// Compares the invest mask with {z <= z*(x,y)}. A disagreement at a node is
// explained when some node within one cell in each coordinate is classified
// by z* the way the oracle classifies the node itself.
template <class ZStar>
ActionDiscrepancy compare_action(const ControlTable& t, const ZStar& z_star);

void write_stopping_csv(const StoppingTable& t, const std::string& path);
void write_control_csv(const ControlTable& t, const std::string& path);

// ---------------------------------------------------------------------------

template <class Curve>
BoundaryDiscrepancy compare_boundary(const StoppingTable& t, const Curve& curve) {
    BoundaryDiscrepancy out;
    const auto& L = t.lattice;
    const int nx = static_cast<int>(L.nx()), ny = static_cast<int>(L.ny());
    // Row of the last node at or below the curve; -1 below the grid, ny - 1 above.
    std::vector<int> jf(nx);
    std::vector<double> b(nx);
    for (int i = 0; i < nx; ++i) {
        b[i] = curve(L.x[i]);
        int j = -1;
        while (j + 1 < ny && L.y[j + 1] <= b[i]) ++j;
        jf[i] = j;
    }
    const auto gap = [](int j, int a, int c) {
        const int lo = std::min(a, c), hi = std::max(a, c);
        return j < lo ? lo - j : (j > hi ? j - hi : 0);
    };
    double sum = 0.0;
    for (int i = 1; i + 1 < nx; ++i) {
        if (!(b[i] > L.y[0] && b[i] < L.y[ny - 1])) continue;
        const int jo = t.boundary_index(static_cast<std::size_t>(i));
        ++out.columns;
        out.max_row_cells = std::max(out.max_row_cells, std::abs(jo - jf[i]));
        out.max_cells = std::max(out.max_cells, std::min(gap(jo, jf[i - 1], jf[i]), gap(jo, jf[i], jf[i + 1])));
        double lg = model::kInf;
        if (jo >= 0 && jo + 1 < ny) lg = std::abs(std::log(std::sqrt(L.y[jo] * L.y[jo + 1]) / b[i]));
        out.max_log_gap = std::max(out.max_log_gap, lg);
        sum += lg;
    }
    if (out.columns > 0) out.mean_log_gap = sum / out.columns;
    out.within_one_cell = out.max_cells <= 1;
    return out;
}

template <class ZStar>
ActionDiscrepancy compare_action(const ControlTable& t, const ZStar& z_star) {
    ActionDiscrepancy out;
    const auto& L = t.lattice;
    const std::size_t nx = L.nx(), ny = L.ny(), nz = t.z.size();
    std::vector<double> zs(nx * ny);
    for (std::size_t i = 0; i < nx; ++i)
        for (std::size_t j = 0; j < ny; ++j) zs[L.index(i, j)] = z_star(L.x[i], L.y[j]);
    const auto surf = [&](std::size_t i, std::size_t j, std::size_t k) { return t.z[k] <= zs[L.index(i, j)]; };
    for (std::size_t k = 0; k + 1 < nz; ++k)
        for (std::size_t i = 0; i < nx; ++i)
            for (std::size_t j = 0; j < ny; ++j) {
                ++out.nodes;
                const bool o = t.invests(i, j, k);
                if (o == surf(i, j, k)) continue;
                ++out.mismatches;
                bool explained = false;
                for (int di = -1; di <= 1 && !explained; ++di)
                    for (int dj = -1; dj <= 1 && !explained; ++dj)
                        for (int dk = -1; dk <= 1 && !explained; ++dk) {
                            const long a = static_cast<long>(i) + di, b = static_cast<long>(j) + dj,
                                       c = static_cast<long>(k) + dk;
                            if (a < 0 || b < 0 || c < 0 || a >= static_cast<long>(nx) || b >= static_cast<long>(ny) ||
                                c >= static_cast<long>(nz))
                                continue;
                            if (surf(a, b, c) == o) explained = true;
                        }
                if (!explained) ++out.unexplained;
            }
    return out;
}

}  // namespace freebound::oracle
