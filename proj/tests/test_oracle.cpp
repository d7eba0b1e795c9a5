#include <doctest.h>

#include <cmath>

#include "freebound/oracle.hpp"
#include "support.hpp"

using namespace freebound;

namespace {

oracle::LatticeConfig small_lattice(int n = 30) {
    oracle::LatticeConfig c;
    c.x_nodes = n;
    c.y_nodes = n;
    return c;
}

// No-investment cost on the lattice by plain fixed-point iteration.
std::vector<double> discrete_Phi(const model::ProblemSpec& spec, const oracle::Lattice& L, double z) {
    const std::size_t nx = L.nx(), ny = L.ny();
    std::vector<double> w(nx * ny, 0.0), next(nx * ny);
    for (int sweep = 0; sweep < 1000000; ++sweep) {
        double delta = 0.0;
        for (std::size_t i = 0; i < nx; ++i)
            for (std::size_t j = 0; j < ny; ++j) {
                const auto at = [&](std::size_t a, std::size_t b) { return w[L.index(a, b)]; };
                double e = L.stay(i, j) * at(i, j);
                e += L.px_dn[i] * at(i > 0 ? i - 1 : i, j) + L.px_up[i] * at(i + 1 < nx ? i + 1 : i, j);
                e += L.py_dn[j] * at(i, j > 0 ? j - 1 : j) + L.py_up[j] * at(i, j + 1 < ny ? j + 1 : j);
                const double v = spec.cost.c(L.x[i], z) * L.dt + L.discount * e;
                delta = std::max(delta, std::abs(v - at(i, j)));
                next[L.index(i, j)] = v;
            }
        w.swap(next);
        if (delta < 1e-12) break;
    }
    return w;
}

}  // namespace

TEST_SUITE("oracle") {

TEST_CASE("chain probabilities") {
    const auto& s = support::benchmark();
    const auto L = oracle::make_lattice(s, small_lattice(), 1.0, 1.0);
    CHECK(L.min_stay() >= 0.0);
    for (std::size_t i = 0; i < L.nx(); ++i)
        for (std::size_t j = 0; j < L.ny(); ++j) {
            CHECK(L.px_dn[i] >= 0.0);
            CHECK(L.px_up[i] >= 0.0);
            CHECK(L.py_dn[j] >= 0.0);
            CHECK(L.py_up[j] >= 0.0);
            CHECK(L.stay(i, j) >= 0.0);
        }
    CHECK(L.discount == doctest::Approx(std::exp(-0.1 * 0.01)));
    for (std::size_t i = 1; i < L.nx(); ++i) CHECK(L.x[i] > L.x[i - 1]);

    auto bad = small_lattice(200);
    bad.dt = 1.0;
    CHECK_THROWS_AS(oracle::make_lattice(s, bad, 1.0, 1.0), std::invalid_argument);
    bad.dt = -0.1;
    CHECK_THROWS_AS(oracle::make_lattice(s, bad, 1.0, 1.0), std::invalid_argument);
}

TEST_CASE("stopping iteration on the benchmark") {
    const auto& s = support::benchmark();
    const auto [xc, yc] = oracle::stopping_center(s, 1.0);
    const auto L = oracle::make_lattice(s, small_lattice(40), xc, yc);
    const auto t = oracle::stopping_value_iteration(s, L, 1.0);
    const double beta = L.discount;
    double vmax = 0.0;
    for (double v : t.v) vmax = std::max(vmax, std::abs(v));
    // Each sweep contracts by the one-step discount, up to rounding of v.
    const double eps = 64.0 * 2.2e-16 * vmax;
    for (std::size_t k = 1; k < t.deltas.size(); ++k) CHECK(t.deltas[k] <= beta * t.deltas[k - 1] + eps);
    bool any_stop = false;
    for (std::size_t i = 0; i < L.nx(); ++i)
        for (std::size_t j = 0; j < L.ny(); ++j) {
            CHECK(t.value(i, j) >= -L.y[j]);
            CHECK(t.stopped(i, j) == (t.value(i, j) == -L.y[j]));
            any_stop = any_stop || t.stopped(i, j);
        }
    CHECK(any_stop);
    // Stopping sets shrink in y: a stopped node has stopped nodes below it.
    for (std::size_t i = 0; i < L.nx(); ++i)
        for (std::size_t j = 1; j < L.ny(); ++j)
            if (t.stopped(i, j)) CHECK(t.stopped(i, j - 1));
}

TEST_CASE("masks for constant marginal costs") {
    const auto L = oracle::make_lattice(support::benchmark(), small_lattice(), 1.0, 1.0);
    auto lin = support::benchmark();
    lin.cost = model::CostModel::linear(1.0);
    const auto t = oracle::stopping_value_iteration(lin, L, 1.0);
    for (char c : t.stop) CHECK(c == 0);

    // With c_z = 0 waiting only discounts the payment, so stopping never wins.
    auto zero = support::benchmark();
    zero.cost.kind = model::CostKind::Custom;
    zero.cost.custom_c = [](double, double) { return 0.0; };
    zero.cost.custom_cz = [](double, double) { return 0.0; };
    const auto t0 = oracle::stopping_value_iteration(zero, L, 1.0);
    for (std::size_t n = 0; n < t0.stop.size(); ++n) CHECK(t0.stop[n] == 0);
}

TEST_CASE("control iteration without investment reduces to the running cost") {
    const auto& s = support::benchmark();
    // Prices so high that buying capacity never pays.
    const auto L = oracle::make_lattice(s, small_lattice(20), 1.0, 1e4);
    const auto z = oracle::default_z_nodes(s, L, 6);
    const auto t = oracle::control_value_iteration(s, L, z);
    for (std::size_t k = 0; k < z.size(); ++k) {
        const auto w = discrete_Phi(s, L, z[k]);
        for (std::size_t n = 0; n < w.size(); ++n) {
            CHECK(t.invest[k][n] == 0);
            CHECK(t.V[k][n] == doctest::Approx(w[n]).epsilon(1e-7));
        }
    }
}

TEST_CASE("terminal certification") {
    const auto& s = support::benchmark();
    const auto L = oracle::make_lattice(s, small_lattice(20), 1.0, 1.0);
    CHECK_THROWS_AS(oracle::control_value_iteration(s, L, {0.1, 0.2}), oracle::TerminalCertificationError);
}

TEST_CASE("capacity derivative of the control value is the stopping value") {
    const auto& s = support::benchmark();
    const auto L = oracle::make_lattice(s, small_lattice(), 1.0, 1.0);
    const auto zn = oracle::default_z_nodes(s, L, 120);
    const auto t = oracle::control_value_iteration(s, L, zn);
    std::size_t k = 0;
    while (zn[k + 1] < 1.0) ++k;
    const double dz = zn[1] - zn[0];
    // For a quadratic cost c(x,z+dz) - c(x,z) = dz c_z(x,z+dz/2), so the
    // difference quotient of the impulse scheme is the stopping scheme at the
    // midpoint capacity.
    const auto st = oracle::stopping_value_iteration(s, L, zn[k] + 0.5 * dz);
    double worst = 0.0;
    for (std::size_t i = 0; i < L.nx(); ++i)
        for (std::size_t j = 0; j < L.ny(); ++j) {
            const double d = (t.value(i, j, k + 1) - t.value(i, j, k)) / dz;
            const double v = st.value(i, j);
            worst = std::max(worst, std::abs(d - v) / (1.0 + std::abs(v)));
        }
    CHECK(worst < 1e-7);
}

TEST_CASE("boundary comparison metric") {
    const auto& s = support::benchmark();
    const auto L = oracle::make_lattice(s, small_lattice(), 1.0, 1.0);
    const auto t = oracle::stopping_value_iteration(s, L, 1.0);
    // The oracle's own staircase is at distance zero from itself.
    const auto stair = [&](double x) {
        std::size_t i = 0;
        while (i + 1 < L.nx() && std::abs(L.x[i + 1] - x) < std::abs(L.x[i] - x)) ++i;
        const int j = t.boundary_index(i);
        if (j < 0) return 0.5 * L.y[0];
        if (j + 1 >= static_cast<int>(L.ny())) return 2.0 * L.y.back();
        return std::sqrt(L.y[j] * L.y[j + 1]);
    };
    const auto d = oracle::compare_boundary(t, stair);
    CHECK(d.max_cells == 0);
    CHECK(d.max_row_cells == 0);
    CHECK(d.within_one_cell);
    // A curve far below the grid is not compared at all.
    CHECK(oracle::compare_boundary(t, [](double) { return 1e-12; }).columns == 0);
}

}
