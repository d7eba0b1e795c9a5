#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "freebound/control.hpp"
#include "support.hpp"

using namespace freebound;

namespace {

// A coarse surface: enough slices for lookups around z = 1.
const control::BoundarySurface& coarse_surface() {
    static const control::BoundarySurface s = [] {
        control::SurfaceConfig cfg;
        cfg.solver.grid_points = 60;
        return control::build_surface(support::benchmark(), {0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0, 8.0, 13.0, 40.0},
                                      cfg);
    }();
    return s;
}

double Phi(double x, double z) { return x * x / 0.04 - 2.0 * z * x / 0.09 + z * z / 0.1; }

}  // namespace

TEST_SUITE("control") {

TEST_CASE("z grid") {
    control::SurfaceConfig cfg;
    const auto g = control::default_z_grid({1.0}, cfg);
    for (std::size_t k = 1; k < g.size(); ++k) CHECK(g[k] > g[k - 1]);
    const double h = control::fd_step(cfg, 1.0);
    CHECK(h == doctest::Approx(0.02));
    for (double z : {1.0 - h, 1.0, 1.0 + h})
        CHECK(std::any_of(g.begin(), g.end(), [&](double q) { return std::abs(q - z) < 1e-12; }));
    CHECK(g.front() <= 0.25 + 1e-12);
    CHECK(g.back() >= 1e11 * (1 - 1e-12));
}

TEST_CASE("zbar is the root of F in z") {
    const auto& s = support::benchmark();
    CHECK(control::z_bar(s, 2.0, 10.0) == doctest::Approx(2.0 - 0.45));
    for (double x : {0.5, 2.0})
        for (double y : {0.1, 3.0}) CHECK(boundary::F(s, x, y, control::z_bar(s, x, y)) == doctest::Approx(0.0));
}

TEST_CASE("surface lookups and monotonicity") {
    const auto& s = coarse_surface();
    std::vector<double> xs, ys;
    for (int i = 0; i < 20; ++i) xs.push_back(0.5 * std::pow(8.0, i / 19.0));
    for (int j = 0; j < 20; ++j) ys.push_back(0.05 * std::pow(400.0, j / 19.0));
    const auto chk = control::check_surface(s, xs, ys);
    CHECK_MESSAGE(chk.ok(), (chk.violations.empty() ? std::string() : chk.violations.front()));
    for (double x : xs)
        for (double y : ys) {
            const double zs = s.z_star(x, y);
            CHECK(std::isfinite(zs));
            CHECK(zs <= control::z_bar(s.spec(), x, y) + 1e-9);
        }
    // At a slice value the lookup inverts the slice.
    const std::size_t k = s.find(1.0);
    REQUIRE(k != static_cast<std::size_t>(-1));
    const double y = s.y_star(k, 3.0);
    CHECK(s.z_star(3.0, y * 1.001) <= 1.0 + 1e-9);
    CHECK(s.z_star(3.0, y * 0.999) >= 1.0 - 1e-9);
}

TEST_CASE("simulated control") {
    const auto& spec = support::benchmark();
    const auto& s = coarse_surface();
    mc::MCConfig cfg;
    cfg.dt = 0.04;
    cfg.horizon = 10.0;
    cfg.seed = 7;

    // Starting below z* forces an immediate purchase up to z*.
    const double x = 3.0, y = 0.2, z = 0.5;
    const auto p = control::simulate_control(spec, s, x, y, z, cfg);
    CHECK(p.nu.front() == doctest::Approx(s.z_star(x, y) - z).epsilon(1e-12));
    for (std::size_t t = 0; t < p.nu.size(); ++t) {
        CHECK(std::isfinite(p.nu[t]));
        if (t > 0) CHECK(p.nu[t] >= p.nu[t - 1]);
        CHECK(p.z_path[t] == doctest::Approx(z + p.nu[t]));
        const double zs = s.z_star(p.x_path[t], p.y_path[t]);
        CHECK(p.z_path[t] >= zs - 1e-9);
        if (t > 0 && p.nu[t] > p.nu[t - 1]) CHECK(p.z_path[t] == doctest::Approx(zs));
    }

    // Far above z* nothing is ever bought.
    for (std::uint64_t path = 0; path < 5; ++path) {
        const auto q = control::simulate_control(spec, s, 1.0, 1.0, 30.0, cfg, path);
        double top = 0.0;
        for (std::size_t t = 0; t < q.nu.size(); ++t) top = std::max(top, s.z_star(q.x_path[t], q.y_path[t]));
        if (top <= 30.0) CHECK(q.nu.back() == 0.0);
    }

    // Same seed and path index, same path.
    const auto again = control::simulate_control(spec, s, x, y, z, cfg);
    CHECK(again.x_path == p.x_path);
    CHECK(again.nu == p.nu);
}

TEST_CASE("costs of fixed policies") {
    const auto& spec = support::benchmark();
    const auto& s = coarse_surface();
    mc::MCConfig cfg;
    cfg.paths = 200;
    cfg.dt = 0.05;
    const auto j = control::estimate_J(spec, s, 1.0, 2.0, 1.0, {control::Policy::do_nothing(), control::Policy::jump(0.5)},
                                       cfg);
    REQUIRE(j.size() == 2);
    CHECK(j[0].exact);
    CHECK(j[0].est.mean == doctest::Approx(Phi(1.0, 1.0)).epsilon(1e-12));
    CHECK(j[0].est.mean == doctest::Approx(12.7778).epsilon(1e-5));
    CHECK(j[1].exact);
    CHECK(j[1].est.mean == doctest::Approx(0.5 * 2.0 + Phi(1.0, 1.5)).epsilon(1e-12));
}

TEST_CASE("U equals Phi when stopping never pays") {
    auto spec = support::benchmark();
    spec.cost = model::CostModel::linear(1.0);
    control::SurfaceConfig cfg;
    cfg.solver.grid_points = 40;
    const auto s = control::build_surface(spec, {0.5, 1.0, 2.0, 4.0}, cfg);
    // Never stopping at any capacity: the integrand vanishes and U = Phi.
    const auto u = control::evaluate_U(s, 1.0, 1.0, 1.0, cfg);
    CHECK(u.integral == doctest::Approx(0.0));
    CHECK(u.U == doctest::Approx(10.0).epsilon(1e-6));
}

TEST_CASE("U is below the do-nothing cost") {
    auto s = coarse_surface();
    control::SurfaceConfig cfg;
    cfg.solver.grid_points = 60;
    const std::vector<std::array<double, 3>> pts{{1.0, 1.0, 1.0}, {0.8, 2.0, 0.5}};
    control::extend_until_decayed(s, pts, cfg);
    for (const auto& p : pts) {
        const auto u = control::evaluate_U(s, p[0], p[1], p[2], cfg);
        CHECK(u.decayed);
        CHECK(u.Phi == doctest::Approx(Phi(p[0], p[2])).epsilon(1e-12));
        CHECK(u.integral >= 0.0);
        CHECK(u.U <= u.Phi);
        CHECK(u.U > 0.0);
    }
}

TEST_CASE("first action matches the first boundary hit") {
    const auto& spec = support::benchmark();
    const auto& s = coarse_surface();
    mc::MCConfig cfg;
    cfg.paths = 2000;
    cfg.dt = 0.02;
    cfg.horizon = 20.0;
    cfg.seed = 23;
    // z* (1.2, 3) is below 1, so nothing is bought at time 0.
    REQUIRE(s.z_star(1.2, 3.0) <= 1.0);
    const auto rep = control::first_action_vs_hit(spec, s, 1.2, 3.0, 1.0, cfg);
    CHECK(rep.acted > 100);
    CHECK(rep.ks < 0.05);
}

}
