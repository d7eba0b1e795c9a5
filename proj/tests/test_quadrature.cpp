#include <doctest.h>

#include <cmath>

#include "freebound/quadrature.hpp"
#include "support.hpp"

using namespace freebound;

TEST_SUITE("quadrature") {

TEST_CASE("Gauss-Legendre integrates polynomials exactly") {
    const auto g = quadrature::gauss_legendre(8, 0.0, 2.0);
    double s = 0.0;
    for (std::size_t k = 0; k < g.nodes.size(); ++k) s += g.weights[k] * std::pow(g.nodes[k], 15);
    CHECK(s == doctest::Approx(std::pow(2.0, 16) / 16.0).epsilon(1e-13));
    for (std::size_t k = 1; k < g.nodes.size(); ++k) CHECK(g.nodes[k] > g.nodes[k - 1]);
}

TEST_CASE("discounted time integral of constants and exponentials") {
    const auto q = quadrature::make_time_quadrature(0.1);
    const auto one = quadrature::discounted_time_integral(0.1, [](double) { return 1.0; }, q);
    CHECK(one.value == doctest::Approx(10.0).epsilon(1e-8));
    CHECK(one.tail_bound <= 1e-8);
    CHECK(q.tail_mass() == doctest::Approx(1e-9).epsilon(1e-6));
    const auto e = quadrature::discounted_time_integral(0.1, [](double t) { return std::exp(-0.05 * t); }, q);
    CHECK(e.value == doctest::Approx(1.0 / 0.15).epsilon(1e-6));
}

TEST_CASE("marginal cost of doing nothing matches its closed form") {
    const auto& s = support::benchmark();
    const auto q = quadrature::make_time_quadrature(s.r);
    for (double x : {0.5, 1.0, 3.0}) {
        const double z = 1.0;
        const auto est = quadrature::discounted_time_integral(
            s.r, [&](double t) { return 2.0 * (z - x * std::exp(0.01 * t)); }, q);
        CHECK(est.value == doctest::Approx(2.0 * (z / 0.1 - x / 0.09)).epsilon(1e-4));
    }
}

TEST_CASE("rule built for another rate is rejected") {
    const auto q = quadrature::make_time_quadrature(0.1);
    CHECK_THROWS(quadrature::discounted_time_integral(0.2, [](double) { return 1.0; }, q));
}

TEST_CASE("space integral recovers mass and mean") {
    const auto& s = support::benchmark();
    const quadrature::QuadratureConfig cfg;
    const auto sq = quadrature::make_space_quadrature(cfg);
    for (double t : {0.01, 1.0, 50.0}) {
        const double mass = quadrature::weighted_space_integral(s.x, t, 1.0, [](double) { return 1.0; }, sq);
        CHECK(mass == doctest::Approx(1.0 - 2.0 * cfg.tail_prob).epsilon(1e-8));
        // Mean over the truncated window: x e^{mu t} P(|W - sigma sqrt t| <= half width).
        const double mean = quadrature::weighted_space_integral(s.x, t, 2.0, [](double v) { return v; }, sq);
        const double st = 0.2 * std::sqrt(t), W = sq.half_width;
        const double window = model::norm_cdf(W - st) - model::norm_cdf(-W - st);
        CHECK(mean == doctest::Approx(2.0 * std::exp(0.01 * t) * window).epsilon(1e-9));
    }
}

TEST_CASE("space nodes are quantiles of the transition law") {
    const auto& s = support::benchmark();
    const auto sq = quadrature::make_space_quadrature();
    const auto xi = sq.xi_nodes(s.y, 2.0, 1.0);
    for (std::size_t k = 0; k < xi.size(); k += 37) {
        const double p = model::norm_cdf(sq.w_nodes[k]);
        CHECK(1.0 - model::survival_above(s.y, 2.0, 1.0, xi[k]) == doctest::Approx(p).epsilon(1e-9));
        CHECK(quadrature::standardize(s.y, 2.0, 1.0, xi[k]) == doctest::Approx(sq.w_nodes[k]).epsilon(1e-10));
    }
}

TEST_CASE("split integral of an indicator matches the survival function") {
    const auto& s = support::benchmark();
    const auto sq = quadrature::make_space_quadrature();
    const double cut = 1.3;
    const double v = quadrature::weighted_space_integral_split(
        s.y, 3.0, 1.0, cut, [&](double e) { return e > cut ? 1.0 : 0.0; }, sq);
    CHECK(v == doctest::Approx(model::survival_above(s.y, 3.0, 1.0, cut) - 1e-7).epsilon(1e-10));
}

TEST_CASE("refining the node counts changes the result by little") {
    const auto& s = support::benchmark();
    const auto h = [](double v) { return std::sqrt(v) * std::exp(-v); };
    quadrature::QuadratureConfig a, b;
    b.space_nodes = 2 * a.space_nodes;
    const double ia = quadrature::weighted_space_integral(s.x, 4.0, 1.0, h, quadrature::make_space_quadrature(a));
    const double ib = quadrature::weighted_space_integral(s.x, 4.0, 1.0, h, quadrature::make_space_quadrature(b));
    CHECK(std::abs(ia - ib) < 1e-9);
    const double exact = support::integrate_positive(
        [&](double v) { return h(v) * support::gbm_density(0.01, 0.2, 4.0, 1.0, v); });
    CHECK(ib == doctest::Approx(exact).epsilon(1e-6));
}

}
