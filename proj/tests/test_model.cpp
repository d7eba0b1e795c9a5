#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "freebound/model.hpp"
#include "support.hpp"

using namespace freebound;
using support::integrate_positive;

TEST_SUITE("model") {

TEST_CASE("benchmark passes every check") {
    const auto rep = model::validate(support::benchmark());
    CHECK_MESSAGE(rep.all_pass(), rep.failures());
    const auto* beta = rep.find("moment.x_beta");
    REQUIRE(beta != nullptr);
    // r - (2 mu1 + sigma1^2) = 0.1 - 0.06
    CHECK(beta->quantity == doctest::Approx(0.04).epsilon(1e-12));
}

TEST_CASE("slow discounting fails the moment check by name") {
    auto s = support::benchmark();
    s.r = 0.05;
    const auto rep = model::validate(s);
    CHECK_FALSE(rep.all_pass());
    const auto* c = rep.find("moment.x_beta");
    REQUIRE(c != nullptr);
    CHECK(c->status == model::CheckStatus::Fail);
    CHECK(c->quantity == doctest::Approx(-0.01).epsilon(1e-12));
}

TEST_CASE("fast growing price fails the first moment of Y") {
    auto s = support::benchmark();
    s.y = model::DiffusionSpec::gbm(0.2, 0.15);
    const auto rep = model::validate(s);
    const auto* c = rep.find("moment.y_first");
    REQUIRE(c != nullptr);
    CHECK(c->status == model::CheckStatus::Fail);
}

TEST_CASE("constant marginal cost fails the unbounded c_z check") {
    auto s = support::benchmark();
    s.cost = model::CostModel::linear(1.0);
    const auto rep = model::validate(s);
    const auto* c = rep.find("cost.cz_unbounded");
    REQUIRE(c != nullptr);
    CHECK(c->status == model::CheckStatus::Fail);
}

TEST_CASE("custom diffusion without a density is reported, not thrown") {
    auto s = support::benchmark();
    model::DiffusionSpec d;
    d.kind = model::DiffusionKind::Custom;
    d.custom.drift = [](double v) { return 0.01 * v; };
    d.custom.vol = [](double v) { return 0.2 * v; };
    s.x = d;
    model::ValidationReport rep;
    CHECK_NOTHROW(rep = model::validate(s));
    const auto* c = rep.find("x.density");
    REQUIRE(c != nullptr);
    CHECK(c->status == model::CheckStatus::Fail);
    CHECK_THROWS_AS(model::density(d, 1.0, 1.0, 1.0), std::invalid_argument);
}

TEST_CASE("transition density matches the lognormal law") {
    const auto& s = support::benchmark();
    for (double t : {0.01, 1.0, 25.0}) {
        for (double to : {0.3, 1.0, 2.7}) {
            CHECK(model::density(s.x, t, 1.3, to) ==
                  doctest::Approx(support::gbm_density(0.01, 0.2, t, 1.3, to)).epsilon(1e-12));
        }
        const double mass = integrate_positive([&](double v) { return model::density(s.x, t, 1.0, v); });
        CHECK(mass == doctest::Approx(1.0).epsilon(1e-8));
    }
    const double mean = integrate_positive([&](double v) { return v * model::density(s.x, 1.0, 1.0, v); });
    CHECK(mean == doctest::Approx(std::exp(0.01)).epsilon(1e-8));
}

TEST_CASE("moment growth rates") {
    const auto& s = support::benchmark();
    for (double q : {1.0, 2.0}) {
        const double kappa = model::gbm_moment_rate(s.x, q);
        CHECK(kappa == doctest::Approx(q * 0.01 + 0.5 * q * (q - 1.0) * 0.04).epsilon(1e-14));
        const double m = integrate_positive([&](double v) { return std::pow(v, q) * model::density(s.x, 3.0, 1.0, v); });
        CHECK(m == doctest::Approx(std::exp(kappa * 3.0)).epsilon(1e-8));
    }
}

TEST_CASE("survival and discounted pull agree with numeric integrals") {
    const auto& s = support::benchmark();
    const double r = s.r;
    for (double t : {0.1, 2.0, 30.0}) {
        for (double a : {0.4, 1.0, 3.0}) {
            const auto p = [&](double v) { return support::gbm_density(0.01, 0.15, t, 1.0, v); };
            const double surv = support::integrate([&](double u) { return p(std::exp(u)) * std::exp(u); },
                                                   std::log(a), std::log(1e12));
            CHECK(model::survival_above(s.y, t, 1.0, a) == doctest::Approx(surv).epsilon(1e-8));
            const double pull = support::integrate(
                [&](double u) {
                    const double v = std::exp(u);
                    return (r * v - 0.01 * v) * p(v) * v;
                },
                std::log(1e-12), std::log(a));
            CHECK(model::discounted_pull_below(s.y, r, t, 1.0, a) == doctest::Approx(pull).epsilon(1e-8));
            const double above = model::discounted_pull_above(s.y, r, t, 1.0, a);
            CHECK(pull + above == doctest::Approx(0.09 * std::exp(0.01 * t)).epsilon(1e-10));
        }
    }
}

TEST_CASE("endpoint limits") {
    const auto& s = support::benchmark();
    CHECK(model::survival_above(s.y, 1.0, 1.0, 0.0) == doctest::Approx(1.0));
    CHECK(model::survival_above(s.y, 1.0, 1.0, model::kInf) == doctest::Approx(0.0));
    CHECK(model::discounted_pull_below(s.y, s.r, 1.0, 1.0, 0.0) == doctest::Approx(0.0));
    CHECK(model::discounted_pull_below(s.y, s.r, 1.0, 1.0, model::kInf) ==
          doctest::Approx(0.09 * std::exp(0.01)).epsilon(1e-12));
}

TEST_CASE("non-positive time is a domain error") {
    const auto& s = support::benchmark();
    CHECK_THROWS_AS(model::density(s.x, 0.0, 1.0, 1.0), std::domain_error);
    CHECK_THROWS_AS(model::density(s.x, -1.0, 1.0, 1.0), std::domain_error);
}

TEST_CASE("quantile inverts the survival function") {
    const auto& s = support::benchmark();
    for (double p : {1e-6, 0.3, 0.999}) {
        const double q = model::quantile(s.x, 2.0, 1.0, p);
        CHECK(1.0 - model::survival_above(s.x, 2.0, 1.0, q) == doctest::Approx(p).epsilon(1e-9));
    }
}

TEST_CASE("spread cost and its derivative") {
    const auto c = model::CostModel::spread_power(1.0, 2.0);
    CHECK(c.c(3.0, 1.0) == doctest::Approx(4.0));
    CHECK(c.cz(3.0, 1.0) == doctest::Approx(-4.0));
    CHECK(c.cz(1.0, 3.0) == doctest::Approx(4.0));
    const auto l = model::CostModel::linear(0.5);
    CHECK(l.c(2.0, 4.0) == doctest::Approx(2.0));
    CHECK(l.cz(2.0, 4.0) == doctest::Approx(0.5));
}

}
