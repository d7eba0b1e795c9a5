#pragma once

#include <gsl/gsl_errno.h>
#include <gsl/gsl_integration.h>

#include <cmath>
#include <functional>
#include <map>
#include <memory>

#include "freebound/boundary.hpp"
#include "freebound/model.hpp"

namespace support {

inline constexpr double kPi = 3.14159265358979323846;

// Lognormal transition density of a GBM written out directly.
inline double gbm_density(double mu, double sigma, double t, double from, double to) {
    const double s = sigma * std::sqrt(t);
    const double m = std::log(from) + (mu - 0.5 * sigma * sigma) * t;
    const double d = (std::log(to) - m) / s;
    return std::exp(-0.5 * d * d) / (to * s * std::sqrt(2.0 * kPi));
}

// Adaptive integral of f over [a, b] (b may be infinite).
inline double integrate(const std::function<double(double)>& f, double a, double b, double tol = 1e-12) {
    gsl_set_error_handler_off();
    gsl_integration_workspace* w = gsl_integration_workspace_alloc(2000);
    gsl_function F;
    F.function = [](double x, void* p) { return (*static_cast<const std::function<double(double)>*>(p))(x); };
    F.params = const_cast<std::function<double(double)>*>(&f);
    double result = 0.0, err = 0.0;
    if (std::isinf(b))
        gsl_integration_qagiu(&F, a, tol, tol, 2000, w, &result, &err);
    else
        gsl_integration_qags(&F, a, b, tol, tol, 2000, w, &result, &err);
    gsl_integration_workspace_free(w);
    return result;
}

// Integral over (0, inf) of a function of a positive state, in log coordinates.
inline double integrate_positive(const std::function<double(double)>& f, double lo = 1e-12, double hi = 1e12) {
    return integrate([&](double u) { return f(std::exp(u)) * std::exp(u); }, std::log(lo), std::log(hi));
}

inline const freebound::model::ProblemSpec& benchmark() {
    static const auto s = freebound::model::ProblemSpec::benchmark();
    return s;
}

// Solved benchmark boundaries with the default solver settings, cached per z.
inline const freebound::boundary::Boundary& solved(double z) {
    static std::map<double, std::unique_ptr<freebound::boundary::Boundary>> cache;
    auto& slot = cache[z];
    if (!slot) slot = std::make_unique<freebound::boundary::Boundary>(freebound::boundary::solve_boundary(benchmark(), z));
    return *slot;
}

}  // namespace support
