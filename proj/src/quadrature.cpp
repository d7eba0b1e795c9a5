#include "freebound/quadrature.hpp"

#include <gsl/gsl_integration.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace freebound::quadrature {

Rule gauss_legendre(int n, double a, double b) {
    if (n < 1) throw std::invalid_argument("Gauss-Legendre rule needs at least one node");
    std::unique_ptr<gsl_integration_glfixed_table, decltype(&gsl_integration_glfixed_table_free)> table(
        gsl_integration_glfixed_table_alloc(static_cast<size_t>(n)), &gsl_integration_glfixed_table_free);
    Rule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    for (int i = 0; i < n; ++i)
        gsl_integration_glfixed_point(a, b, static_cast<size_t>(i), &rule.nodes[i], &rule.weights[i], table.get());
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int i, int j) { return rule.nodes[i] < rule.nodes[j]; });
    Rule sorted;
    for (int i : idx) {
        sorted.nodes.push_back(rule.nodes[i]);
        sorted.weights.push_back(rule.weights[i]);
    }
    return sorted;
}

double TimeQuadrature::head_weight() const { return -std::expm1(-r * t_min) / r; }
double TimeQuadrature::tail_mass() const { return std::exp(-r * t_max) / r; }

TimeQuadrature make_time_quadrature(double r, const QuadratureConfig& cfg) {
    if (!(r > 0.0)) throw std::invalid_argument("discount rate must be positive");
    if (!(cfg.t_min > 0.0) || !(cfg.discount_tail > 0.0 && cfg.discount_tail < 1.0))
        throw std::invalid_argument("invalid time cutoffs");
    TimeQuadrature q;
    q.r = r;
    q.t_min = cfg.t_min;
    q.t_max = -std::log(cfg.discount_tail) / r;
    // u = e^{-rt}: int_{t_min}^{t_max} e^{-rt} g(t) dt = (1/r) int_{u_lo}^{u_hi} g(-ln u / r) du
    const double u_lo = cfg.discount_tail, u_hi = std::exp(-r * cfg.t_min);
    const Rule gl = gauss_legendre(cfg.time_nodes, u_lo, u_hi);
    q.dnodes.push_back(q.t_min);
    q.dweights.push_back(q.head_weight());
    for (int i = cfg.time_nodes - 1; i >= 0; --i) {
        const double u = gl.nodes[i];
        const double t = -std::log(u) / r;
        q.nodes.push_back(t);
        q.weights.push_back(gl.weights[i] / (r * u));
        q.dnodes.push_back(t);
        q.dweights.push_back(gl.weights[i] / r);
    }
    return q;
}

SpaceQuadrature make_space_quadrature(const QuadratureConfig& cfg) {
    if (!(cfg.tail_prob > 0.0 && cfg.tail_prob < 0.5)) throw std::invalid_argument("tail probability out of range");
    SpaceQuadrature q;
    q.tail_prob = cfg.tail_prob;
    q.half_width = -model::norm_quantile(cfg.tail_prob);
    q.unit = gauss_legendre(cfg.space_nodes);
    const std::size_t n = q.unit.nodes.size();
    q.w_nodes.resize(n);
    q.w_weights.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        q.w_nodes[k] = q.half_width * q.unit.nodes[k];
        q.w_weights[k] = q.half_width * q.unit.weights[k] * model::norm_pdf(q.w_nodes[k]);
    }
    return q;
}

double map_node(const model::DiffusionSpec& d, double t, double x, double w) {
    if (d.kind == model::DiffusionKind::GBM) {
        const double s = d.sigma();
        return x * std::exp((d.mu() - 0.5 * s * s) * t + s * std::sqrt(t) * w);
    }
    return model::quantile(d, t, x, model::norm_cdf(w));
}

// Position of a state point in the standardized coordinate.
double standardize(const model::DiffusionSpec& d, double t, double x, double cut) {
    if (d.kind == model::DiffusionKind::GBM) {
        const double s = d.sigma();
        return (std::log(cut / x) - (d.mu() - 0.5 * s * s) * t) / (s * std::sqrt(t));
    }
    return model::norm_quantile(1.0 - model::survival_above(d, t, x, cut));
}

double SpaceQuadrature::xi(const model::DiffusionSpec& d, double t, double x, std::size_t k) const {
    return map_node(d, t, x, w_nodes[k]);
}

std::vector<double> SpaceQuadrature::xi_nodes(const model::DiffusionSpec& d, double t, double x) const {
    std::vector<double> out(w_nodes.size());
    for (std::size_t k = 0; k < w_nodes.size(); ++k) out[k] = map_node(d, t, x, w_nodes[k]);
    return out;
}

Estimate discounted_time_integral(double r, const std::function<double(double)>& g, const TimeQuadrature& q) {
    if (std::abs(r - q.r) > 1e-15 * std::max(1.0, r)) throw std::invalid_argument("rule built for a different rate");
    Estimate est;
    double sup = 0.0;
    for (std::size_t k = 0; k < q.dnodes.size(); ++k) {
        const double v = g(q.dnodes[k]);
        if (!std::isfinite(v)) {
            std::ostringstream os;
            os << "non-finite integrand at t=" << q.dnodes[k];
            throw std::runtime_error(os.str());
        }
        est.value += q.dweights[k] * v;
        sup = std::max(sup, std::abs(v));
    }
    est.tail_bound = sup * q.tail_mass();
    return est;
}

double weighted_space_integral(const model::DiffusionSpec& d, double t, double x,
                               const std::function<double(double)>& h, const SpaceQuadrature& q) {
    double acc = 0.0;
    for (std::size_t k = 0; k < q.w_nodes.size(); ++k) {
        const double v = h(map_node(d, t, x, q.w_nodes[k]));
        if (!std::isfinite(v)) {
            std::ostringstream os;
            os << "non-finite space integrand at node " << k << " (t=" << t << ")";
            throw std::runtime_error(os.str());
        }
        acc += q.w_weights[k] * v;
    }
    return acc;
}

double weighted_space_integral_split(const model::DiffusionSpec& d, double t, double x, double cut,
                                     const std::function<double(double)>& h, const SpaceQuadrature& q) {
    const double W = q.half_width;
    const double ws = std::clamp(standardize(d, t, x, cut), -W, W);
    double acc = 0.0;
    for (auto [a, b] : {std::pair{-W, ws}, std::pair{ws, W}}) {
        if (b - a <= 0.0) continue;
        const double c = 0.5 * (a + b), hw = 0.5 * (b - a);
        for (std::size_t k = 0; k < q.unit.nodes.size(); ++k) {
            const double w = c + hw * q.unit.nodes[k];
            acc += hw * q.unit.weights[k] * model::norm_pdf(w) * h(map_node(d, t, x, w));
        }
    }
    return acc;
}

}  // namespace freebound::quadrature
