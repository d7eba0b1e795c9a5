#pragma once

#include <functional>
#include <vector>

#include "freebound/model.hpp"

namespace freebound::quadrature {

struct QuadratureConfig {
    int time_nodes = 128;
    int space_nodes = 256;
    double t_min = 1e-5;
    double discount_tail = 1e-10;  // t_max = -ln(discount_tail) / r
    double tail_prob = 1e-7;       // lower/upper truncation probability in space
};

struct Rule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

// Gauss-Legendre rule on [a, b], nodes increasing.
Rule gauss_legendre(int n, double a = -1.0, double b = 1.0);

// Nodes in (t_min, t_max) with weights for dt; sum w e^{-rt} integrates
// e^{-rt} exactly on the window.
struct TimeQuadrature {
    double r = 0.0;
    double t_min = 0.0;
    double t_max = 0.0;
    std::vector<double> nodes;
    std::vector<double> weights;
    // Flattened discounted form: the head cutoff as an extra node at t_min,
    // then w e^{-rt} for every interior node.
    std::vector<double> dnodes;
    std::vector<double> dweights;

    double head_weight() const;
    double tail_mass() const;  // int_{t_max}^inf e^{-rt} dt
};

TimeQuadrature make_time_quadrature(double r, const QuadratureConfig& cfg = {});

// Standard normal nodes truncated at +-Phi^{-1}(1 - tail_prob); a state node
// is the quantile of p(t, x, .) at Phi(w).
struct SpaceQuadrature {
    double tail_prob = 0.0;
    double half_width = 0.0;
    std::vector<double> w_nodes;
    std::vector<double> w_weights;  // GL weight times the normal pdf
    Rule unit;                      // the same rule on [-1, 1]

    // State node for the given diffusion, time and start.
    double xi(const model::DiffusionSpec& d, double t, double x, std::size_t k) const;
    std::vector<double> xi_nodes(const model::DiffusionSpec& d, double t, double x) const;
};

SpaceQuadrature make_space_quadrature(const QuadratureConfig& cfg = {});

// State reached from x at time t at standardized coordinate w, and the
// inverse map.
double map_node(const model::DiffusionSpec& d, double t, double x, double w);
double standardize(const model::DiffusionSpec& d, double t, double x, double state);

struct Estimate {
    double value = 0.0;
    double tail_bound = 0.0;
};

Estimate discounted_time_integral(double r, const std::function<double(double)>& g, const TimeQuadrature& q);

double weighted_space_integral(const model::DiffusionSpec& d, double t, double x,
                               const std::function<double(double)>& h, const SpaceQuadrature& q);

// Same integral split at the state point `cut`, each side with its own
// Gauss-Legendre rule of the configured size. Used for discontinuous h.
double weighted_space_integral_split(const model::DiffusionSpec& d, double t, double x, double cut,
                                     const std::function<double(double)>& h, const SpaceQuadrature& q);

}  // namespace freebound::quadrature
