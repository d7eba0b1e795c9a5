#include "freebound/boundary.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "freebound/parallel.hpp"

namespace freebound::boundary {

using model::DiffusionKind;
using model::kInf;

double F(const ProblemSpec& spec, double x, double y, double z) {
    return spec.cost.cz(x, z) - spec.y.drift(y) + spec.r * y;
}

namespace {

// sup{x : f(x) >= 0} for a nonincreasing f on the interval.
double crossing(const std::function<double(double)>& f, const model::Interval& iv, double tol) {
    double lo = iv.lower_finite() ? iv.lower : -1.0;
    if (!iv.lower_finite()) {
        int n = 0;
        while (f(lo) < 0.0 && n++ < 200) lo *= 2.0;
        if (f(lo) < 0.0) return iv.lower;
    } else if (f(lo) < 0.0) {
        return iv.lower;
    }
    double step = std::max(1.0, std::abs(lo));
    double hi = lo + step;
    int n = 0;
    while (f(hi) >= 0.0) {
        if (iv.upper_finite() && hi >= iv.upper) return iv.upper;
        if (++n > 200) return iv.upper;
        lo = hi;
        step *= 2.0;
        hi = iv.upper_finite() ? std::min(iv.upper, hi + step) : hi + step;
    }
    while (hi - lo > tol * std::max(1.0, std::abs(hi))) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) >= 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

bool linear_y_drift(const ProblemSpec& spec) { return spec.y.kind == DiffusionKind::GBM; }

}  // namespace

double solve_threshold(const ProblemSpec& spec, double z, double x, double tol) {
    const auto& st = spec.y.state;
    const double ylo = st.lower_finite() ? st.lower : -kInf;
    if (st.lower_finite() && F(spec, x, ylo, z) >= 0.0) return ylo;
    if (st.upper_finite() && F(spec, x, st.upper, z) <= 0.0) return st.upper;
    if (linear_y_drift(spec)) {
        // F is affine in y with slope r - mu2.
        const double slope = spec.r - spec.y.mu();
        if (!(slope > 0.0)) return st.upper;
        const double root = -spec.cost.cz(x, z) / slope;
        return std::clamp(root, st.lower, st.upper);
    }
    const auto g = [&](double y) { return -F(spec, x, y, z); };  // nonincreasing in y
    return crossing(g, st, tol);
}

ThresholdCurve make_threshold_curve(const ProblemSpec& spec, double z) {
    ThresholdCurve c;
    c.spec = std::make_shared<const ProblemSpec>(spec);
    c.z = z;
    const auto& xs = spec.x.state;
    const auto& ys = spec.y.state;
    const double tol = 1e-12;
    if (ys.lower_finite()) {
        c.theta_star = crossing([&](double x) { return F(spec, x, ys.lower, z); }, xs, tol);
    } else {
        c.theta_star = xs.lower;
    }
    if (ys.upper_finite()) {
        c.theta_sup = crossing([&](double x) { return F(spec, x, ys.upper, z); }, xs, tol);
    } else {
        c.theta_sup = xs.upper;
    }
    return c;
}

Discretization make_discretization(const ProblemSpec& spec, const quadrature::QuadratureConfig& qc) {
    return {quadrature::make_time_quadrature(spec.r, qc), quadrature::make_space_quadrature(qc)};
}

namespace {

// E_t[phi] with phi = int e^{-rt} E[c_z(X_t,z)] dt, by quadrature.
double phi_quadrature(const ProblemSpec& spec, double z, double x, const Discretization& d) {
    double acc = 0.0;
    for (std::size_t m = 0; m < d.tq.dnodes.size(); ++m) {
        const double t = d.tq.dnodes[m];
        acc += d.tq.dweights[m] *
               quadrature::weighted_space_integral(spec.x, t, x, [&](double xi) { return spec.cost.cz(xi, z); }, d.sq);
    }
    return acc;
}

}  // namespace

RegionFlags check_regions_nonempty(const ProblemSpec& spec, double z, const quadrature::QuadratureConfig& qc) {
    RegionFlags flags;
    const auto& xs = spec.x.state;
    const auto& ys = spec.y.state;
    const bool xlog = xs.lower >= 0.0, ylog = ys.lower >= 0.0;
    const auto sample = [](const model::Interval& iv, bool logscale, int i, int n) {
        const double u = static_cast<double>(i) / (n - 1);
        double v = logscale ? std::exp(std::log(1e-4) + u * std::log(1e12)) : -1e4 + 2e4 * u;
        return std::clamp(v, std::nextafter(iv.lower, kInf), std::nextafter(iv.upper, -kInf));
    };
    flags.continuation_nonempty = Tri::False;
    for (int i = 0; i < 64 && flags.continuation_nonempty == Tri::False; ++i) {
        const double x = sample(xs, xlog, i, 64) * (xlog ? std::max(1.0, z) : 1.0);
        for (int j = 0; j < 64; ++j) {
            if (F(spec, x, sample(ys, ylog, j, 64), z) > 0.0) {
                flags.continuation_nonempty = Tri::True;
                break;
            }
        }
    }

    const double ylo = ys.lower_finite() ? ys.lower : -kInf;
    if (spec.all_gbm() && spec.cost.kind == model::CostKind::SpreadPower) {
        // c_z(x,z) -> -inf as x -> inf and discounting is finite for r > mu1.
        flags.stopping_nonempty = (spec.cost.k0 > 0.0 && spec.r > spec.x.mu()) ? Tri::True : Tri::Unknown;
        return flags;
    }
    const Discretization d = make_discretization(spec, qc);
    std::vector<double> vals;
    double x = xlog ? std::max(1.0, z) : std::max(1.0, std::abs(z));
    for (int k = 0; k < 24; ++k, x *= 2.0) {
        if (xs.upper_finite() && x >= xs.upper) x = std::nextafter(xs.upper, -kInf);
        const double v = phi_quadrature(spec, z, x, d);
        if (v < ylo) {
            flags.stopping_nonempty = Tri::True;
            return flags;
        }
        vals.push_back(v);
        if (xs.upper_finite() && x >= std::nextafter(xs.upper, -kInf)) break;
    }
    const std::size_t n = vals.size();
    const bool flat = n >= 3 && std::abs(vals[n - 1] - vals[n - 3]) <= 1e-9 * std::max(1.0, std::abs(vals[n - 1]));
    flags.stopping_nonempty = flat ? Tri::False : Tri::Unknown;
    return flags;
}

double edge_function(const ProblemSpec& spec, double z, double x, double level, const quadrature::TimeQuadrature& tq,
                     const quadrature::SpaceQuadrature& sq) {
    const double rl = spec.r * level;
    double acc = 0.0;
    for (std::size_t m = 0; m < tq.dnodes.size(); ++m) {
        const double t = tq.dnodes[m];
        const auto h = [&](double xi) { return xi < x ? spec.cost.cz(xi, z) : -rl; };
        acc += tq.dweights[m] * quadrature::weighted_space_integral_split(spec.x, t, x, x, h, sq);
    }
    return acc + level;
}

namespace {

EdgeResult edge_root(const ProblemSpec& spec, double z, double start, double level, const quadrature::QuadratureConfig& qc,
                     double tol) {
    const Discretization d = make_discretization(spec, qc);
    const auto& xs = spec.x.state;
    const auto G = [&](double x) { return edge_function(spec, z, x, level, d.tq, d.sq); };
    EdgeResult res;
    double lo = start;
    if (xs.lower_finite() && lo <= xs.lower) lo = xs.lower + 1e-12 * std::max(1.0, std::abs(xs.lower));
    res.g_at_start = G(lo);
    if (res.g_at_start <= 0.0) {
        res.x = xs.lower;
        return res;
    }
    double step = std::max(1e-3, std::abs(lo));
    double hi = lo + step;
    int n = 0;
    while (G(hi) > 0.0) {
        if (++n > 60 || (xs.upper_finite() && hi >= xs.upper)) {
            res.x = xs.upper;
            return res;
        }
        lo = hi;
        step *= 2.0;
        hi = xs.upper_finite() ? std::min(xs.upper, hi + step) : hi + step;
    }
    while (hi - lo > tol * std::max(1.0, std::abs(hi))) {
        const double mid = 0.5 * (lo + hi);
        (G(mid) > 0.0 ? lo : hi) = mid;
        ++res.iterations;
    }
    res.x = 0.5 * (lo + hi);
    res.found = true;
    return res;
}

}  // namespace

EdgeResult edge_lower(const ProblemSpec& spec, double z, const ThresholdCurve& curve,
                      const quadrature::QuadratureConfig& qc, double tol) {
    const auto& ys = spec.y.state;
    if (!ys.lower_finite()) return EdgeResult{spec.x.state.lower, false, 0.0, 0};
    if (curve.theta_star >= spec.x.state.upper) return EdgeResult{spec.x.state.upper, false, 0.0, 0};
    return edge_root(spec, z, curve.theta_star, ys.lower, qc, tol);
}

EdgeResult edge_upper(const ProblemSpec& spec, double z, const ThresholdCurve& curve,
                      const quadrature::QuadratureConfig& qc, double tol) {
    const auto& ys = spec.y.state;
    if (!ys.upper_finite()) {
        // With r - mu2'(y) bounded below by a positive constant the upper
        // edge is the right end of I1; this is the only unbounded case handled.
        return EdgeResult{spec.x.state.upper, false, std::numeric_limits<double>::quiet_NaN(), 0};
    }
    if (curve.theta_sup >= spec.x.state.upper) return EdgeResult{spec.x.state.upper, false, 0.0, 0};
    EdgeResult res = edge_root(spec, z, curve.theta_sup, ys.upper, qc, tol);
    if (!res.found && res.x == spec.x.state.lower) res.x = curve.theta_sup;
    return res;
}

const char* to_string(BoundaryFlag f) {
    switch (f) {
        case BoundaryFlag::Regular: return "regular";
        case BoundaryFlag::StopEverywhere: return "stop-everywhere";
        case BoundaryFlag::NeverStop: return "never-stop";
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// Boundary evaluation

BoundaryFunction::BoundaryFunction(const Boundary& b)
    : envelope_(b.envelope), x_star_(b.x_star), x_sup_(b.x_sup), flag_(b.flag) {
    const auto& spec = *b.envelope.spec;
    y_lower_ = spec.y.state.lower;
    y_upper_ = spec.y.state.upper;
    log_scale_ = spec.x.state.lower >= 0.0;
    if (flag_ != BoundaryFlag::Regular) return;
    const auto push = [&](double x, double v, int idx) {
        knots_.push_back(x);
        log_knots_.push_back(log_scale_ ? std::log(x) : x);
        values_.push_back(v);
        free_index_.push_back(idx);
    };
    const bool lower_edge = x_star_ > spec.x.state.lower && !b.x_grid.empty() && x_star_ >= b.x_grid.front();
    if (lower_edge) push(x_star_, y_lower_, -1);
    for (std::size_t i = 0; i < b.x_grid.size(); ++i) {
        const double x = b.x_grid[i];
        if (x <= x_star_ || x >= x_sup_) continue;
        push(x, b.y_values[i], static_cast<int>(i));
    }
    if (x_sup_ < spec.x.state.upper && !b.x_grid.empty() && x_sup_ <= b.x_grid.back()) push(x_sup_, y_upper_, -1);
    for (double k : knots_) env_knots_.push_back(envelope_(k) - y_lower_);
    if (!knots_.empty()) {
        theta_top_ = envelope_(knots_.back());
        theta_bottom_ = envelope_(knots_.front());
    }
}

void BoundaryFunction::set_free_values(const std::vector<double>& v) {
    for (std::size_t k = 0; k < knots_.size(); ++k)
        if (free_index_[k] >= 0) values_[k] = v[static_cast<std::size_t>(free_index_[k])];
}

BoundaryFunction::Location BoundaryFunction::locate(double x, double log_x) const {
    Location loc;
    if (flag_ == BoundaryFlag::NeverStop) {
        loc.value = y_lower_;
        return loc;
    }
    if (flag_ == BoundaryFlag::StopEverywhere) {
        loc.value = y_upper_;
        return loc;
    }
    if (x <= x_star_) {
        loc.value = y_lower_;
        return loc;
    }
    if (x >= x_sup_) {
        loc.value = y_upper_;
        return loc;
    }
    const std::size_t n = knots_.size();
    if (log_x >= log_knots_[n - 1]) {
        // Envelope scaled to match the outermost knot.
        const double denom = theta_top_ - y_lower_;
        const double th = envelope_(x) - y_lower_;
        loc.ratio_knot = static_cast<int>(n - 1);
        loc.ratio_slope = denom > 0.0 ? th / denom : 1.0;
        loc.value = y_lower_ + (values_[n - 1] - y_lower_) * loc.ratio_slope;
        return loc;
    }
    if (log_x <= log_knots_[0]) {
        const double denom = theta_bottom_ - y_lower_;
        const double th = envelope_(x) - y_lower_;
        loc.ratio_knot = 0;
        loc.ratio_slope = denom > 0.0 ? th / denom : 1.0;
        loc.value = y_lower_ + (values_[0] - y_lower_) * loc.ratio_slope;
        return loc;
    }
    const auto it = std::upper_bound(log_knots_.begin(), log_knots_.end(), log_x);
    const int j = static_cast<int>(it - log_knots_.begin()) - 1;
    const double w = (log_x - log_knots_[j]) / (log_knots_[j + 1] - log_knots_[j]);
    loc.lo = j;
    loc.weight = w;
    // Interpolate the fraction of the envelope so that boundaries tracking
    // the envelope are reproduced without curvature error.
    const double e0 = env_knots_[j], e1 = env_knots_[j + 1];
    const double ex = e0 > 0.0 && e1 > 0.0 ? envelope_(x) - y_lower_ : 0.0;
    if (ex > 0.0 && std::isfinite(ex) && std::isfinite(e0) && std::isfinite(e1)) {
        loc.d_lo = (1.0 - w) * ex / e0;
        loc.d_hi = w * ex / e1;
    } else {
        loc.d_lo = 1.0 - w;
        loc.d_hi = w;
    }
    loc.value = y_lower_ + loc.d_lo * (values_[j] - y_lower_) + loc.d_hi * (values_[j + 1] - y_lower_);
    return loc;
}

double BoundaryFunction::operator()(double x) const {
    if (flag_ != BoundaryFlag::Regular) return flag_ == BoundaryFlag::NeverStop ? y_lower_ : y_upper_;
    return locate(x, log_scale_ ? (x > 0.0 ? std::log(x) : -kInf) : x).value;
}

// ---------------------------------------------------------------------------
// Generic evaluation of U_b

namespace {


double y_total_pull(const ProblemSpec& spec, double t, double y) {
    return model::discounted_pull_above(spec.y, spec.r, t, y, spec.y.state.lower);
}

}  // namespace

double gain_integral(const ProblemSpec& spec, double z, const std::function<double(double)>& candidate, double x,
                     double y, const Discretization& disc) {
    const auto& ys = spec.y.state;
    double acc = 0.0;
    for (std::size_t m = 0; m < disc.tq.dnodes.size(); ++m) {
        const double t = disc.tq.dnodes[m];
        const double total = y_total_pull(spec, t, y);
        const auto h = [&](double xi) {
            const double a = candidate(xi);
            if (a <= ys.lower) return spec.cost.cz(xi, z) + total;
            if (a >= ys.upper) return 0.0;
            return spec.cost.cz(xi, z) * model::survival_above(spec.y, t, y, a) +
                   model::discounted_pull_above(spec.y, spec.r, t, y, a);
        };
        acc += disc.tq.dweights[m] * quadrature::weighted_space_integral(spec.x, t, x, h, disc.sq);
    }
    return acc;
}

double fredholm_rhs(const ProblemSpec& spec, double z, const std::function<double(double)>& candidate, double x,
                    double y, const Discretization& disc) {
    return -y + gain_integral(spec, z, candidate, x, y, disc);
}

// ---------------------------------------------------------------------------
// Collocation system on the x-grid

class FredholmSystem {
public:
    FredholmSystem(const ProblemSpec& spec, double z, const Boundary& shape, const quadrature::QuadratureConfig& qc)
        : spec_(spec), z_(z), disc_(make_discretization(spec, qc)), shape_(shape), bf_(shape) {
        for (std::size_t i = 0; i < shape.x_grid.size(); ++i) {
            const double x = shape.x_grid[i];
            if (x > shape.x_star && x < shape.x_sup) free_.push_back(static_cast<int>(i));
        }
        var_of_node_.assign(shape.x_grid.size(), -1);
        for (std::size_t v = 0; v < free_.size(); ++v) var_of_node_[static_cast<std::size_t>(free_[v])] = static_cast<int>(v);
        knot_var_.resize(bf_.free_index().size());
        for (std::size_t k = 0; k < knot_var_.size(); ++k) {
            const int node = bf_.free_index()[k];
            knot_var_[k] = node >= 0 ? var_of_node_[static_cast<std::size_t>(node)] : -1;
        }
        x_gbm_ = spec.x.kind == DiffusionKind::GBM;
        y_gbm_ = spec.y.kind == DiffusionKind::GBM;
        const auto& tq = disc_.tq;
        const auto& sq = disc_.sq;
        const std::size_t nt = tq.dnodes.size(), nw = sq.w_nodes.size();
        if (x_gbm_) {
            const double s1 = spec.x.sigma(), a1 = spec.x.mu() - 0.5 * s1 * s1;
            shift_.resize(nt * nw);
            factor_.resize(nt * nw);
            for (std::size_t m = 0; m < nt; ++m)
                for (std::size_t k = 0; k < nw; ++k) {
                    const double L = a1 * tq.dnodes[m] + s1 * std::sqrt(tq.dnodes[m]) * sq.w_nodes[k];
                    shift_[m * nw + k] = L;
                    factor_[m * nw + k] = std::exp(L);
                }
        }
        // Composite rule in log t over twice the main window for stop_value:
        // from deep in the continuation set the stopping set is reached late.
        {
            const double t0 = tq.t_min, t1 = 2.0 * tq.t_max;
            const int panels = std::max(1, static_cast<int>(std::ceil(std::log(t1 / t0) / 0.25)));
            const double h = std::log(t1 / t0) / panels;
            const auto gl = quadrature::gauss_legendre(6);
            stop_t_.push_back(t0);
            stop_w_.push_back(tq.head_weight());
            for (int p = 0; p < panels; ++p)
                for (std::size_t k = 0; k < gl.nodes.size(); ++k) {
                    const double t = t0 * std::exp(h * (p + 0.5 * (gl.nodes[k] + 1.0)));
                    stop_t_.push_back(t);
                    stop_w_.push_back(0.5 * h * gl.weights[k] * t * std::exp(-spec.r * t));
                }
        }
        if (y_gbm_) {
            const double s2 = spec.y.sigma(), a2 = spec.y.mu() - 0.5 * s2 * s2;
            ysd_.resize(nt);
            ydrift_.resize(nt);
            ygrow_.resize(nt);
            for (std::size_t m = 0; m < nt; ++m) {
                ysd_[m] = s2 * std::sqrt(tq.dnodes[m]);
                ydrift_[m] = a2 * tq.dnodes[m];
                ygrow_[m] = std::exp(spec.y.mu() * tq.dnodes[m]);
            }
        }
    }

    std::size_t size() const { return free_.size(); }
    const std::vector<int>& free_nodes() const { return free_; }
    const Boundary& shape() const { return shape_; }

    // Residual (and optionally the Jacobian, row-major n x n) at the given
    // free values.
    void evaluate(const std::vector<double>& values, std::vector<double>& R, std::vector<double>* J) {
        set_values(values);
        const std::size_t n = free_.size();
        R.assign(n, 0.0);
        if (J) J->assign(n * n, 0.0);
        parallel_for(n, [&](std::size_t v) {
            const double x = shape_.x_grid[static_cast<std::size_t>(free_[v])];
            R[v] = row(x, values[v], J ? J->data() + v * n : nullptr, v);
        });
    }

    double row_value(double x, double y) const { return row(x, y, nullptr, 0); }

    // int e^{-rt} E[(c_z(X_t) + r Y_t - mu2(Y_t)) 1{Y_t <= b(X_t)}] dt. Only
    // X_t > x_* contributes, so the space rule is laid over that side alone,
    // which keeps relative accuracy when the stopping set is far in the tail.
    double stop_value(double x, double y) const {
        const auto& sq = disc_.sq;
        const auto& ys = spec_.y.state;
        const double r = spec_.r;
        const double W = sq.half_width;
        const double ly = y > 0.0 ? std::log(y) : -kInf;
        const double ry = y_gbm_ ? r - spec_.y.mu() : 0.0;
        const bool cut = shape_.x_star > spec_.x.state.lower;
        double total = 0.0;
        double ysd = 0.0, ydrift = 0.0, ygrow = 0.0;
        for (std::size_t m = 0; m < stop_t_.size(); ++m) {
            const double t = stop_t_[m];
            const double lo = cut ? std::max(-W, quadrature::standardize(spec_.x, t, x, shape_.x_star)) : -W;
            const double hi = std::max(W, lo + W);
            const double c = 0.5 * (lo + hi), hw = 0.5 * (hi - lo);
            if (y_gbm_) {
                const double s2 = spec_.y.sigma();
                ysd = s2 * std::sqrt(t);
                ydrift = (spec_.y.mu() - 0.5 * s2 * s2) * t;
                ygrow = std::exp(spec_.y.mu() * t);
            }
            const double ytotal = y_gbm_ ? ry * y * ygrow : y_total_pull(spec_, t, y);
            double acc = 0.0;
            for (std::size_t k = 0; k < sq.unit.nodes.size(); ++k) {
                const double w = c + hw * sq.unit.nodes[k];
                const double pw = model::norm_pdf(w);
                if (pw == 0.0) continue;
                const double xi = quadrature::map_node(spec_.x, t, x, w);
                const double a = bf_(xi);
                if (a <= ys.lower) continue;
                const double cz = spec_.cost.cz(xi, z_);
                double val;
                if (a >= ys.upper) {
                    val = cz + ytotal;
                } else if (y_gbm_) {
                    const double d = (ly - std::log(a) + ydrift) / ysd;
                    val = cz * model::norm_cdf(-d) + ry * y * ygrow * model::norm_cdf(-d - ysd);
                } else {
                    val = cz * (1.0 - model::survival_above(spec_.y, t, y, a)) + ytotal -
                          model::discounted_pull_above(spec_.y, r, t, y, a);
                }
                acc += hw * sq.unit.weights[k] * pw * val;
            }
            total += stop_w_[m] * acc;
        }
        return total;
    }

    void set_values(const std::vector<double>& values) {
        std::vector<double> full = shape_.y_values;
        for (std::size_t v = 0; v < free_.size(); ++v) full[static_cast<std::size_t>(free_[v])] = values[v];
        bf_.set_free_values(full);
    }

private:
    // U_b(x, y) with b the current iterate; accumulates dU/db into jrow.
    double row(double x, double y, double* jrow, std::size_t self) const {
        const auto& tq = disc_.tq;
        const auto& sq = disc_.sq;
        const auto& ys = spec_.y.state;
        const double r = spec_.r;
        const std::size_t nt = tq.dnodes.size(), nw = sq.w_nodes.size();
        const double lx = bf_.log_scale_ ? std::log(x) : x;
        const double ly = y > 0.0 ? std::log(y) : -kInf;
        const double ry = y_gbm_ ? r - spec_.y.mu() : 0.0;
        double total = 0.0, dydiag = 0.0;
        for (std::size_t m = 0; m < nt; ++m) {
            const double t = tq.dnodes[m];
            double acc = 0.0, dacc = 0.0;
            const double ytotal = y_gbm_ ? ry * y * ygrow_[m] : y_total_pull(spec_, t, y);
            for (std::size_t k = 0; k < nw; ++k) {
                double xi, lxi;
                if (x_gbm_) {
                    xi = x * factor_[m * nw + k];
                    lxi = lx + shift_[m * nw + k];
                } else {
                    xi = sq.xi(spec_.x, t, x, k);
                    lxi = bf_.log_scale_ ? std::log(xi) : xi;
                }
                const auto loc = bf_.locate(xi, lxi);
                const double a = loc.value;
                const double cz = spec_.cost.cz(xi, z_);
                const double wk = sq.w_weights[k];
                double val, p2 = 0.0, dval_dy = 0.0;
                if (a <= ys.lower) {
                    val = cz + ytotal;
                    dval_dy = y > 0.0 ? ytotal / y : 0.0;
                } else if (a >= ys.upper) {
                    val = 0.0;
                } else if (y_gbm_) {
                    const double s = ysd_[m];
                    const double d = (ly - std::log(a) + ydrift_[m]) / s;
                    const double S = model::norm_cdf(d);
                    const double PA = ry * y * ygrow_[m] * model::norm_cdf(d + s);
                    val = cz * S + PA;
                    if (jrow) {
                        const double pdf = model::norm_pdf(d);
                        p2 = pdf > 0.0 ? pdf / (a * s) : 0.0;
                        const double Fa = cz + ry * a;
                        dval_dy = (a / y) * p2 * Fa + PA / y;
                    }
                } else {
                    const double S = model::survival_above(spec_.y, t, y, a);
                    const double PA = model::discounted_pull_above(spec_.y, r, t, y, a);
                    val = cz * S + PA;
                    if (jrow) {
                        p2 = model::density(spec_.y, t, y, a);
                        const double h = 1e-6 * std::max(1e-8, std::abs(y));
                        const double S2 = model::survival_above(spec_.y, t, y + h, a);
                        const double PA2 = model::discounted_pull_above(spec_.y, r, t, y + h, a);
                        dval_dy = (cz * S2 + PA2 - val) / h;
                    }
                }
                acc += wk * val;
                if (jrow) {
                    dacc += wk * dval_dy;
                    if (p2 > 0.0) {
                        const double Fa = cz + r * a - spec_.y.drift(a);
                        const double g = -tq.dweights[m] * wk * p2 * Fa;
                        if (loc.lo >= 0) {
                            const int v0 = knot_var_[static_cast<std::size_t>(loc.lo)];
                            const int v1 = knot_var_[static_cast<std::size_t>(loc.lo) + 1];
                            if (v0 >= 0) jrow[v0] += g * loc.d_lo;
                            if (v1 >= 0) jrow[v1] += g * loc.d_hi;
                        } else if (loc.ratio_knot >= 0) {
                            const int v0 = knot_var_[static_cast<std::size_t>(loc.ratio_knot)];
                            if (v0 >= 0) jrow[v0] += g * loc.ratio_slope;
                        }
                    }
                }
            }
            total += tq.dweights[m] * acc;
            dydiag += tq.dweights[m] * dacc;
        }
        if (jrow) jrow[self] += dydiag;
        return total;
    }

    ProblemSpec spec_;
    double z_;
    Discretization disc_;
    Boundary shape_;
    BoundaryFunction bf_;
    std::vector<int> free_, var_of_node_, knot_var_;
    bool x_gbm_ = false, y_gbm_ = false;
    std::vector<double> shift_, factor_, ysd_, ydrift_, ygrow_;
    std::vector<double> stop_t_, stop_w_;
};

namespace {

std::vector<double> make_grid(double lo, double hi, int n, bool logscale) {
    std::vector<double> g(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double u = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
        g[static_cast<std::size_t>(i)] = logscale ? lo * std::exp(u * std::log(hi / lo)) : lo + u * (hi - lo);
    }
    return g;
}

// Grid, edges and envelope for slice z; values are not filled in.
Boundary make_shape(const ProblemSpec& spec, double z, const SolverConfig& cfg) {
    Boundary b;
    b.z = z;
    b.envelope = make_threshold_curve(spec, z);
    const auto& xs = spec.x.state;
    const auto& ys = spec.y.state;

    const RegionFlags flags = check_regions_nonempty(spec, z, cfg.quad);
    if (flags.continuation_nonempty == Tri::False) b.flag = BoundaryFlag::StopEverywhere;
    else if (flags.stopping_nonempty == Tri::False) b.flag = BoundaryFlag::NeverStop;

    if (b.flag == BoundaryFlag::Regular) {
        b.x_star = edge_lower(spec, z, b.envelope, cfg.quad, cfg.tol_bisection).x;
        b.x_sup = edge_upper(spec, z, b.envelope, cfg.quad, cfg.tol_bisection).x;
    } else {
        b.x_star = b.flag == BoundaryFlag::NeverStop ? xs.upper : xs.lower;
        b.x_sup = b.flag == BoundaryFlag::NeverStop ? xs.upper : xs.lower;
    }

    const bool logscale = xs.lower >= 0.0;
    const double tmax = quadrature::make_time_quadrature(spec.r, cfg.quad).t_max;
    double xref = cfg.x_ref > 0.0 ? cfg.x_ref : std::max(z, std::isfinite(b.x_star) ? b.x_star : z);
    if (!(xref > xs.lower) || !(xref < xs.upper)) xref = logscale ? 1.0 : 0.0;
    double hi = model::quantile(spec.x, tmax, xref, 1.0 - cfg.grid_quantile);
    double lo;
    if (b.x_star > xs.lower && std::isfinite(b.x_star))
        lo = logscale ? cfg.grid_lower_factor * b.x_star : b.x_star - (1.0 - cfg.grid_lower_factor) * std::abs(hi - b.x_star);
    else
        lo = model::quantile(spec.x, tmax, xref, cfg.grid_quantile);
    if (std::isfinite(b.x_sup) && b.x_sup < xs.upper) hi = std::min(hi, b.x_sup * 1.1);
    if (!(hi > lo)) hi = logscale ? lo * 10.0 : lo + 10.0;
    b.x_grid = make_grid(lo, hi, cfg.grid_points, logscale);
    b.theta.resize(b.x_grid.size());
    b.y_values.assign(b.x_grid.size(), ys.lower);
    for (std::size_t i = 0; i < b.x_grid.size(); ++i) {
        b.theta[i] = b.envelope(b.x_grid[i]);
        if (b.flag == BoundaryFlag::StopEverywhere || b.x_grid[i] >= b.x_sup) b.y_values[i] = ys.upper;
    }
    b.residuals.assign(b.x_grid.size(), 0.0);
    return b;
}

double sup_norm(const std::vector<double>& v) {
    double m = 0.0;
    for (double a : v) m = std::max(m, std::abs(a));
    return m;
}

// Damped Gauss-Newton on the collocation equations U_b(x_i, b_i) = 0 in the
// variables s_i = log(b_i - y_lower).
Boundary run_solver(const ProblemSpec& spec, double z, const SolverConfig& cfg, Boundary shape,
                    const std::function<double(double)>& initial) {
    if (shape.flag != BoundaryFlag::Regular) {
        shape.converged = true;
        return shape;
    }
    FredholmSystem sys(spec, z, shape, cfg.quad);
    const std::size_t n = sys.size();
    const auto& ys = spec.y.state;
    const double ylo = ys.lower;
    const bool logvar = ys.lower_finite();
    std::vector<double> cap(n), b(n);
    for (std::size_t v = 0; v < n; ++v) {
        const auto i = static_cast<std::size_t>(sys.free_nodes()[v]);
        cap[v] = std::min(shape.theta[i], ys.upper);
        const double floor = logvar ? ylo + 1e-9 * std::max(1e-300, cap[v] - ylo) : -kInf;
        b[v] = std::clamp(initial(shape.x_grid[i]), floor, cap[v]);
    }
    const auto to_s = [&](double bv) { return logvar ? std::log(bv - ylo) : bv; };
    const auto from_s = [&](double sv) { return logvar ? ylo + std::exp(sv) : sv; };

    std::vector<double> R, J, Rn;
    sys.evaluate(b, R, &J);
    double mu = 1e-3;
    double last_step = kInf;
    int it = 0;
    bool ok = false;
    const auto norm2 = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double a : v) s += a * a;
        return s;
    };
    for (; it < cfg.max_iters; ++it) {
        if (sup_norm(R) < cfg.tol_residual && last_step < cfg.tol_boundary) {
            ok = true;
            break;
        }
        Eigen::MatrixXd Js(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        Eigen::VectorXd Rv(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) {
            Rv(static_cast<Eigen::Index>(i)) = R[i];
            for (std::size_t j = 0; j < n; ++j)
                Js(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                    J[i * n + j] * (logvar ? b[j] - ylo : 1.0);
        }
        const Eigen::MatrixXd A = Js.transpose() * Js;
        const Eigen::VectorXd g = Js.transpose() * Rv;
        const double f0 = norm2(R);
        bool accepted = false;
        std::vector<double> bn(n);
        while (mu < 1e14) {
            Eigen::MatrixXd M = A;
            for (Eigen::Index k = 0; k < M.rows(); ++k) M(k, k) += mu * std::max(A(k, k), 1e-300);
            const Eigen::VectorXd step = M.ldlt().solve(-g);
            double predicted = 0.0;
            for (std::size_t v = 0; v < n; ++v) {
                const double ds = std::clamp(step(static_cast<Eigen::Index>(v)), -2.0, 2.0);
                bn[v] = std::min(from_s(to_s(b[v]) + ds), cap[v]);
            }
            // Keep the iterate nondecreasing in x: the discrete system has
            // oscillating roots outside that class.
            for (std::size_t v = 1; v < n; ++v) bn[v] = std::min(std::max(bn[v], bn[v - 1]), cap[v]);
            for (std::size_t v = 0; v < n; ++v) predicted = std::max(predicted, std::abs(bn[v] - b[v]));
            if (sup_norm(R) < cfg.tol_residual && predicted < cfg.tol_boundary) {
                last_step = predicted;
                break;
            }
            sys.evaluate(bn, Rn, nullptr);
            if (cfg.verbose)
                std::fprintf(stderr, "z=%g iter %d damping %.2e residual %.3e -> %.3e\n", z, it, mu, sup_norm(R), sup_norm(Rn));
            if (norm2(Rn) < f0) {
                accepted = true;
                mu = std::max(mu / 3.0, 1e-12);
                break;
            }
            mu *= 4.0;
        }
        if (last_step < cfg.tol_boundary && sup_norm(R) < cfg.tol_residual) {
            ok = true;
            break;
        }
        if (!accepted) {
            // No damped step lowers the merit: the iterate is stationary at
            // round-off, which counts as converged when the residual is met.
            ok = sup_norm(R) < cfg.tol_residual;
            break;
        }
        last_step = 0.0;
        for (std::size_t v = 0; v < n; ++v) last_step = std::max(last_step, std::abs(bn[v] - b[v]));
        b = bn;
        if (sup_norm(Rn) < cfg.tol_residual && last_step < cfg.tol_boundary) {
            R = Rn;
            ok = true;
            ++it;
            break;
        }
        sys.evaluate(b, R, &J);
    }

    Boundary out = sys.shape();
    for (std::size_t v = 0; v < n; ++v) {
        const auto i = static_cast<std::size_t>(sys.free_nodes()[v]);
        out.y_values[i] = b[v];
        out.residuals[i] = R[v];
    }
    out.residual_sup = sup_norm(R);
    out.iterations = it;
    out.converged = ok;
    if (!ok) {
        std::ostringstream os;
        os << "boundary solver did not converge for z=" << z << " after " << it
           << " iterations (residual_sup=" << out.residual_sup << ")";
        throw NonConvergence(os.str(), out);
    }
    return out;
}

}  // namespace

Boundary solve_boundary(const ProblemSpec& spec, double z, const SolverConfig& cfg) {
    Boundary shape = make_shape(spec, z, cfg);
    const ThresholdCurve env = shape.envelope;
    const double s = cfg.init_scale;
    const double ylo = spec.y.state.lower;
    return run_solver(spec, z, cfg, std::move(shape), [&](double x) { return ylo + s * (env(x) - ylo); });
}

Boundary solve_boundary_from(const ProblemSpec& spec, double z, const SolverConfig& cfg,
                             const std::function<double(double)>& initial) {
    return run_solver(spec, z, cfg, make_shape(spec, z, cfg), initial);
}

std::vector<double> residual_profile(const ProblemSpec& spec, const Boundary& reference,
                                     const std::vector<double>& candidate_values, const SolverConfig& cfg) {
    std::vector<double> out(reference.x_grid.size(), 0.0);
    if (reference.flag != BoundaryFlag::Regular) return out;
    FredholmSystem sys(spec, reference.z, reference, cfg.quad);
    std::vector<double> vals(sys.size()), R;
    for (std::size_t v = 0; v < sys.size(); ++v) vals[v] = candidate_values[static_cast<std::size_t>(sys.free_nodes()[v])];
    sys.evaluate(vals, R, nullptr);
    for (std::size_t v = 0; v < sys.size(); ++v) out[static_cast<std::size_t>(sys.free_nodes()[v])] = R[v];
    return out;
}

UniquenessReport uniqueness_probe(const ProblemSpec& spec, double z, const Boundary& solved, const SolverConfig& cfg) {
    UniquenessReport rep;
    if (solved.flag != BoundaryFlag::Regular) {
        rep.second = solved;
        rep.within_tolerance = true;
        return rep;
    }
    // Half the solved boundary is still nondecreasing and below the envelope.
    const BoundaryFunction first(solved);
    const double ylo = spec.y.state.lower;
    Boundary shape = solved;
    rep.second = run_solver(spec, z, cfg, shape, [&](double x) { return ylo + 0.5 * (first(x) - ylo); });
    for (std::size_t i = 0; i < solved.y_values.size(); ++i)
        rep.distance = std::max(rep.distance, std::abs(solved.y_values[i] - rep.second.y_values[i]));
    rep.within_tolerance = rep.distance < 10.0 * cfg.tol_boundary;
    return rep;
}

GainEvaluator::GainEvaluator(const ProblemSpec& spec, const Boundary& b, const quadrature::QuadratureConfig& qc)
    : sys_(std::make_shared<FredholmSystem>(spec, b.z, b, qc)), flag_(b.flag) {}

double GainEvaluator::operator()(double x, double y) const {
    if (flag_ == BoundaryFlag::StopEverywhere) return 0.0;
    return sys_->row_value(x, y);
}

double GainEvaluator::stop_integral(double x, double y) const {
    if (flag_ == BoundaryFlag::NeverStop) return 0.0;
    return sys_->stop_value(x, y);
}

void write_boundary_csv(const Boundary& b, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    char buf[256];
    std::snprintf(buf, sizeof buf, "# z=%.12g,x_star=%.12g,x_sup=%.12g,residual_sup=%.6e,flag=%s\n", b.z, b.x_star,
                  b.x_sup, b.residual_sup, to_string(b.flag));
    out << buf << "x,y_star,theta\n";
    for (std::size_t i = 0; i < b.x_grid.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.12g,%.12g,%.12g\n", b.x_grid[i], b.y_values[i], b.theta[i]);
        out << buf;
    }
}

}  // namespace freebound::boundary
