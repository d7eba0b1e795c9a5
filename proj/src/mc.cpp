#include "freebound/mc.hpp"

#include <algorithm>

namespace freebound::mc {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

double effective_horizon(const model::ProblemSpec& spec, const MCConfig& cfg) {
    if (cfg.horizon > 0.0) return cfg.horizon;
    double g = 0.0;
    if (spec.x.kind == model::DiffusionKind::GBM) g = std::max(g, spec.x.mu());
    if (spec.y.kind == model::DiffusionKind::GBM) g = std::max(g, spec.y.mu());
    const double margin = std::max(spec.r - g, 0.01);
    return std::log(1e4) / margin;
}

PathRng::PathRng(std::uint64_t seed, std::uint64_t path) : engine_(splitmix64(splitmix64(seed) ^ path)) {}

PathRng::PathRng(std::uint64_t seed, std::uint64_t path, std::uint64_t stream)
    : engine_(stream == 0 ? splitmix64(splitmix64(seed) ^ path)
                          : splitmix64(splitmix64(splitmix64(seed) ^ path) ^ splitmix64(stream))) {}

void Accumulator::add(double v) {
    ++n;
    const double d = v - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (v - mean);
}

void Accumulator::merge(const Accumulator& o) {
    if (o.n == 0) return;
    if (n == 0) {
        *this = o;
        return;
    }
    const double tot = static_cast<double>(n + o.n);
    const double d = o.mean - mean;
    mean += d * static_cast<double>(o.n) / tot;
    m2 += o.m2 + d * d * static_cast<double>(n) * static_cast<double>(o.n) / tot;
    n += o.n;
}

Estimate summarize(const std::vector<double>& samples) {
    Accumulator acc;
    for (double v : samples) acc.add(v);
    return {acc.mean, acc.std_error(), acc.n};
}

Stepper::Stepper(const model::DiffusionSpec& d, double dt)
    : d_(&d), dt_(dt), gbm_(d.kind == model::DiffusionKind::GBM) {
    if (gbm_) {
        drift_ = (d.mu() - 0.5 * d.sigma() * d.sigma()) * dt;
        vol_ = d.sigma() * std::sqrt(dt);
    } else {
        drift_ = dt;
        vol_ = std::sqrt(dt);
    }
}

double Stepper::step(double s, double normal) const {
    if (gbm_) return s * std::exp(drift_ + vol_ * normal);
    const double next = s + d_->drift(s) * drift_ + d_->vol(s) * vol_ * normal;
    const auto& st = d_->state;
    // Keep Euler iterates inside the open state interval.
    return std::clamp(next, std::nextafter(st.lower, model::kInf), std::nextafter(st.upper, -model::kInf));
}

}  // namespace freebound::mc
