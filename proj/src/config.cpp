#include "freebound/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace freebound::config {

using nlohmann::json;

mc::MCConfig RunConfig::control_mc() const {
    mc::MCConfig m = mc;
    m.paths = control.paths;
    m.dt = control.dt;
    return m;
}

control::SurfaceConfig RunConfig::surface_config() const {
    control::SurfaceConfig s = surface;
    s.solver = solver;
    return s;
}

namespace {

// Reads the keys of one JSON object into fields, rejecting unknown ones.
class Section {
public:
    Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) throw ConfigError("section '" + name_ + "' must be an object");
    }

    template <class T>
    Section& get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return *this;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(name_ + "." + key + ": " + e.what());
        }
        return *this;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError("unknown key '" + name_ + "." + it.key() + "'");
    }

private:
    const json& j_;
    std::string name_;
    std::set<std::string> seen_;
};

model::DiffusionSpec diffusion(const json& j, const std::string& name) {
    std::string kind = "gbm";
    double mu = 0.0, sigma = 0.0;
    Section s(j, name);
    s.get("kind", kind).get("mu", mu).get("sigma", sigma).finish();
    if (kind != "gbm") throw ConfigError(name + ".kind: only \"gbm\" can be configured from JSON");
    if (!j.contains("mu") || !j.contains("sigma")) throw ConfigError(name + " needs mu and sigma");
    return model::DiffusionSpec::gbm(mu, sigma);
}

model::ProblemSpec problem(const json& j) {
    model::ProblemSpec p = model::ProblemSpec::benchmark();
    Section s(j, "problem");
    s.get("r", p.r);
    if (j.contains("x")) p.x = diffusion(j["x"], "problem.x");
    if (j.contains("y")) p.y = diffusion(j["y"], "problem.y");
    json dummy;
    s.get("x", dummy).get("y", dummy).get("cost", dummy).finish();
    if (j.contains("cost")) {
        std::string kind = "spread_power";
        double k0 = 1.0, delta = 2.0;
        Section c(j["cost"], "problem.cost");
        c.get("kind", kind).get("k0", k0).get("delta", delta).finish();
        if (kind == "spread_power")
            p.cost = model::CostModel::spread_power(k0, delta);
        else if (kind == "linear")
            p.cost = model::CostModel::linear(k0);
        else
            throw ConfigError("problem.cost.kind: expected \"spread_power\" or \"linear\", got \"" + kind + "\"");
    }
    return p;
}

template <class F>
void section(const json& root, const char* name, F&& fill) {
    if (!root.contains(name)) return;
    Section s(root[name], name);
    fill(s);
    s.finish();
}

}  // namespace

RunConfig parse(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid JSON: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError("the configuration must be a JSON object");
    RunConfig c;
    {
        Section top(root, "config");
        json dummy;
        for (const char* k : {"problem", "quadrature", "solver", "surface", "mc", "control", "oracle"})
            top.get(k, dummy);
        top.get("output", c.output).finish();
    }
    if (root.contains("problem")) c.problem = problem(root["problem"]);
    auto& q = c.solver.quad;
    section(root, "quadrature", [&](Section& s) {
        s.get("time_nodes", q.time_nodes).get("space_nodes", q.space_nodes).get("t_min", q.t_min);
        s.get("discount_tail", q.discount_tail).get("tail_prob", q.tail_prob);
    });
    auto& b = c.solver;
    section(root, "solver", [&](Section& s) {
        s.get("grid_points", b.grid_points).get("grid_lower_factor", b.grid_lower_factor);
        s.get("grid_quantile", b.grid_quantile).get("x_ref", b.x_ref).get("tol_boundary", b.tol_boundary);
        s.get("tol_residual", b.tol_residual).get("tol_bisection", b.tol_bisection).get("max_iters", b.max_iters);
        s.get("init_scale", b.init_scale);
    });
    auto& sf = c.surface;
    section(root, "surface", [&](Section& s) {
        s.get("z_per_decade", sf.z_per_decade).get("z_min", sf.z_min).get("z_dense_max", sf.z_dense_max);
        s.get("z_far_per_decade", sf.z_far_per_decade).get("z_far_max", sf.z_far_max);
        s.get("tail_ratio", sf.tail_ratio).get("z_limit", sf.z_limit).get("decay_tol", sf.decay_tol);
        s.get("decay_count", sf.decay_count).get("fd_step", sf.fd_step);
    });
    auto& m = c.mc;
    section(root, "mc", [&](Section& s) {
        s.get("paths", m.paths).get("dt", m.dt).get("horizon", m.horizon).get("seed", m.seed);
        s.get("continuity_correction", m.continuity_correction);
    });
    section(root, "control", [&](Section& s) {
        s.get("paths", c.control.paths).get("dt", c.control.dt);
        if (root["control"].contains("split")) {
            auto& sp = c.control.split;
            Section t(root["control"]["split"], "control.split");
            t.get("enabled", sp.enabled).get("start", sp.start).get("ratio", sp.ratio).get("factor", sp.factor);
            t.get("max_levels", sp.max_levels).finish();
        }
        json dummy;
        s.get("split", dummy);
    });
    auto& o = c.oracle;
    section(root, "oracle", [&](Section& s) {
        s.get("x_nodes", o.x_nodes).get("y_nodes", o.y_nodes).get("dt", o.dt).get("quantile", o.quantile);
        s.get("horizon", o.horizon).get("x_center", o.x_center).get("y_center", o.y_center).get("tol", o.tol);
        s.get("max_sweeps", o.max_sweeps).get("z_nodes", c.oracle_z_nodes);
    });

    if (m.paths < 2 || c.control.paths < 2) throw ConfigError("Monte Carlo needs at least two paths");
    if (!(m.dt > 0.0) || !(c.control.dt > 0.0)) throw ConfigError("Monte Carlo time steps must be positive");
    if (q.time_nodes < 2 || q.space_nodes < 2) throw ConfigError("quadrature needs at least two nodes");
    if (b.grid_points < 3) throw ConfigError("solver.grid_points must be at least 3");
    if (c.oracle_z_nodes < 2) throw ConfigError("oracle.z_nodes must be at least 2");
    if (c.control.split.factor < 2 || !(c.control.split.ratio > 1.0))
        throw ConfigError("control.split needs factor >= 2 and ratio > 1");
    return c;
}

RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return parse(os.str());
}

std::string dump(const RunConfig& c) {
    const auto gbm = [](const model::DiffusionSpec& d) {
        if (d.kind != model::DiffusionKind::GBM) return json{{"kind", "custom"}};
        return json{{"kind", "gbm"}, {"mu", d.mu()}, {"sigma", d.sigma()}};
    };
    json cost;
    if (c.problem.cost.kind == model::CostKind::SpreadPower)
        cost = {{"kind", "spread_power"}, {"k0", c.problem.cost.k0}, {"delta", c.problem.cost.delta}};
    else
        cost = {{"kind", "linear"}, {"k0", c.problem.cost.k0}};
    const auto& q = c.solver.quad;
    const auto& b = c.solver;
    const auto& s = c.surface;
    const auto& m = c.mc;
    const auto& sp = c.control.split;
    const auto& o = c.oracle;
    json j = {
        {"problem", {{"x", gbm(c.problem.x)}, {"y", gbm(c.problem.y)}, {"r", c.problem.r}, {"cost", cost}}},
        {"quadrature",
         {{"time_nodes", q.time_nodes},
          {"space_nodes", q.space_nodes},
          {"t_min", q.t_min},
          {"discount_tail", q.discount_tail},
          {"tail_prob", q.tail_prob}}},
        {"solver",
         {{"grid_points", b.grid_points},
          {"grid_lower_factor", b.grid_lower_factor},
          {"grid_quantile", b.grid_quantile},
          {"x_ref", b.x_ref},
          {"tol_boundary", b.tol_boundary},
          {"tol_residual", b.tol_residual},
          {"tol_bisection", b.tol_bisection},
          {"max_iters", b.max_iters},
          {"init_scale", b.init_scale}}},
        {"surface",
         {{"z_per_decade", s.z_per_decade},
          {"z_min", s.z_min},
          {"z_dense_max", s.z_dense_max},
          {"z_far_per_decade", s.z_far_per_decade},
          {"z_far_max", s.z_far_max},
          {"tail_ratio", s.tail_ratio},
          {"z_limit", s.z_limit},
          {"decay_tol", s.decay_tol},
          {"decay_count", s.decay_count},
          {"fd_step", s.fd_step}}},
        {"mc",
         {{"paths", m.paths},
          {"dt", m.dt},
          {"horizon", m.horizon},
          {"seed", m.seed},
          {"continuity_correction", m.continuity_correction}}},
        {"control",
         {{"paths", c.control.paths},
          {"dt", c.control.dt},
          {"split",
           {{"enabled", sp.enabled},
            {"start", sp.start},
            {"ratio", sp.ratio},
            {"factor", sp.factor},
            {"max_levels", sp.max_levels}}}}},
        {"oracle",
         {{"x_nodes", o.x_nodes},
          {"y_nodes", o.y_nodes},
          {"dt", o.dt},
          {"quantile", o.quantile},
          {"horizon", o.horizon},
          {"x_center", o.x_center},
          {"y_center", o.y_center},
          {"tol", o.tol},
          {"max_sweeps", o.max_sweeps},
          {"z_nodes", c.oracle_z_nodes}}},
        {"output", c.output},
    };
    return j.dump(2);
}

}  // namespace freebound::config
