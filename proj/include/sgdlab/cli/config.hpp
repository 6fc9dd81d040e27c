#pragma once

#include "sgdlab/error.hpp"
#include "sgdlab/fit.hpp"
#include "sgdlab/stochastic.hpp"
#include "sgdlab/vectorfield.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace sgdlab::cli {

/// A configuration problem; `field` is the dotted path of the offending key.
class ConfigError : public InvalidArgument {
  public:
    ConfigError(const std::string& field, const std::string& what)
        : InvalidArgument(field + ": " + what), field_(field)
    {
    }
    const std::string& field() const noexcept { return field_; }

  private:
    std::string field_;
};

inline const std::vector<std::string>& experiment_kinds()
{
    static const std::vector<std::string> kinds = {"sgd",  "robbins_monro", "polya",     "error_rate", "lojasiewicz",
                                                   "spectrum", "shadow", "repulsion", "rate_fit", "flow"};
    return kinds;
}

/// Either an explicit list or `from`/`to`/`points` with linear or log spacing.
struct GridSpec {
    std::vector<double> values;
    double from = 0.0;
    double to = 0.0;
    int points = 0;
    bool log = false;
    bool explicit_values = false;

    std::vector<double> expand() const
    {
        if (explicit_values) return values;
        return log ? logspace(from, to, static_cast<std::size_t>(points))
                   : linspace(from, to, static_cast<std::size_t>(points));
    }
};

struct SystemSpec {
    std::string name;
    std::vector<double> params;
};

struct CriticalSetSpec {
    std::string name;
    int count = 16;
    double extent = 1.0;
};

struct NoiseSpec {
    std::string kind = "zero";
    double sigma = 0.0;
    double b = 0.0;
    double floor = 0.0;

    NoiseModel model() const
    {
        if (kind == "zero") return NoiseModel::zero();
        if (kind == "gaussian_iso") return NoiseModel::gaussian_iso(sigma);
        if (kind == "bounded_uniform") return NoiseModel::bounded_uniform(b);
        return NoiseModel::excited_gaussian(sigma, floor);
    }
};

struct AnalysisSpec {
    std::optional<double> T;
    std::optional<GridSpec> t_grid;
    std::optional<GridSpec> n_grid;
    std::optional<GridSpec> lambda_grid;
    std::vector<double> shifts;
    std::optional<std::vector<double>> point;
    std::optional<double> radius;
    std::optional<int> samples;
    std::optional<double> tail_fraction;
    std::optional<double> mu;
    std::optional<int> K;
    std::optional<double> origin;
    std::optional<double> start_radius;
    std::optional<double> floor;
};

struct ExperimentConfig {
    std::string kind;
    SystemSpec system;
    std::optional<CriticalSetSpec> critical_set;
    StepSchedule schedule;
    NoiseSpec noise;
    std::uint64_t N = 1000;
    std::size_t runs = 1;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    std::optional<std::vector<double>> x0;
    RecordPolicy record;
    AnalysisSpec analysis;
    std::string output_dir;
};

namespace detail {

template <class T>
T read_scalar(const YAML::Node& n, const std::string& field)
{
    if (!n.IsScalar()) throw ConfigError(field, "expected a scalar");
    try {
        return n.as<T>();
    } catch (const YAML::Exception&) {
        throw ConfigError(field, "cannot parse '" + n.Scalar() + "'");
    }
}

inline std::vector<double> read_list(const YAML::Node& n, const std::string& field)
{
    if (!n.IsSequence()) throw ConfigError(field, "expected a list of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < n.size(); ++i) out.push_back(read_scalar<double>(n[i], field + "[" + std::to_string(i) + "]"));
    return out;
}

inline void check_keys(const YAML::Node& n, const std::string& where, const std::vector<std::string>& allowed)
{
    if (!n.IsMap()) throw ConfigError(where.empty() ? "config" : where, "expected a mapping");
    for (const auto& kv : n) {
        const auto key = kv.first.as<std::string>();
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw ConfigError(where.empty() ? key : where + "." + key, "unknown key");
    }
}

inline GridSpec read_grid(const YAML::Node& n, const std::string& field)
{
    GridSpec g;
    if (n.IsSequence()) {
        g.values = read_list(n, field);
        g.explicit_values = true;
        return g;
    }
    check_keys(n, field, {"from", "to", "points", "spacing"});
    if (!n["from"] || !n["to"] || !n["points"]) throw ConfigError(field, "needs from, to and points (or a list)");
    g.from = read_scalar<double>(n["from"], field + ".from");
    g.to = read_scalar<double>(n["to"], field + ".to");
    g.points = read_scalar<int>(n["points"], field + ".points");
    if (n["spacing"]) {
        const auto s = read_scalar<std::string>(n["spacing"], field + ".spacing");
        if (s != "linear" && s != "log") throw ConfigError(field + ".spacing", "must be linear or log");
        g.log = s == "log";
    }
    if (g.points < 2) throw ConfigError(field + ".points", "must be >= 2");
    if (!(g.to > g.from)) throw ConfigError(field, "to must exceed from");
    if (g.log && !(g.from > 0.0)) throw ConfigError(field + ".from", "log spacing needs from > 0");
    return g;
}

inline YAML::Node write_grid(const GridSpec& g)
{
    YAML::Node n;
    if (g.explicit_values) {
        for (double v : g.values) n.push_back(v);
        n.SetStyle(YAML::EmitterStyle::Flow);
        return n;
    }
    n["from"] = g.from;
    n["to"] = g.to;
    n["points"] = g.points;
    n["spacing"] = g.log ? "log" : "linear";
    return n;
}

inline YAML::Node flow_list(const std::vector<double>& v)
{
    YAML::Node n(YAML::NodeType::Sequence);
    for (double x : v) n.push_back(x);
    n.SetStyle(YAML::EmitterStyle::Flow);
    return n;
}

} // namespace detail

/// Checks cross-field constraints; throws ConfigError naming the field.
inline void validate(const ExperimentConfig& c)
{
    const auto& kinds = experiment_kinds();
    if (std::find(kinds.begin(), kinds.end(), c.kind) == kinds.end())
        throw ConfigError("kind", "unknown experiment kind '" + c.kind + "'");
    if (c.kind != "polya") {
        const auto& names = catalog_names();
        if (std::find(names.begin(), names.end(), c.system.name) == names.end())
            throw ConfigError("system.name", "unknown system '" + c.system.name + "'");
        try {
            (void)catalog_system(c.system.name, c.system.params);
        } catch (const InvalidArgument& e) {
            throw ConfigError("system.params", e.what());
        }
    }
    try {
        c.schedule.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError("schedule", e.what());
    }
    try {
        (void)c.noise.model();
    } catch (const InvalidArgument& e) {
        throw ConfigError("noise", e.what());
    }
    try {
        c.record.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError("record", e.what());
    }
    if (c.N < 1) throw ConfigError("N", "must be >= 1");
    if (c.runs < 1) throw ConfigError("runs", "must be >= 1");
    if (c.threads < 1) throw ConfigError("threads", "must be >= 1");

    const bool needs_potential = c.kind == "lojasiewicz" || c.kind == "sgd";
    if (c.kind != "polya") {
        const auto sys = catalog_system(c.system.name, c.system.params);
        if (needs_potential && !sys.has_lyapunov())
            throw ConfigError("system.name", "'" + c.system.name + "' has no potential; " + c.kind + " needs one");
        if (c.x0 && static_cast<int>(c.x0->size()) != sys.dimension())
            throw ConfigError("x0", "has " + std::to_string(c.x0->size()) + " entries, system dimension is " +
                                        std::to_string(sys.dimension()));
        if (c.analysis.point && static_cast<int>(c.analysis.point->size()) != sys.dimension())
            throw ConfigError("analysis.point", "wrong dimension");
    }
    const auto& a = c.analysis;
    auto require = [&](bool ok, const std::string& field, const std::string& what) {
        if (!ok) throw ConfigError(field, what);
    };
    if (c.kind == "sgd" || c.kind == "robbins_monro" || c.kind == "error_rate" || c.kind == "shadow" ||
        c.kind == "rate_fit" || c.kind == "flow")
        require(c.x0.has_value(), "x0", "required for kind " + c.kind);
    if (c.kind == "error_rate") {
        require(a.t_grid.has_value(), "analysis.t_grid", "required for error_rate");
        require(a.T.has_value(), "analysis.T", "required for error_rate");
    }
    if (c.kind == "rate_fit") require(a.n_grid.has_value(), "analysis.n_grid", "required for rate_fit");
    if (c.kind == "flow") require(a.t_grid.has_value(), "analysis.t_grid", "required for flow");
    if (c.kind == "repulsion") {
        require(c.critical_set.has_value(), "critical_set", "required for repulsion");
        require(a.radius.has_value(), "analysis.radius", "required for repulsion");
    }
    if (c.kind == "spectrum") require(c.critical_set.has_value(), "critical_set", "required for spectrum");
    if (c.kind == "shadow") {
        require(a.origin.has_value(), "analysis.origin", "required for shadow");
        require(a.K.has_value() && *a.K >= 1, "analysis.K", "required for shadow and must be >= 1");
        require(a.mu.has_value() || c.critical_set.has_value(), "analysis.mu",
                "required for shadow unless critical_set supplies a spectral witness");
    }
    if (a.mu) require(*a.mu < 0.0, "analysis.mu", "must be < 0");
    if (a.T) require(*a.T > 0.0, "analysis.T", "must be > 0");
    if (a.radius) require(*a.radius > 0.0, "analysis.radius", "must be > 0");
    if (a.samples) require(*a.samples >= 5, "analysis.samples", "must be >= 5");
    if (a.tail_fraction)
        require(*a.tail_fraction > 0.0 && *a.tail_fraction <= 0.5, "analysis.tail_fraction", "must lie in (0, 0.5]");
    if (c.critical_set) {
        require(c.critical_set->count >= 1, "critical_set.count", "must be >= 1");
        try {
            const int dim = c.kind == "polya" ? 1 : catalog_system(c.system.name, c.system.params).dimension();
            const auto C = catalog_critical_set(c.critical_set->name, c.critical_set->count, c.critical_set->extent, dim);
            if (c.kind != "polya" && C.points.front().size() != dim)
                throw ConfigError("critical_set.name", "sample dimension does not match the system");
        } catch (const InvalidArgument& e) {
            throw ConfigError("critical_set.name", e.what());
        }
    }
}

inline ExperimentConfig parse_config(const YAML::Node& root)
{
    using namespace detail;
    check_keys(root, "", {"kind", "system", "critical_set", "schedule", "noise", "N", "runs", "seed", "threads", "x0",
                          "record", "analysis", "output_dir"});
    ExperimentConfig c;
    if (!root["kind"]) throw ConfigError("kind", "missing");
    c.kind = read_scalar<std::string>(root["kind"], "kind");
    if (root["system"]) {
        const auto& s = root["system"];
        check_keys(s, "system", {"name", "params"});
        if (!s["name"]) throw ConfigError("system.name", "missing");
        c.system.name = read_scalar<std::string>(s["name"], "system.name");
        if (s["params"]) c.system.params = read_list(s["params"], "system.params");
    } else if (c.kind != "polya") {
        throw ConfigError("system", "missing");
    } else {
        c.system.name = "polya_zero";
    }
    if (root["critical_set"]) {
        const auto& s = root["critical_set"];
        check_keys(s, "critical_set", {"name", "count", "extent"});
        CriticalSetSpec cs;
        if (!s["name"]) throw ConfigError("critical_set.name", "missing");
        cs.name = read_scalar<std::string>(s["name"], "critical_set.name");
        if (s["count"]) cs.count = read_scalar<int>(s["count"], "critical_set.count");
        if (s["extent"]) cs.extent = read_scalar<double>(s["extent"], "critical_set.extent");
        c.critical_set = cs;
    }
    if (root["schedule"]) {
        const auto& s = root["schedule"];
        check_keys(s, "schedule", {"A", "beta", "n0", "shift", "exponent"});
        if (s["A"]) c.schedule.A = read_scalar<double>(s["A"], "schedule.A");
        if (s["beta"]) c.schedule.beta = read_scalar<double>(s["beta"], "schedule.beta");
        if (s["n0"]) c.schedule.n0 = read_scalar<std::uint64_t>(s["n0"], "schedule.n0");
        if (s["shift"]) c.schedule.shift = read_scalar<std::uint64_t>(s["shift"], "schedule.shift");
        if (s["exponent"]) c.schedule.exponent = read_scalar<double>(s["exponent"], "schedule.exponent");
    }
    if (root["noise"]) {
        const auto& s = root["noise"];
        check_keys(s, "noise", {"kind", "sigma", "b", "floor"});
        if (!s["kind"]) throw ConfigError("noise.kind", "missing");
        c.noise.kind = read_scalar<std::string>(s["kind"], "noise.kind");
        if (c.noise.kind != "zero" && c.noise.kind != "gaussian_iso" && c.noise.kind != "bounded_uniform" &&
            c.noise.kind != "excited_gaussian")
            throw ConfigError("noise.kind", "unknown noise kind '" + c.noise.kind + "'");
        if (s["sigma"]) c.noise.sigma = read_scalar<double>(s["sigma"], "noise.sigma");
        if (s["b"]) c.noise.b = read_scalar<double>(s["b"], "noise.b");
        if (s["floor"]) c.noise.floor = read_scalar<double>(s["floor"], "noise.floor");
        if ((c.noise.kind == "gaussian_iso" || c.noise.kind == "excited_gaussian") && !s["sigma"])
            throw ConfigError("noise.sigma", "required for " + c.noise.kind);
        if (c.noise.kind == "bounded_uniform" && !s["b"]) throw ConfigError("noise.b", "required for bounded_uniform");
        if (c.noise.kind == "excited_gaussian" && !s["floor"])
            throw ConfigError("noise.floor", "required for excited_gaussian");
    }
    if (root["N"]) c.N = read_scalar<std::uint64_t>(root["N"], "N");
    if (root["runs"]) c.runs = read_scalar<std::size_t>(root["runs"], "runs");
    if (root["seed"]) c.seed = read_scalar<std::uint64_t>(root["seed"], "seed");
    if (root["threads"]) c.threads = read_scalar<unsigned>(root["threads"], "threads");
    if (root["x0"]) c.x0 = read_list(root["x0"], "x0");
    if (root["record"]) {
        const auto& s = root["record"];
        check_keys(s, "record", {"stride", "tau_spacing", "tail_window", "hard_stop_norm"});
        if (s["stride"]) c.record.stride = read_scalar<std::uint64_t>(s["stride"], "record.stride");
        if (s["tau_spacing"]) c.record.tau_spacing = read_scalar<double>(s["tau_spacing"], "record.tau_spacing");
        if (s["tail_window"]) c.record.tail_window = read_scalar<std::uint64_t>(s["tail_window"], "record.tail_window");
        if (s["hard_stop_norm"]) c.record.hard_stop_norm = read_scalar<double>(s["hard_stop_norm"], "record.hard_stop_norm");
    }
    if (root["analysis"]) {
        const auto& s = root["analysis"];
        check_keys(s, "analysis", {"T", "t_grid", "n_grid", "lambda_grid", "shifts", "point", "radius", "samples",
                                   "tail_fraction", "mu", "K", "origin", "start_radius", "floor"});
        auto& a = c.analysis;
        if (s["T"]) a.T = read_scalar<double>(s["T"], "analysis.T");
        if (s["t_grid"]) a.t_grid = read_grid(s["t_grid"], "analysis.t_grid");
        if (s["n_grid"]) a.n_grid = read_grid(s["n_grid"], "analysis.n_grid");
        if (s["lambda_grid"]) a.lambda_grid = read_grid(s["lambda_grid"], "analysis.lambda_grid");
        if (s["shifts"]) a.shifts = read_list(s["shifts"], "analysis.shifts");
        if (s["point"]) a.point = read_list(s["point"], "analysis.point");
        if (s["radius"]) a.radius = read_scalar<double>(s["radius"], "analysis.radius");
        if (s["samples"]) a.samples = read_scalar<int>(s["samples"], "analysis.samples");
        if (s["tail_fraction"]) a.tail_fraction = read_scalar<double>(s["tail_fraction"], "analysis.tail_fraction");
        if (s["mu"]) a.mu = read_scalar<double>(s["mu"], "analysis.mu");
        if (s["K"]) a.K = read_scalar<int>(s["K"], "analysis.K");
        if (s["origin"]) a.origin = read_scalar<double>(s["origin"], "analysis.origin");
        if (s["start_radius"]) a.start_radius = read_scalar<double>(s["start_radius"], "analysis.start_radius");
        if (s["floor"]) a.floor = read_scalar<double>(s["floor"], "analysis.floor");
    }
    if (root["output_dir"]) c.output_dir = read_scalar<std::string>(root["output_dir"], "output_dir");
    if (c.output_dir.empty()) c.output_dir = "out/" + c.kind;
    validate(c);
    return c;
}

inline ExperimentConfig parse_config_text(const std::string& text)
{
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw ConfigError("config", std::string("malformed YAML: ") + e.what());
    }
    if (!root || root.IsNull()) throw ConfigError("config", "empty document");
    return parse_config(root);
}

inline ExperimentConfig load_config(const std::string& path)
{
    YAML::Node root;
    try {
        root = YAML::LoadFile(path);
    } catch (const YAML::BadFile&) {
        throw ConfigError("config", "cannot read file '" + path + "'");
    } catch (const YAML::Exception& e) {
        throw ConfigError("config", std::string("malformed YAML: ") + e.what());
    }
    if (!root || root.IsNull()) throw ConfigError("config", "empty document");
    return parse_config(root);
}

/// Canonical YAML form; parse(serialize(c)) reproduces c.
inline std::string serialize_config(const ExperimentConfig& c)
{
    using detail::flow_list;
    YAML::Node n;
    n["kind"] = c.kind;
    n["system"]["name"] = c.system.name;
    n["system"]["params"] = flow_list(c.system.params);
    if (c.critical_set) {
        n["critical_set"]["name"] = c.critical_set->name;
        n["critical_set"]["count"] = c.critical_set->count;
        n["critical_set"]["extent"] = c.critical_set->extent;
    }
    n["schedule"]["A"] = c.schedule.A;
    n["schedule"]["beta"] = c.schedule.beta;
    n["schedule"]["n0"] = c.schedule.n0;
    n["schedule"]["shift"] = c.schedule.shift;
    n["schedule"]["exponent"] = c.schedule.exponent;
    n["noise"]["kind"] = c.noise.kind;
    if (c.noise.kind == "gaussian_iso" || c.noise.kind == "excited_gaussian") n["noise"]["sigma"] = c.noise.sigma;
    if (c.noise.kind == "bounded_uniform") n["noise"]["b"] = c.noise.b;
    if (c.noise.kind == "excited_gaussian") n["noise"]["floor"] = c.noise.floor;
    n["N"] = c.N;
    n["runs"] = c.runs;
    n["seed"] = c.seed;
    n["threads"] = c.threads;
    if (c.x0) n["x0"] = flow_list(*c.x0);
    n["record"]["stride"] = c.record.stride;
    n["record"]["tau_spacing"] = c.record.tau_spacing;
    n["record"]["tail_window"] = c.record.tail_window;
    if (c.record.hard_stop_norm) n["record"]["hard_stop_norm"] = *c.record.hard_stop_norm;
    const auto& a = c.analysis;
    YAML::Node an(YAML::NodeType::Map);
    if (a.T) an["T"] = *a.T;
    if (a.t_grid) an["t_grid"] = detail::write_grid(*a.t_grid);
    if (a.n_grid) an["n_grid"] = detail::write_grid(*a.n_grid);
    if (a.lambda_grid) an["lambda_grid"] = detail::write_grid(*a.lambda_grid);
    if (!a.shifts.empty()) an["shifts"] = flow_list(a.shifts);
    if (a.point) an["point"] = flow_list(*a.point);
    if (a.radius) an["radius"] = *a.radius;
    if (a.samples) an["samples"] = *a.samples;
    if (a.tail_fraction) an["tail_fraction"] = *a.tail_fraction;
    if (a.mu) an["mu"] = *a.mu;
    if (a.K) an["K"] = *a.K;
    if (a.origin) an["origin"] = *a.origin;
    if (a.start_radius) an["start_radius"] = *a.start_radius;
    if (a.floor) an["floor"] = *a.floor;
    n["analysis"] = an;
    n["output_dir"] = c.output_dir;
    YAML::Emitter out;
    out.SetDoublePrecision(17);
    out << n;
    return std::string(out.c_str()) + "\n";
}

} // namespace sgdlab::cli
