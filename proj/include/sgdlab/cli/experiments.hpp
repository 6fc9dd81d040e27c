#pragma once

#include "sgdlab/cli/config.hpp"
#include "sgdlab/cli/output.hpp"
#include "sgdlab/sgdlab.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace sgdlab::cli {

/// Files produced by one experiment, plus the per-run seeds used.
struct ExperimentOutputs {
    struct File {
        std::string name;
        std::string content;
        std::string description;
        std::vector<std::string> columns;
    };
    std::vector<File> files;
    json summary = json::object();
    std::vector<std::uint64_t> seeds;

    void add_csv(std::string name, std::string description, const CsvTable& t)
    {
        files.push_back({std::move(name), t.text(), std::move(description), t.columns()});
    }
    void add_json(std::string name, std::string description, const json& j)
    {
        files.push_back({std::move(name), j.dump(2) + "\n", std::move(description), {}});
    }
};

namespace detail {

inline GradientLikeSystem make_system(const ExperimentConfig& c) { return catalog_system(c.system.name, c.system.params); }

inline CriticalSetSample make_critical_set(const ExperimentConfig& c, const GradientLikeSystem& sys)
{
    const auto& s = *c.critical_set;
    return catalog_critical_set(s.name, s.count, s.extent, sys.dimension());
}

inline Vector to_vector(const std::vector<double>& v)
{
    Vector x(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) x[static_cast<Eigen::Index>(i)] = v[i];
    return x;
}

inline std::vector<std::string> trajectory_columns(int dim)
{
    std::vector<std::string> cols = {"n", "tau"};
    for (int i = 1; i <= dim; ++i) cols.push_back("x_" + std::to_string(i));
    return cols;
}

inline CsvTable trajectory_table(const Trajectory& tr)
{
    CsvTable t(trajectory_columns(tr.dim));
    for (std::size_t i = 0; i < tr.size(); ++i) t.row(tr.index[i], tr.tau[i], Vector(tr.point(i)));
    return t;
}

inline json schedule_json(const StepSchedule& s)
{
    return json{{"A", s.A}, {"beta", s.beta}, {"n0", s.n0}, {"shift", s.shift}, {"exponent", s.exponent}};
}

inline json trajectory_json(const Trajectory& tr)
{
    return json{{"system", tr.system_id},      {"seed", tr.seed},           {"schedule", schedule_json(tr.schedule)},
                {"steps", tr.steps},           {"stopped_early", tr.stopped_early},
                {"max_norm", tr.max_norm},     {"final_point", to_json(tr.final_point)},
                {"tail_mean", to_json(tr.tail_mean)}, {"stored_iterates", tr.size()}};
}

/// SGD when the field is an exact negative gradient, Robbins–Monro otherwise.
inline Trajectory simulate(const ExperimentConfig& c, const GradientLikeSystem& sys, std::uint64_t seed, bool force_rm = false)
{
    const Vector x0 = to_vector(*c.x0);
    if (!force_rm && sys.pure_gradient())
        return run_sgd(sys, x0, c.schedule, c.noise.model(), c.N, seed, c.record);
    return run_robbins_monro(sys, x0, c.schedule, c.noise.model(), c.N, seed, c.record);
}

inline std::vector<std::uint64_t> run_seeds(const ExperimentConfig& c)
{
    std::vector<std::uint64_t> s;
    for (std::size_t i = 0; i < c.runs; ++i) s.push_back(derive_seed(c.seed, i));
    return s;
}

inline SpectrumSource spectrum_source(const GradientLikeSystem& sys)
{
    return sys.pure_gradient() ? SpectrumSource::hessian : SpectrumSource::jacobian;
}

inline json spectrum_json(const SpectrumReport& rep, const SpectralConditionVerdict& v)
{
    json pp = json::array();
    for (const auto& p : rep.per_point) pp.push_back({{"point", to_json(p.point)}, {"eigenvalues", p.eigenvalues}});
    json verdict{{"A", v.A}, {"holds", v.holds}, {"witness_mu", v.witness_mu ? json(*v.witness_mu) : json()},
                 {"margin", v.margin}};
    return json{{"source", rep.source == SpectrumSource::hessian ? "hessian" : "jacobian"},
                {"spectrum", rep.union_values},
                {"per_point", pp},
                {"spectral_condition", verdict}};
}

inline json limit_set_json(const LimitSetEstimate& l)
{
    return json{{"cloud_size", l.cloud.size()},
                {"diameter", l.diameter},
                {"distance_to_set", l.distance_to_set ? json(*l.distance_to_set) : json()}};
}

// ---------------------------------------------------------------------------

inline ExperimentOutputs run_trajectories(const ExperimentConfig& c)
{
    ExperimentOutputs out;
    const auto sys = make_system(c);
    out.seeds = run_seeds(c);
    const bool rm = c.kind == "robbins_monro";
    const auto trajs = parallel_map(c.runs, c.threads, [&](std::size_t i) { return simulate(c, sys, out.seeds[i], rm); });
    std::optional<CriticalSetSample> C;
    if (c.critical_set) C = make_critical_set(c, sys);
    json runs = json::array();
    for (std::size_t i = 0; i < trajs.size(); ++i) {
        const auto name = "trajectory_" + std::to_string(i) + ".csv";
        out.add_csv(name, "stored iterates of run " + std::to_string(i), trajectory_table(trajs[i]));
        json r = trajectory_json(trajs[i]);
        r["file"] = name;
        if (c.analysis.tail_fraction)
            r["limit_set"] = limit_set_json(limit_set_estimate(trajs[i], *c.analysis.tail_fraction, C ? &*C : nullptr));
        runs.push_back(r);
    }
    out.summary["runs"] = runs;
    if (C) {
        const auto rep = set_spectrum(sys, *C, spectrum_source(sys));
        const auto v = spectral_condition(rep, c.schedule.A);
        const json sj = spectrum_json(rep, v);
        out.add_json("spectrum.json", "spectrum of the critical set and spectral-condition verdict", sj);
        out.summary["spectral_condition"] = sj["spectral_condition"];
        out.summary["spectrum"] = rep.union_values;
    }
    return out;
}

inline ExperimentOutputs run_polya(const ExperimentConfig& c)
{
    ExperimentOutputs out;
    out.seeds = run_seeds(c);
    const auto ends = polya_endpoints(c.runs, c.N, c.seed, c.threads);
    CsvTable t({"run", "seed", "x_N"});
    for (std::size_t i = 0; i < ends.size(); ++i) t.row(static_cast<std::uint64_t>(i), out.seeds[i], ends[i]);
    out.add_csv("endpoints.csv", "final urn proportion of each run", t);
    out.summary["N"] = c.N;
    out.summary["runs"] = c.runs;
    out.summary["ks_statistic"] = ends.size() >= 100 ? json(distribution_test(ends)) : json();
    if (c.N > 1 && c.runs >= 2) {
        const auto n = std::min<std::uint64_t>(100, c.N - 1);
        const auto m = polya_martingale_check(c.runs, n, derive_seed(c.seed, 0x6d61727467ULL), c.threads);
        out.summary["martingale"] = {{"n", m.n},
                                     {"mean_increment", m.mean_increment},
                                     {"se_increment", m.se_increment},
                                     {"mean_weighted", m.mean_weighted},
                                     {"se_weighted", m.se_weighted},
                                     {"passes", m.passes}};
    }
    return out;
}

inline ExperimentOutputs run_error_rate(const ExperimentConfig& c)
{
    ExperimentOutputs out;
    const auto sys = make_system(c);
    out.seeds = run_seeds(c);
    const auto grid = c.analysis.t_grid->expand();
    const double T = *c.analysis.T;
    ErrorRateOptions opt;
    if (c.analysis.floor) opt.minus_infinity_floor = *c.analysis.floor;
    std::vector<double> shifts = {0.0};
    shifts.insert(shifts.end(), c.analysis.shifts.begin(), c.analysis.shifts.end());

    const auto per_run = parallel_map(c.runs, c.threads, [&](std::size_t i) {
        const Trajectory tr = simulate(c, sys, out.seeds[i]);
        const InterpolatedPath X = interpolate(tr);
        std::vector<ErrorRateEstimate> est;
        for (double s : shifts) {
            std::vector<double> g = grid;
            for (auto& t : g) t += s;
            est.push_back(error_rate(X, sys, g, T, opt));
        }
        return est;
    });
    json runs = json::array();
    std::vector<std::vector<double>> by_shift(shifts.size());
    for (std::size_t i = 0; i < per_run.size(); ++i) {
        const auto& e = per_run[i].front();
        CsvTable t({"t", "log_defect"});
        for (std::size_t k = 0; k < e.t_grid.size(); ++k) t.row(e.t_grid[k], e.log_defect[k]);
        const auto name = "fit_" + std::to_string(i) + ".csv";
        out.add_csv(name, "log APT defect against t for run " + std::to_string(i), t);
        json shifted = json::array();
        for (std::size_t s = 0; s < shifts.size(); ++s) {
            by_shift[s].push_back(per_run[i][s].e_hat);
            shifted.push_back({{"shift", shifts[s]}, {"e_hat", per_run[i][s].e_hat}, {"r2", per_run[i][s].r2}});
        }
        runs.push_back({{"seed", out.seeds[i]},
                        {"e_hat", e.e_hat},
                        {"r2", e.r2},
                        {"minus_infinity", e.minus_infinity},
                        {"early_slope", e.early_slope},
                        {"late_slope", e.late_slope},
                        {"dropped", e.dropped},
                        {"sup_error_bound", e.sup_error_bound},
                        {"shifted", shifted},
                        {"file", name}});
    }
    const double med = median(by_shift.front());
    out.summary["T"] = T;
    out.summary["e_hat_median"] = med;
    const auto& first = per_run.front().front();
    if (first.theoretical) {
        out.summary["theoretical"] = *first.theoretical;
        out.summary["deviation"] = med - *first.theoretical;
    } else {
        out.summary["theoretical"] = nullptr;
        out.summary["deviation"] = nullptr;
    }
    json sm = json::array();
    for (std::size_t s = 0; s < shifts.size(); ++s) sm.push_back({{"shift", shifts[s]}, {"e_hat_median", median(by_shift[s])}});
    out.summary["shift_medians"] = sm;
    out.summary["runs"] = runs;
    return out;
}

inline ExperimentOutputs run_lojasiewicz(const ExperimentConfig& c)
{
    ExperimentOutputs out;
    const auto sys = make_system(c);
    Vector p = Vector::Zero(sys.dimension());
    if (c.analysis.point) p = to_vector(*c.analysis.point);
    else if (c.critical_set) p = make_critical_set(c, sys).points.front();
    const double radius = c.analysis.radius.value_or(0.1);
    const int samples = c.analysis.samples.value_or(2000);
    out.seeds = {derive_seed(c.seed, 0), derive_seed(c.seed, 1)};
    const auto L = estimate_lojasiewicz(sys.lyapunov(), p, radius, samples, out.seeds[0]);
    const auto a = check_angle(sys, p, radius, samples, out.seeds[1]);
    out.summary["point"] = to_json(p);
    out.summary["lojasiewicz"] = {{"theta_hat", L.theta_hat}, {"theta_raw", L.theta_raw}, {"clamped", L.clamped},
                                  {"c0_hat", L.c0_hat},       {"c0_fit", L.c0_fit},       {"eps_fit", L.eps_fit},
                                  {"radius", L.radius},       {"samples_used", L.samples_used}, {"r2", L.r2},
                                  {"unreliable", L.unreliable}, {"ray_monotone", L.ray_monotone}};
    out.summary["angle"] = {{"c1_hat", a.c1_hat}, {"beta_angle_hat", a.beta_angle_hat},
                            {"samples_used", a.samples_used}, {"failure", a.failure}};
    out.summary["predicted_flow_rate"] = L.theta_hat >= 0.5 - 1e-12
                                             ? json{{"kind", "exponential"}, {"exponent", -a.beta_angle_hat / (2.0 * L.c0_hat * L.c0_hat)}}
                                             : json{{"kind", "power"}, {"exponent", -L.theta_hat / (1.0 - 2.0 * L.theta_hat)}};
    return out;
}

inline ExperimentOutputs run_spectrum(const ExperimentConfig& c)
{
    ExperimentOutputs out;
    const auto sys = make_system(c);
    const auto C = make_critical_set(c, sys);
    C.validate(sys);
    const auto rep = set_spectrum(sys, C, spectrum_source(sys));
    const auto v = spectral_condition(rep, c.schedule.A);
    out.summary = spectrum_json(rep, v);
    const auto inst = linear_instability_check(sys, C, spectrum_source(sys));
    out.summary["linearly_unstable"] = inst.all_unstable;
    if (c.analysis.lambda_grid) {
        ResolventOptions opt;
        opt.seed = derive_seed(c.seed, 0);
        out.seeds = {opt.seed};
        const auto lambdas = c.analysis.lambda_grid->expand();
        const auto verdicts = parallel_map(lambdas.size(), c.threads, [&](std::size_t i) { return resolvent_test(sys, C, lambdas[i], opt); });
        CsvTable t({"lambda", "in_resolvent", "witness_growth", "weakest_growth"});
        for (const auto& r : verdicts) t.row(r.lambda, std::string(to_string(r.verdict)), r.witness_growth, r.weakest_growth);
        out.add_csv("resolvent.csv", "finite-horizon resolvent verdict per lambda", t);
    }
    if (c.analysis.T) out.summary["expansion_rate"] = expansion_rate(sys, C, *c.analysis.T);
    return out;
}

inline ExperimentOutputs run_shadow(const ExperimentConfig& c)
{
    ExperimentOutputs out;
    const auto sys = make_system(c);
    out.seeds = {derive_seed(c.seed, 0)};
    const Trajectory tr = simulate(c, sys, out.seeds[0]);
    const InterpolatedPath X = interpolate(tr);
    double mu = 0.0;
    if (c.analysis.mu) {
        mu = *c.analysis.mu;
    } else {
        const auto v = spectral_condition(set_spectrum(sys, make_critical_set(c, sys), spectrum_source(sys)), c.schedule.A);
        if (!v.holds) throw ConfigError("analysis.mu", "spectral condition fails, so no witness mu is available");
        mu = *v.witness_mu;
    }
    const double origin = *c.analysis.origin;
    const int K = *c.analysis.K;
    const auto po = make_pseudo_orbit(X, origin, K, mu);
    ShadowOptions opt;
    opt.threads = c.threads;
    opt.seed = derive_seed(c.seed, 1);
    const auto res = find_shadow(sys, po, std::nullopt, opt);
    const auto decay = shadow_decay_check(sys, X, res.x_star, origin, mu, K);
    const auto g = defect_sequence(sys, po);
    CsvTable t({"k", "distance", "defect"});
    for (std::size_t k = 0; k < decay.k.size(); ++k)
        t.row(decay.k[k], decay.distance[k], k < g.size() ? g[k].norm() : std::nan(""));
    out.add_csv("shadow.csv", "distance to the shadow orbit and pseudo-orbit defect per k", t);
    out.summary = {{"mu", mu},
                   {"r", po.r()},
                   {"origin", origin},
                   {"K", K},
                   {"x_star", to_json(res.x_star)},
                   {"g_norm", res.g_norm},
                   {"h_norm", res.h_norm},
                   {"ratio", res.ratio},
                   {"converged", res.converged},
                   {"tail_weight", res.tail_weight},
                   {"decay_slope", decay.skipped ? json() : json(decay.slope)},
                   {"decay_r2", decay.r2},
                   {"decay_skipped", decay.skipped}};
    return out;
}

inline ExperimentOutputs run_repulsion(const ExperimentConfig& c)
{
    ExperimentOutputs out;
    const auto sys = make_system(c);
    const auto C = make_critical_set(c, sys);
    RepulsionOptions opt;
    opt.threads = c.threads;
    if (c.analysis.start_radius) opt.start_radius = *c.analysis.start_radius;
    const auto rep = repulsion_experiment(sys, C, *c.analysis.radius, c.schedule, c.noise.model(), c.runs, c.N, c.seed, opt);
    std::vector<std::string> cols = {"run", "seed", "escaped", "escape_index", "returned", "ended_inside"};
    for (int i = 1; i <= sys.dimension(); ++i) cols.push_back("final_x_" + std::to_string(i));
    CsvTable t(cols);
    for (std::size_t i = 0; i < rep.per_run.size(); ++i) {
        const auto& r = rep.per_run[i];
        out.seeds.push_back(r.seed);
        t.row(static_cast<std::uint64_t>(i), r.seed, r.escape_index ? 1 : 0,
              r.escape_index ? static_cast<double>(*r.escape_index) : std::nan(""), r.returned_after_escape ? 1 : 0,
              r.ended_inside ? 1 : 0, r.final_point);
    }
    out.add_csv("runs.csv", "per-run escape record (escape_index empty as nan when the run never left U)", t);
    std::size_t escaped = 0;
    for (const auto& e : rep.escape_times) escaped += e ? 1 : 0;
    out.summary = {{"set", rep.set_label},        {"radius", rep.radius},
                   {"runs", rep.runs},            {"N", rep.N},
                   {"escaped", escaped},          {"escape_fraction", rep.escape_fraction},
                   {"returns_after_escape", rep.returns_after_escape}, {"ended_inside", rep.ended_inside}};
    return out;
}

inline ExperimentOutputs run_rate_fit(const ExperimentConfig& c)
{
    ExperimentOutputs out;
    const auto sys = make_system(c);
    out.seeds = run_seeds(c);
    std::vector<std::uint64_t> grid;
    for (double v : c.analysis.n_grid->expand()) grid.push_back(static_cast<std::uint64_t>(std::llround(v)));
    std::optional<Vector> x_inf;
    if (c.analysis.point) x_inf = to_vector(*c.analysis.point);
    const auto fits = parallel_map(c.runs, c.threads, [&](std::size_t i) {
        return fit_discrete_log_rate(simulate(c, sys, out.seeds[i]), grid, x_inf);
    });
    json runs = json::array();
    std::vector<double> cs;
    for (std::size_t i = 0; i < fits.size(); ++i) {
        const auto& f = fits[i];
        CsvTable t({"n", "distance"});
        for (std::size_t k = 0; k < f.n.size(); ++k) t.row(f.n[k], f.distance[k]);
        const auto name = "rate_" + std::to_string(i) + ".csv";
        out.add_csv(name, "distance to x_inf at grid indices for run " + std::to_string(i), t);
        cs.push_back(f.c_hat);
        runs.push_back({{"seed", out.seeds[i]},
                        {"c_hat", f.c_hat},
                        {"r2", f.r2},
                        {"x_inf", to_json(f.x_inf)},
                        {"points_used", f.points_used},
                        {"dropped_noise_floor", f.dropped_noise_floor},
                        {"super_logarithmic", f.super_logarithmic},
                        {"file", name}});
    }
    out.summary["c_hat_median"] = median(cs);
    out.summary["runs"] = runs;
    return out;
}

inline ExperimentOutputs run_flow(const ExperimentConfig& c)
{
    ExperimentOutputs out;
    const auto sys = make_system(c);
    const Vector x0 = to_vector(*c.x0);
    const auto grid = c.analysis.t_grid->expand();
    const auto path = flow_path(sys, x0, grid);
    std::vector<std::string> cols = {"t"};
    for (int i = 1; i <= sys.dimension(); ++i) cols.push_back("x_" + std::to_string(i));
    CsvTable t(cols);
    for (std::size_t i = 0; i < grid.size(); ++i) t.row(grid[i], path[i]);
    out.add_csv("flow.csv", "flow trajectory at the grid times", t);
    const auto f = fit_flow_rate(sys, x0, grid);
    out.summary = {{"kind", to_string(f.kind)}, {"exponent", f.exponent}, {"exp_slope", f.exp_slope},
                   {"exp_r2", f.exp_r2},        {"power_slope", f.power_slope}, {"power_r2", f.power_r2},
                   {"limit", to_json(f.limit)}};
    if (sys.has_lyapunov()) out.summary["lyapunov_decreasing"] = lyapunov_decrease_check(sys, x0, grid);
    return out;
}

} // namespace detail

inline ExperimentOutputs run_experiment(const ExperimentConfig& c)
{
    validate(c);
    if (c.kind == "sgd" || c.kind == "robbins_monro") return detail::run_trajectories(c);
    if (c.kind == "polya") return detail::run_polya(c);
    if (c.kind == "error_rate") return detail::run_error_rate(c);
    if (c.kind == "lojasiewicz") return detail::run_lojasiewicz(c);
    if (c.kind == "spectrum") return detail::run_spectrum(c);
    if (c.kind == "shadow") return detail::run_shadow(c);
    if (c.kind == "repulsion") return detail::run_repulsion(c);
    if (c.kind == "rate_fit") return detail::run_rate_fit(c);
    return detail::run_flow(c);
}

} // namespace sgdlab::cli
