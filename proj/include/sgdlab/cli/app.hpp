#pragma once

#include "sgdlab/cli/config.hpp"
#include "sgdlab/cli/experiments.hpp"
#include "sgdlab/cli/output.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace sgdlab::cli {

inline constexpr const char* kToolName = "sgdlab";
inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kFailure = 1, kValidation = 2, kNumerical = 3 };

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<unsigned> threads;
};

namespace detail {

inline std::string utc_timestamp()
{
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

inline json schema_json(const ExperimentOutputs& out)
{
    json files = json::object();
    for (const auto& f : out.files) {
        json e{{"description", f.description}};
        if (!f.columns.empty()) e["columns"] = f.columns;
        files[f.name] = e;
    }
    files["summary.json"] = {{"description", "experiment summary"}};
    files["manifest.json"] = {{"description", "run manifest: config hash, version, timing, seeds, file inventory"}};
    return json{{"format", "CSV files are comma separated with a header row; numbers use shortest round-trip form"},
                {"files", files}};
}

} // namespace detail

/// Executes a validated config and writes every output plus manifest.json
/// into its output directory. Returns the manifest.
inline json execute(const ExperimentConfig& cfg)
{
    const auto start = std::chrono::steady_clock::now();
    const std::string canonical = serialize_config(cfg);
    ExperimentOutputs out = run_experiment(cfg);
    const std::filesystem::path dir(cfg.output_dir);
    std::filesystem::create_directories(dir);

    json inventory = json::array();
    auto emit = [&](const std::string& name, const std::string& content) {
        write_atomic(dir / name, content);
        inventory.push_back({{"name", name}, {"bytes", content.size()}, {"fnv1a", hex64(fnv1a(content))}});
    };
    for (const auto& f : out.files) emit(f.name, f.content);
    json summary{{"kind", cfg.kind}, {"system", cfg.system.name}};
    for (auto it = out.summary.begin(); it != out.summary.end(); ++it) summary[it.key()] = it.value();
    emit("summary.json", summary.dump(2) + "\n");
    emit("schema.json", detail::schema_json(out).dump(2) + "\n");

    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json manifest{{"tool", kToolName},
                  {"version", kToolVersion},
                  {"kind", cfg.kind},
                  {"config_hash", hex64(fnv1a(canonical))},
                  {"config", canonical},
                  {"master_seed", cfg.seed},
                  {"seeds", out.seeds},
                  {"threads", cfg.threads},
                  {"created", detail::utc_timestamp()},
                  {"wall_time_seconds", wall},
                  {"summary", "summary.json"},
                  {"files", inventory}};
    write_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
    return manifest;
}

inline ExperimentConfig apply_overrides(ExperimentConfig cfg, const Overrides& o)
{
    if (o.seed) cfg.seed = *o.seed;
    if (o.out_dir) cfg.output_dir = *o.out_dir;
    if (o.threads) cfg.threads = *o.threads;
    validate(cfg);
    return cfg;
}

/// `run <config>`: 0 on success, 2 on a validation error, 3 on a numerical failure.
inline int run_command(const std::string& config_path, const Overrides& o, std::ostream& log = std::cerr)
{
    ExperimentConfig cfg;
    try {
        cfg = apply_overrides(load_config(config_path), o);
    } catch (const ConfigError& e) {
        log << "config error: " << e.what() << "\n";
        return kValidation;
    } catch (const InvalidArgument& e) {
        log << "config error: " << e.what() << "\n";
        return kValidation;
    }
    try {
        const json m = execute(cfg);
        log << "wrote " << m["files"].size() + 1 << " files to " << cfg.output_dir << "\n";
        return kOk;
    } catch (const NumericalFailure& e) {
        log << "numerical failure: " << e.what() << "\n";
        return kNumerical;
    } catch (const InvalidArgument& e) {
        log << "invalid experiment: " << e.what() << "\n";
        return kValidation;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << "\n";
        return kFailure;
    }
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

inline const char* tested_property(const std::string& kind)
{
    static const std::map<std::string, const char*> m = {
        {"sgd", "convergence of stochastic gradient iterates to a point of the critical set"},
        {"robbins_monro", "asymptotic pseudo-trajectory behaviour of the Robbins-Monro recursion"},
        {"polya", "uniform limit law of the two-colour Polya urn"},
        {"error_rate", "error rate e(X) = -1/(2A) for gamma_n = A/n (-inf with log factors)"},
        {"lojasiewicz", "Lojasiewicz inequality and angle condition at a critical point"},
        {"spectrum", "spectral condition ]-1/(2A), 0[ meets the resolvent of the critical set"},
        {"shadow", "shadowing of the pseudo-orbit by a true flow orbit"},
        {"repulsion", "non-convergence to linearly unstable critical sets"},
        {"rate_fit", "logarithmic convergence rate O(1/log(n)^c) of the iterates"},
        {"flow", "flow convergence rate: exponential for theta = 1/2, power law otherwise"}};
    auto it = m.find(kind);
    return it == m.end() ? "unknown" : it->second;
}

struct ReportResult {
    json table = json::array();
    json pooled = json::object();
    std::vector<std::string> missing;
    std::string text;
};

inline ReportResult build_report(const std::vector<std::string>& manifest_paths)
{
    ReportResult r;
    std::size_t rep_escaped = 0, rep_runs = 0;
    for (const auto& path : manifest_paths) {
        std::ifstream f(path);
        if (!f) {
            r.missing.push_back(path);
            continue;
        }
        json manifest;
        try {
            manifest = json::parse(f);
        } catch (const json::exception&) {
            r.missing.push_back(path + " (unreadable)");
            continue;
        }
        const auto dir = std::filesystem::path(path).parent_path();
        const std::string kind = manifest.value("kind", "unknown");
        json row{{"manifest", path}, {"kind", kind}, {"tests", tested_property(kind)}};
        for (const auto& file : manifest.value("files", json::array())) {
            const auto name = file.value("name", "");
            if (!std::filesystem::exists(dir / name)) r.missing.push_back((dir / name).string());
        }
        std::ifstream sf(dir / manifest.value("summary", "summary.json"));
        if (!sf) {
            r.table.push_back(row);
            continue;
        }
        json s;
        try {
            s = json::parse(sf);
        } catch (const json::exception&) {
            r.missing.push_back((dir / "summary.json").string() + " (unreadable)");
            r.table.push_back(row);
            continue;
        }
        json metrics = json::object();
        if (kind == "error_rate") {
            metrics["e_hat"] = s["e_hat_median"];
            metrics["theoretical"] = s["theoretical"];
            metrics["deviation"] = s["deviation"];
        } else if (kind == "repulsion") {
            metrics["escape_fraction"] = s["escape_fraction"];
            metrics["ended_inside"] = s["ended_inside"];
            rep_escaped += s.value("escaped", std::size_t{0});
            rep_runs += s.value("runs", std::size_t{0});
        } else if (kind == "polya") {
            metrics["ks_statistic"] = s["ks_statistic"];
            if (s.contains("martingale")) metrics["martingale_passes"] = s["martingale"]["passes"];
        } else if (kind == "lojasiewicz") {
            metrics["theta_hat"] = s["lojasiewicz"]["theta_hat"];
            metrics["c1_hat"] = s["angle"]["c1_hat"];
        } else if (kind == "spectrum") {
            metrics["holds"] = s["spectral_condition"]["holds"];
            metrics["witness_mu"] = s["spectral_condition"]["witness_mu"];
        } else if (kind == "shadow") {
            metrics["ratio"] = s["ratio"];
            metrics["decay_slope"] = s["decay_slope"];
        } else if (kind == "rate_fit") {
            metrics["c_hat"] = s["c_hat_median"];
        } else if (kind == "flow") {
            metrics["model"] = s["kind"];
            metrics["exponent"] = s["exponent"];
        } else if (s.contains("spectral_condition")) {
            metrics["spectral_condition"] = s["spectral_condition"]["holds"];
        }
        row["metrics"] = metrics;
        r.table.push_back(row);
    }
    if (rep_runs > 0)
        r.pooled["repulsion"] = {{"runs", rep_runs},
                                 {"escaped", rep_escaped},
                                 {"escape_fraction", static_cast<double>(rep_escaped) / static_cast<double>(rep_runs)}};

    std::ostringstream t;
    t << std::left << std::setw(14) << "kind" << "  " << std::setw(40) << "metrics" << "  tests\n";
    for (const auto& row : r.table) {
        const std::string m = row.contains("metrics") ? row["metrics"].dump() : "(summary missing)";
        t << std::setw(14) << row["kind"].get<std::string>() << "  " << std::setw(40) << m << "  "
          << row["tests"].get<std::string>() << "\n";
    }
    if (r.pooled.contains("repulsion"))
        t << "pooled repulsion: " << r.pooled["repulsion"].dump() << "\n";
    for (const auto& m : r.missing) t << "missing: " << m << "\n";
    r.text = t.str();
    return r;
}

/// `report <manifest...>`: prints the table, optionally writes JSON. Missing
/// inputs are listed and do not stop the report.
inline int report_command(const std::vector<std::string>& manifests, const std::optional<std::string>& json_out,
                          std::ostream& os = std::cout)
{
    const ReportResult r = build_report(manifests);
    os << r.text;
    if (json_out) {
        const json j{{"rows", r.table}, {"pooled", r.pooled}, {"missing", r.missing}};
        write_atomic(*json_out, j.dump(2) + "\n");
    }
    return kOk;
}

} // namespace sgdlab::cli
