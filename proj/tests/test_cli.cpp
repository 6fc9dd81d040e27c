#include "sgdlab/cli/app.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace sgdlab;
using namespace sgdlab::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("sgdlab_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream f(p, std::ios::binary);
    std::stringstream s;
    s << f.rdbuf();
    return s.str();
}

std::string field_of(const std::string& yaml)
{
    try {
        parse_config_text(yaml);
    } catch (const ConfigError& e) {
        return e.field();
    }
    return "<accepted>";
}

const char* kSmallSgd = R"(
kind: sgd
system: {name: circle}
critical_set: {name: circle, count: 64}
schedule: {A: 0.5}
noise: {kind: gaussian_iso, sigma: 0.1}
x0: [0.3, 1.2]
N: 20000
runs: 3
seed: 5
record: {stride: 100}
analysis: {tail_fraction: 0.1}
)";

} // namespace

TEST(Config, ShippedConfigsRoundTrip)
{
    std::size_t seen = 0;
    for (const auto& entry : fs::directory_iterator(fs::path(SGDLAB_SOURCE_DIR) / "configs")) {
        if (entry.path().extension() != ".yaml") continue;
        ++seen;
        const auto cfg = load_config(entry.path().string());
        const std::string once = serialize_config(cfg);
        const std::string twice = serialize_config(parse_config_text(once));
        EXPECT_EQ(once, twice) << entry.path();
    }
    EXPECT_GE(seen, 10u);
}

TEST(Config, RoundTripPreservesValues)
{
    const auto a = parse_config_text(kSmallSgd);
    const auto b = parse_config_text(serialize_config(a));
    EXPECT_EQ(b.kind, "sgd");
    EXPECT_EQ(b.system.name, "circle");
    EXPECT_EQ(b.critical_set->count, 64);
    EXPECT_DOUBLE_EQ(b.schedule.A, 0.5);
    EXPECT_DOUBLE_EQ(b.noise.sigma, 0.1);
    EXPECT_EQ(*b.x0, (std::vector<double>{0.3, 1.2}));
    EXPECT_EQ(b.N, 20000u);
    EXPECT_EQ(b.record.stride, 100u);
    EXPECT_EQ(b.output_dir, "out/sgd");
}

TEST(Config, ErrorsNameTheField)
{
    EXPECT_EQ(field_of("kind: sgd\nsystem: {name: circle}\n"), "x0");
    EXPECT_EQ(field_of("kind: nope\nsystem: {name: circle}\n"), "kind");
    EXPECT_EQ(field_of("kind: flow\nsystem: {name: circle}\nx0: [1, 0]\n"), "analysis.t_grid");
    EXPECT_EQ(field_of("kind: sgd\nsystem: {name: circle}\nx0: [1]\n"), "x0");
    EXPECT_EQ(field_of("kind: sgd\nsystem: {name: linear}\nx0: [1]\n"), "system.name");
    EXPECT_EQ(field_of("kind: sgd\nsystem: {name: circle}\nx0: [1, 0]\nnoise: {kind: pink}\n"), "noise.kind");
    EXPECT_EQ(field_of("kind: sgd\nsystem: {name: circle}\nx0: [1, 0]\nnoise: {kind: gaussian_iso}\n"), "noise.sigma");
    EXPECT_EQ(field_of("kind: sgd\nsystem: {name: circle}\nx0: [1, 0]\nschedule: {A: -1}\n"), "schedule");
    EXPECT_EQ(field_of("kind: sgd\nsystem: {name: circle}\nx0: [1, 0]\nN: abc\n"), "N");
    EXPECT_EQ(field_of("kind: sgd\nsystem: {name: circle}\nx0: [1, 0]\ncolour: red\n"), "colour");
    EXPECT_EQ(field_of("kind: sgd\nsystem: {name: circle}\nx0: [1, 0]\nanalysis: {mu: 0.5}\n"), "analysis.mu");
    EXPECT_EQ(field_of("kind: repulsion\nsystem: {name: circle}\ncritical_set: {name: circle}\n"), "analysis.radius");
    EXPECT_EQ(field_of("kind: spectrum\nsystem: {name: quadratic}\ncritical_set: {name: circle}\n"), "critical_set.name");
    EXPECT_EQ(field_of("kind: [unclosed\n"), "config");
    EXPECT_EQ(field_of(kSmallSgd), "<accepted>");
}

TEST(Output, NumberFormatting)
{
    CsvTable t({"a", "b", "c"});
    t.row(0.1, std::uint64_t{12}, std::string("x"));
    t.row(std::nan(""), -INFINITY, 1e300);
    EXPECT_EQ(t.text(), "a,b,c\n0.1,12,x\nnan,-inf,1e+300\n");
    EXPECT_EQ(hex64(fnv1a("")), "cbf29ce484222325");
    EXPECT_EQ(hex64(fnv1a("a")), "af63dc4c8601ec8c");
}

TEST(Execute, WritesManifestWithMatchingHashes)
{
    auto cfg = parse_config_text(kSmallSgd);
    cfg.output_dir = scratch("manifest").string();
    const json m = execute(cfg);
    EXPECT_EQ(m["kind"], "sgd");
    EXPECT_EQ(m["version"], kToolVersion);
    EXPECT_EQ(m["seeds"].size(), 3u);
    EXPECT_EQ(m["config_hash"], hex64(fnv1a(serialize_config(cfg))));
    for (const auto& f : m["files"]) {
        const auto content = slurp(fs::path(cfg.output_dir) / f["name"].get<std::string>());
        EXPECT_EQ(f["bytes"].get<std::size_t>(), content.size());
        EXPECT_EQ(f["fnv1a"], hex64(fnv1a(content)));
    }
    EXPECT_TRUE(fs::exists(fs::path(cfg.output_dir) / "manifest.json"));
    EXPECT_TRUE(fs::exists(fs::path(cfg.output_dir) / "schema.json"));
    EXPECT_TRUE(fs::exists(fs::path(cfg.output_dir) / "trajectory_2.csv"));
}

TEST(Execute, OutputsIndependentOfThreadsAndRepetition)
{
    auto cfg = parse_config_text(kSmallSgd);
    std::vector<json> manifests;
    for (unsigned threads : {1u, 1u, 3u}) {
        cfg.threads = threads;
        cfg.output_dir = scratch("det" + std::to_string(manifests.size())).string();
        manifests.push_back(execute(cfg));
    }
    for (std::size_t k = 1; k < manifests.size(); ++k)
        EXPECT_EQ(manifests[0]["files"], manifests[k]["files"]) << k;
}

TEST(RunCommand, ExitCodes)
{
    const auto dir = scratch("exit");
    fs::create_directories(dir);
    std::ostringstream log;
    {
        std::ofstream(dir / "bad.yaml") << "kind: sgd\nsystem: {name: circle}\n";
    }
    EXPECT_EQ(run_command((dir / "bad.yaml").string(), {}, log), kValidation);
    EXPECT_NE(log.str().find("x0"), std::string::npos);
    EXPECT_EQ(run_command((dir / "missing.yaml").string(), {}, log), kValidation);
    {
        std::ofstream(dir / "good.yaml") << kSmallSgd;
    }
    Overrides o;
    o.out_dir = (dir / "out").string();
    o.seed = 99;
    EXPECT_EQ(run_command((dir / "good.yaml").string(), o, log), kOk);
    const json m = json::parse(slurp(dir / "out" / "manifest.json"));
    EXPECT_EQ(m["master_seed"], 99u);
}

TEST(Report, TableAndMissingInputs)
{
    const auto dir = scratch("report");
    auto cfg = parse_config_text("kind: polya\nN: 200\nruns: 200\nseed: 4\n");
    cfg.output_dir = (dir / "polya").string();
    execute(cfg);
    const auto r = build_report({(dir / "polya" / "manifest.json").string(), (dir / "nothing.json").string()});
    ASSERT_EQ(r.table.size(), 1u);
    EXPECT_EQ(r.table[0]["kind"], "polya");
    EXPECT_TRUE(r.table[0]["metrics"].contains("ks_statistic"));
    ASSERT_EQ(r.missing.size(), 1u);
    std::ostringstream os;
    EXPECT_EQ(report_command({}, std::nullopt, os), kOk);
    EXPECT_EQ(report_command({(dir / "nothing.json").string()}, (dir / "r.json").string(), os), kOk);
    EXPECT_TRUE(fs::exists(dir / "r.json"));
}

TEST(Report, PoolsRepulsionRuns)
{
    const auto dir = scratch("pool");
    std::vector<std::string> paths;
    for (int k = 0; k < 2; ++k) {
        auto cfg = parse_config_text("kind: repulsion\nsystem: {name: double_well}\ncritical_set: {name: double_well}\n"
                                     "noise: {kind: excited_gaussian, sigma: 0.1, floor: 0.005}\nN: 5000\nruns: 10\n"
                                     "analysis: {radius: 0.2}\n");
        cfg.seed = 100 + k;
        cfg.output_dir = (dir / std::to_string(k)).string();
        execute(cfg);
        paths.push_back((dir / std::to_string(k) / "manifest.json").string());
    }
    const auto r = build_report(paths);
    ASSERT_TRUE(r.pooled.contains("repulsion"));
    EXPECT_EQ(r.pooled["repulsion"]["runs"], 20u);
}
