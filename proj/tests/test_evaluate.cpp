#include "petseg/evaluate.hpp"
#include "petseg/phantom.hpp"
#include "petseg/protocol.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

using namespace petseg;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

struct SuiteDir {
    fs::path dir;
    explicit SuiteDir(const std::string& name, SuiteKind kind, int n) : dir(fs::temp_directory_path() / name) {
        fs::remove_all(dir);
        write_suite(dir, suite(kind, n, 7, Dims::cube(32)));
    }
    ~SuiteDir() { fs::remove_all(dir); }
    fs::path manifest() const { return dir / "manifest.json"; }
};

}  // namespace

TEST_CASE("oracle evaluation is perfect everywhere") {
    SuiteDir s("petseg_eval_oracle", SuiteKind::organs, 4);
    RunConfig cfg;
    cfg.manifest = s.manifest();
    cfg.backend = "oracle";
    cfg.patch = PatchConfig::with_edge(32);
    const RunReport r = run_evaluation(cfg);
    CHECK(r.rows.size() == 4 * 2 * 3);
    CHECK(r.failures == 0);
    for (const ResultRow& row : r.rows) {
        CHECK(row.dsc == 1.0);
        CHECK(row.nsd == 1.0);
    }
    CHECK(aggregate_json(cfg, r).find("\"formatted\": \"1.0000 (1.0000–1.0000)\"") != std::string::npos);
}

TEST_CASE("unreadable case becomes a failure row and the run continues") {
    SuiteDir s("petseg_eval_broken", SuiteKind::organs, 3);
    const auto cases = read_manifest(s.manifest());
    {
        std::ofstream(cases[1].volume, std::ios::binary | std::ios::trunc) << "not a nifti";
    }
    RunConfig cfg;
    cfg.manifest = s.manifest();
    cfg.patch = PatchConfig::with_edge(32);
    cfg.budgets = {1, 3};
    const RunReport r = run_evaluation(cfg);
    std::size_t failed = 0;
    for (const ResultRow& row : r.rows)
        if (!row.ok) {
            ++failed;
            CHECK(row.case_id == cases[1].case_id);
        }
    CHECK(failed == 2);
    CHECK(r.failures == 2);
    CHECK(r.rows.size() == 2 * 2 * 2 + 2);
    // Every case appears.
    for (const CaseEntry& c : cases)
        CHECK(std::any_of(r.rows.begin(), r.rows.end(), [&](const ResultRow& row) { return row.case_id == c.case_id; }));
    CHECK(results_csv(r).find(",failed,") != std::string::npos);
}

TEST_CASE("reports are deterministic and independent of worker count") {
    SuiteDir s("petseg_eval_det", SuiteKind::lesions, 5);
    RunConfig cfg;
    cfg.manifest = s.manifest();
    cfg.patch = PatchConfig::with_edge(16);
    cfg.output_dir = s.dir / "out1";
    write_reports(cfg, run_evaluation(cfg));
    RunConfig cfg2 = cfg;
    cfg2.workers = 3;
    cfg2.output_dir = s.dir / "out2";
    write_reports(cfg2, run_evaluation(cfg2));
    CHECK(slurp(cfg.output_dir / "results.csv") == slurp(cfg2.output_dir / "results.csv"));
    CHECK(slurp(cfg.output_dir / "aggregate.json") == slurp(cfg2.output_dir / "aggregate.json"));
    CHECK(fs::exists(cfg.output_dir / "run.json"));
}

TEST_CASE("remote evaluation matches in-process evaluation") {
    SuiteDir s("petseg_eval_remote", SuiteKind::organs, 3);
    wire::Server server([] { return std::make_unique<RegionGrowBackend>(); }, wire::Endpoint::parse("127.0.0.1:0"));
    server.start();
    RunConfig local;
    local.manifest = s.manifest();
    local.patch = PatchConfig::with_edge(16);
    RunConfig remote = local;
    remote.backend = "remote";
    remote.address = server.endpoint().to_string();
    remote.workers = 2;
    const RunReport a = run_evaluation(local), b = run_evaluation(remote);
    CHECK(results_csv(a) == results_csv(b));
    CHECK(aggregate_json(local, a) == aggregate_json(remote, b));
    CHECK(b.backend_name == "remote:region_grow");
    server.stop();

    // Nobody listening: the run aborts before any case.
    CHECK_THROWS_AS(run_evaluation(remote), wire::TransportError);
}

TEST_CASE("config validation") {
    RunConfig cfg;
    cfg.backend = "magic";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.backend = "remote";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.backend = "threshold";
    cfg.budgets = {0};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.budgets = {1};
    cfg.tau = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.tau = 1;
    cfg.patch.edge = 33;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.patch.edge = 32;
    cfg.patch.stride = 16;
    CHECK_NOTHROW(cfg.validate());
    CHECK(parse_prompt_mode("lesion_wise") == PromptMode::lesion_wise);
    CHECK_THROWS_AS(parse_prompt_mode("global-ish"), ConfigError);
}
