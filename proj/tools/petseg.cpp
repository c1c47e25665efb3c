// petseg: evaluation harness command line.

#include "petseg/covariance.hpp"
#include "petseg/evaluate.hpp"
#include "petseg/nifti.hpp"
#include "petseg/phantom.hpp"
#include "petseg/protocol.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <sstream>
#include <thread>

using namespace petseg;

namespace {

constexpr int kOk = 0;
constexpr int kPartial = 1;
constexpr int kConfig = 2;

volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }

std::vector<double> split_numbers(const std::string& text, const char* what) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError(std::string("bad ") + what + " '" + text + "'");
        }
    }
    if (out.empty()) throw ConfigError(std::string("empty ") + what);
    return out;
}

std::vector<int> parse_budgets(const std::string& text) {
    std::vector<int> out;
    for (double v : split_numbers(text, "budget list")) {
        if (v != static_cast<int>(v)) throw ConfigError("budgets must be integers");
        out.push_back(static_cast<int>(v));
    }
    return out;
}

Dims parse_dims(const std::string& text) {
    const auto v = split_numbers(text, "dims");
    if (v.size() == 1) return Dims::cube(static_cast<int>(v[0]));
    if (v.size() == 3) return Dims{static_cast<int>(v[0]), static_cast<int>(v[1]), static_cast<int>(v[2])};
    throw ConfigError("dims must be N or NX,NY,NZ");
}

Eigen::Vector3d parse_spacing(const std::string& text) {
    const auto v = split_numbers(text, "spacing");
    if (v.size() == 1) return Eigen::Vector3d::Constant(v[0]);
    if (v.size() == 3) return Eigen::Vector3d(v[0], v[1], v[2]);
    throw ConfigError("spacing must be S or SX,SY,SZ");
}

std::string env_or(const char* name, const std::string& fallback) {
    const char* v = std::getenv(name);
    return v && *v ? std::string(v) : fallback;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Interactive PET segmentation evaluation harness"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "petseg 0.1.0 (protocol version " + std::to_string(wire::kVersion) + ")");

    // evaluate
    RunConfig cfg;
    std::string budgets = "1,3,5", mode = "global", remote, out_dir;
    int edge = 128, stride = 0;
    long timeout_ms = 10'000;
    CLI::App* ev = app.add_subcommand("evaluate", "Run simulated click-and-refine sessions over a manifest");
    ev->add_option("-m,--manifest", cfg.manifest, "Case manifest (JSON)")->required();
    ev->add_option("-b,--backend", cfg.backend, "threshold | region_grow | oracle")
        ->check(CLI::IsMember({"threshold", "region_grow", "oracle"}))
        ->capture_default_str();
    ev->add_option("--remote", remote, "Backend address host:port or unix:/path (env PETSEG_BACKEND)");
    ev->add_option("-n,--budgets", budgets, "Comma-separated click budgets")->capture_default_str();
    ev->add_option("--mode", mode, "global | lesion_wise")->capture_default_str();
    ev->add_option("--edge", edge, "Patch edge (even)")->capture_default_str();
    ev->add_option("--stride", stride, "Sliding-window stride (default edge/2)");
    ev->add_option("--cap", cfg.patch.cap, "Maximum windows per prediction round")->capture_default_str();
    ev->add_flag("--strict-cap", cfg.patch.strict_cap, "Fail a target instead of truncating at the cap");
    ev->add_option("--tau", cfg.tau, "NSD tolerance in mm")->capture_default_str();
    ev->add_option("--frac", cfg.frac, "Region-grow fraction of seed intensity")->capture_default_str();
    ev->add_option("--theta", cfg.theta, "Threshold backend SUV cut")->capture_default_str();
    ev->add_option("--seed", cfg.seed, "Run seed (recorded in run.json)")->capture_default_str();
    ev->add_option("-o,--out", out_dir, "Output directory (env PETSEG_OUTPUT_DIR, default results)");
    ev->add_option("-j,--workers", cfg.workers, "Parallel cases")->capture_default_str();
    ev->add_option("--timeout-ms", timeout_ms, "Remote read/write deadline")->capture_default_str();

    // phantom
    std::string suite_name = "organs", dims_text = "64", spacing_text = "1", phantom_out = "phantoms";
    int n_cases = 10;
    std::uint64_t base_seed = 0;
    CLI::App* ph = app.add_subcommand("phantom", "Write a synthetic phantom suite (NIfTI + manifest)");
    ph->add_option("-s,--suite", suite_name, "organs | lesions | disseminated")->capture_default_str();
    ph->add_option("-n,--cases", n_cases, "Number of cases")->capture_default_str();
    ph->add_option("--seed", base_seed, "Base seed; case i uses seed + i")->capture_default_str();
    ph->add_option("--dims", dims_text, "N or NX,NY,NZ (each >= 16)")->capture_default_str();
    ph->add_option("--spacing", spacing_text, "S or SX,SY,SZ in mm")->capture_default_str();
    ph->add_option("-o,--out", phantom_out, "Output directory")->capture_default_str();

    // covariance
    std::filesystem::path cov_manifest;
    std::string cov_out = "covariance";
    double cov_threshold = kDefaultEdgeThreshold;
    CLI::App* cov = app.add_subcommand("covariance", "Build an ROI uptake correlation network");
    cov->add_option("-m,--manifest", cov_manifest, "Subjects manifest; targets name the ROIs")->required();
    cov->add_option("-t,--threshold", cov_threshold, "Minimum |r| for an edge")->capture_default_str();
    cov->add_option("-o,--out", cov_out, "Output directory")->capture_default_str();

    // serve
    std::string serve_backend = "region_grow", listen = "127.0.0.1:" + std::to_string(wire::kDefaultPort);
    double serve_frac = kDefaultGrowFraction, serve_theta = kDefaultTheta;
    CLI::App* sv = app.add_subcommand("serve", "Serve a reference backend over the wire protocol");
    sv->add_option("-b,--backend", serve_backend, "threshold | region_grow")->capture_default_str();
    sv->add_option("-l,--listen", listen, "host:port or unix:/path")->capture_default_str();
    sv->add_option("--frac", serve_frac, "Region-grow fraction")->capture_default_str();
    sv->add_option("--theta", serve_theta, "Threshold SUV cut")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfig;
    }

    try {
        if (*ev) {
            cfg.budgets = parse_budgets(budgets);
            cfg.mode = parse_prompt_mode(mode);
            cfg.patch.edge = edge;
            cfg.patch.stride = stride > 0 ? stride : edge / 2;
            cfg.timeout = std::chrono::milliseconds(timeout_ms);
            cfg.address = remote.empty() ? env_or("PETSEG_BACKEND", "") : remote;
            if (!cfg.address.empty()) cfg.backend = "remote";
            cfg.output_dir = out_dir.empty() ? env_or("PETSEG_OUTPUT_DIR", "results") : out_dir;

            const RunReport report = run_evaluation(cfg);
            write_reports(cfg, report);
            std::fprintf(stderr, "%zu cases, %zu rows, %zu failed rows -> %s\n", report.cases, report.rows.size(),
                         report.failures, cfg.output_dir.string().c_str());
            for (const ResultRow& r : report.rows)
                if (!r.ok)
                    std::fprintf(stderr, "  failed: %s %s (%dp): %s\n", r.case_id.c_str(), r.target.c_str(), r.budget,
                                 r.error.c_str());
            return report.failures ? kPartial : kOk;
        }
        if (*ph) {
            const auto cases = suite(parse_suite_kind(suite_name), n_cases, base_seed, parse_dims(dims_text),
                                     parse_spacing(spacing_text));
            const auto entries = write_suite(phantom_out, cases);
            std::fprintf(stderr, "wrote %zu cases to %s\n", entries.size(), phantom_out.c_str());
            return kOk;
        }
        if (*cov) {
            const auto cases = read_manifest(cov_manifest);
            const CovarianceNetwork net = build_network(uptake_from_manifest(cases), cov_threshold);
            std::filesystem::create_directories(cov_out);
            write_correlation_csv(std::filesystem::path(cov_out) / "correlation.csv", net);
            write_edges_json(std::filesystem::path(cov_out) / "edges.json", net, cov_threshold);
            std::size_t degenerate = std::count(net.degenerate.begin(), net.degenerate.end(), true);
            std::fprintf(stderr, "%zu ROIs, %zu edges, %zu degenerate -> %s\n", net.roi_names.size(), net.edges.size(),
                         degenerate, cov_out.c_str());
            return kOk;
        }
        if (*sv) {
            wire::BackendFactory factory;
            if (serve_backend == "threshold")
                factory = [=] { return std::make_unique<ThresholdBackend>(serve_theta); };
            else if (serve_backend == "region_grow")
                factory = [=] { return std::make_unique<RegionGrowBackend>(serve_frac); };
            else
                throw ConfigError("cannot serve backend '" + serve_backend + "' (threshold or region_grow)");
            if (!(serve_frac > 0.0 && serve_frac <= 1.0)) throw ConfigError("frac must be in (0, 1]");

            std::signal(SIGTERM, on_signal);
            std::signal(SIGINT, on_signal);
            wire::Server server(factory, wire::Endpoint::parse(listen));
            server.start();
            std::fprintf(stderr, "serving %s on %s\n", serve_backend.c_str(), server.endpoint().to_string().c_str());
            std::fflush(stderr);
            while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(50));
            server.stop();
            std::fprintf(stderr, "stopped\n");
            return kOk;
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfig;
    } catch (const wire::TransportError& e) {
        std::fprintf(stderr, "transport error: %s\n", e.what());
        return kConfig;
    } catch (const ProtocolError& e) {
        std::fprintf(stderr, "protocol error: %s\n", e.what());
        return kConfig;
    } catch (const ManifestError& e) {
        std::fprintf(stderr, "manifest error: %s\n", e.what());
        return kConfig;
    } catch (const std::logic_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kPartial;
    }
    return kOk;
}
