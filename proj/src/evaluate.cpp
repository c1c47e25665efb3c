#include "petseg/evaluate.hpp"

#include "petseg/nifti.hpp"
#include "petseg/protocol.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <thread>

namespace petseg {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

PromptMode parse_prompt_mode(const std::string& s) {
    if (s == "global") return PromptMode::global;
    if (s == "lesion_wise") return PromptMode::lesion_wise;
    throw ConfigError("unknown mode '" + s + "' (expected global or lesion_wise)");
}

std::string to_string(PromptMode m) { return m == PromptMode::global ? "global" : "lesion_wise"; }

void RunConfig::validate() const {
    static const std::set<std::string> kinds{"threshold", "region_grow", "oracle", "remote"};
    if (!kinds.count(backend)) throw ConfigError("unknown backend '" + backend + "'");
    if (backend == "remote" && address.empty()) throw ConfigError("remote backend needs an address");
    if (budgets.empty()) throw ConfigError("at least one prompt budget is required");
    for (int b : budgets)
        if (b < 1) throw ConfigError("prompt budgets must be >= 1");
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
    if (!(frac > 0.0 && frac <= 1.0)) throw ConfigError("frac must be in (0, 1]");
    if (!std::isfinite(theta)) throw ConfigError("theta must be finite");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    try {
        patch.validate();
    } catch (const DomainError& e) {
        throw ConfigError(e.what());
    }
}

int RunConfig::max_budget() const { return *std::max_element(budgets.begin(), budgets.end()); }

namespace {

std::unique_ptr<Backend> make_backend(const RunConfig& cfg) {
    if (cfg.backend == "threshold") return std::make_unique<ThresholdBackend>(cfg.theta);
    if (cfg.backend == "region_grow") return std::make_unique<RegionGrowBackend>(cfg.frac);
    if (cfg.backend == "remote")
        return std::make_unique<wire::RemoteBackend>(wire::Endpoint::parse(cfg.address), cfg.timeout);
    return nullptr;  // oracle: built per target
}

std::vector<ResultRow> failure_rows(const std::string& case_id, const std::string& target, const RunConfig& cfg,
                                    const std::string& error) {
    std::vector<ResultRow> out;
    for (int b : cfg.budgets) {
        ResultRow r;
        r.case_id = case_id;
        r.target = target;
        r.budget = b;
        r.ok = false;
        r.error = error;
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<ResultRow> run_case(const CaseEntry& c, const RunConfig& cfg, Backend* shared) {
    VoxelGrid grid;
    LabelMask labels;
    try {
        grid = nifti::read_volume(c.volume);
        labels = nifti::read_labels(c.labels);
        require_same_dims(grid.dims(), labels.dims(), "case volume and labels");
    } catch (const std::exception& e) {
        return failure_rows(c.case_id, "", cfg, e.what());
    }

    std::vector<ResultRow> rows;
    for (const TargetSpec& t : c.targets) {
        try {
            const BinaryMask truth = labels.select(t.labels);
            std::unique_ptr<Backend> oracle;
            Backend* backend = shared;
            if (!backend) {
                oracle = std::make_unique<PerfectOracleBackend>(truth);
                backend = oracle.get();
            }
            InteractionOptions opts;
            opts.tau = cfg.tau;
            opts.session = c.case_id + "/" + t.name;

            InteractionTrajectory traj;
            if (cfg.mode == PromptMode::lesion_wise)
                traj = run_lesion_wise(*backend, grid, truth, cfg.max_budget(), cfg.patch, opts).pooled;
            else
                traj = run_interaction(*backend, grid, truth, cfg.max_budget(), cfg.patch, opts);

            for (int b : cfg.budgets) {
                ResultRow r;
                r.case_id = c.case_id;
                r.target = t.name;
                r.budget = b;
                r.dsc = traj.metrics_at(b).dsc;
                r.nsd = traj.metrics_at(b).nsd;
                r.clicks = traj.state_at(b).prompts.size();
                r.stop = std::string(to_string(traj.stop));
                r.limit_hit = traj.limit_hit;
                r.dropped_prompts = traj.dropped_prompts;
                rows.push_back(std::move(r));
            }
        } catch (const InvariantViolation&) {
            throw;
        } catch (const std::exception& e) {
            auto f = failure_rows(c.case_id, t.name, cfg, e.what());
            rows.insert(rows.end(), f.begin(), f.end());
        }
    }
    return rows;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10f", v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch == '\n' ? ' ' : ch;
    }
    return out + "\"";
}

ordered_json stat_json(const std::vector<double>& values) {
    const AggregateStat s = aggregate(values);
    return ordered_json{{"median", s.median}, {"q1", s.q1}, {"q3", s.q3}, {"n", s.n}, {"formatted", format_aggregate(s)}};
}

}  // namespace

RunReport run_evaluation(const RunConfig& cfg) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<CaseEntry> cases = read_manifest(cfg.manifest);

    // One backend per worker, all connected before any case runs so a bad address fails fast.
    const int n_workers = std::max(1, std::min<int>(cfg.workers, static_cast<int>(cases.size())));
    std::vector<std::unique_ptr<Backend>> backends;
    for (int w = 0; w < n_workers; ++w) backends.push_back(make_backend(cfg));

    RunReport report;
    report.cases = cases.size();
    report.backend_name = backends.front() ? backends.front()->name() : "oracle";

    std::vector<std::vector<ResultRow>> per_case(cases.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr fatal;
    std::mutex fatal_mu;
    auto work = [&](Backend* backend) {
        for (std::size_t i = next++; i < cases.size(); i = next++) {
            try {
                per_case[i] = run_case(cases[i], cfg, backend);
            } catch (...) {
                std::lock_guard<std::mutex> lock(fatal_mu);
                if (!fatal) fatal = std::current_exception();
                next = cases.size();
            }
        }
    };
    if (n_workers == 1) {
        work(backends[0].get());
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < n_workers; ++w) pool.emplace_back(work, backends[w].get());
        for (std::thread& t : pool) t.join();
    }
    if (fatal) std::rethrow_exception(fatal);

    for (auto& rows : per_case)
        for (ResultRow& r : rows) {
            report.failures += r.ok ? 0 : 1;
            report.rows.push_back(std::move(r));
        }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

std::string results_csv(const RunReport& report) {
    std::ostringstream out;
    out << "case_id,target,n_points,dsc,nsd,clicks,stop,limit_hit,dropped_prompts,status,error\n";
    for (const ResultRow& r : report.rows) {
        out << csv_field(r.case_id) << ',' << csv_field(r.target) << ',' << r.budget << ',';
        if (r.ok)
            out << fmt(r.dsc) << ',' << fmt(r.nsd) << ',' << r.clicks << ',' << r.stop << ',' << (r.limit_hit ? 1 : 0)
                << ',' << r.dropped_prompts << ",ok,";
        else
            out << ",,,,,,failed," << csv_field(r.error);
        out << '\n';
    }
    return out.str();
}

std::string aggregate_json(const RunConfig& cfg, const RunReport& report) {
    // target -> budget -> values, in first-seen target order.
    std::vector<std::string> order;
    std::map<std::string, std::map<int, std::pair<std::vector<double>, std::vector<double>>>> groups;
    std::map<int, std::pair<std::vector<double>, std::vector<double>>> all;
    for (const ResultRow& r : report.rows) {
        if (!r.ok) continue;
        if (!groups.count(r.target)) order.push_back(r.target);
        auto& g = groups[r.target][r.budget];
        g.first.push_back(r.dsc);
        g.second.push_back(r.nsd);
        all[r.budget].first.push_back(r.dsc);
        all[r.budget].second.push_back(r.nsd);
    }
    auto budget_block = [&](const std::map<int, std::pair<std::vector<double>, std::vector<double>>>& by_budget) {
        ordered_json out = ordered_json::object();
        for (int b : cfg.budgets) {
            const auto it = by_budget.find(b);
            if (it == by_budget.end()) continue;
            out[std::to_string(b) + "p"] = {{"dsc", stat_json(it->second.first)}, {"nsd", stat_json(it->second.second)}};
        }
        return out;
    };

    ordered_json doc;
    doc["tau"] = cfg.tau;
    doc["mode"] = to_string(cfg.mode);
    doc["budgets"] = cfg.budgets;
    doc["patch"] = {{"edge", cfg.patch.edge}, {"stride", cfg.patch.stride}, {"cap", cfg.patch.cap}};
    doc["cases"] = report.cases;
    doc["failed_rows"] = report.failures;
    ordered_json targets = ordered_json::object();
    for (const std::string& t : order) targets[t] = budget_block(groups[t]);
    doc["targets"] = std::move(targets);
    doc["all_targets"] = budget_block(all);
    return doc.dump(2) + "\n";
}

void write_reports(const RunConfig& cfg, const RunReport& report) {
    fs::create_directories(cfg.output_dir);
    auto write = [&](const char* name, const std::string& text) {
        std::ofstream out(cfg.output_dir / name, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + (cfg.output_dir / name).string());
        out << text;
    };
    write("results.csv", results_csv(report));
    write("aggregate.json", aggregate_json(cfg, report));

    ordered_json run;
    run["manifest"] = cfg.manifest.string();
    run["backend"] = report.backend_name;
    run["address"] = cfg.address;
    run["frac"] = cfg.frac;
    run["theta"] = cfg.theta;
    run["seed"] = cfg.seed;
    run["workers"] = cfg.workers;
    run["seconds"] = report.seconds;
    write("run.json", run.dump(2) + "\n");
}

}  // namespace petseg
