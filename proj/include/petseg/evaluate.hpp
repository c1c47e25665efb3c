#pragma once

#include "petseg/interaction.hpp"
#include "petseg/manifest.hpp"
#include "petseg/patch.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace petseg {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class PromptMode { global, lesion_wise };
PromptMode parse_prompt_mode(const std::string& s);
std::string to_string(PromptMode m);

/// Reference SUV cut for the threshold backend (the common "SUV 2.5" PET convention).
inline constexpr double kDefaultTheta = 2.5;

struct RunConfig {
    std::filesystem::path manifest;
    /// threshold | region_grow | oracle, or "remote" with `address` set.
    std::string backend = "region_grow";
    std::string address;
    std::vector<int> budgets{1, 3, 5};
    PromptMode mode = PromptMode::global;
    PatchConfig patch;
    double tau = kDefaultTau;
    double frac = kDefaultGrowFraction;
    double theta = kDefaultTheta;
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "results";
    int workers = 1;
    std::chrono::milliseconds timeout{10'000};

    void validate() const;
    int max_budget() const;
};

/// One report line: a (case, target, budget) result, or a failure.
struct ResultRow {
    std::string case_id;
    std::string target;
    int budget = 0;
    double dsc = 0.0;
    double nsd = 0.0;
    std::size_t clicks = 0;
    std::string stop;
    bool limit_hit = false;
    std::size_t dropped_prompts = 0;
    bool ok = true;
    std::string error;
};

struct RunReport {
    std::vector<ResultRow> rows;  // manifest order, then target order, then budget
    std::size_t cases = 0;
    std::size_t failures = 0;  // failed rows
    double seconds = 0.0;
    std::string backend_name;
};

/// Runs every case of the manifest. Unreadable cases and per-target backend failures become
/// failure rows. A backend that cannot be reached at all (handshake) throws before any case runs.
RunReport run_evaluation(const RunConfig& cfg);

/// results.csv and aggregate.json hold only results, so reports compare byte-for-byte across
/// backends that behave identically; run.json records the backend, timing, and config.
void write_reports(const RunConfig& cfg, const RunReport& report);

std::string results_csv(const RunReport& report);
std::string aggregate_json(const RunConfig& cfg, const RunReport& report);

}  // namespace petseg
