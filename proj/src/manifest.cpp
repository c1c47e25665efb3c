#include "petseg/manifest.hpp"

#include <json.hpp>

#include <fstream>
#include <set>

namespace petseg {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<CaseEntry> read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ManifestError("cannot open manifest " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ManifestError("manifest is not valid JSON: " + std::string(e.what()));
    }
    if (!doc.is_array()) throw ManifestError("manifest must be a JSON array of cases");

    const fs::path base = path.parent_path();
    std::vector<CaseEntry> cases;
    std::set<std::string> seen;
    for (const json& c : doc) {
        try {
            CaseEntry e;
            e.case_id = c.at("case_id").get<std::string>();
            e.volume = base / c.at("volume").get<std::string>();
            e.labels = base / c.at("labels").get<std::string>();
            for (const json& t : c.at("targets")) {
                TargetSpec ts;
                ts.name = t.at("name").get<std::string>();
                ts.labels = t.at("labels").get<std::vector<LabelMask::Label>>();
                if (ts.labels.empty()) throw ManifestError("target '" + ts.name + "' lists no labels");
                e.targets.push_back(std::move(ts));
            }
            if (c.contains("seed")) e.seed = c.at("seed").get<std::uint64_t>();
            if (!seen.insert(e.case_id).second) throw ManifestError("duplicate case_id '" + e.case_id + "'");
            cases.push_back(std::move(e));
        } catch (const json::exception& ex) {
            throw ManifestError("malformed manifest entry: " + std::string(ex.what()));
        }
    }
    return cases;
}

void write_manifest(const fs::path& path, const std::vector<CaseEntry>& cases) {
    const fs::path base = path.parent_path();
    auto rel = [&](const fs::path& p) {
        const fs::path r = p.lexically_relative(base.empty() ? fs::path(".") : base);
        return (r.empty() || *r.begin() == "..") ? p.generic_string() : r.generic_string();
    };
    json doc = json::array();
    for (const CaseEntry& e : cases) {
        json c;
        c["case_id"] = e.case_id;
        c["volume"] = rel(e.volume);
        c["labels"] = rel(e.labels);
        json targets = json::array();
        for (const TargetSpec& t : e.targets) targets.push_back({{"name", t.name}, {"labels", t.labels}});
        c["targets"] = std::move(targets);
        if (e.seed) c["seed"] = *e.seed;
        doc.push_back(std::move(c));
    }
    std::ofstream out(path);
    if (!out) throw ManifestError("cannot write manifest " + path.string());
    out << doc.dump(2) << '\n';
}

}  // namespace petseg
