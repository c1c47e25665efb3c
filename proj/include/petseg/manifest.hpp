#pragma once

#include "petseg/volume.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace petseg {

class ManifestError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A named segmentation target: the union of one or more label ids.
struct TargetSpec {
    std::string name;
    std::vector<LabelMask::Label> labels;
};

struct CaseEntry {
    std::string case_id;
    std::filesystem::path volume;  // resolved against the manifest directory
    std::filesystem::path labels;
    std::vector<TargetSpec> targets;
    std::optional<std::uint64_t> seed;
};

/// Top-level JSON array of {case_id, volume, labels, targets[, seed]}.
std::vector<CaseEntry> read_manifest(const std::filesystem::path& path);
/// Paths are written relative to the manifest directory when they live under it.
void write_manifest(const std::filesystem::path& path, const std::vector<CaseEntry>& cases);

}  // namespace petseg
