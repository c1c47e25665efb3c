#pragma once

#include "petseg/manifest.hpp"
#include "petseg/volume.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace petseg {

class InsufficientSubjectsError : public DomainError {
public:
    using DomainError::DomainError;
};

inline constexpr double kDefaultEdgeThreshold = 0.3;

/// Rows are subjects, columns ROIs.
struct UptakeMatrix {
    Eigen::MatrixXd values;
    std::vector<std::string> roi_names;
    std::vector<std::string> subjects;

    void validate() const;
};

struct Edge {
    std::string roi_a;
    std::string roi_b;
    double r = 0.0;
};

struct CovarianceNetwork {
    std::vector<std::string> roi_names;
    /// Pearson r between ROI columns. Rows and columns of degenerate ROIs are all zero.
    Eigen::MatrixXd corr;
    /// Sorted by |r| descending; never touches a degenerate ROI.
    std::vector<Edge> edges;
    std::vector<bool> degenerate;
};

/// Mean intensity over the ROI. Throws DomainError on an empty ROI.
double roi_mean(const VoxelGrid& grid, const BinaryMask& roi);

CovarianceNetwork build_network(const UptakeMatrix& uptake, double threshold = kDefaultEdgeThreshold);

/// One row per case, one column per target name; every case must list the same targets.
UptakeMatrix uptake_from_manifest(const std::vector<CaseEntry>& cases);

void write_correlation_csv(const std::filesystem::path& path, const CovarianceNetwork& net);
void write_edges_json(const std::filesystem::path& path, const CovarianceNetwork& net, double threshold);

}  // namespace petseg
