#pragma once

#include "petseg/volume.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace petseg {

/// Default surface tolerance, in the spacing unit (mm).
inline constexpr double kDefaultTau = 1.0;

struct MetricResult {
    double dsc = 0.0;
    double nsd = 0.0;
    double tau = kDefaultTau;
    std::string target_name;
    std::string case_id;
};

struct AggregateStat {
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    std::size_t n = 0;
};

struct BoundaryBand {
    BinaryMask boundary;
    BinaryMask band;
};

/// 2|G∩S| / (|G|+|S|); 1 when both are empty.
double dsc(const BinaryMask& g, const BinaryMask& s);

/// Foreground voxels with at least one 6-neighbour in the background or outside the grid.
BinaryMask boundary_of(const BinaryMask& s);

/// Squared Euclidean distance (mm^2) from every voxel centre to the nearest foreground
/// voxel centre. Separable lower-envelope algorithm, one pass per axis.
/// Throws DomainError on an empty mask.
Volume<double> squared_distance_transform(const BinaryMask& mask, const Eigen::Vector3d& spacing);
Volume<double> distance_transform(const BinaryMask& mask, const Eigen::Vector3d& spacing);

/// Boundary of `s` and every voxel within `tau` of it.
BoundaryBand boundary_band(const BinaryMask& s, double tau, const Eigen::Vector3d& spacing);

/// Normalized surface distance at tolerance tau. 1 when both masks are empty, 0 when exactly one is.
double nsd(const BinaryMask& g, const BinaryMask& s, double tau, const Eigen::Vector3d& spacing);

MetricResult evaluate_masks(const BinaryMask& g, const BinaryMask& s, double tau, const Eigen::Vector3d& spacing);

enum class Connectivity { six = 6, twenty_six = 26 };

/// Labels 1..count ordered by each component's smallest linear index.
struct Components {
    Volume<std::int32_t> labels;
    int count = 0;
    std::vector<std::size_t> sizes;  // sizes[c - 1] is the voxel count of component c

    BinaryMask component(int label) const;
    /// Throws DomainError when count exceeds the 16-bit label range.
    LabelMask to_label_mask(const std::string& prefix = "component") const;
};

Components connected_components(const BinaryMask& mask, Connectivity connectivity = Connectivity::twenty_six);

/// Median and quartiles, linear interpolation at q*(n-1). Throws DomainError when empty.
AggregateStat aggregate(std::span<const double> values);
double quantile_sorted(std::span<const double> sorted, double q);

/// "0.9262 (0.9156–0.9331)"
std::string format_aggregate(const AggregateStat& stat, int precision = 4);

}  // namespace petseg
