#pragma once

#include "petseg/manifest.hpp"
#include "petseg/volume.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace petseg {

class PlacementError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Stateless counter-based generator: every draw is a pure function of (seed, stream, counter).
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t bits(std::uint64_t stream, std::uint64_t counter) const;
    /// Uniform in [0, 1).
    double uniform(std::uint64_t stream, std::uint64_t counter) const;
    double uniform(std::uint64_t stream, std::uint64_t counter, double lo, double hi) const {
        return lo + (hi - lo) * uniform(stream, counter);
    }
    /// Standard normal (Box-Muller over counters 2n and 2n+1).
    double normal(std::uint64_t stream, std::uint64_t counter) const;

private:
    std::uint64_t seed_;
};

struct PhantomSpec {
    std::uint64_t seed = 0;
    Dims dims = Dims::cube(64);
    Eigen::Vector3d spacing = Eigen::Vector3d::Ones();
    int n_organs = 1;
    int n_lesions = 0;
    double background_suv = 1.0;
    double noise_sigma = 0.05;
    /// Linear uptake gradient across each organ, as a fraction of its centre value (0 = uniform).
    double organ_gradient = 0.0;
    /// Semi-axis range in voxels.
    double organ_radius_min = 7.0;
    double organ_radius_max = 12.0;
    double lesion_radius_min = 2.0;
    double lesion_radius_max = 3.5;
    /// Centre uptake ranges, as multiples of background.
    double organ_uptake_min = 12.0;
    double organ_uptake_max = 16.0;
    double lesion_uptake_min = 20.0;
    double lesion_uptake_max = 30.0;
    int max_attempts = 500;

    void validate() const;
};

struct Structure {
    LabelMask::Label label = 0;
    std::string name;
    bool lesion = false;
    Eigen::Vector3d center = Eigen::Vector3d::Zero();  // voxel coordinates
    Eigen::Vector3d radii = Eigen::Vector3d::Ones();
    double uptake = 0.0;  // centre intensity (SUV)
};

struct Phantom {
    VoxelGrid grid;
    LabelMask labels;
    std::vector<Structure> structures;
};

/// Ellipsoidal organs and spherical lesions on a noisy background. No two structures touch,
/// even diagonally. Intensities are rounded to float32 so they survive a NIfTI round trip.
Phantom generate(const PhantomSpec& spec);

enum class SuiteKind { organs, lesions, disseminated };
SuiteKind parse_suite_kind(const std::string& name);
std::string to_string(SuiteKind kind);

struct SuiteCase {
    std::string case_id;
    std::uint64_t seed = 0;
    PhantomSpec spec;
    std::vector<TargetSpec> targets;
};

/// Case specs for a named suite; case i uses seed base_seed + i.
std::vector<SuiteCase> suite(SuiteKind kind, int n_cases, std::uint64_t base_seed, const Dims& dims = Dims::cube(64),
                             const Eigen::Vector3d& spacing = Eigen::Vector3d::Ones());

/// Generates every case and writes "<case>_vol.nii.gz", "<case>_lab.nii.gz", and manifest.json.
std::vector<CaseEntry> write_suite(const std::filesystem::path& dir, const std::vector<SuiteCase>& cases);

}  // namespace petseg
