#pragma once

#include "petseg/backend.hpp"
#include "petseg/metrics.hpp"
#include "petseg/patch.hpp"
#include "petseg/prompts.hpp"
#include "petseg/volume.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace petseg {

/// Backend or transport failure during an interaction, tagged with the round it happened in.
class InteractionError : public std::runtime_error {
public:
    InteractionError(int iteration, const std::string& what)
        : std::runtime_error("iteration " + std::to_string(iteration) + ": " + what), iteration_(iteration) {}
    int iteration() const noexcept { return iteration_; }

private:
    int iteration_;
};

/// A click landed outside the region it was drawn from.
class InvariantViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

struct DiscrepancyField {
    BinaryMask fn_mask;  // truth \ prediction
    BinaryMask fp_mask;  // prediction \ truth
    int iteration = 0;
};

/// Prediction after round `iteration`. Before the first round, iteration is -1, the
/// probability is all zero, and there are no prompts.
struct SegmentationState {
    ProbabilityField prob;
    BinaryMask mask;
    int iteration = -1;
    PromptSet prompts;

    static SegmentationState initial(const Dims& dims);
};

enum class StopReason { budget, converged, stalled };
std::string_view to_string(StopReason r);

struct InteractionTrajectory {
    std::vector<SegmentationState> states;
    std::vector<MetricResult> metrics;
    StopReason stop = StopReason::budget;
    bool limit_hit = false;
    std::size_t dropped_prompts = 0;

    /// Metrics after `budget` clicks; a trajectory that stopped early carries its last state forward.
    const MetricResult& metrics_at(int budget) const;
    const SegmentationState& state_at(int budget) const;
};

struct InteractionOptions {
    double tau = kDefaultTau;
    std::string session = "session";
};

DiscrepancyField discrepancy(const BinaryMask& truth, const SegmentationState& state);

/// Interior-most voxel (largest distance to the complement, outside-grid counting as
/// complement) of the largest 26-connected component; ties go to the smallest linear index.
/// Throws DomainError on an empty region.
Index3 select_click(const BinaryMask& region, const Eigen::Vector3d& spacing);

/// Next corrective click, or nullopt when the prediction already equals the truth (or
/// every candidate voxel has been clicked already).
std::optional<PointPrompt> next_prompt(const BinaryMask& truth, const SegmentationState& state,
                                       const Eigen::Vector3d& spacing);

/// Simulated click-and-refine loop: one click per round, up to `n_points` rounds.
InteractionTrajectory run_interaction(Backend& backend, const VoxelGrid& grid, const BinaryMask& truth, int n_points,
                                      const PatchConfig& patch, const InteractionOptions& options = {});

struct LesionWiseResult {
    /// Union of per-lesion predictions after each round, scored against the whole target.
    InteractionTrajectory pooled;
    std::vector<InteractionTrajectory> lesions;
};

/// Splits the target into 26-connected lesions and prompts each one separately.
LesionWiseResult run_lesion_wise(Backend& backend, const VoxelGrid& grid, const BinaryMask& truth,
                                 int n_points_per_lesion, const PatchConfig& patch,
                                 const InteractionOptions& options = {});

}  // namespace petseg
