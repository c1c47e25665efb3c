#pragma once

#include "petseg/backend.hpp"
#include "petseg/prompts.hpp"
#include "petseg/volume.hpp"

#include <span>
#include <string>
#include <vector>

namespace petseg {

class ExpansionLimitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class WindowMode {
    /// Crop around the first click, then slide outward while the prediction touches a face.
    prompt_expand,
    /// Cover the whole grid with overlapping windows up front.
    full_tiling,
};

struct PatchConfig {
    int edge = 128;
    int stride = 64;
    int cap = 64;
    WindowMode mode = WindowMode::prompt_expand;
    /// Throw ExpansionLimitError instead of returning a partial result when the cap is hit.
    bool strict_cap = false;

    static PatchConfig with_edge(int edge) { return PatchConfig{edge, edge / 2, 64, WindowMode::prompt_expand, false}; }
    void validate() const;
};

/// Cubic window into the grid; may hang over the grid edges, where it reads `pad_value`.
struct PatchWindow {
    Index3 origin = Index3::Zero();
    int edge = 128;
    double pad_value = 0.0;

    Dims dims() const { return Dims::cube(edge); }
    bool contains(const Index3& p) const {
        return (p.array() >= origin.array()).all() && (p.array() < (origin.array() + edge)).all();
    }
    friend bool operator==(const PatchWindow& a, const PatchWindow& b) {
        return a.origin == b.origin && a.edge == b.edge;
    }
};

/// Window centred on `prompt`, shifted the minimum amount needed to maximise in-grid coverage.
PatchWindow initial_patch(const Index3& prompt, const Dims& dims, int edge = 128, double pad_value = 0.0);

/// point - origin. Throws BoundsError outside the window.
Index3 to_local(const Index3& point, const PatchWindow& window);

/// Regular grid of windows covering every voxel; the last window on each axis is aligned
/// to the far edge when the stride does not divide evenly.
std::vector<PatchWindow> tile_windows(const Dims& dims, int edge, int stride, double pad_value = 0.0);

Volume<float> crop(const Volume<double>& grid, const PatchWindow& window);
Volume<float> crop(const Volume<float>& field, const PatchWindow& window, float pad_value);

struct WindowPrediction {
    PatchWindow window;
    Volume<float> prob;
};

struct Expansion {
    std::vector<PatchWindow> windows;
    bool limit_hit = false;
};

/// One neighbour window (offset by the stride) for every face that the binarised prediction
/// touches, skipping faces on or beyond the grid boundary and windows already emitted.
Expansion expand_windows(std::span<const WindowPrediction> generation, std::span<const PatchWindow> emitted,
                         const Dims& dims, const PatchConfig& cfg);

struct FusedPrediction {
    ProbabilityField prob;
    BinaryMask mask;
};

/// Running per-voxel sum and coverage count over the full grid.
class FusionBuffer {
public:
    explicit FusionBuffer(const Dims& dims) : sum_(dims, 0.0), count_(dims, 0) {}
    /// Throws ProtocolError when the patch does not match its window.
    void add(const WindowPrediction& prediction);
    FusedPrediction result() const;
    const Volume<std::uint32_t>& coverage() const noexcept { return count_; }

private:
    Volume<double> sum_;
    Volume<std::uint32_t> count_;
};

/// Per-voxel mean over covering windows; uncovered voxels get 0.
FusedPrediction fuse(const Dims& dims, std::span<const WindowPrediction> predictions);

struct PatchRun {
    FusedPrediction fused;
    std::vector<PatchWindow> windows;
    std::size_t dropped_prompts = 0;
    std::size_t backend_calls = 0;
    bool limit_hit = false;
};

/// Runs the backend over the windows the config calls for and fuses the result.
/// `prior` is the full-grid probability from the previous round.
PatchRun run_patches(Backend& backend, const VoxelGrid& grid, const PromptSet& prompts, const ProbabilityField& prior,
                     const PatchConfig& cfg, const std::string& session);

}  // namespace petseg
