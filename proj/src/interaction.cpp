#include "petseg/interaction.hpp"

#include "petseg/mask_ops.hpp"

#include <algorithm>
#include <limits>

namespace petseg {

SegmentationState SegmentationState::initial(const Dims& dims) {
    return SegmentationState{ProbabilityField(dims, 0.0f), BinaryMask(dims), -1, {}};
}

std::string_view to_string(StopReason r) {
    switch (r) {
        case StopReason::budget: return "budget";
        case StopReason::converged: return "converged";
        case StopReason::stalled: return "stalled";
    }
    return "unknown";
}

const MetricResult& InteractionTrajectory::metrics_at(int budget) const {
    if (metrics.empty() || budget < 1) throw DomainError("trajectory has no state for that budget");
    return metrics[static_cast<std::size_t>(std::min<int>(budget, static_cast<int>(metrics.size())) - 1)];
}

const SegmentationState& InteractionTrajectory::state_at(int budget) const {
    if (states.empty() || budget < 1) throw DomainError("trajectory has no state for that budget");
    return states[static_cast<std::size_t>(std::min<int>(budget, static_cast<int>(states.size())) - 1)];
}

DiscrepancyField discrepancy(const BinaryMask& truth, const SegmentationState& state) {
    require_same_dims(truth.dims(), state.mask.dims(), "discrepancy");
    return DiscrepancyField{mask_difference(truth, state.mask), mask_difference(state.mask, truth), state.iteration};
}

Index3 select_click(const BinaryMask& region, const Eigen::Vector3d& spacing) {
    const Components comps = connected_components(region, Connectivity::twenty_six);
    if (comps.count == 0) throw DomainError("select_click on an empty region");

    // Largest component; equal sizes keep the one with the smaller first voxel.
    int best = 1;
    for (int c = 2; c <= comps.count; ++c)
        if (comps.sizes[c - 1] > comps.sizes[best - 1]) best = c;

    const Dims& d = region.dims();
    Index3 lo(d.nx, d.ny, d.nz), hi(-1, -1, -1);
    for (std::size_t n = 0; n < comps.labels.size(); ++n) {
        if (comps.labels[n] != best) continue;
        const Index3 p = unravel_index(n, d);
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }

    // Bounding box grown by one voxel: its shell is complement, so distances inside it are exact.
    const Index3 origin = lo.array() - 1;
    const Index3 extent = (hi - lo).array() + 3;
    const Dims box{extent.x(), extent.y(), extent.z()};
    BinaryMask complement(box, true);
    for (int k = 0; k < box.nz; ++k)
        for (int j = 0; j < box.ny; ++j)
            for (int i = 0; i < box.nx; ++i) {
                const Index3 g = origin + Index3(i, j, k);
                if (d.contains(g) && comps.labels(g) == best) complement.set(i, j, k, false);
            }
    const Volume<double> dist2 = squared_distance_transform(complement, spacing);

    Index3 pick = lo;
    double best_d = -1.0;
    std::size_t best_linear = std::numeric_limits<std::size_t>::max();
    for (int k = lo.z(); k <= hi.z(); ++k)
        for (int j = lo.y(); j <= hi.y(); ++j)
            for (int i = lo.x(); i <= hi.x(); ++i) {
                if (comps.labels(i, j, k) != best) continue;
                const double v = dist2(Index3(i, j, k) - origin);
                const std::size_t lin = linear_index(i, j, k, d);
                if (v > best_d || (v == best_d && lin < best_linear)) {
                    best_d = v;
                    best_linear = lin;
                    pick = Index3(i, j, k);
                }
            }
    return pick;
}

std::optional<PointPrompt> next_prompt(const BinaryMask& truth, const SegmentationState& state,
                                       const Eigen::Vector3d& spacing) {
    require_same_dims(truth.dims(), state.mask.dims(), "next_prompt");
    if (mask_empty(truth)) throw DomainError("next_prompt needs a non-empty target");

    struct Candidate {
        BinaryMask region;
        Polarity polarity;
    };
    std::vector<Candidate> order;
    if (state.prompts.empty()) {
        order.push_back({truth, Polarity::positive});
    } else {
        DiscrepancyField df = discrepancy(truth, state);
        const std::size_t fn = mask_volume(df.fn_mask);
        const std::size_t fp = mask_volume(df.fp_mask);
        if (fn == 0 && fp == 0) return std::nullopt;
        if (fn >= fp) {
            order.push_back({std::move(df.fn_mask), Polarity::positive});
            order.push_back({std::move(df.fp_mask), Polarity::negative});
        } else {
            order.push_back({std::move(df.fp_mask), Polarity::negative});
            order.push_back({std::move(df.fn_mask), Polarity::positive});
        }
    }

    const int iteration = state.iteration + 1;
    for (Candidate& c : order) {
        // A voxel already clicked with this polarity cannot be clicked again.
        for (const PointPrompt& p : state.prompts)
            if (p.polarity == c.polarity && c.region.dims().contains(p.index)) c.region.set(p.index, false);
        if (mask_empty(c.region)) continue;
        return PointPrompt{select_click(c.region, spacing), c.polarity, iteration};
    }
    return std::nullopt;
}

namespace {

void check_click(const BinaryMask& truth, const SegmentationState& state, const PointPrompt& p) {
    const bool in_truth = truth(p.index);
    const bool predicted = state.mask(p.index);
    const bool ok = p.polarity == Polarity::positive ? (in_truth && !predicted) : (!in_truth && predicted);
    // Round 0 has no prediction; the click only has to land in the target.
    const bool first_ok = state.prompts.empty() && p.polarity == Polarity::positive && in_truth;
    if (!(ok || first_ok)) throw InvariantViolation("click placed outside its discrepancy region");
}

}  // namespace

InteractionTrajectory run_interaction(Backend& backend, const VoxelGrid& grid, const BinaryMask& truth, int n_points,
                                      const PatchConfig& patch, const InteractionOptions& options) {
    if (n_points < 1) throw DomainError("n_points must be at least 1");
    require_same_dims(grid.dims(), truth.dims(), "run_interaction");
    patch.validate();

    InteractionTrajectory traj;
    SegmentationState state = SegmentationState::initial(grid.dims());
    for (int t = 0; t < n_points; ++t) {
        const std::optional<PointPrompt> click = next_prompt(truth, state, grid.spacing());
        if (!click) {
            traj.stop = dsc(truth, state.mask) == 1.0 ? StopReason::converged : StopReason::stalled;
            return traj;
        }
        check_click(truth, state, *click);

        PromptSet prompts = state.prompts;
        prompts.add(*click);
        PatchRun run;
        try {
            run = run_patches(backend, grid, prompts, state.prob, patch, options.session);
        } catch (const std::runtime_error& e) {
            throw InteractionError(t, e.what());
        }
        traj.limit_hit = traj.limit_hit || run.limit_hit;
        traj.dropped_prompts += run.dropped_prompts;

        state = SegmentationState{std::move(run.fused.prob), std::move(run.fused.mask), t, std::move(prompts)};
        MetricResult m = evaluate_masks(truth, state.mask, options.tau, grid.spacing());
        traj.metrics.push_back(m);
        traj.states.push_back(state);
    }
    traj.stop = traj.metrics.back().dsc == 1.0 ? StopReason::converged : StopReason::budget;
    return traj;
}

LesionWiseResult run_lesion_wise(Backend& backend, const VoxelGrid& grid, const BinaryMask& truth,
                                 int n_points_per_lesion, const PatchConfig& patch, const InteractionOptions& options) {
    require_same_dims(grid.dims(), truth.dims(), "run_lesion_wise");
    const Components comps = connected_components(truth, Connectivity::twenty_six);
    if (comps.count == 0) throw DomainError("lesion-wise run needs a non-empty target");

    LesionWiseResult out;
    for (int c = 1; c <= comps.count; ++c) {
        InteractionOptions per = options;
        per.session = options.session + "/lesion_" + std::to_string(c);
        out.lesions.push_back(run_interaction(backend, grid, comps.component(c), n_points_per_lesion, patch, per));
    }

    std::size_t rounds = 0;
    bool all_converged = true, any_stalled = false;
    for (const InteractionTrajectory& l : out.lesions) {
        rounds = std::max(rounds, l.states.size());
        all_converged = all_converged && l.stop == StopReason::converged;
        any_stalled = any_stalled || l.stop == StopReason::stalled;
        out.pooled.limit_hit = out.pooled.limit_hit || l.limit_hit;
        out.pooled.dropped_prompts += l.dropped_prompts;
    }

    for (std::size_t t = 0; t < rounds; ++t) {
        const int budget = static_cast<int>(t) + 1;
        SegmentationState pooled{ProbabilityField(grid.dims(), 0.0f), BinaryMask(grid.dims()), static_cast<int>(t), {}};
        for (const InteractionTrajectory& l : out.lesions) {
            const ProbabilityField& p = l.state_at(budget).prob;
            for (std::size_t n = 0; n < p.size(); ++n) pooled.prob[n] = std::max(pooled.prob[n], p[n]);
        }
        pooled.mask = binarize(pooled.prob);
        for (int round = 0; round <= static_cast<int>(t); ++round)
            for (const InteractionTrajectory& l : out.lesions)
                for (const PointPrompt& p : l.state_at(budget).prompts)
                    if (p.iteration == round && !pooled.prompts.contains(p.index, p.polarity)) pooled.prompts.add(p);
        out.pooled.metrics.push_back(evaluate_masks(truth, pooled.mask, options.tau, grid.spacing()));
        out.pooled.states.push_back(std::move(pooled));
    }
    out.pooled.stop = all_converged ? StopReason::converged : any_stalled ? StopReason::stalled : StopReason::budget;
    return out;
}

}  // namespace petseg
