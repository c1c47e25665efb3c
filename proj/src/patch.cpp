#include "petseg/patch.hpp"

#include <algorithm>

namespace petseg {

void PatchConfig::validate() const {
    if (edge < 2 || edge % 2 != 0) throw DomainError("patch edge must be even and >= 2");
    if (stride < 1 || stride > edge) throw DomainError("patch stride must be in [1, edge]");
    if (cap < 1) throw DomainError("window cap must be positive");
}

namespace {

int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

double grid_minimum(const VoxelGrid& grid) {
    const auto& v = grid.voxels().data();
    return *std::min_element(v.begin(), v.end());
}

}  // namespace

PatchWindow initial_patch(const Index3& prompt, const Dims& dims, int edge, double pad_value) {
    if (!dims.contains(prompt)) throw BoundsError("initial_patch prompt outside the grid");
    PatchWindow w;
    w.edge = edge;
    w.pad_value = pad_value;
    for (int a = 0; a < 3; ++a) {
        const int slack = dims[a] - edge;
        const int lo = std::min(0, slack);
        const int hi = std::max(0, slack);
        w.origin[a] = std::clamp(prompt[a] - edge / 2, lo, hi);
    }
    return w;
}

Index3 to_local(const Index3& point, const PatchWindow& window) {
    if (!window.contains(point)) throw BoundsError("point outside window");
    return point - window.origin;
}

std::vector<PatchWindow> tile_windows(const Dims& dims, int edge, int stride, double pad_value) {
    std::array<std::vector<int>, 3> starts;
    for (int a = 0; a < 3; ++a) {
        const int n = dims[a];
        if (n <= edge) {
            starts[a].push_back(floor_div(n - edge, 2));
            continue;
        }
        for (int o = 0; o + edge < n; o += stride) starts[a].push_back(o);
        if (starts[a].back() != n - edge) starts[a].push_back(n - edge);
    }
    std::vector<PatchWindow> out;
    for (int z : starts[2])
        for (int y : starts[1])
            for (int x : starts[0]) out.push_back(PatchWindow{Index3(x, y, z), edge, pad_value});
    return out;
}

Volume<float> crop(const Volume<double>& grid, const PatchWindow& window) {
    const Dims& d = grid.dims();
    Volume<float> out(window.dims(), static_cast<float>(window.pad_value));
    for (int k = 0; k < window.edge; ++k)
        for (int j = 0; j < window.edge; ++j)
            for (int i = 0; i < window.edge; ++i) {
                const Index3 g = window.origin + Index3(i, j, k);
                if (d.contains(g)) out(i, j, k) = static_cast<float>(grid(g));
            }
    return out;
}

Volume<float> crop(const Volume<float>& field, const PatchWindow& window, float pad_value) {
    const Dims& d = field.dims();
    Volume<float> out(window.dims(), pad_value);
    for (int k = 0; k < window.edge; ++k)
        for (int j = 0; j < window.edge; ++j)
            for (int i = 0; i < window.edge; ++i) {
                const Index3 g = window.origin + Index3(i, j, k);
                if (d.contains(g)) out(i, j, k) = field(g);
            }
    return out;
}

namespace {

// Does the binarised prediction reach the in-grid part of the face `local[axis] == slice`?
bool face_touched(const WindowPrediction& wp, const Dims& dims, int axis, int slice) {
    const int e = wp.window.edge;
    const int u = (axis + 1) % 3, v = (axis + 2) % 3;
    Index3 local;
    local[axis] = slice;
    for (int b = 0; b < e; ++b)
        for (int a = 0; a < e; ++a) {
            local[u] = a;
            local[v] = b;
            if (!dims.contains(wp.window.origin + local)) continue;
            if (wp.prob(local) >= 0.5f) return true;
        }
    return false;
}

}  // namespace

Expansion expand_windows(std::span<const WindowPrediction> generation, std::span<const PatchWindow> emitted,
                         const Dims& dims, const PatchConfig& cfg) {
    Expansion out;
    auto known = [&](const PatchWindow& w) {
        return std::find(emitted.begin(), emitted.end(), w) != emitted.end() ||
               std::find(out.windows.begin(), out.windows.end(), w) != out.windows.end();
    };
    for (const WindowPrediction& wp : generation) {
        if (!(wp.prob.dims() == wp.window.dims())) throw ProtocolError("prediction dims do not match its window");
        for (int axis = 0; axis < 3; ++axis) {
            const int lo_face = wp.window.origin[axis];
            const int hi_face = wp.window.origin[axis] + wp.window.edge - 1;
            const struct {
                bool open;
                int slice;
                int shift;
            } faces[2] = {{lo_face > 0, 0, -cfg.stride}, {hi_face < dims[axis] - 1, wp.window.edge - 1, cfg.stride}};
            for (const auto& f : faces) {
                if (!f.open || !face_touched(wp, dims, axis, f.slice)) continue;
                PatchWindow next = wp.window;
                next.origin[axis] += f.shift;
                if (known(next)) continue;
                if (emitted.size() + out.windows.size() >= static_cast<std::size_t>(cfg.cap)) {
                    out.limit_hit = true;
                    continue;
                }
                out.windows.push_back(next);
            }
        }
    }
    return out;
}

void FusionBuffer::add(const WindowPrediction& wp) {
    if (!(wp.prob.dims() == wp.window.dims())) throw ProtocolError("missing or mis-sized patch for a window");
    const Dims& dims = sum_.dims();
    const int e = wp.window.edge;
    for (int k = 0; k < e; ++k)
        for (int j = 0; j < e; ++j)
            for (int i = 0; i < e; ++i) {
                const Index3 g = wp.window.origin + Index3(i, j, k);
                if (!dims.contains(g)) continue;
                sum_(g) += static_cast<double>(wp.prob(i, j, k));
                ++count_(g);
            }
}

FusedPrediction FusionBuffer::result() const {
    const Dims& dims = sum_.dims();
    FusedPrediction out{ProbabilityField(dims, 0.0f), BinaryMask(dims)};
    for (std::size_t n = 0; n < sum_.size(); ++n) {
        if (count_[n] == 0) continue;
        out.prob[n] = static_cast<float>(sum_[n] / static_cast<double>(count_[n]));
        if (out.prob[n] >= 0.5f) out.mask.set(n);
    }
    return out;
}

FusedPrediction fuse(const Dims& dims, std::span<const WindowPrediction> predictions) {
    FusionBuffer buffer(dims);
    for (const WindowPrediction& wp : predictions) buffer.add(wp);
    return buffer.result();
}

PatchRun run_patches(Backend& backend, const VoxelGrid& grid, const PromptSet& prompts, const ProbabilityField& prior,
                     const PatchConfig& cfg, const std::string& session) {
    cfg.validate();
    require_same_dims(grid.dims(), prior.dims(), "run_patches prior");
    const Dims& dims = grid.dims();
    const double pad = grid_minimum(grid);

    PatchRun run;
    std::vector<PatchWindow> generation;
    if (cfg.mode == WindowMode::full_tiling) {
        generation = tile_windows(dims, cfg.edge, cfg.stride, pad);
    } else {
        if (prompts.empty()) throw DomainError("prompt-driven patching needs at least one prompt");
        for (const PointPrompt& p : prompts) {
            const bool covered = std::any_of(generation.begin(), generation.end(),
                                             [&](const PatchWindow& w) { return w.contains(p.index); });
            if (!covered) generation.push_back(initial_patch(p.index, dims, cfg.edge, pad));
        }
        if (generation.size() > static_cast<std::size_t>(cfg.cap)) {
            generation.resize(static_cast<std::size_t>(cfg.cap));
            run.limit_hit = true;
        }
    }

    FusionBuffer fusion(dims);
    while (!generation.empty()) {
        std::vector<WindowPrediction> current;
        for (const PatchWindow& w : generation) {
            SegmentRequest req;
            req.patch = crop(grid.voxels(), w);
            req.prior = crop(prior, w, 0.0f);
            req.session = session;
            req.origin = w.origin;
            for (const PointPrompt& p : prompts) {
                if (w.contains(p.index))
                    req.prompts.push_back({to_local(p.index, w), p.polarity, p.iteration});
                else
                    ++run.dropped_prompts;
            }
            SegmentResponse resp = backend.segment(req);
            ++run.backend_calls;
            resp.validate(req.dims());
            current.push_back({w, std::move(resp.prob)});
        }
        run.windows.insert(run.windows.end(), generation.begin(), generation.end());

        generation.clear();
        if (cfg.mode == WindowMode::prompt_expand) {
            Expansion next = expand_windows(current, run.windows, dims, cfg);
            if (next.limit_hit) {
                run.limit_hit = true;
                if (cfg.strict_cap)
                    throw ExpansionLimitError("sliding-window expansion exceeded the cap of " + std::to_string(cfg.cap) +
                                              " windows");
            }
            generation = std::move(next.windows);
        }
        for (const auto& wp : current) fusion.add(wp);
    }

    run.fused = fusion.result();
    return run;
}

}  // namespace petseg
