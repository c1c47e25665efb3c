#include "petseg/backend.hpp"

#include <chrono>
#include <cmath>
#include <vector>

namespace petseg {

void SegmentRequest::validate() const {
    for (const LocalPrompt& p : prompts)
        if (!patch.dims().contains(p.index)) throw ProtocolError("prompt outside the request patch");
    if (prior) {
        if (!(prior->dims() == patch.dims())) throw ProtocolError("prior dims do not match patch dims");
        for (float v : *prior)
            if (!(v >= 0.0f && v <= 1.0f)) throw ProtocolError("prior value outside [0, 1]");
    }
}

void SegmentResponse::validate(const Dims& expected) const {
    if (!(prob.dims() == expected))
        throw ProtocolError("response dims " + to_string(prob.dims()) + " do not match request dims " +
                            to_string(expected));
    for (float v : prob) {
        if (!std::isfinite(v)) throw ProtocolError("non-finite probability in response");
        if (v < 0.0f || v > 1.0f) throw ProtocolError("probability outside [0, 1] in response");
    }
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// Iterative 6-connected flood fill. `accept(n)` decides membership; visited voxels are set in `out`.
template <typename Accept>
void flood(const Dims& d, std::size_t seed, std::vector<std::uint8_t>& out, Accept accept) {
    std::vector<std::size_t> stack{seed};
    out[seed] = 1;
    const std::size_t nx = static_cast<std::size_t>(d.nx);
    const std::size_t nxy = nx * static_cast<std::size_t>(d.ny);
    while (!stack.empty()) {
        const std::size_t n = stack.back();
        stack.pop_back();
        const std::size_t i = n % nx, j = (n / nx) % static_cast<std::size_t>(d.ny), k = n / nxy;
        auto visit = [&](std::size_t m) {
            if (!out[m] && accept(m)) {
                out[m] = 1;
                stack.push_back(m);
            }
        };
        if (i > 0) visit(n - 1);
        if (i + 1 < nx) visit(n + 1);
        if (j > 0) visit(n - nx);
        if (j + 1 < static_cast<std::size_t>(d.ny)) visit(n + nx);
        if (k > 0) visit(n - nxy);
        if (k + 1 < static_cast<std::size_t>(d.nz)) visit(n + nxy);
    }
}

}  // namespace

ThresholdBackend::ThresholdBackend(double theta) : theta_(static_cast<float>(theta)) {
    if (!std::isfinite(theta)) throw DomainError("threshold must be finite");
}

SegmentResponse ThresholdBackend::segment(const SegmentRequest& request) {
    const auto start = Clock::now();
    SegmentResponse r{Volume<float>(request.dims(), 0.0f), 0.0, {}};
    for (std::size_t n = 0; n < request.patch.size(); ++n) r.prob[n] = request.patch[n] >= theta_ ? 1.0f : 0.0f;
    r.latency_ms = elapsed_ms(start);
    return r;
}

RegionGrowBackend::RegionGrowBackend(double frac) : frac_(frac) {
    if (!(frac > 0.0 && frac <= 1.0)) throw DomainError("region-grow fraction must be in (0, 1]");
}

SegmentResponse RegionGrowBackend::segment(const SegmentRequest& request) {
    const auto start = Clock::now();
    request.validate();
    const Dims& d = request.dims();
    const Volume<float>& img = request.patch;
    SegmentResponse r{Volume<float>(d, 0.0f), 0.0, {}};

    std::vector<std::uint8_t> grown(d.count(), 0);
    for (const LocalPrompt& p : request.prompts) {
        if (p.polarity != Polarity::positive) continue;
        const std::size_t seed = linear_index(p.index, d);
        const float seed_value = img[seed];
        if (!(seed_value > 0.0f)) {
            r.warnings.push_back("degenerate seed with non-positive intensity skipped");
            continue;
        }
        const float cut = static_cast<float>(frac_ * static_cast<double>(seed_value));
        std::vector<std::uint8_t> region(d.count(), 0);
        flood(d, seed, region, [&](std::size_t m) { return img[m] >= cut; });
        for (std::size_t n = 0; n < region.size(); ++n) grown[n] |= region[n];
    }

    for (const LocalPrompt& p : request.prompts) {
        if (p.polarity != Polarity::negative) continue;
        const std::size_t at = linear_index(p.index, d);
        if (!grown[at]) continue;
        std::vector<std::uint8_t> component(d.count(), 0);
        flood(d, at, component, [&](std::size_t m) { return grown[m] != 0; });
        for (std::size_t n = 0; n < component.size(); ++n)
            if (component[n]) grown[n] = 0;
    }

    for (std::size_t n = 0; n < grown.size(); ++n) r.prob[n] = grown[n] ? 1.0f : 0.0f;
    r.latency_ms = elapsed_ms(start);
    return r;
}

SegmentResponse PerfectOracleBackend::segment(const SegmentRequest& request) {
    const Dims& d = request.dims();
    SegmentResponse r{Volume<float>(d, 0.0f), 0.0, {}};
    for (int k = 0; k < d.nz; ++k)
        for (int j = 0; j < d.ny; ++j)
            for (int i = 0; i < d.nx; ++i) {
                const Index3 g = request.origin + Index3(i, j, k);
                if (truth_.dims().contains(g) && truth_(g)) r.prob(i, j, k) = 1.0f;
            }
    return r;
}

}  // namespace petseg
