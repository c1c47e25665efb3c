#pragma once

#include "petseg/prompts.hpp"
#include "petseg/volume.hpp"

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace petseg {

class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A click in window-local voxel coordinates.
struct LocalPrompt {
    Index3 index = Index3::Zero();
    Polarity polarity = Polarity::positive;
    int iteration = 0;

    friend bool operator==(const LocalPrompt& a, const LocalPrompt& b) {
        return a.index == b.index && a.polarity == b.polarity && a.iteration == b.iteration;
    }
};

/// One window's worth of input to a promptable model: intensities, clicks, and the
/// previous probability estimate as a dense prompt.
struct SegmentRequest {
    Volume<float> patch;
    std::vector<LocalPrompt> prompts;
    std::optional<Volume<float>> prior;
    std::string session;
    /// Window origin in the full grid. Harness-side only; never sent over the wire.
    Index3 origin = Index3::Zero();

    const Dims& dims() const noexcept { return patch.dims(); }
    /// Throws ProtocolError when prompts fall outside the patch, the prior has the wrong
    /// dims, or prior values leave [0, 1].
    void validate() const;
};

struct SegmentResponse {
    Volume<float> prob;
    double latency_ms = 0.0;
    std::vector<std::string> warnings;

    void validate(const Dims& expected) const;
};

/// In-process promptable segmentation model.
class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string name() const = 0;
    virtual SegmentResponse segment(const SegmentRequest& request) = 0;
};

/// prob = 1 where intensity >= theta. Ignores prompts and prior.
class ThresholdBackend final : public Backend {
public:
    explicit ThresholdBackend(double theta);
    std::string name() const override { return "threshold"; }
    SegmentResponse segment(const SegmentRequest& request) override;

private:
    float theta_;
};

inline constexpr double kDefaultGrowFraction = 0.41;

/// Flood fill (6-connected) from each positive click over voxels at or above
/// `frac * seed intensity`, then drop every grown component holding a negative click.
class RegionGrowBackend final : public Backend {
public:
    explicit RegionGrowBackend(double frac = kDefaultGrowFraction);
    std::string name() const override { return "region_grow"; }
    SegmentResponse segment(const SegmentRequest& request) override;

private:
    double frac_;
};

/// Test double: answers with the hidden ground truth cropped to the request window.
class PerfectOracleBackend final : public Backend {
public:
    explicit PerfectOracleBackend(BinaryMask truth) : truth_(std::move(truth)) {}
    std::string name() const override { return "oracle"; }
    SegmentResponse segment(const SegmentRequest& request) override;

private:
    BinaryMask truth_;
};

}  // namespace petseg
