#include "petseg/mask_ops.hpp"

#include <algorithm>

namespace petseg {

namespace {

template <typename Op>
BinaryMask combine(const BinaryMask& a, const BinaryMask& b, const char* what, Op op) {
    require_same_dims(a.dims(), b.dims(), what);
    BinaryMask out(a.dims());
    for (std::size_t n = 0; n < a.size(); ++n)
        if (op(a[n], b[n])) out.set(n);
    return out;
}

}  // namespace

BinaryMask mask_difference(const BinaryMask& a, const BinaryMask& b) {
    return combine(a, b, "mask_difference", [](bool x, bool y) { return x && !y; });
}

BinaryMask mask_intersection(const BinaryMask& a, const BinaryMask& b) {
    return combine(a, b, "mask_intersection", [](bool x, bool y) { return x && y; });
}

BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b) {
    return combine(a, b, "mask_union", [](bool x, bool y) { return x || y; });
}

std::size_t mask_volume(const BinaryMask& a) {
    const auto& bits = a.bits().data();
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

std::size_t intersection_volume(const BinaryMask& a, const BinaryMask& b) {
    require_same_dims(a.dims(), b.dims(), "intersection_volume");
    std::size_t n = 0;
    for (std::size_t v = 0; v < a.size(); ++v) n += (a[v] && b[v]) ? 1 : 0;
    return n;
}

bool mask_empty(const BinaryMask& a) {
    const auto& bits = a.bits().data();
    return std::none_of(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; });
}

BinaryMask binarize(const ProbabilityField& prob, float threshold) {
    BinaryMask out(prob.dims());
    for (std::size_t n = 0; n < prob.size(); ++n)
        if (prob[n] >= threshold) out.set(n);
    return out;
}

ProbabilityField to_probability(const BinaryMask& mask) {
    ProbabilityField out(mask.dims(), 0.0f);
    for (std::size_t n = 0; n < mask.size(); ++n) out[n] = mask[n] ? 1.0f : 0.0f;
    return out;
}

}  // namespace petseg
