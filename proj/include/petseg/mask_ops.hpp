#pragma once

#include "petseg/volume.hpp"

#include <cstddef>

namespace petseg {

/// A \ B. Throws ShapeError on dims mismatch.
BinaryMask mask_difference(const BinaryMask& a, const BinaryMask& b);
BinaryMask mask_intersection(const BinaryMask& a, const BinaryMask& b);
BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b);
/// Number of true voxels.
std::size_t mask_volume(const BinaryMask& a);
std::size_t intersection_volume(const BinaryMask& a, const BinaryMask& b);
bool mask_empty(const BinaryMask& a);

/// prob >= threshold.
BinaryMask binarize(const ProbabilityField& prob, float threshold = 0.5f);
ProbabilityField to_probability(const BinaryMask& mask);

}  // namespace petseg
