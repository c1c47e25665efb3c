#include "petseg/volume.hpp"

#include <cmath>

namespace petseg {

std::string to_string(const Dims& d) {
    return "(" + std::to_string(d.nx) + "," + std::to_string(d.ny) + "," + std::to_string(d.nz) + ")";
}

std::size_t linear_index(int i, int j, int k, const Dims& dims) {
    if (!dims.contains(i, j, k))
        throw BoundsError("voxel (" + std::to_string(i) + "," + std::to_string(j) + "," + std::to_string(k) +
                          ") outside dims " + to_string(dims));
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims.nx) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims.ny) * static_cast<std::size_t>(k));
}

Index3 unravel_index(std::size_t linear, const Dims& dims) {
    if (linear >= dims.count()) throw BoundsError("linear index " + std::to_string(linear) + " out of range");
    const auto nx = static_cast<std::size_t>(dims.nx);
    const auto ny = static_cast<std::size_t>(dims.ny);
    return Index3(static_cast<int>(linear % nx), static_cast<int>((linear / nx) % ny),
                  static_cast<int>(linear / (nx * ny)));
}

Geometry Geometry::from_spacing(const Eigen::Vector3d& spacing) {
    Geometry g;
    g.spacing = spacing;
    g.affine = Eigen::Matrix4d::Identity();
    g.affine.diagonal().head<3>() = spacing;
    g.validate();
    return g;
}

void Geometry::validate() const {
    for (int a = 0; a < 3; ++a)
        if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
            throw DomainError("spacing components must be positive and finite");
    if (!affine.allFinite()) throw DomainError("affine has non-finite entries");
    if (std::abs(affine.determinant()) < 1e-12) throw DomainError("affine is not invertible");
}

BinaryMask::BinaryMask(Volume<std::uint8_t> bits) : bits_(std::move(bits)) {
    for (auto& b : bits_) b = b != 0 ? 1 : 0;
}

LabelMask::LabelMask(Volume<Label> labels, std::map<Label, std::string> names)
    : labels_(std::move(labels)), names_(std::move(names)) {
    validate();
}

BinaryMask LabelMask::select(const std::vector<Label>& ids) const {
    BinaryMask out(dims());
    for (std::size_t n = 0; n < labels_.size(); ++n)
        for (Label id : ids)
            if (labels_[n] == id && id != 0) {
                out.set(n);
                break;
            }
    return out;
}

void LabelMask::validate() const {
    for (Label v : labels_)
        if (v != 0 && !names_.contains(v))
            throw DomainError("label " + std::to_string(v) + " has no name");
}

Eigen::Vector3d voxel_to_world(const Eigen::Matrix4d& affine, const Index3& index) {
    const Eigen::Vector4d h(index.x(), index.y(), index.z(), 1.0);
    return (affine * h).head<3>();
}

void require_same_dims(const Dims& a, const Dims& b, const char* what) {
    if (!(a == b)) throw ShapeError(std::string(what) + ": dims mismatch " + to_string(a) + " vs " + to_string(b));
}

}  // namespace petseg
