#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace petseg {

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class BoundsError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Voxel coordinate (i, j, k). Signed so that window origins may sit outside the grid.
using Index3 = Eigen::Vector3i;

/// Voxel counts along x, y, z.
struct Dims {
    int nx = 1;
    int ny = 1;
    int nz = 1;

    constexpr std::size_t count() const noexcept {
        return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
               static_cast<std::size_t>(nz);
    }
    constexpr int operator[](int axis) const noexcept { return axis == 0 ? nx : axis == 1 ? ny : nz; }
    constexpr bool contains(int i, int j, int k) const noexcept {
        return i >= 0 && j >= 0 && k >= 0 && i < nx && j < ny && k < nz;
    }
    bool contains(const Index3& p) const noexcept { return contains(p.x(), p.y(), p.z()); }

    friend constexpr bool operator==(const Dims&, const Dims&) = default;

    static Dims cube(int n) { return Dims{n, n, n}; }
};

std::string to_string(const Dims& d);

/// x-fastest linearization. Throws BoundsError outside dims.
std::size_t linear_index(int i, int j, int k, const Dims& dims);
inline std::size_t linear_index(const Index3& p, const Dims& dims) {
    return linear_index(p.x(), p.y(), p.z(), dims);
}
/// Inverse of linear_index.
Index3 unravel_index(std::size_t linear, const Dims& dims);

/// Dense scalar field stored x-fastest.
template <typename Scalar>
class Volume {
public:
    using value_type = Scalar;

    Volume() = default;
    explicit Volume(const Dims& dims, Scalar fill = Scalar{})
        : dims_(check_dims(dims)), data_(dims.count(), fill) {}
    Volume(const Dims& dims, std::vector<Scalar> data) : dims_(check_dims(dims)), data_(std::move(data)) {
        if (data_.size() != dims_.count())
            throw ShapeError("volume data length " + std::to_string(data_.size()) +
                             " does not match dims " + to_string(dims_));
    }

    const Dims& dims() const noexcept { return dims_; }
    std::size_t size() const noexcept { return data_.size(); }

    Scalar& operator[](std::size_t n) { return data_[n]; }
    const Scalar& operator[](std::size_t n) const { return data_[n]; }

    Scalar& operator()(int i, int j, int k) { return data_[unchecked(i, j, k)]; }
    const Scalar& operator()(int i, int j, int k) const { return data_[unchecked(i, j, k)]; }
    Scalar& operator()(const Index3& p) { return (*this)(p.x(), p.y(), p.z()); }
    const Scalar& operator()(const Index3& p) const { return (*this)(p.x(), p.y(), p.z()); }

    Scalar& at(int i, int j, int k) { return data_[linear_index(i, j, k, dims_)]; }
    const Scalar& at(int i, int j, int k) const { return data_[linear_index(i, j, k, dims_)]; }

    std::vector<Scalar>& data() noexcept { return data_; }
    const std::vector<Scalar>& data() const noexcept { return data_; }

    auto begin() noexcept { return data_.begin(); }
    auto end() noexcept { return data_.end(); }
    auto begin() const noexcept { return data_.begin(); }
    auto end() const noexcept { return data_.end(); }

    friend bool operator==(const Volume&, const Volume&) = default;

private:
    static const Dims& check_dims(const Dims& d) {
        if (d.nx < 1 || d.ny < 1 || d.nz < 1) throw ShapeError("dims must be positive, got " + to_string(d));
        return d;
    }
    std::size_t unchecked(int i, int j, int k) const noexcept {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(dims_.nx) *
                   (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims_.ny) * static_cast<std::size_t>(k));
    }

    Dims dims_{0, 0, 0};
    std::vector<Scalar> data_;
};

/// Voxel spacing (mm) and voxel-to-world affine.
struct Geometry {
    Eigen::Vector3d spacing = Eigen::Vector3d::Ones();
    Eigen::Matrix4d affine = Eigen::Matrix4d::Identity();

    /// Diagonal affine built from spacing, no translation.
    static Geometry from_spacing(const Eigen::Vector3d& spacing);
    void validate() const;
};

/// Intensity volume (SUV) with geometry.
template <typename Scalar>
class Image {
public:
    Image() = default;
    Image(Volume<Scalar> voxels, Geometry geometry) : voxels_(std::move(voxels)), geometry_(std::move(geometry)) {
        geometry_.validate();
    }

    const Dims& dims() const noexcept { return voxels_.dims(); }
    const Volume<Scalar>& voxels() const noexcept { return voxels_; }
    Volume<Scalar>& voxels() noexcept { return voxels_; }
    const Geometry& geometry() const noexcept { return geometry_; }
    const Eigen::Vector3d& spacing() const noexcept { return geometry_.spacing; }
    const Eigen::Matrix4d& affine() const noexcept { return geometry_.affine; }

    const Scalar& operator()(int i, int j, int k) const { return voxels_(i, j, k); }
    const Scalar& operator[](std::size_t n) const { return voxels_[n]; }

private:
    Volume<Scalar> voxels_;
    Geometry geometry_;
};

using VoxelGrid = Image<double>;
using ProbabilityField = Volume<float>;

/// One boolean per voxel.
class BinaryMask {
public:
    BinaryMask() = default;
    explicit BinaryMask(const Dims& dims, bool fill = false) : bits_(dims, fill ? 1 : 0) {}
    explicit BinaryMask(Volume<std::uint8_t> bits);

    const Dims& dims() const noexcept { return bits_.dims(); }
    std::size_t size() const noexcept { return bits_.size(); }

    bool operator[](std::size_t n) const { return bits_[n] != 0; }
    bool operator()(int i, int j, int k) const { return bits_(i, j, k) != 0; }
    bool operator()(const Index3& p) const { return bits_(p) != 0; }
    /// False outside the grid.
    bool get_or_false(int i, int j, int k) const { return dims().contains(i, j, k) && (*this)(i, j, k); }

    void set(std::size_t n, bool v = true) { bits_[n] = v ? 1 : 0; }
    void set(int i, int j, int k, bool v = true) { bits_.at(i, j, k) = v ? 1 : 0; }
    void set(const Index3& p, bool v = true) { set(p.x(), p.y(), p.z(), v); }

    const Volume<std::uint8_t>& bits() const noexcept { return bits_; }

    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

private:
    Volume<std::uint8_t> bits_;
};

/// Integer label per voxel, 0 = background.
class LabelMask {
public:
    using Label = std::uint16_t;

    LabelMask() = default;
    explicit LabelMask(const Dims& dims) : labels_(dims, 0) {}
    LabelMask(Volume<Label> labels, std::map<Label, std::string> names);

    const Dims& dims() const noexcept { return labels_.dims(); }
    Label operator[](std::size_t n) const { return labels_[n]; }
    Label operator()(int i, int j, int k) const { return labels_(i, j, k); }
    void set(std::size_t n, Label v) { labels_[n] = v; }

    const Volume<Label>& labels() const noexcept { return labels_; }
    const std::map<Label, std::string>& names() const noexcept { return names_; }
    void set_name(Label id, std::string name) { names_[id] = std::move(name); }

    /// Mask of voxels whose label is in `ids`.
    BinaryMask select(const std::vector<Label>& ids) const;
    /// Throws if a nonzero voxel label has no name.
    void validate() const;

private:
    Volume<Label> labels_;
    std::map<Label, std::string> names_;
};

/// affine * (i, j, k, 1), first three components.
Eigen::Vector3d voxel_to_world(const Eigen::Matrix4d& affine, const Index3& index);

void require_same_dims(const Dims& a, const Dims& b, const char* what);

}  // namespace petseg
