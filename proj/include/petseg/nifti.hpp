#pragma once

#include "petseg/volume.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace petseg::nifti {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class UnsupportedError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class LengthError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Datatype : std::int16_t { uint8 = 2, int16 = 4, float32 = 16, float64 = 64 };

int bytes_per_voxel(Datatype dt);
bool is_supported(std::int16_t code);

inline constexpr int kHeaderSize = 348;
inline constexpr float kDefaultVoxOffset = 352.0f;

/// Fields of the 348-byte NIfTI-1 header that this library interprets. Everything else is
/// written as zero.
struct Header {
    std::int32_t sizeof_hdr = kHeaderSize;
    std::array<std::int16_t, 8> dim{};
    std::int16_t datatype = static_cast<std::int16_t>(Datatype::float32);
    std::int16_t bitpix = 32;
    std::array<float, 8> pixdim{};
    float vox_offset = kDefaultVoxOffset;
    float scl_slope = 1.0f;
    float scl_inter = 0.0f;
    std::uint8_t xyzt_units = 2;  // NIFTI_UNITS_MM
    std::array<char, 80> descrip{};
    std::int16_t qform_code = 0;
    std::int16_t sform_code = 0;
    float quatern_b = 0.0f, quatern_c = 0.0f, quatern_d = 0.0f;
    float qoffset_x = 0.0f, qoffset_y = 0.0f, qoffset_z = 0.0f;
    std::array<float, 4> srow_x{}, srow_y{}, srow_z{};
    std::array<char, 4> magic{'n', '+', '1', '\0'};

    Dims dims() const;
    Eigen::Vector3d spacing() const;
    /// sform when sform_code > 0, else qform when qform_code > 0, else diagonal pixdim.
    Eigen::Matrix4d affine() const;
    Eigen::Matrix4d qform_affine() const;
    bool single_file() const noexcept { return magic[1] == '+'; }
};

/// Parses a 348-byte header. `swapped` receives true when the bytes are big-endian.
/// Throws FormatError / UnsupportedError without touching anything past the header.
Header parse_header(const std::uint8_t* bytes, std::size_t n, bool* swapped = nullptr);
std::vector<std::uint8_t> serialize_header(const Header& h);

struct File {
    Header header;
    VoxelGrid grid;
    /// Raw bytes between the header and vox_offset (extension flag + extensions), passed through.
    std::vector<std::uint8_t> extension;
};

/// Reads ".nii", ".nii.gz", or a ".hdr"/".img" pair.
File read(const std::filesystem::path& path);
VoxelGrid read_volume(const std::filesystem::path& path);
/// Any nonzero voxel becomes foreground.
BinaryMask read_mask(const std::filesystem::path& path);
/// Voxels must hold integers in [0, 65535]; names default to "label_<id>".
LabelMask read_labels(const std::filesystem::path& path);

/// Writes a single-file NIfTI-1, gzip-compressed when the path ends in ".gz".
/// Integer datatypes require every value to be exactly representable.
void write_volume(const std::filesystem::path& path, const VoxelGrid& grid, Datatype datatype = Datatype::float32,
                  const std::vector<std::uint8_t>& extension = {});
void write_mask(const std::filesystem::path& path, const BinaryMask& mask, const Geometry& geometry);
void write_labels(const std::filesystem::path& path, const LabelMask& labels, const Geometry& geometry);

}  // namespace petseg::nifti
