#include "petseg/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>

namespace petseg::nifti {

namespace {

// Little-endian field access with optional byte swap.
class ByteReader {
public:
    ByteReader(const std::uint8_t* p, bool big_endian) : p_(p), big_(big_endian) {}

    template <typename T>
    T get(std::size_t offset) const {
        std::array<std::uint8_t, sizeof(T)> raw{};
        std::memcpy(raw.data(), p_ + offset, sizeof(T));
        if (big_) std::reverse(raw.begin(), raw.end());
        return from_le<T>(raw);
    }

    template <typename T>
    static T from_le(const std::array<std::uint8_t, sizeof(T)>& raw) {
        using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
                                     std::conditional_t<sizeof(T) == 2, std::uint16_t,
                                                        std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
        U u = 0;
        for (std::size_t b = 0; b < sizeof(T); ++b) u |= static_cast<U>(raw[b]) << (8 * b);
        return std::bit_cast<T>(u);
    }

private:
    const std::uint8_t* p_;
    bool big_;
};

class ByteWriter {
public:
    explicit ByteWriter(std::vector<std::uint8_t>& out) : out_(out) {}

    template <typename T>
    void put(std::size_t offset, T value) {
        using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
                                     std::conditional_t<sizeof(T) == 2, std::uint16_t,
                                                        std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
        const U u = std::bit_cast<U>(value);
        for (std::size_t b = 0; b < sizeof(T); ++b) out_[offset + b] = static_cast<std::uint8_t>(u >> (8 * b));
    }

private:
    std::vector<std::uint8_t>& out_;
};

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

struct GzCloser {
    void operator()(gzFile f) const noexcept {
        if (f) gzclose(f);
    }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

GzHandle open_read(const std::filesystem::path& path) {
    GzHandle f(gzopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open " + path.string());
    return f;
}

// Reads up to n bytes; returns the count actually read.
std::size_t read_some(gzFile f, std::uint8_t* dst, std::size_t n) {
    std::size_t total = 0;
    while (total < n) {
        const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n - total, 1u << 30));
        const int got = gzread(f, dst + total, chunk);
        if (got < 0) throw IoError("decompression error");
        if (got == 0) break;
        total += static_cast<std::size_t>(got);
    }
    return total;
}

double decode_voxel(const std::uint8_t* p, Datatype dt, bool big) {
    ByteReader r(p, big);
    switch (dt) {
        case Datatype::uint8: return static_cast<double>(p[0]);
        case Datatype::int16: return static_cast<double>(r.get<std::int16_t>(0));
        case Datatype::float32: return static_cast<double>(r.get<float>(0));
        case Datatype::float64: return r.get<double>(0);
    }
    return 0.0;
}

}  // namespace

int bytes_per_voxel(Datatype dt) {
    switch (dt) {
        case Datatype::uint8: return 1;
        case Datatype::int16: return 2;
        case Datatype::float32: return 4;
        case Datatype::float64: return 8;
    }
    return 0;
}

bool is_supported(std::int16_t code) { return code == 2 || code == 4 || code == 16 || code == 64; }

Dims Header::dims() const {
    Dims d{1, 1, 1};
    if (dim[0] >= 1) d.nx = dim[1];
    if (dim[0] >= 2) d.ny = dim[2];
    if (dim[0] >= 3) d.nz = dim[3];
    return d;
}

Eigen::Vector3d Header::spacing() const {
    Eigen::Vector3d s = Eigen::Vector3d::Ones();
    for (int a = 0; a < 3; ++a)
        if (a + 1 <= dim[0]) s[a] = std::abs(static_cast<double>(pixdim[a + 1]));
    return s;
}

Eigen::Matrix4d Header::qform_affine() const {
    double b = quatern_b, c = quatern_c, d = quatern_d;
    double a = 1.0 - (b * b + c * c + d * d);
    if (a < 1e-7) {
        // Degenerate quaternion: treat as a 180 degree rotation about (b, c, d).
        const double norm = 1.0 / std::sqrt(b * b + c * c + d * d);
        b *= norm;
        c *= norm;
        d *= norm;
        a = 0.0;
    } else {
        a = std::sqrt(a);
    }
    const Eigen::Vector3d sp = spacing();
    const double qfac = pixdim[0] < 0.0f ? -1.0 : 1.0;

    Eigen::Matrix3d r;
    r << a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c),  //
        2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b),    //
        2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b;
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = r * Eigen::Vector3d(sp.x(), sp.y(), qfac * sp.z()).asDiagonal();
    m.topRightCorner<3, 1>() = Eigen::Vector3d(qoffset_x, qoffset_y, qoffset_z);
    return m;
}

Eigen::Matrix4d Header::affine() const {
    if (sform_code > 0) {
        Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
        for (int c = 0; c < 4; ++c) {
            m(0, c) = srow_x[c];
            m(1, c) = srow_y[c];
            m(2, c) = srow_z[c];
        }
        return m;
    }
    if (qform_code > 0) return qform_affine();
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.diagonal().head<3>() = spacing();
    return m;
}

Header parse_header(const std::uint8_t* bytes, std::size_t n, bool* swapped) {
    if (n < 4) throw FormatError("file too short for a NIfTI header");
    const auto le = ByteReader(bytes, false).get<std::int32_t>(0);
    const auto be = ByteReader(bytes, true).get<std::int32_t>(0);
    bool big = false;
    if (le == kHeaderSize) {
        big = false;
    } else if (be == kHeaderSize) {
        big = true;
    } else if (le == 540 || be == 540) {
        throw UnsupportedError("NIfTI-2 files are not supported");
    } else if (n >= 132 && std::memcmp(bytes + 128, "DICM", 4) == 0) {
        throw UnsupportedError("DICOM files are not supported; convert to NIfTI first");
    } else {
        throw FormatError("invalid sizeof_hdr " + std::to_string(le));
    }
    if (n < static_cast<std::size_t>(kHeaderSize)) throw FormatError("truncated NIfTI header");

    Header h;
    std::memcpy(h.magic.data(), bytes + 344, 4);
    const bool magic_ok = (std::memcmp(h.magic.data(), "n+1\0", 4) == 0) || (std::memcmp(h.magic.data(), "ni1\0", 4) == 0);
    if (!magic_ok) throw FormatError("invalid NIfTI magic");

    const ByteReader r(bytes, big);
    h.sizeof_hdr = kHeaderSize;
    for (int i = 0; i < 8; ++i) h.dim[i] = r.get<std::int16_t>(40 + 2 * i);
    h.datatype = r.get<std::int16_t>(70);
    h.bitpix = r.get<std::int16_t>(72);
    for (int i = 0; i < 8; ++i) h.pixdim[i] = r.get<float>(76 + 4 * i);
    h.vox_offset = r.get<float>(108);
    h.scl_slope = r.get<float>(112);
    h.scl_inter = r.get<float>(116);
    h.xyzt_units = bytes[123];
    std::memcpy(h.descrip.data(), bytes + 148, 80);
    h.qform_code = r.get<std::int16_t>(252);
    h.sform_code = r.get<std::int16_t>(254);
    h.quatern_b = r.get<float>(256);
    h.quatern_c = r.get<float>(260);
    h.quatern_d = r.get<float>(264);
    h.qoffset_x = r.get<float>(268);
    h.qoffset_y = r.get<float>(272);
    h.qoffset_z = r.get<float>(276);
    for (int c = 0; c < 4; ++c) {
        h.srow_x[c] = r.get<float>(280 + 4 * c);
        h.srow_y[c] = r.get<float>(296 + 4 * c);
        h.srow_z[c] = r.get<float>(312 + 4 * c);
    }

    if (h.dim[0] < 1 || h.dim[0] > 7) throw FormatError("dim[0] must be in [1, 7]");
    for (int i = 1; i <= h.dim[0]; ++i)
        if (h.dim[i] < 1) throw FormatError("dim[" + std::to_string(i) + "] must be positive");
    for (int i = 4; i <= h.dim[0]; ++i)
        if (h.dim[i] != 1) throw UnsupportedError("only 3D volumes are supported");
    if (h.dim[0] >= 3)
        for (int i = 1; i <= 3; ++i)
            if (!(h.pixdim[i] > 0.0f)) throw FormatError("pixdim[" + std::to_string(i) + "] must be positive");
    if (!is_supported(h.datatype)) throw UnsupportedError("unsupported datatype " + std::to_string(h.datatype));
    if (h.single_file() && h.vox_offset < static_cast<float>(kHeaderSize))
        throw FormatError("vox_offset inside the header");
    if (swapped) *swapped = big;
    return h;
}

std::vector<std::uint8_t> serialize_header(const Header& h) {
    std::vector<std::uint8_t> out(kHeaderSize, 0);
    ByteWriter w(out);
    w.put<std::int32_t>(0, kHeaderSize);
    out[38] = 'r';  // regular
    for (int i = 0; i < 8; ++i) w.put<std::int16_t>(40 + 2 * i, h.dim[i]);
    w.put<std::int16_t>(70, h.datatype);
    w.put<std::int16_t>(72, h.bitpix);
    for (int i = 0; i < 8; ++i) w.put<float>(76 + 4 * i, h.pixdim[i]);
    w.put<float>(108, h.vox_offset);
    w.put<float>(112, h.scl_slope);
    w.put<float>(116, h.scl_inter);
    out[123] = h.xyzt_units;
    std::memcpy(out.data() + 148, h.descrip.data(), 80);
    w.put<std::int16_t>(252, h.qform_code);
    w.put<std::int16_t>(254, h.sform_code);
    w.put<float>(256, h.quatern_b);
    w.put<float>(260, h.quatern_c);
    w.put<float>(264, h.quatern_d);
    w.put<float>(268, h.qoffset_x);
    w.put<float>(272, h.qoffset_y);
    w.put<float>(276, h.qoffset_z);
    for (int c = 0; c < 4; ++c) {
        w.put<float>(280 + 4 * c, h.srow_x[c]);
        w.put<float>(296 + 4 * c, h.srow_y[c]);
        w.put<float>(312 + 4 * c, h.srow_z[c]);
    }
    std::memcpy(out.data() + 344, h.magic.data(), 4);
    return out;
}

File read(const std::filesystem::path& path) {
    GzHandle f = open_read(path);
    std::vector<std::uint8_t> hdr(kHeaderSize);
    const std::size_t got = read_some(f.get(), hdr.data(), hdr.size());
    bool big = false;
    File file;
    file.header = parse_header(hdr.data(), got, &big);
    const Header& h = file.header;

    const Dims dims = h.dims();
    const auto dt = static_cast<Datatype>(h.datatype);
    const std::size_t bpv = static_cast<std::size_t>(bytes_per_voxel(dt));
    const std::size_t payload_bytes = dims.count() * bpv;

    GzHandle data_file;
    gzFile src = f.get();
    if (h.single_file()) {
        const auto offset = static_cast<std::size_t>(h.vox_offset);
        if (offset > static_cast<std::size_t>(kHeaderSize)) {
            file.extension.resize(offset - kHeaderSize);
            if (read_some(src, file.extension.data(), file.extension.size()) != file.extension.size())
                throw LengthError("file ends before vox_offset");
        }
    } else {
        std::filesystem::path img = path;
        std::string s = img.string();
        if (ends_with(s, ".hdr.gz"))
            s = s.substr(0, s.size() - 7) + ".img.gz";
        else if (ends_with(s, ".hdr"))
            s = s.substr(0, s.size() - 4) + ".img";
        else
            throw FormatError("two-file NIfTI header must have a .hdr extension");
        data_file = open_read(s);
        src = data_file.get();
        const auto offset = static_cast<std::size_t>(std::max(0.0f, h.vox_offset));
        std::vector<std::uint8_t> skip(offset);
        if (read_some(src, skip.data(), offset) != offset) throw LengthError("image file shorter than vox_offset");
    }

    std::vector<std::uint8_t> payload(payload_bytes);
    if (read_some(src, payload.data(), payload_bytes) != payload_bytes)
        throw LengthError("truncated payload: expected " + std::to_string(payload_bytes) + " bytes");

    Volume<double> vox(dims, 0.0);
    const bool rescale = h.scl_slope != 0.0f && std::isfinite(h.scl_slope) && std::isfinite(h.scl_inter);
    const double slope = h.scl_slope, inter = h.scl_inter;
    for (std::size_t n = 0; n < vox.size(); ++n) {
        const double raw = decode_voxel(payload.data() + n * bpv, dt, big);
        vox[n] = rescale && !(slope == 1.0 && inter == 0.0) ? raw * slope + inter : raw;
    }
    Geometry geom;
    geom.spacing = h.spacing();
    geom.affine = h.affine();
    file.grid = VoxelGrid(std::move(vox), geom);
    return file;
}

VoxelGrid read_volume(const std::filesystem::path& path) { return read(path).grid; }

BinaryMask read_mask(const std::filesystem::path& path) {
    const VoxelGrid g = read_volume(path);
    BinaryMask m(g.dims());
    for (std::size_t n = 0; n < g.voxels().size(); ++n)
        if (g[n] != 0.0) m.set(n);
    return m;
}

LabelMask read_labels(const std::filesystem::path& path) {
    const VoxelGrid g = read_volume(path);
    Volume<LabelMask::Label> labels(g.dims(), 0);
    std::map<LabelMask::Label, std::string> names;
    for (std::size_t n = 0; n < labels.size(); ++n) {
        const double v = g[n];
        if (v < 0.0 || v > 65535.0 || v != std::floor(v))
            throw FormatError("label volume holds a non-integer or out-of-range value");
        const auto id = static_cast<LabelMask::Label>(v);
        labels[n] = id;
        if (id != 0 && !names.contains(id)) names[id] = "label_" + std::to_string(id);
    }
    return LabelMask(std::move(labels), std::move(names));
}

namespace {

void encode_voxel(std::uint8_t* p, double v, Datatype dt) {
    switch (dt) {
        case Datatype::uint8:
            if (v < 0.0 || v > 255.0 || v != std::floor(v)) throw DomainError("value not representable as uint8");
            p[0] = static_cast<std::uint8_t>(v);
            return;
        case Datatype::int16: {
            if (v < -32768.0 || v > 32767.0 || v != std::floor(v)) throw DomainError("value not representable as int16");
            const auto u = std::bit_cast<std::uint16_t>(static_cast<std::int16_t>(v));
            p[0] = static_cast<std::uint8_t>(u);
            p[1] = static_cast<std::uint8_t>(u >> 8);
            return;
        }
        case Datatype::float32: {
            const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(v));
            for (int b = 0; b < 4; ++b) p[b] = static_cast<std::uint8_t>(u >> (8 * b));
            return;
        }
        case Datatype::float64: {
            const auto u = std::bit_cast<std::uint64_t>(v);
            for (int b = 0; b < 8; ++b) p[b] = static_cast<std::uint8_t>(u >> (8 * b));
            return;
        }
    }
}

Header make_header(const Dims& dims, const Geometry& geom, Datatype dt, std::size_t extension_bytes) {
    Header h;
    h.dim = {3, static_cast<std::int16_t>(dims.nx), static_cast<std::int16_t>(dims.ny),
             static_cast<std::int16_t>(dims.nz), 1, 1, 1, 1};
    h.datatype = static_cast<std::int16_t>(dt);
    h.bitpix = static_cast<std::int16_t>(8 * bytes_per_voxel(dt));
    h.pixdim = {1.0f, static_cast<float>(geom.spacing.x()), static_cast<float>(geom.spacing.y()),
                static_cast<float>(geom.spacing.z()), 0.0f, 0.0f, 0.0f, 0.0f};
    h.vox_offset = static_cast<float>(kHeaderSize + std::max<std::size_t>(4, extension_bytes));
    h.scl_slope = 1.0f;
    h.scl_inter = 0.0f;
    h.sform_code = 1;
    for (int c = 0; c < 4; ++c) {
        h.srow_x[c] = static_cast<float>(geom.affine(0, c));
        h.srow_y[c] = static_cast<float>(geom.affine(1, c));
        h.srow_z[c] = static_cast<float>(geom.affine(2, c));
    }
    return h;
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    const bool gz = ends_with(path.string(), ".gz");
    // zlib writes mtime 0 in the gzip header, so output bytes are reproducible.
    GzHandle f(gzopen(path.c_str(), gz ? "wb6" : "wbT"));
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    std::size_t done = 0;
    while (done < bytes.size()) {
        const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
        const int put = gzwrite(f.get(), bytes.data() + done, chunk);
        if (put <= 0) throw IoError("write failed for " + path.string());
        done += static_cast<std::size_t>(put);
    }
    if (gzclose(f.release()) != Z_OK) throw IoError("close failed for " + path.string());
}

void write_payload(const std::filesystem::path& path, const Dims& dims, const Geometry& geom, Datatype dt,
                   const std::vector<std::uint8_t>& extension, auto&& value_at) {
    if (dims.nx > 32767 || dims.ny > 32767 || dims.nz > 32767) throw DomainError("dims exceed NIfTI-1 limits");
    geom.validate();
    const Header h = make_header(dims, geom, dt, extension.size());
    std::vector<std::uint8_t> bytes = serialize_header(h);
    if (extension.empty())
        bytes.insert(bytes.end(), 4, 0);
    else
        bytes.insert(bytes.end(), extension.begin(), extension.end());
    const std::size_t bpv = static_cast<std::size_t>(bytes_per_voxel(dt));
    const std::size_t start = bytes.size();
    bytes.resize(start + dims.count() * bpv);
    for (std::size_t n = 0; n < dims.count(); ++n) encode_voxel(bytes.data() + start + n * bpv, value_at(n), dt);
    write_bytes(path, bytes);
}

}  // namespace

void write_volume(const std::filesystem::path& path, const VoxelGrid& grid, Datatype datatype,
                  const std::vector<std::uint8_t>& extension) {
    write_payload(path, grid.dims(), grid.geometry(), datatype, extension, [&](std::size_t n) { return grid[n]; });
}

void write_mask(const std::filesystem::path& path, const BinaryMask& mask, const Geometry& geometry) {
    write_payload(path, mask.dims(), geometry, Datatype::uint8, {},
                  [&](std::size_t n) { return mask[n] ? 1.0 : 0.0; });
}

void write_labels(const std::filesystem::path& path, const LabelMask& labels, const Geometry& geometry) {
    write_payload(path, labels.dims(), geometry, Datatype::int16, {},
                  [&](std::size_t n) { return static_cast<double>(labels[n]); });
}

}  // namespace petseg::nifti
