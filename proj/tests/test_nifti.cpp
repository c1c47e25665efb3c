#include "petseg/nifti.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

using namespace petseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
    const fs::path p = fs::temp_directory_path() / "petseg_nifti_tests";
    fs::create_directories(p);
    return p;
}

// Hand-assembled header, independent of the library serializer.
struct RawHeader {
    std::vector<std::uint8_t> bytes = std::vector<std::uint8_t>(352, 0);
    bool big = false;

    template <typename T>
    void put(std::size_t off, T v) {
        std::uint8_t raw[sizeof(T)];
        std::memcpy(raw, &v, sizeof(T));  // host is little-endian
        for (std::size_t b = 0; b < sizeof(T); ++b) bytes[off + b] = big ? raw[sizeof(T) - 1 - b] : raw[b];
    }

    static RawHeader float_cube(int n, bool big_endian = false) {
        RawHeader h;
        h.big = big_endian;
        h.put<std::int32_t>(0, 348);
        const std::int16_t dim[8] = {3, static_cast<std::int16_t>(n), static_cast<std::int16_t>(n),
                                     static_cast<std::int16_t>(n), 1, 1, 1, 1};
        for (int i = 0; i < 8; ++i) h.put<std::int16_t>(40 + 2 * i, dim[i]);
        h.put<std::int16_t>(70, 16);
        h.put<std::int16_t>(72, 32);
        for (int i = 0; i < 8; ++i) h.put<float>(76 + 4 * i, 1.0f);
        h.put<float>(108, 352.0f);
        h.put<float>(112, 1.0f);
        std::memcpy(h.bytes.data() + 344, "n+1\0", 4);
        return h;
    }
};

void write_file(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void append_float(std::vector<std::uint8_t>& out, float v, bool big) {
    std::uint8_t raw[4];
    std::memcpy(raw, &v, 4);
    for (int b = 0; b < 4; ++b) out.push_back(big ? raw[3 - b] : raw[b]);
}

}  // namespace

TEST_CASE("reads a constructed float32 fixture") {
    for (const bool big : {false, true}) {
        RawHeader h = RawHeader::float_cube(4, big);
        std::vector<std::uint8_t> bytes = h.bytes;
        for (int v = 0; v < 64; ++v) append_float(bytes, static_cast<float>(v), big);
        const fs::path p = scratch_dir() / (big ? "fixture_be.nii" : "fixture_le.nii");
        write_file(p, bytes);

        const VoxelGrid g = nifti::read_volume(p);
        CHECK(g.dims() == Dims::cube(4));
        CHECK(g[57] == 57.0);
        CHECK(g(1, 2, 3) == 57.0);
        CHECK(g.spacing().isApprox(Eigen::Vector3d::Ones()));
    }
}

TEST_CASE("applies scl_slope and scl_inter") {
    RawHeader h = RawHeader::float_cube(1);
    h.put<float>(112, 2.0f);
    h.put<float>(116, 1.0f);
    std::vector<std::uint8_t> bytes = h.bytes;
    append_float(bytes, 3.0f, false);
    const fs::path p = scratch_dir() / "rescale.nii";
    write_file(p, bytes);
    CHECK(nifti::read_volume(p)[0] == 7.0);
}

TEST_CASE("rejects bad headers before the payload") {
    const fs::path p = scratch_dir() / "bad.nii";

    RawHeader bad_magic = RawHeader::float_cube(4);
    std::memcpy(bad_magic.bytes.data() + 344, "bad!", 4);
    write_file(p, bad_magic.bytes);  // no payload at all
    CHECK_THROWS_AS(nifti::read_volume(p), nifti::FormatError);

    RawHeader bad_size = RawHeader::float_cube(4);
    bad_size.put<std::int32_t>(0, 123);
    write_file(p, bad_size.bytes);
    CHECK_THROWS_AS(nifti::read_volume(p), nifti::FormatError);

    RawHeader v2 = RawHeader::float_cube(4);
    v2.put<std::int32_t>(0, 540);
    write_file(p, v2.bytes);
    CHECK_THROWS_AS(nifti::read_volume(p), nifti::UnsupportedError);

    RawHeader dtype = RawHeader::float_cube(4);
    dtype.put<std::int16_t>(70, 512);
    write_file(p, dtype.bytes);
    CHECK_THROWS_AS(nifti::read_volume(p), nifti::UnsupportedError);

    RawHeader truncated = RawHeader::float_cube(4);
    std::vector<std::uint8_t> bytes = truncated.bytes;
    for (int v = 0; v < 10; ++v) append_float(bytes, 1.0f, false);
    write_file(p, bytes);
    CHECK_THROWS_AS(nifti::read_volume(p), nifti::LengthError);

    CHECK_THROWS_AS(nifti::read_volume(scratch_dir() / "missing.nii"), nifti::IoError);
}

TEST_CASE("fuzzed sizeof_hdr and magic are always rejected") {
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<int> byte(0, 255);
    const fs::path p = scratch_dir() / "fuzz.nii";
    for (int t = 0; t < 200; ++t) {
        RawHeader h = RawHeader::float_cube(4);
        if (t % 2 == 0) {
            std::int32_t size = 348;
            while (size == 348 || size == 540 || size == 0x5C010000 || size == 0x1C020000)
                size = static_cast<std::int32_t>(rng());
            h.put<std::int32_t>(0, size);
        } else {
            char m[4] = {'n', '+', '1', '\0'};
            while ((std::memcmp(m, "n+1\0", 4) == 0) || (std::memcmp(m, "ni1\0", 4) == 0))
                for (char& c : m) c = static_cast<char>(byte(rng));
            std::memcpy(h.bytes.data() + 344, m, 4);
        }
        write_file(p, h.bytes);
        CHECK_THROWS_AS(nifti::read_volume(p), nifti::FormatError);
    }
}

TEST_CASE("mask round trips and header inspection") {
    std::mt19937_64 rng(4);
    const Geometry geom = Geometry::from_spacing({2, 2, 3});
    for (int t = 0; t < 10; ++t) {
        const BinaryMask m = oracle::random_mask(rng, Dims::cube(8), 0.5);
        const fs::path p = scratch_dir() / "mask.nii";
        nifti::write_mask(p, m, geom);
        CHECK(nifti::read_mask(p) == m);
    }
    const fs::path p = scratch_dir() / "empty.nii.gz";
    nifti::write_mask(p, BinaryMask(Dims::cube(8)), geom);
    CHECK(nifti::read_mask(p) == BinaryMask(Dims::cube(8)));

    const nifti::File f = nifti::read(p);
    CHECK(f.header.datatype == 2);
    CHECK(f.header.pixdim[1] == 2.0f);
    CHECK(f.header.pixdim[2] == 2.0f);
    CHECK(f.header.pixdim[3] == 3.0f);
    CHECK(f.grid.affine().isApprox(geom.affine));

    // Compressed output really is gzip.
    const auto raw = read_file(p);
    REQUIRE(raw.size() > 2);
    CHECK(raw[0] == 0x1f);
    CHECK(raw[1] == 0x8b);
}

TEST_CASE("every supported datatype round trips bit-exactly") {
    std::mt19937_64 rng(12);
    const nifti::Datatype types[] = {nifti::Datatype::uint8, nifti::Datatype::int16, nifti::Datatype::float32,
                                     nifti::Datatype::float64};
    for (const auto dt : types) {
        const Dims d{5, 3, 4};
        Volume<double> v(d);
        for (double& x : v) {
            switch (dt) {
                case nifti::Datatype::uint8: x = static_cast<double>(rng() % 256); break;
                case nifti::Datatype::int16: x = static_cast<double>(static_cast<int>(rng() % 65536) - 32768); break;
                case nifti::Datatype::float32: x = static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(rng() % 0x7f000000))); break;
                case nifti::Datatype::float64: x = std::bit_cast<double>(rng() % 0x7fe0000000000000ull); break;
            }
        }
        Geometry geom = Geometry::from_spacing({1.5, 0.75, 2.5});
        geom.affine(0, 3) = -90.0;
        geom.affine(1, 3) = 126.0;
        const VoxelGrid grid(v, geom);
        const fs::path p = scratch_dir() / "roundtrip.nii.gz";
        nifti::write_volume(p, grid, dt);
        const VoxelGrid back = nifti::read_volume(p);
        CHECK(back.voxels() == grid.voxels());
        CHECK((back.affine() - grid.affine()).cwiseAbs().maxCoeff() <= 1e-6);
        CHECK((back.spacing() - grid.spacing()).cwiseAbs().maxCoeff() <= 1e-6);
    }
}

TEST_CASE("integer datatypes refuse unrepresentable values") {
    Volume<double> v(Dims::cube(2), 0.5);
    const VoxelGrid g(v, Geometry{});
    CHECK_THROWS_AS(nifti::write_volume(scratch_dir() / "x.nii", g, nifti::Datatype::uint8), DomainError);
    CHECK_THROWS_AS(nifti::write_volume(fs::path("/nonexistent/dir/x.nii"), VoxelGrid(Volume<double>(Dims::cube(1)), Geometry{})),
                    nifti::IoError);
}

TEST_CASE("affine falls back from sform to qform to pixdim") {
    nifti::Header h;
    h.dim = {3, 2, 2, 2, 1, 1, 1, 1};
    h.pixdim = {1, 2, 3, 4, 0, 0, 0, 0};
    CHECK(h.affine().diagonal().head<3>().isApprox(Eigen::Vector3d(2, 3, 4)));

    h.qform_code = 1;
    h.qoffset_x = 5;
    // 180 degrees about z: b=0, c=0, d=1.
    h.quatern_d = 1.0f;
    Eigen::Matrix4d q = h.affine();
    CHECK(q(0, 0) == doctest::Approx(-2.0));
    CHECK(q(1, 1) == doctest::Approx(-3.0));
    CHECK(q(2, 2) == doctest::Approx(4.0));
    CHECK(q(0, 3) == doctest::Approx(5.0));

    h.sform_code = 2;
    h.srow_x = {1, 0, 0, 7};
    h.srow_y = {0, 1, 0, 8};
    h.srow_z = {0, 0, 1, 9};
    CHECK(h.affine()(2, 3) == 9.0);

    const auto bytes = nifti::serialize_header(h);
    const nifti::Header back = nifti::parse_header(bytes.data(), bytes.size());
    CHECK(back.affine().isApprox(h.affine()));
    CHECK(back.qform_affine().isApprox(h.qform_affine()));
}

TEST_CASE("extensions and two-file pairs") {
    std::vector<std::uint8_t> ext(4 + 16, 0);
    ext[0] = 1;
    ext[4] = 16;  // esize
    ext[8] = 6;   // ecode: comment
    std::memcpy(ext.data() + 12, "hello!!!", 8);
    const VoxelGrid g(Volume<double>(Dims::cube(2), 3.0), Geometry{});
    const fs::path p = scratch_dir() / "ext.nii";
    nifti::write_volume(p, g, nifti::Datatype::float32, ext);
    const nifti::File f = nifti::read(p);
    CHECK(f.extension == ext);
    CHECK(f.grid.voxels() == g.voxels());

    RawHeader h = RawHeader::float_cube(2);
    std::memcpy(h.bytes.data() + 344, "ni1\0", 4);
    h.put<float>(108, 0.0f);
    std::vector<std::uint8_t> hdr(h.bytes.begin(), h.bytes.begin() + 348);
    std::vector<std::uint8_t> img;
    for (int v = 0; v < 8; ++v) append_float(img, static_cast<float>(v) * 0.5f, false);
    write_file(scratch_dir() / "pair.hdr", hdr);
    write_file(scratch_dir() / "pair.img", img);
    const VoxelGrid pair = nifti::read_volume(scratch_dir() / "pair.hdr");
    CHECK(pair[7] == 3.5);
}

TEST_CASE("label volumes") {
    Volume<LabelMask::Label> v(Dims::cube(3), 0);
    v[0] = 1;
    v[26] = 12;
    const LabelMask lm(v, {{1, "liver"}, {12, "lesion"}});
    const fs::path p = scratch_dir() / "labels.nii.gz";
    nifti::write_labels(p, lm, Geometry{});
    const LabelMask back = nifti::read_labels(p);
    CHECK(back.labels() == lm.labels());
    CHECK(back.names().at(12) == "label_12");
}
