#include "petseg/mask_ops.hpp"
#include "petseg/prompts.hpp"
#include "petseg/volume.hpp"

#include "oracles.hpp"

#include <doctest.h>

using namespace petseg;

TEST_CASE("linear_index follows x-fastest order") {
    const Dims d = Dims::cube(4);
    CHECK(linear_index(0, 0, 0, d) == 0);
    CHECK(linear_index(1, 2, 3, d) == 57);
    CHECK(linear_index(3, 3, 3, d) == 63);
    CHECK_THROWS_AS(linear_index(4, 0, 0, d), BoundsError);
    CHECK_THROWS_AS(linear_index(0, -1, 0, d), BoundsError);
}

TEST_CASE("linear_index is a bijection on small dims") {
    for (const Dims d : {Dims{1, 1, 1}, Dims{3, 2, 5}, Dims{4, 4, 4}, Dims{7, 1, 3}}) {
        std::vector<char> hit(d.count(), 0);
        for (int k = 0; k < d.nz; ++k)
            for (int j = 0; j < d.ny; ++j)
                for (int i = 0; i < d.nx; ++i) {
                    const std::size_t n = linear_index(i, j, k, d);
                    REQUIRE(n < d.count());
                    CHECK(hit[n] == 0);
                    hit[n] = 1;
                    CHECK(unravel_index(n, d) == Index3(i, j, k));
                }
    }
}

TEST_CASE("voxel_to_world") {
    CHECK(voxel_to_world(Eigen::Matrix4d::Identity(), Index3(5, 6, 7)).isApprox(Eigen::Vector3d(5, 6, 7)));
    const Geometry g = Geometry::from_spacing({2, 2, 3});
    CHECK(voxel_to_world(g.affine, Index3(1, 1, 1)).isApprox(Eigen::Vector3d(2, 2, 3)));
    Eigen::Matrix4d t = Eigen::Matrix4d::Identity();
    t(0, 3) = 10;
    CHECK(voxel_to_world(t, Index3(0, 0, 0)).isApprox(Eigen::Vector3d(10, 0, 0)));
}

TEST_CASE("geometry validation") {
    CHECK_THROWS_AS(Geometry::from_spacing({0, 1, 1}), DomainError);
    Geometry g;
    g.affine(2, 2) = 0.0;
    CHECK_THROWS_AS(g.validate(), DomainError);
    CHECK_THROWS_AS(Volume<float>(Dims{0, 1, 1}), ShapeError);
    CHECK_THROWS_AS(Volume<float>(Dims{2, 2, 2}, std::vector<float>(7)), ShapeError);
}

TEST_CASE("mask_difference") {
    const Dims d = Dims::cube(4);
    BinaryMask a(d), b(d);
    a.set(0, 0, 0);
    a.set(1, 1, 1);
    b.set(1, 1, 1);
    CHECK(mask_empty(mask_difference(a, a)));
    CHECK(mask_difference(BinaryMask(d, true), BinaryMask(d)) == BinaryMask(d, true));
    BinaryMask expected(d);
    expected.set(0, 0, 0);
    CHECK(mask_difference(a, b) == expected);
    CHECK_THROWS_AS(mask_difference(a, BinaryMask(Dims::cube(3))), ShapeError);
}

TEST_CASE("mask_volume") {
    CHECK(mask_volume(BinaryMask(Dims::cube(4))) == 0);
    CHECK(mask_volume(BinaryMask(Dims::cube(4), true)) == 64);
    BinaryMask cube(Dims::cube(4));
    for (int k = 1; k < 3; ++k)
        for (int j = 1; j < 3; ++j)
            for (int i = 1; i < 3; ++i) cube.set(i, j, k);
    CHECK(mask_volume(cube) == 8);
}

TEST_CASE("mask algebra identities on random masks") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const Dims d = oracle::random_dims(rng, 1, 8);
        const BinaryMask a = oracle::random_mask(rng, d, 0.4);
        const BinaryMask b = oracle::random_mask(rng, d, 0.5);
        const BinaryMask diff = mask_difference(a, b);
        const BinaryMask inter = mask_intersection(a, b);
        CHECK(mask_empty(mask_intersection(diff, b)));
        CHECK(mask_union(diff, inter) == a);
        CHECK(mask_volume(diff) + mask_volume(inter) == mask_volume(a));
    }
}

TEST_CASE("label mask requires names for nonzero labels") {
    Volume<LabelMask::Label> v(Dims::cube(2), 0);
    v[3] = 2;
    CHECK_THROWS_AS(LabelMask(v, {{1, "liver"}}), DomainError);
    const LabelMask ok(v, {{2, "kidney"}});
    CHECK(mask_volume(ok.select({2})) == 1);
    CHECK(mask_volume(ok.select({1})) == 0);
}

TEST_CASE("prompt set ordering and uniqueness") {
    PromptSet ps;
    ps.add({Index3(1, 1, 1), Polarity::positive, 0});
    ps.add({Index3(1, 1, 1), Polarity::negative, 1});
    CHECK_THROWS(ps.add({Index3(1, 1, 1), Polarity::positive, 2}));
    CHECK_THROWS(ps.add({Index3(2, 1, 1), Polarity::positive, 0}));
    ps.add({Index3(2, 1, 1), Polarity::positive, 1});
    CHECK(ps.size() == 3);
    CHECK(ps.max_iteration() == 1);
    CHECK(ps.count(Polarity::positive) == 2);
    CHECK(parse_polarity(to_string(Polarity::negative)) == Polarity::negative);
}
