#include "petseg/covariance.hpp"
#include "petseg/phantom.hpp"

#include <doctest.h>

#include <random>

using namespace petseg;

namespace {

UptakeMatrix matrix(std::initializer_list<std::vector<double>> cols) {
    UptakeMatrix u;
    const auto n = static_cast<Eigen::Index>(cols.begin()->size());
    u.values.resize(n, static_cast<Eigen::Index>(cols.size()));
    Eigen::Index c = 0;
    for (const auto& col : cols) {
        for (Eigen::Index r = 0; r < n; ++r) u.values(r, c) = col[static_cast<std::size_t>(r)];
        u.roi_names.push_back("roi" + std::to_string(c++));
    }
    return u;
}

// Textbook two-pass Pearson.
double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= x.size();
    my /= y.size();
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST_CASE("roi_mean") {
    Volume<double> v(Dims{3, 1, 1});
    v[0] = 1;
    v[1] = 2;
    v[2] = 3;
    const VoxelGrid g(v, Geometry{});
    CHECK(roi_mean(g, BinaryMask(g.dims(), true)) == 2.0);
    const VoxelGrid c(Volume<double>(Dims::cube(4), 7.25), Geometry{});
    BinaryMask some(c.dims());
    some.set(1, 2, 3);
    some.set(0, 0, 0);
    CHECK(roi_mean(c, some) == 7.25);
    CHECK_THROWS_AS(roi_mean(c, BinaryMask(c.dims())), DomainError);

    PhantomSpec spec;
    spec.noise_sigma = 0;
    const Phantom ph = generate(spec);
    CHECK(roi_mean(ph.grid, ph.labels.select({1})) == static_cast<double>(static_cast<float>(ph.structures[0].uptake)));
}

TEST_CASE("pearson fixtures") {
    const CovarianceNetwork fx = build_network(matrix({{1, 2, 3}, {1, 2, 4}}));
    CHECK(fx.corr(0, 1) == doctest::Approx(0.981).epsilon(0.001 / 0.981));
    CHECK(fx.corr(0, 1) == doctest::Approx(pearson({1, 2, 3}, {1, 2, 4})).epsilon(1e-12));
    CHECK(fx.corr(0, 1) == fx.corr(1, 0));
    CHECK(fx.corr(0, 0) == 1.0);
    CHECK(fx.corr(1, 1) == 1.0);

    CHECK(build_network(matrix({{1, 5, 2, 8}, {1, 5, 2, 8}})).corr(0, 1) == doctest::Approx(1.0));
    CHECK(build_network(matrix({{1, 5, 2, 8}, {-1, -5, -2, -8}})).corr(0, 1) == doctest::Approx(-1.0));
    CHECK_THROWS_AS(build_network(matrix({{1, 2}, {3, 4}})), InsufficientSubjectsError);
}

TEST_CASE("degenerate ROIs are flagged and never produce NaN") {
    const CovarianceNetwork n = build_network(matrix({{1, 2, 3, 4}, {0.1, 0.1, 0.1, 0.1}, {2, 1, 4, 3}}), 0.0);
    CHECK(n.degenerate == std::vector<bool>{false, true, false});
    CHECK(n.corr.allFinite());
    CHECK(n.corr.row(1).isZero());
    CHECK(n.corr.col(1).isZero());
    for (const Edge& e : n.edges) {
        CHECK(e.roi_a != "roi1");
        CHECK(e.roi_b != "roi1");
    }
    CHECK(n.edges.size() == 1);
}

TEST_CASE("edges are thresholded and sorted") {
    const CovarianceNetwork n =
        build_network(matrix({{1, 2, 3, 4, 5}, {1, 2, 3, 5, 4}, {5, 1, 4, 2, 3}, {2, 2, 1, 5, 4}}), 0.3);
    for (std::size_t e = 0; e < n.edges.size(); ++e) {
        CHECK(std::abs(n.edges[e].r) >= 0.3);
        if (e > 0) CHECK(std::abs(n.edges[e - 1].r) >= std::abs(n.edges[e].r));
    }
    std::size_t expected = 0;
    for (int a = 0; a < 4; ++a)
        for (int b = a + 1; b < 4; ++b) expected += std::abs(n.corr(a, b)) >= 0.3;
    CHECK(n.edges.size() == expected);
}

TEST_CASE("correlations are affine invariant and match the textbook formula") {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> z(0.0, 1.0);
    for (int t = 0; t < 200; ++t) {
        const int n = 3 + static_cast<int>(rng() % 20), m = 2 + static_cast<int>(rng() % 6);
        UptakeMatrix u;
        u.values.resize(n, m);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) u.values(i, j) = 5.0 + z(rng);
        for (int j = 0; j < m; ++j) u.roi_names.push_back("r" + std::to_string(j));
        const CovarianceNetwork base = build_network(u);
        CHECK(base.corr == base.corr.transpose());
        CHECK((base.corr.array().abs() <= 1.0).all());

        std::vector<double> c0(n), c1(n);
        for (int i = 0; i < n; ++i) {
            c0[i] = u.values(i, 0);
            c1[i] = u.values(i, 1);
        }
        CHECK(base.corr(0, 1) == doctest::Approx(pearson(c0, c1)).epsilon(1e-12));

        UptakeMatrix scaled = u;
        const int col = static_cast<int>(rng() % m);
        const double a = std::uniform_real_distribution<double>(-10, 10)(rng);
        const double b = std::uniform_real_distribution<double>(0.1, 10)(rng);
        scaled.values.col(col) = (scaled.values.col(col).array() * b + a).matrix();
        const CovarianceNetwork moved = build_network(scaled);
        CHECK((moved.corr - base.corr).cwiseAbs().maxCoeff() <= 1e-9);
    }
}
