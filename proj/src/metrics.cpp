#include "petseg/metrics.hpp"

#include "petseg/mask_ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

namespace petseg {

double dsc(const BinaryMask& g, const BinaryMask& s) {
    require_same_dims(g.dims(), s.dims(), "dsc");
    const std::size_t vg = mask_volume(g);
    const std::size_t vs = mask_volume(s);
    if (vg + vs == 0) return 1.0;
    return 2.0 * static_cast<double>(intersection_volume(g, s)) / static_cast<double>(vg + vs);
}

BinaryMask boundary_of(const BinaryMask& s) {
    const Dims& d = s.dims();
    BinaryMask out(d);
    for (int k = 0; k < d.nz; ++k)
        for (int j = 0; j < d.ny; ++j)
            for (int i = 0; i < d.nx; ++i) {
                if (!s(i, j, k)) continue;
                const bool interior = s.get_or_false(i - 1, j, k) && s.get_or_false(i + 1, j, k) &&
                                      s.get_or_false(i, j - 1, k) && s.get_or_false(i, j + 1, k) &&
                                      s.get_or_false(i, j, k - 1) && s.get_or_false(i, j, k + 1);
                if (!interior) out.set(i, j, k);
            }
    return out;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas w*(q - x)^2 + f(x) over sites with finite f.
struct Envelope1D {
    std::vector<int> sites;
    std::vector<double> bounds;
    std::vector<double> line;

    explicit Envelope1D(int n) : sites(n), bounds(n + 1), line(n) {}

    void run(double* values, int n, std::ptrdiff_t stride, double w) {
        for (int q = 0; q < n; ++q) line[q] = values[q * stride];

        int k = -1;
        for (int q = 0; q < n; ++q) {
            const double fq = line[q];
            if (fq == kInf) continue;
            double s = -kInf;
            while (k >= 0) {
                const int v = sites[k];
                s = ((fq + w * q * q) - (line[v] + w * v * v)) / (2.0 * w * (q - v));
                if (s <= bounds[k])
                    --k;
                else
                    break;
            }
            ++k;
            sites[k] = q;
            bounds[k] = k == 0 ? -kInf : s;
            bounds[k + 1] = kInf;
        }
        if (k < 0) {
            for (int q = 0; q < n; ++q) values[q * stride] = kInf;
            return;
        }
        int j = 0;
        for (int q = 0; q < n; ++q) {
            while (bounds[j + 1] < q) ++j;
            const double dq = q - sites[j];
            values[q * stride] = w * dq * dq + line[sites[j]];
        }
    }
};

}  // namespace

Volume<double> squared_distance_transform(const BinaryMask& mask, const Eigen::Vector3d& spacing) {
    if (mask_empty(mask)) throw DomainError("distance_transform of an empty mask");
    const Dims& d = mask.dims();
    Volume<double> out(d, kInf);
    for (std::size_t n = 0; n < mask.size(); ++n)
        if (mask[n]) out[n] = 0.0;

    double* base = out.data().data();
    const std::ptrdiff_t sx = 1;
    const std::ptrdiff_t sy = d.nx;
    const std::ptrdiff_t sz = static_cast<std::ptrdiff_t>(d.nx) * d.ny;

    {
        Envelope1D env(d.nx);
        for (int k = 0; k < d.nz; ++k)
            for (int j = 0; j < d.ny; ++j) env.run(base + j * sy + k * sz, d.nx, sx, spacing.x() * spacing.x());
    }
    {
        Envelope1D env(d.ny);
        for (int k = 0; k < d.nz; ++k)
            for (int i = 0; i < d.nx; ++i) env.run(base + i * sx + k * sz, d.ny, sy, spacing.y() * spacing.y());
    }
    {
        Envelope1D env(d.nz);
        for (int j = 0; j < d.ny; ++j)
            for (int i = 0; i < d.nx; ++i) env.run(base + i * sx + j * sy, d.nz, sz, spacing.z() * spacing.z());
    }
    return out;
}

Volume<double> distance_transform(const BinaryMask& mask, const Eigen::Vector3d& spacing) {
    Volume<double> out = squared_distance_transform(mask, spacing);
    for (double& v : out) v = std::sqrt(v);
    return out;
}

BoundaryBand boundary_band(const BinaryMask& s, double tau, const Eigen::Vector3d& spacing) {
    BoundaryBand bb{boundary_of(s), BinaryMask(s.dims())};
    if (mask_empty(bb.boundary)) return bb;
    const Volume<double> d2 = squared_distance_transform(bb.boundary, spacing);
    const double tau2 = tau * tau;
    for (std::size_t n = 0; n < d2.size(); ++n)
        if (d2[n] <= tau2) bb.band.set(n);
    return bb;
}

double nsd(const BinaryMask& g, const BinaryMask& s, double tau, const Eigen::Vector3d& spacing) {
    require_same_dims(g.dims(), s.dims(), "nsd");
    if (!(tau > 0.0)) throw DomainError("nsd tolerance must be positive");
    const bool g_empty = mask_empty(g);
    const bool s_empty = mask_empty(s);
    if (g_empty && s_empty) return 1.0;
    if (g_empty || s_empty) return 0.0;

    const BoundaryBand bg = boundary_band(g, tau, spacing);
    const BoundaryBand bs = boundary_band(s, tau, spacing);
    const std::size_t s_in_g = intersection_volume(bs.boundary, bg.band);
    const std::size_t g_in_s = intersection_volume(bg.boundary, bs.band);
    const std::size_t total = mask_volume(bs.boundary) + mask_volume(bg.boundary);
    return static_cast<double>(s_in_g + g_in_s) / static_cast<double>(total);
}

MetricResult evaluate_masks(const BinaryMask& g, const BinaryMask& s, double tau, const Eigen::Vector3d& spacing) {
    MetricResult r;
    r.dsc = dsc(g, s);
    r.nsd = nsd(g, s, tau, spacing);
    r.tau = tau;
    return r;
}

namespace {

class DisjointSet {
public:
    int make() {
        parent_.push_back(static_cast<int>(parent_.size()));
        return parent_.back();
    }
    int find(int x) {
        int root = x;
        while (parent_[root] != root) root = parent_[root];
        while (parent_[x] != root) {
            const int next = parent_[x];
            parent_[x] = root;
            x = next;
        }
        return root;
    }
    void unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        // Keep the earlier-created label as root.
        if (b < a) std::swap(a, b);
        parent_[b] = a;
    }

private:
    std::vector<int> parent_;
};

std::vector<Index3> backward_offsets(Connectivity c) {
    std::vector<Index3> offs;
    for (int dz = -1; dz <= 0; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                // Neighbours visited earlier in raster order.
                if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
                const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
                if (c == Connectivity::six && manhattan != 1) continue;
                offs.emplace_back(dx, dy, dz);
            }
    return offs;
}

}  // namespace

Components connected_components(const BinaryMask& mask, Connectivity connectivity) {
    const Dims& d = mask.dims();
    Components out{Volume<std::int32_t>(d, 0), 0, {}};
    const auto offsets = backward_offsets(connectivity);

    DisjointSet sets;
    Volume<std::int32_t> provisional(d, -1);
    for (int k = 0; k < d.nz; ++k)
        for (int j = 0; j < d.ny; ++j)
            for (int i = 0; i < d.nx; ++i) {
                if (!mask(i, j, k)) continue;
                int label = -1;
                for (const Index3& o : offsets) {
                    const int x = i + o.x(), y = j + o.y(), z = k + o.z();
                    if (!d.contains(x, y, z)) continue;
                    const int nb = provisional(x, y, z);
                    if (nb < 0) continue;
                    if (label < 0)
                        label = nb;
                    else
                        sets.unite(label, nb);
                }
                provisional(i, j, k) = label < 0 ? sets.make() : label;
            }

    std::vector<int> final_label;
    for (std::size_t n = 0; n < provisional.size(); ++n) {
        const int p = provisional[n];
        if (p < 0) continue;
        const int root = sets.find(p);
        if (static_cast<std::size_t>(root) >= final_label.size()) final_label.resize(root + 1, 0);
        if (final_label[root] == 0) {
            final_label[root] = ++out.count;
            out.sizes.push_back(0);
        }
        const int lbl = final_label[root];
        out.labels[n] = lbl;
        ++out.sizes[lbl - 1];
    }
    return out;
}

BinaryMask Components::component(int label) const {
    BinaryMask out(labels.dims());
    for (std::size_t n = 0; n < labels.size(); ++n)
        if (labels[n] == label) out.set(n);
    return out;
}

LabelMask Components::to_label_mask(const std::string& prefix) const {
    if (count > std::numeric_limits<LabelMask::Label>::max())
        throw DomainError("too many components for a 16-bit label mask");
    Volume<LabelMask::Label> vol(labels.dims(), 0);
    for (std::size_t n = 0; n < labels.size(); ++n) vol[n] = static_cast<LabelMask::Label>(labels[n]);
    std::map<LabelMask::Label, std::string> names;
    for (int c = 1; c <= count; ++c) names[static_cast<LabelMask::Label>(c)] = prefix + "_" + std::to_string(c);
    return LabelMask(std::move(vol), std::move(names));
}

double quantile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw DomainError("quantile of an empty list");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

AggregateStat aggregate(std::span<const double> values) {
    if (values.empty()) throw DomainError("aggregate of an empty list");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    return {quantile_sorted(sorted, 0.5), quantile_sorted(sorted, 0.25), quantile_sorted(sorted, 0.75),
            sorted.size()};
}

std::string format_aggregate(const AggregateStat& stat, int precision) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%.*f (%.*f–%.*f)", precision, stat.median, precision, stat.q1, precision,
                  stat.q3);
    return buf;
}

}  // namespace petseg
