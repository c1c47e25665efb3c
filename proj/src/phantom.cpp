#include "petseg/phantom.hpp"

#include "petseg/nifti.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace petseg {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Stream ids.
constexpr std::uint64_t kNoise = 1;
constexpr std::uint64_t kCount = 2;
constexpr std::uint64_t kStructureBase = 1000;

}  // namespace

std::uint64_t CounterRng::bits(std::uint64_t stream, std::uint64_t counter) const {
    return mix(mix(mix(seed_ + kGolden) ^ (stream + kGolden)) ^ (counter * kGolden + 1));
}

double CounterRng::uniform(std::uint64_t stream, std::uint64_t counter) const {
    return static_cast<double>(bits(stream, counter) >> 11) * 0x1.0p-53;
}

double CounterRng::normal(std::uint64_t stream, std::uint64_t counter) const {
    const double u1 = 1.0 - uniform(stream, 2 * counter);  // (0, 1]
    const double u2 = uniform(stream, 2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

void PhantomSpec::validate() const {
    if (dims.nx < 16 || dims.ny < 16 || dims.nz < 16) throw DomainError("phantom dims must be at least 16^3");
    if (n_organs < 0 || n_lesions < 0) throw DomainError("structure counts must be non-negative");
    if (n_organs + n_lesions > 65535) throw DomainError("too many structures for 16-bit labels");
    if (!(noise_sigma >= 0.0)) throw DomainError("noise_sigma must be >= 0");
    if (!(background_suv >= 0.0)) throw DomainError("background_suv must be >= 0");
    // Keeps every organ voxel above half the seed value, so region growing from the centre reaches it all.
    if (!(organ_gradient >= 0.0 && organ_gradient <= 0.3)) throw DomainError("organ_gradient must be in [0, 0.3]");
    if (!(organ_radius_min >= 1.0 && organ_radius_min <= organ_radius_max))
        throw DomainError("bad organ radius range");
    if (!(lesion_radius_min >= 1.0 && lesion_radius_min <= lesion_radius_max))
        throw DomainError("bad lesion radius range");
    if (!(organ_uptake_min > 2.0 && organ_uptake_min <= organ_uptake_max)) throw DomainError("bad organ uptake range");
    if (!(lesion_uptake_min > 2.0 && lesion_uptake_min <= lesion_uptake_max))
        throw DomainError("bad lesion uptake range");
    if (max_attempts < 1) throw DomainError("max_attempts must be >= 1");
    if (spacing.minCoeff() <= 0.0 || !spacing.allFinite()) throw DomainError("spacing must be positive");
}

Phantom generate(const PhantomSpec& spec) {
    spec.validate();
    const CounterRng rng(spec.seed);
    const Dims& d = spec.dims;
    const double min_dim = std::min({d.nx, d.ny, d.nz});
    // Radii shrink on small grids so several structures still fit with a one-voxel margin.
    const double room = ((min_dim - 3.0) / 2.0 - 0.5) / 2.0;

    Phantom ph;
    ph.labels = LabelMask(d);
    Volume<double> values(d, spec.background_suv);
    Volume<std::uint8_t> blocked(d, 0);  // occupied voxels and their 26-neighbours
    const double noise_floor = spec.background_suv + 2.0 * spec.noise_sigma;

    const int total = spec.n_organs + spec.n_lesions;
    for (int s = 0; s < total; ++s) {
        const bool lesion = s >= spec.n_organs;
        const double rmax = std::min(lesion ? spec.lesion_radius_max : spec.organ_radius_max, room);
        const double rmin = std::min(lesion ? spec.lesion_radius_min : spec.organ_radius_min, rmax);
        const std::uint64_t stream = kStructureBase + static_cast<std::uint64_t>(s);

        Structure st;
        st.label = static_cast<LabelMask::Label>(s + 1);
        st.lesion = lesion;
        st.name = lesion ? "lesion_" + std::to_string(s - spec.n_organs + 1) : "organ_" + std::to_string(s + 1);

        std::vector<std::size_t> voxels;
        bool placed = false;
        for (int attempt = 0; attempt < spec.max_attempts && !placed; ++attempt) {
            std::uint64_t c = static_cast<std::uint64_t>(attempt) * 16;
            if (lesion) {
                st.radii.setConstant(rng.uniform(stream, c++, rmin, rmax));
            } else {
                for (int a = 0; a < 3; ++a) st.radii[a] = rng.uniform(stream, c++, rmin, rmax);
            }
            for (int a = 0; a < 3; ++a) {
                const double lo = st.radii[a] + 1.0;
                const double hi = d[a] - 2.0 - st.radii[a];
                st.center[a] = rng.uniform(stream, c++, lo, hi);
            }

            voxels.clear();
            bool clash = false;
            Index3 lo_box, hi_box;
            for (int a = 0; a < 3; ++a) {
                lo_box[a] = std::max(0, static_cast<int>(std::floor(st.center[a] - st.radii[a])));
                hi_box[a] = std::min(d[a] - 1, static_cast<int>(std::ceil(st.center[a] + st.radii[a])));
            }
            for (int k = lo_box.z(); k <= hi_box.z() && !clash; ++k)
                for (int j = lo_box.y(); j <= hi_box.y() && !clash; ++j)
                    for (int i = lo_box.x(); i <= hi_box.x(); ++i) {
                        const Eigen::Vector3d u = (Eigen::Vector3d(i, j, k) - st.center).cwiseQuotient(st.radii);
                        if (u.squaredNorm() > 1.0) continue;
                        if (blocked(i, j, k)) {
                            clash = true;
                            break;
                        }
                        voxels.push_back(linear_index(i, j, k, d));
                    }
            placed = !clash && !voxels.empty();
        }
        if (!placed)
            throw PlacementError("could not place " + st.name + " after " + std::to_string(spec.max_attempts) +
                                 " attempts");

        // Intensity draws use counters past any placement attempt.
        const std::uint64_t c0 = static_cast<std::uint64_t>(spec.max_attempts) * 16;
        const double lo_up = lesion ? spec.lesion_uptake_min : spec.organ_uptake_min;
        const double hi_up = lesion ? spec.lesion_uptake_max : spec.organ_uptake_max;
        st.uptake = std::max(rng.uniform(stream, c0, lo_up, hi_up) * spec.background_suv, noise_floor + 1.0);

        Eigen::Vector3d dir = Eigen::Vector3d::Zero();
        if (!lesion && spec.organ_gradient > 0.0) {
            for (int a = 0; a < 3; ++a) dir[a] = rng.normal(stream, c0 + 1 + static_cast<std::uint64_t>(a));
            if (dir.norm() < 1e-12) dir = Eigen::Vector3d::UnitX();
            dir.normalize();
        }
        for (std::size_t n : voxels) {
            const Index3 p = unravel_index(n, d);
            const Eigen::Vector3d u = (p.cast<double>() - st.center).cwiseQuotient(st.radii);
            values[n] = st.uptake * (1.0 + spec.organ_gradient * dir.dot(u));
            ph.labels.set(n, st.label);
        }
        for (std::size_t n : voxels) {
            const Index3 p = unravel_index(n, d);
            for (int dk = -1; dk <= 1; ++dk)
                for (int dj = -1; dj <= 1; ++dj)
                    for (int di = -1; di <= 1; ++di) {
                        const Index3 q = p + Index3(di, dj, dk);
                        if (d.contains(q)) blocked(q) = 1;
                    }
        }
        ph.labels.set_name(st.label, st.name);
        ph.structures.push_back(std::move(st));
    }

    if (spec.noise_sigma > 0.0)
        for (std::size_t n = 0; n < values.size(); ++n) values[n] += spec.noise_sigma * rng.normal(kNoise, n);
    for (double& v : values) v = static_cast<double>(static_cast<float>(v));

    ph.grid = VoxelGrid(std::move(values), Geometry::from_spacing(spec.spacing));
    return ph;
}

SuiteKind parse_suite_kind(const std::string& name) {
    if (name == "organs") return SuiteKind::organs;
    if (name == "lesions") return SuiteKind::lesions;
    if (name == "disseminated") return SuiteKind::disseminated;
    throw DomainError("unknown suite '" + name + "' (expected organs, lesions, or disseminated)");
}

std::string to_string(SuiteKind kind) {
    switch (kind) {
        case SuiteKind::organs: return "organs";
        case SuiteKind::lesions: return "lesions";
        case SuiteKind::disseminated: return "disseminated";
    }
    return "unknown";
}

std::vector<SuiteCase> suite(SuiteKind kind, int n_cases, std::uint64_t base_seed, const Dims& dims,
                             const Eigen::Vector3d& spacing) {
    if (n_cases < 1) throw DomainError("a suite needs at least one case");
    std::vector<SuiteCase> out;
    out.reserve(static_cast<std::size_t>(n_cases));
    for (int idx = 0; idx < n_cases; ++idx) {
        SuiteCase sc;
        sc.seed = base_seed + static_cast<std::uint64_t>(idx);
        char id[64];
        std::snprintf(id, sizeof id, "%s_%03d", to_string(kind).c_str(), idx);
        sc.case_id = id;
        PhantomSpec& p = sc.spec;
        p.seed = sc.seed;
        p.dims = dims;
        p.spacing = spacing;
        const CounterRng rng(sc.seed);
        switch (kind) {
            case SuiteKind::organs:
                p.n_organs = 2;
                p.n_lesions = 0;
                p.organ_gradient = 0.3;
                break;
            case SuiteKind::lesions:
                p.n_organs = 1;  // distractor
                p.n_lesions = 1 + static_cast<int>(rng.bits(kCount, 0) % 3);
                break;
            case SuiteKind::disseminated:
                p.n_organs = 0;
                p.n_lesions = 5 + static_cast<int>(rng.bits(kCount, 0) % 8);
                break;
        }
        const int first = kind == SuiteKind::organs ? 1 : p.n_organs + 1;
        const int last = p.n_organs + p.n_lesions;
        for (int l = first; l <= last; ++l) {
            const bool is_lesion = l > p.n_organs;
            const std::string name =
                is_lesion ? "lesion_" + std::to_string(l - p.n_organs) : "organ_" + std::to_string(l);
            sc.targets.push_back(TargetSpec{name, {static_cast<LabelMask::Label>(l)}});
        }
        out.push_back(std::move(sc));
    }
    return out;
}

std::vector<CaseEntry> write_suite(const std::filesystem::path& dir, const std::vector<SuiteCase>& cases) {
    std::filesystem::create_directories(dir);
    std::vector<CaseEntry> entries;
    for (const SuiteCase& sc : cases) {
        const Phantom ph = generate(sc.spec);
        CaseEntry e;
        e.case_id = sc.case_id;
        e.volume = dir / (sc.case_id + "_vol.nii.gz");
        e.labels = dir / (sc.case_id + "_lab.nii.gz");
        e.targets = sc.targets;
        e.seed = sc.seed;
        nifti::write_volume(e.volume, ph.grid, nifti::Datatype::float32);
        nifti::write_labels(e.labels, ph.labels, ph.grid.geometry());
        entries.push_back(std::move(e));
    }
    write_manifest(dir / "manifest.json", entries);
    return entries;
}

}  // namespace petseg
