#include "petseg/covariance.hpp"

#include "petseg/nifti.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace petseg {

void UptakeMatrix::validate() const {
    if (values.rows() < 3)
        throw InsufficientSubjectsError("a covariance network needs at least 3 subjects, got " +
                                        std::to_string(values.rows()));
    if (values.cols() < 2) throw DomainError("a covariance network needs at least 2 ROIs");
    if (static_cast<Eigen::Index>(roi_names.size()) != values.cols()) throw ShapeError("one name per ROI column");
    if (!subjects.empty() && static_cast<Eigen::Index>(subjects.size()) != values.rows())
        throw ShapeError("one id per subject row");
    if (!values.allFinite()) throw DomainError("uptake matrix holds non-finite values");
}

double roi_mean(const VoxelGrid& grid, const BinaryMask& roi) {
    require_same_dims(grid.dims(), roi.dims(), "roi_mean");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t v = 0; v < roi.size(); ++v)
        if (roi[v]) {
            sum += grid[v];
            ++n;
        }
    if (n == 0) throw DomainError("roi_mean over an empty ROI");
    return sum / static_cast<double>(n);
}

CovarianceNetwork build_network(const UptakeMatrix& uptake, double threshold) {
    uptake.validate();
    if (!(threshold >= 0.0) || !std::isfinite(threshold)) throw DomainError("edge threshold must be finite and >= 0");
    const Eigen::Index m = uptake.values.cols();

    const Eigen::RowVectorXd mean = uptake.values.colwise().mean();
    const Eigen::MatrixXd centred = uptake.values.rowwise() - mean;
    const Eigen::RowVectorXd norm = centred.colwise().norm();

    CovarianceNetwork net;
    net.roi_names = uptake.roi_names;
    net.corr = Eigen::MatrixXd::Zero(m, m);
    net.degenerate.resize(static_cast<std::size_t>(m));
    for (Eigen::Index a = 0; a < m; ++a) {
        // Constant series leave rounding noise after centring; measure it against the level.
        const double scale = std::max(std::abs(mean[a]), uptake.values.col(a).cwiseAbs().maxCoeff());
        net.degenerate[a] = norm[a] <= 1e-12 * std::max(scale, 1e-300) * std::sqrt(double(uptake.values.rows()));
        if (!net.degenerate[a]) net.corr(a, a) = 1.0;
    }
    for (Eigen::Index a = 0; a < m; ++a)
        for (Eigen::Index b = a + 1; b < m; ++b) {
            if (net.degenerate[a] || net.degenerate[b]) continue;
            const double r = std::clamp(centred.col(a).dot(centred.col(b)) / (norm[a] * norm[b]), -1.0, 1.0);
            net.corr(a, b) = r;
            net.corr(b, a) = r;
            if (std::abs(r) >= threshold) net.edges.push_back({uptake.roi_names[a], uptake.roi_names[b], r});
        }
    std::stable_sort(net.edges.begin(), net.edges.end(),
                     [](const Edge& x, const Edge& y) { return std::abs(x.r) > std::abs(y.r); });
    return net;
}

UptakeMatrix uptake_from_manifest(const std::vector<CaseEntry>& cases) {
    if (cases.empty()) throw InsufficientSubjectsError("manifest lists no cases");
    UptakeMatrix u;
    for (const TargetSpec& t : cases.front().targets) u.roi_names.push_back(t.name);
    u.values.resize(static_cast<Eigen::Index>(cases.size()), static_cast<Eigen::Index>(u.roi_names.size()));
    for (std::size_t s = 0; s < cases.size(); ++s) {
        const CaseEntry& c = cases[s];
        if (c.targets.size() != u.roi_names.size())
            throw ManifestError("case '" + c.case_id + "' lists a different set of ROIs");
        const VoxelGrid grid = nifti::read_volume(c.volume);
        const LabelMask labels = nifti::read_labels(c.labels);
        for (std::size_t r = 0; r < c.targets.size(); ++r) {
            if (c.targets[r].name != u.roi_names[r])
                throw ManifestError("case '" + c.case_id + "' has ROI '" + c.targets[r].name + "' where '" +
                                    u.roi_names[r] + "' was expected");
            u.values(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(r)) =
                roi_mean(grid, labels.select(c.targets[r].labels));
        }
        u.subjects.push_back(c.case_id);
    }
    return u;
}

void write_correlation_csv(const std::filesystem::path& path, const CovarianceNetwork& net) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "roi";
    for (const std::string& n : net.roi_names) out << ',' << n;
    out << '\n';
    char buf[32];
    for (Eigen::Index a = 0; a < net.corr.rows(); ++a) {
        out << net.roi_names[a];
        for (Eigen::Index b = 0; b < net.corr.cols(); ++b) {
            std::snprintf(buf, sizeof buf, "%.10f", net.corr(a, b));
            out << ',' << buf;
        }
        out << '\n';
    }
}

void write_edges_json(const std::filesystem::path& path, const CovarianceNetwork& net, double threshold) {
    nlohmann::json doc;
    doc["threshold"] = threshold;
    nlohmann::json edges = nlohmann::json::array();
    for (const Edge& e : net.edges) edges.push_back({{"roi_a", e.roi_a}, {"roi_b", e.roi_b}, {"r", e.r}});
    doc["edges"] = std::move(edges);
    nlohmann::json degenerate = nlohmann::json::array();
    for (std::size_t i = 0; i < net.degenerate.size(); ++i)
        if (net.degenerate[i]) degenerate.push_back(net.roi_names[i]);
    doc["degenerate"] = std::move(degenerate);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << doc.dump(2) << '\n';
}

}  // namespace petseg
