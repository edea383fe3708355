#include "citysplat/priors/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "citysplat/core/errors.hpp"
#include "citysplat/core/stats.hpp"

namespace citysplat {
namespace {

struct Line {
    double scale;
    double shift;
};

Line least_squares(std::span<const double> x, std::span<const double> y, const std::vector<std::size_t>& idx) {
    double mx = 0.0, my = 0.0;
    for (auto i : idx) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(idx.size());
    my /= static_cast<double>(idx.size());
    double sxx = 0.0, sxy = 0.0;
    for (auto i : idx) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    // spread at rounding level carries no slope information
    if (!(sxx > 1e-24 * mx * mx * static_cast<double>(idx.size())))
        throw NumericError("scale/shift fit is rank deficient: all monocular depths are equal");
    const double s = sxy / sxx;
    return {s, my - s * mx};
}

} // namespace

AlignmentFit fit_scale_shift(std::span<const double> mono_depths, std::span<const double> anchor_depths,
                             const AlignmentOptions& options) {
    if (mono_depths.size() != anchor_depths.size())
        throw InvalidParameter("mono and anchor depth lists differ in length");
    const std::size_t n = mono_depths.size();
    if (n < 2) throw NumericError("scale/shift fit needs at least two samples");
    double max_abs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(mono_depths[i]) || !std::isfinite(anchor_depths[i]))
            throw InvalidParameter("non-finite depth sample");
        if (!(anchor_depths[i] > 0.0)) throw InvalidParameter("anchor depths must be positive");
        max_abs = std::max(max_abs, std::abs(anchor_depths[i]));
    }

    std::vector<std::size_t> inliers(n);
    for (std::size_t i = 0; i < n; ++i) inliers[i] = i;
    Line line = least_squares(mono_depths, anchor_depths, inliers);

    auto residual = [&](std::size_t i) { return line.scale * mono_depths[i] + line.shift - anchor_depths[i]; };
    auto spread = [&](double& med, double& mad) {
        std::vector<double> r;
        r.reserve(inliers.size());
        for (auto i : inliers) r.push_back(residual(i));
        med = median(r);
        for (auto& v : r) v = std::abs(v - med);
        mad = median(r);
    };

    // floor keeps exact fits from trimming points that differ only by rounding
    const double tiny = 1e-12 * (1.0 + max_abs);
    for (int round = 0; round < options.rounds; ++round) {
        double med = 0.0, mad = 0.0;
        spread(med, mad);
        const double threshold = std::max(options.mad_multiplier * mad, tiny);
        std::vector<std::size_t> kept;
        for (std::size_t i = 0; i < n; ++i)
            if (std::abs(residual(i) - med) <= threshold) kept.push_back(i);
        if (kept.size() < 2) throw NumericError("scale/shift fit degenerate: fewer than two inliers after trimming");
        inliers = std::move(kept);
        line = least_squares(mono_depths, anchor_depths, inliers);
    }

    AlignmentFit fit;
    fit.scale = line.scale;
    fit.shift = line.shift;
    fit.inlier_count = inliers.size();
    double med = 0.0;
    spread(med, fit.residual_mad);
    if (!std::isfinite(fit.scale) || !std::isfinite(fit.shift)) throw NumericError("scale/shift fit is not finite");
    return fit;
}

ScalarMap apply_alignment(const ScalarMap& map, const AlignmentFit& fit) {
    ScalarMap out = make_scalar_map(map.width, map.height);
    for (std::size_t i = 0; i < map.size(); ++i) {
        if (!map.valid[i]) continue;
        const double d = fit.scale * map.values[i] + fit.shift;
        if (d > 0.0) {
            out.values[i] = d;
            out.valid[i] = 1;
        }
    }
    return out;
}

std::vector<DepthAnchor> load_anchors(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open anchor file: " + path);
    std::vector<DepthAnchor> anchors;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        DepthAnchor a;
        if (!(ls >> a.u)) continue; // blank
        if (!(ls >> a.v >> a.depth)) throw ParseError(path + ":" + std::to_string(lineno) + ": expected 'u v depth'");
        std::string extra;
        if (ls >> extra) throw ParseError(path + ":" + std::to_string(lineno) + ": trailing data");
        anchors.push_back(a);
    }
    return anchors;
}

void save_anchors(const std::vector<DepthAnchor>& anchors, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write anchor file: " + path);
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (const auto& a : anchors) out << a.u << ' ' << a.v << ' ' << a.depth << '\n';
}

} // namespace citysplat
