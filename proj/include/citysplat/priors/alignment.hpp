#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "citysplat/core/maps.hpp"

namespace citysplat {

/// depth_metric ~= scale * depth_mono + shift
struct AlignmentFit {
    double scale = 1.0;
    double shift = 0.0;
    std::size_t inlier_count = 0;
    double residual_mad = 0.0; ///< median absolute deviation of inlier residuals
};

struct AlignmentOptions {
    int rounds = 3;            ///< trim-and-refit rounds after the initial fit
    double mad_multiplier = 3.0;
};

/// Robust least-squares fit in depth space. Each round drops samples whose
/// residual lies more than 3 MAD from the median residual, then refits.
/// Throws NumericError on rank deficiency (constant mono depths) or when
/// fewer than two inliers remain.
AlignmentFit fit_scale_shift(std::span<const double> mono_depths, std::span<const double> anchor_depths,
                             const AlignmentOptions& options = {});

/// out = scale * in + shift; non-positive results become invalid.
ScalarMap apply_alignment(const ScalarMap& map, const AlignmentFit& fit);

/// Sparse metric depth sample at an integer pixel.
struct DepthAnchor {
    int u = 0;
    int v = 0;
    double depth = 0.0;
};

/// Text format: one "u v depth" triple per line; '#' starts a comment.
std::vector<DepthAnchor> load_anchors(const std::string& path);
void save_anchors(const std::vector<DepthAnchor>& anchors, const std::string& path);

} // namespace citysplat
