#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "citysplat/core/camera.hpp"
#include "citysplat/core/maps.hpp"
#include "citysplat/priors/alignment.hpp"

namespace citysplat {

/// Points x with normal . x = offset.
struct AnalyticPlane {
    Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
    double offset = 0.0;
};

struct AnalyticBox {
    Eigen::Vector3d min = -Eigen::Vector3d::Ones();
    Eigen::Vector3d max = Eigen::Vector3d::Ones();
};

/// Two planes; every ray sees whichever it reaches first.
struct AnalyticWedge {
    AnalyticPlane first;
    AnalyticPlane second;
};

using AnalyticScene = std::variant<AnalyticPlane, AnalyticBox, AnalyticWedge>;

struct SurfaceHit {
    double t = 0.0;               ///< distance along the unit ray
    Eigen::Vector3d normal_world; ///< unit, facing the ray origin
    int surface = 0;              ///< face / plane index
};

/// Nearest hit with t > 0 along origin + t * direction (direction unit).
std::optional<SurfaceHit> cast_ray(const AnalyticScene& scene, const Eigen::Vector3d& origin,
                                   const Eigen::Vector3d& direction);

/// Euclidean distance from p to the scene surface.
double surface_distance(const AnalyticScene& scene, const Eigen::Vector3d& p);

/// Per-view pseudo priors: z-depth, camera-frame camera-facing normals, and
/// sparse metric anchors for scale alignment.
struct PriorSet {
    ScalarMap pseudo_depth;
    VectorMap pseudo_normal;
    std::vector<DepthAnchor> sparse_anchors;

    /// Joint validity of the depth and normal maps.
    std::vector<std::uint8_t> valid_mask() const;
};

/// Exact ray-cast priors for an analytic scene. Anchors are `anchor_count`
/// distinct valid pixels drawn with `seed`. Throws NumericError when the
/// camera sees no geometry.
PriorSet synth_priors(const Camera& camera, const AnalyticScene& scene, std::size_t anchor_count = 200,
                      std::uint64_t seed = 0);

} // namespace citysplat
