#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "citysplat/core/camera.hpp"
#include "citysplat/core/gaussian.hpp"
#include "citysplat/core/maps.hpp"

namespace citysplat {

struct RenderOptions {
    double near = 0.01;
    double dilation = 0.3;              ///< isotropic px^2 added to every 2D covariance
    double max_alpha = 0.99;
    double min_transmittance = 1e-4;
    double alpha_floor = 1e-3;          ///< depth/normal invalid below this accumulated alpha
    double hit_weight = 1.0 / 255.0;    ///< blending weight that counts as a ray hit
    double cutoff_mahalanobis = 9.0;    ///< 3 sigma support
    int tile_size = 16;
};

/// A Gaussian projected into one camera.
struct Splat {
    Eigen::Vector2d mean2d;
    Eigen::Matrix2d cov2d;
    Eigen::Matrix2d conic; ///< cov2d^-1
    Eigen::Vector3d center_cam;
    Eigen::Vector3d normal_cam; ///< camera facing
    bool normal_flipped = false; ///< normal_cam = -R_cw * n_world
    int normal_axis = 2;
    double opacity = 0.0;
    Eigen::Vector3d color;
    std::size_t source_index = 0;
    double radius = 0.0; ///< support radius in pixels
};

/// Unit camera-frame direction through the center of pixel (u, v).
Eigen::Vector3d generate_ray(const Camera& camera, double u, double v);

/// EWA projection. Empty when the center is at or in front of the near plane.
std::optional<Splat> project_gaussian(const Camera& camera, const Gaussian& g, std::size_t source_index = 0,
                                      const RenderOptions& options = {});

/// z-coordinate where the ray meets the plane (normal, center). Empty for
/// grazing rays (|n . r| < 1e-8). Any ray scaling gives the same answer.
std::optional<double> intersection_depth(const Eigen::Vector3d& normal_cam, const Eigen::Vector3d& center_cam,
                                         const Eigen::Vector3d& ray);

/// One Gaussian's share of a pixel.
struct Contribution {
    std::uint32_t gaussian = 0;
    double weight = 0.0; ///< alpha_i * T_i
    double depth = 0.0;  ///< intersection depth, meaningful only when has_depth
    bool has_depth = false;
};

/// Per-pixel compositing record for gradient computation with frozen weights.
struct RenderTrace {
    std::vector<Splat> splats;                    ///< visible splats
    std::vector<std::int32_t> splat_of_gaussian;  ///< -1 when culled
    std::vector<std::vector<Contribution>> pixels; ///< row-major
};

struct RenderBuffers {
    VectorMap color;  ///< always valid
    ScalarMap depth;  ///< camera z-depth
    VectorMap normal; ///< camera frame
    ScalarMap alpha;  ///< always valid
    std::vector<std::uint32_t> hit_counts;
};

RenderBuffers render(const Camera& camera, const GaussianCloud& cloud, const RenderOptions& options = {},
                     RenderTrace* trace = nullptr);

/// Render with the listed Gaussians removed. hit_counts stay zero.
RenderBuffers render_excluding(const Camera& camera, const GaussianCloud& cloud,
                               std::span<const std::size_t> excluded, const RenderOptions& options = {});

} // namespace citysplat
