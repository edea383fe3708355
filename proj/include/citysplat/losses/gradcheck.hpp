#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "citysplat/core/gaussian.hpp"

namespace citysplat {

struct DepthGradients {
    Eigen::Vector3d d_position; ///< dd/dp = r_z n / (n . r)
    Eigen::Vector3d d_normal;   ///< dd/dn = r_z (p (n . r) - r (n . p)) / (n . r)^2
};

/// Analytic derivatives of intersection_depth. Throws NumericError for
/// grazing rays (|n . r| < 1e-8).
DepthGradients intersection_depth_grads(const Eigen::Vector3d& normal, const Eigen::Vector3d& point,
                                        const Eigen::Vector3d& ray);

enum class ParamKind { Position, RotationTangent, LogScale, Opacity, Color };

struct ParamSelector {
    std::size_t gaussian = 0;
    ParamKind kind = ParamKind::Position;
    int component = 0; ///< 0..2; ignored for Opacity
};

/// Copy of `cloud` with one scalar parameter moved by `delta`. Rotations move
/// in the tangent space, q * exp(delta e_c / 2), then renormalize.
GaussianCloud perturb(const GaussianCloud& cloud, const ParamSelector& param, double delta);

/// Every scalar parameter of Gaussian i, in the order position, rotation
/// tangent, log-scales, opacity, color.
std::vector<ParamSelector> gaussian_parameters(std::size_t i);

using LossEvaluator = std::function<double(const GaussianCloud&)>;

/// Central differences (f(x+h) - f(x-h)) / 2h, one entry per selector. Probes
/// run in parallel, so `loss` must be safe to call concurrently. A non-finite
/// evaluation throws NumericError naming the parameter index.
std::vector<double> finite_diff_grad(const LossEvaluator& loss, const GaussianCloud& cloud,
                                     std::span<const ParamSelector> params, double h);

} // namespace citysplat
