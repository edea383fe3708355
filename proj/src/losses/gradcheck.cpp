#include "citysplat/losses/gradcheck.hpp"

#include <cmath>
#include <exception>
#include <string>

#include "citysplat/core/errors.hpp"

namespace citysplat {

DepthGradients intersection_depth_grads(const Eigen::Vector3d& normal, const Eigen::Vector3d& point,
                                        const Eigen::Vector3d& ray) {
    const double nr = normal.dot(ray);
    if (std::abs(nr) < 1e-8) throw NumericError("intersection_depth_grads: grazing ray");
    const double np = normal.dot(point);
    DepthGradients g;
    g.d_position = ray.z() * normal / nr;
    g.d_normal = ray.z() * (point * nr - ray * np) / (nr * nr);
    return g;
}

GaussianCloud perturb(const GaussianCloud& cloud, const ParamSelector& param, double delta) {
    if (param.gaussian >= cloud.size()) throw InvalidParameter("perturb: Gaussian index out of range");
    if (param.kind != ParamKind::Opacity && (param.component < 0 || param.component > 2))
        throw InvalidParameter("perturb: component must be 0, 1 or 2");
    GaussianCloud out = cloud;
    Gaussian g = cloud[param.gaussian];
    const int c = param.component;
    switch (param.kind) {
    case ParamKind::Position:
        g.position[c] += delta;
        break;
    case ParamKind::RotationTangent: {
        Eigen::Vector3d axis = Eigen::Vector3d::Zero();
        axis[c] = std::sin(0.5 * delta);
        const Eigen::Quaterniond step(std::cos(0.5 * delta), axis.x(), axis.y(), axis.z());
        g.rotation = g.rotation.normalized() * step;
        break;
    }
    case ParamKind::LogScale:
        g.log_scales[c] += delta;
        break;
    case ParamKind::Opacity:
        g.opacity_logit += delta;
        break;
    case ParamKind::Color:
        g.color[c] += delta;
        break;
    }
    out.set(param.gaussian, g);
    return out;
}

std::vector<ParamSelector> gaussian_parameters(std::size_t i) {
    std::vector<ParamSelector> out;
    for (ParamKind kind : {ParamKind::Position, ParamKind::RotationTangent, ParamKind::LogScale})
        for (int c = 0; c < 3; ++c) out.push_back({i, kind, c});
    out.push_back({i, ParamKind::Opacity, 0});
    for (int c = 0; c < 3; ++c) out.push_back({i, ParamKind::Color, c});
    return out;
}

std::vector<double> finite_diff_grad(const LossEvaluator& loss, const GaussianCloud& cloud,
                                     std::span<const ParamSelector> params, double h) {
    if (!(h > 0.0)) throw InvalidParameter("finite_diff_grad: step must be positive");
    const auto n = static_cast<std::ptrdiff_t>(params.size());
    std::vector<double> grad(params.size(), 0.0);
    std::vector<std::exception_ptr> errors(params.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t k = 0; k < n; ++k) {
        try {
            const auto idx = static_cast<std::size_t>(k);
            const double plus = loss(perturb(cloud, params[idx], h));
            const double minus = loss(perturb(cloud, params[idx], -h));
            if (!std::isfinite(plus) || !std::isfinite(minus))
                throw NumericError("non-finite loss while probing parameter " + std::to_string(idx));
            grad[idx] = (plus - minus) / (2.0 * h);
        } catch (...) {
            errors[static_cast<std::size_t>(k)] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    return grad;
}

} // namespace citysplat
