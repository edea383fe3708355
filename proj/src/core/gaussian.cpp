#include "citysplat/core/gaussian.hpp"

#include <algorithm>
#include <string>

#include "citysplat/core/errors.hpp"

namespace citysplat {
namespace {

bool all_finite(const Eigen::Vector3d& v) { return v.allFinite(); }

bool quat_finite(const Eigen::Quaterniond& q) { return q.coeffs().allFinite(); }

void check_quaternion(const Eigen::Quaterniond& q) {
    if (!quat_finite(q)) throw InvalidParameter("non-finite quaternion");
    if (q.norm() == 0.0) throw InvalidParameter("zero quaternion");
}

void check_gaussian(const Gaussian& g) {
    if (!all_finite(g.position)) throw InvalidParameter("non-finite position");
    check_quaternion(g.rotation);
    if (!all_finite(g.log_scales) || !g.scales().allFinite() || (g.scales().array() <= 0.0).any())
        throw InvalidParameter("log-scales must map to finite positive scales");
    if (!std::isfinite(g.opacity_logit)) throw InvalidParameter("non-finite opacity logit");
    if (!all_finite(g.color)) throw InvalidParameter("non-finite color");
}

Eigen::Vector3d clamp_color(const Eigen::Vector3d& c) { return c.cwiseMax(0.0).cwiseMin(1.0); }

} // namespace

void GaussianCloud::reserve(std::size_t n) {
    positions_.reserve(n);
    rotations_.reserve(n);
    log_scales_.reserve(n);
    opacity_logits_.reserve(n);
    colors_.reserve(n);
}

void GaussianCloud::push_back(const Gaussian& g) {
    check_gaussian(g);
    positions_.push_back(g.position);
    rotations_.push_back(g.rotation.normalized());
    log_scales_.push_back(g.log_scales);
    opacity_logits_.push_back(g.opacity_logit);
    colors_.push_back(clamp_color(g.color));
}

void GaussianCloud::push_back_ingest(const Gaussian& g) {
    check_gaussian(g);
    positions_.push_back(g.position);
    // float32 storage cannot hold a quaternion normalized to 1e-9; anything
    // within float precision is kept verbatim and normalized on use.
    const double n = g.rotation.norm();
    rotations_.push_back(std::abs(n - 1.0) > 1e-6 ? g.rotation.normalized() : g.rotation);
    log_scales_.push_back(g.log_scales);
    opacity_logits_.push_back(g.opacity_logit);
    colors_.push_back(clamp_color(g.color));
}

void GaussianCloud::set(std::size_t i, const Gaussian& g) {
    if (i >= size()) throw InvalidParameter("gaussian index " + std::to_string(i) + " out of range");
    check_gaussian(g);
    positions_[i] = g.position;
    rotations_[i] = g.rotation.normalized();
    log_scales_[i] = g.log_scales;
    opacity_logits_[i] = g.opacity_logit;
    colors_[i] = clamp_color(g.color);
}

Gaussian GaussianCloud::operator[](std::size_t i) const {
    Gaussian g;
    g.position = positions_[i];
    g.rotation = rotations_[i];
    g.log_scales = log_scales_[i];
    g.opacity_logit = opacity_logits_[i];
    g.color = colors_[i];
    return g;
}

GaussianCloud GaussianCloud::subset(std::span<const std::size_t> indices) const {
    GaussianCloud out;
    out.reserve(indices.size());
    for (std::size_t i : indices) {
        if (i >= size()) throw InvalidParameter("gaussian index " + std::to_string(i) + " out of range");
        out.positions_.push_back(positions_[i]);
        out.rotations_.push_back(rotations_[i]);
        out.log_scales_.push_back(log_scales_[i]);
        out.opacity_logits_.push_back(opacity_logits_[i]);
        out.colors_.push_back(colors_[i]);
    }
    return out;
}

bool operator==(const GaussianCloud& a, const GaussianCloud& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a.positions_[i] != b.positions_[i] || a.rotations_[i].coeffs() != b.rotations_[i].coeffs() ||
            a.log_scales_[i] != b.log_scales_[i] || a.opacity_logits_[i] != b.opacity_logits_[i] ||
            a.colors_[i] != b.colors_[i])
            return false;
    }
    return true;
}

Eigen::Matrix3d rotation_matrix(const Eigen::Quaterniond& q) {
    check_quaternion(q);
    return q.normalized().toRotationMatrix();
}

Eigen::Matrix3d build_covariance(const Eigen::Quaterniond& rotation, const Eigen::Vector3d& scales) {
    if (!scales.allFinite()) throw InvalidParameter("non-finite scales");
    if ((scales.array() <= 0.0).any()) throw InvalidParameter("scales must be positive");
    const Eigen::Matrix3d r = rotation_matrix(rotation);
    const Eigen::Matrix3d m = r * scales.asDiagonal();
    Eigen::Matrix3d sigma = m * m.transpose();
    // exact symmetry regardless of rounding order
    return 0.5 * (sigma + sigma.transpose());
}

int min_scale_axis(const Eigen::Vector3d& scales) {
    int k = 0;
    for (int i = 1; i < 3; ++i)
        if (scales[i] <= scales[k]) k = i;
    return k;
}

Eigen::Vector3d gaussian_normal(const Eigen::Quaterniond& rotation, const Eigen::Vector3d& scales) {
    if (!scales.allFinite() || (scales.array() <= 0.0).any())
        throw InvalidParameter("scales must be finite and positive");
    return rotation_matrix(rotation).col(min_scale_axis(scales));
}

Eigen::Matrix3d regularized_inverse_covariance(const Eigen::Quaterniond& rotation,
                                               const Eigen::Vector3d& scales) {
    if (!scales.allFinite() || (scales.array() <= 0.0).any())
        throw InvalidParameter("scales must be finite and positive");
    const double floor = 1e-6 * scales.maxCoeff();
    const Eigen::Vector3d s = scales.cwiseMax(floor);
    const Eigen::Matrix3d r = rotation_matrix(rotation);
    const Eigen::Vector3d inv_var = s.cwiseProduct(s).cwiseInverse();
    Eigen::Matrix3d inv = r * inv_var.asDiagonal() * r.transpose();
    return 0.5 * (inv + inv.transpose());
}

double evaluate_gaussian(const Gaussian& g, const Eigen::Vector3d& p) {
    if (!p.allFinite()) throw InvalidParameter("non-finite evaluation point");
    const Eigen::Matrix3d inv = regularized_inverse_covariance(g.rotation, g.scales());
    const Eigen::Vector3d d = p - g.position;
    return std::exp(-0.5 * d.dot(inv * d));
}

double scale_loss(const GaussianCloud& cloud) {
    if (cloud.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < cloud.size(); ++i) sum += std::abs(cloud.scales(i).minCoeff());
    return sum / static_cast<double>(cloud.size());
}

} // namespace citysplat
