#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace citysplat {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// One anisotropic 3D Gaussian. Scales are stored as logarithms of the
/// world-unit axis lengths so that optimization is unconstrained.
struct Gaussian {
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
    Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
    Eigen::Vector3d log_scales = Eigen::Vector3d::Zero();
    double opacity_logit = 0.0;
    Eigen::Vector3d color = Eigen::Vector3d::Constant(0.5);

    Eigen::Vector3d scales() const { return log_scales.array().exp(); }
    double opacity() const { return sigmoid(opacity_logit); }
};

/// Columnar storage of N Gaussians. Every mutation goes through set() or
/// push_back(), which normalize the quaternion and clamp color into [0,1].
class GaussianCloud {
public:
    GaussianCloud() = default;

    std::size_t size() const { return positions_.size(); }
    bool empty() const { return positions_.empty(); }
    void reserve(std::size_t n);

    void push_back(const Gaussian& g);
    void set(std::size_t i, const Gaussian& g);
    Gaussian operator[](std::size_t i) const;

    /// Appends without renormalizing a quaternion whose norm is already within
    /// float precision of one. Used by the file reader so that a load/save
    /// cycle reproduces the stored float32 payload bit for bit.
    void push_back_ingest(const Gaussian& g);

    std::span<const Eigen::Vector3d> positions() const { return positions_; }
    std::span<const Eigen::Quaterniond> rotations() const { return rotations_; }
    std::span<const Eigen::Vector3d> log_scales() const { return log_scales_; }
    std::span<const double> opacity_logits() const { return opacity_logits_; }
    std::span<const Eigen::Vector3d> colors() const { return colors_; }

    const Eigen::Vector3d& position(std::size_t i) const { return positions_[i]; }
    const Eigen::Quaterniond& rotation(std::size_t i) const { return rotations_[i]; }
    const Eigen::Vector3d& log_scale(std::size_t i) const { return log_scales_[i]; }
    double opacity_logit(std::size_t i) const { return opacity_logits_[i]; }
    const Eigen::Vector3d& color(std::size_t i) const { return colors_[i]; }
    Eigen::Vector3d scales(std::size_t i) const { return log_scales_[i].array().exp(); }
    double opacity(std::size_t i) const { return sigmoid(opacity_logits_[i]); }

    /// Copy of the listed Gaussians, in the listed order.
    GaussianCloud subset(std::span<const std::size_t> indices) const;

    friend bool operator==(const GaussianCloud& a, const GaussianCloud& b);

private:
    std::vector<Eigen::Vector3d> positions_;
    std::vector<Eigen::Quaterniond> rotations_;
    std::vector<Eigen::Vector3d> log_scales_;
    std::vector<double> opacity_logits_;
    std::vector<Eigen::Vector3d> colors_;
};

/// Rotation matrix of a (not necessarily normalized) quaternion.
Eigen::Matrix3d rotation_matrix(const Eigen::Quaterniond& q);

/// Sigma = R S S^T R^T.
Eigen::Matrix3d build_covariance(const Eigen::Quaterniond& rotation, const Eigen::Vector3d& scales);

/// Index of the smallest scale; on exact ties the highest index wins.
int min_scale_axis(const Eigen::Vector3d& scales);

/// Unit axis of the ellipsoid along its smallest scale. With Sigma = R S^2 R^T
/// this is column k of R, i.e. an eigenvector of Sigma with eigenvalue min(s)^2.
Eigen::Vector3d gaussian_normal(const Eigen::Quaterniond& rotation, const Eigen::Vector3d& scales);

/// Inverse covariance with scales clamped below at 1e-6 * max scale.
Eigen::Matrix3d regularized_inverse_covariance(const Eigen::Quaterniond& rotation,
                                               const Eigen::Vector3d& scales);

/// exp(-1/2 (p-u)^T Sigma^-1 (p-u)), in (0, 1].
double evaluate_gaussian(const Gaussian& g, const Eigen::Vector3d& p);

/// Mean over Gaussians of the smallest world-unit scale. Zero for an empty cloud.
double scale_loss(const GaussianCloud& cloud);

} // namespace citysplat
