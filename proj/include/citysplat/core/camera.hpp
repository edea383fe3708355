#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace citysplat {

/// Pinhole camera. Pixel (u, v) covers [u, u+1) x [v, v+1); its center
/// sits at continuous image coordinate (u + 0.5, v + 0.5).
struct Camera {
    std::string id;
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 1;
    int height = 1;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity(); ///< world -> camera
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();  ///< world -> camera

    /// Throws InvalidParameter if any invariant is violated.
    void validate() const;

    Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const { return rotation * world + translation; }
    Eigen::Vector3d to_world(const Eigen::Vector3d& cam) const { return rotation.transpose() * (cam - translation); }
    Eigen::Vector3d center() const { return -rotation.transpose() * translation; }

    /// Continuous image coordinates of a camera-frame point (z > 0).
    Eigen::Vector2d project(const Eigen::Vector3d& cam) const {
        return {fx * cam.x() / cam.z() + cx, fy * cam.y() / cam.z() + cy};
    }

    /// K^-1 (x, y, 1) for continuous image coordinates: the camera-frame
    /// point at z = 1 seen through (x, y).
    Eigen::Vector3d unproject(double x, double y) const { return {(x - cx) / fx, (y - cy) / fy, 1.0}; }

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
};

/// Camera at `eye` looking at `target`, with image rows running along `down`
/// (projected orthogonal to the view direction).
Camera look_at(const std::string& id, const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
               const Eigen::Vector3d& down, double focal, int width, int height);

std::vector<Camera> load_cameras(const std::string& path);
void save_cameras(const std::vector<Camera>& cameras, const std::string& path);

} // namespace citysplat
