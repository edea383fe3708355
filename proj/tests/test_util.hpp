#pragma once

#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "citysplat/core/camera.hpp"
#include "citysplat/core/gaussian.hpp"
#include "citysplat/core/random.hpp"

namespace citysplat::testing {

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("citysplat_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline Eigen::Quaterniond random_quaternion(Rng& rng) {
    Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    return q.normalized();
}

inline Gaussian random_gaussian(Rng& rng, double extent = 1.0) {
    Gaussian g;
    g.position = Eigen::Vector3d(rng.uniform(-extent, extent), rng.uniform(-extent, extent),
                                 rng.uniform(-extent, extent));
    g.rotation = random_quaternion(rng);
    g.log_scales = Eigen::Vector3d(rng.uniform(-4, -1), rng.uniform(-4, -1), rng.uniform(-4, -1));
    g.opacity_logit = rng.uniform(-3, 3);
    g.color = Eigen::Vector3d(rng.uniform(), rng.uniform(), rng.uniform());
    return g;
}

inline GaussianCloud random_cloud(std::size_t n, std::uint64_t seed, double extent = 1.0) {
    Rng rng(seed);
    GaussianCloud cloud;
    for (std::size_t i = 0; i < n; ++i) cloud.push_back(random_gaussian(rng, extent));
    return cloud;
}

/// Camera on the -z side of the origin looking along +z.
inline Camera frontal_camera(int width = 32, int height = 32, double focal = 40.0) {
    Camera cam;
    cam.id = "front";
    cam.fx = cam.fy = focal;
    cam.width = width;
    cam.height = height;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    return cam;
}

} // namespace citysplat::testing
