#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "citysplat/core/errors.hpp"
#include "citysplat/renderer/renderer.hpp"
#include "test_util.hpp"

using namespace citysplat;
using citysplat::testing::frontal_camera;

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

Gaussian flat_gaussian(const Eigen::Vector3d& center, const Eigen::Quaterniond& rotation, double extent,
                       double opacity = 0.999) {
    Gaussian g;
    g.position = center;
    g.rotation = rotation;
    g.log_scales = Eigen::Vector3d(std::log(extent), std::log(extent), std::log(1e-4));
    g.opacity_logit = logit(opacity);
    g.color = {0.8, 0.4, 0.2};
    return g;
}

bool same_buffers(const RenderBuffers& a, const RenderBuffers& b) {
    auto same_scalar = [](const ScalarMap& x, const ScalarMap& y) {
        if (x.valid != y.valid) return false;
        for (std::size_t i = 0; i < x.size(); ++i)
            if (x.valid[i] && x.values[i] != y.values[i]) return false;
        return true;
    };
    auto same_vector = [](const VectorMap& x, const VectorMap& y) {
        if (x.valid != y.valid) return false;
        for (std::size_t i = 0; i < x.size(); ++i)
            if (x.valid[i] && x.values[i] != y.values[i]) return false;
        return true;
    };
    return same_vector(a.color, b.color) && same_scalar(a.depth, b.depth) && same_vector(a.normal, b.normal) &&
           same_scalar(a.alpha, b.alpha);
}

} // namespace

TEST(Ray, PrincipalPointAndCorner) {
    Camera cam = frontal_camera(32, 32);
    EXPECT_TRUE(generate_ray(cam, cam.cx - 0.5, cam.cy - 0.5).isApprox(Eigen::Vector3d(0, 0, 1)));
    cam.fx = cam.fy = 1.0;
    cam.cx = cam.cy = 0.0;
    EXPECT_TRUE(generate_ray(cam, 0, 0).isApprox(Eigen::Vector3d(0.5, 0.5, 1).normalized(), 1e-15));
}

TEST(Ray, ReprojectsToPixelCenter) {
    const Camera cam = frontal_camera(64, 48, 57.0);
    Rng rng(1);
    for (int i = 0; i < 500; ++i) {
        const int u = static_cast<int>(rng.below(64));
        const int v = static_cast<int>(rng.below(48));
        const Eigen::Vector3d r = generate_ray(cam, u, v);
        EXPECT_GT(r.z(), 0.0);
        const Eigen::Vector2d px = cam.project(rng.uniform(0.5, 20.0) * r);
        EXPECT_NEAR(px.x(), u + 0.5, 1e-6);
        EXPECT_NEAR(px.y(), v + 0.5, 1e-6);
    }
}

TEST(Project, OnAxisClosedForm) {
    const Camera cam = frontal_camera(64, 64, 50.0);
    Gaussian g;
    g.position = {0, 0, 2};
    const double s = 0.05;
    g.log_scales = Eigen::Vector3d::Constant(std::log(s));
    const auto splat = project_gaussian(cam, g);
    ASSERT_TRUE(splat);
    EXPECT_TRUE(splat->mean2d.isApprox(Eigen::Vector2d(cam.cx, cam.cy)));
    const double var = std::pow(cam.fx * s / 2.0, 2) + 0.3;
    EXPECT_NEAR(splat->cov2d(0, 0), var, 1e-12);
    EXPECT_NEAR(splat->cov2d(1, 1), var, 1e-12);
    EXPECT_NEAR(splat->cov2d(0, 1), 0.0, 1e-12);
}

TEST(Project, CullsBehindAndNearPlane) {
    const Camera cam = frontal_camera();
    Gaussian g;
    g.position = {0, 0, -1};
    EXPECT_FALSE(project_gaussian(cam, g));
    g.position = {0, 0, 0.01};
    EXPECT_FALSE(project_gaussian(cam, g));
    g.position = {0, 0, 0.0101};
    EXPECT_TRUE(project_gaussian(cam, g));
}

TEST(Project, NormalFacesCamera) {
    const Camera cam = frontal_camera();
    // identity rotation, smallest scale on z: world normal +z points away from the camera
    const Gaussian g = flat_gaussian({0.1, 0.2, 3}, Eigen::Quaterniond::Identity(), 0.5);
    const auto splat = project_gaussian(cam, g);
    ASSERT_TRUE(splat);
    EXPECT_TRUE(splat->normal_flipped);
    EXPECT_TRUE(splat->normal_cam.isApprox(Eigen::Vector3d(0, 0, -1)));
    EXPECT_LT(splat->normal_cam.dot(splat->center_cam), 0.0);
}

TEST(IntersectionDepth, Examples) {
    const Eigen::Vector3d n(0, 0, 1), p(0, 0, 5);
    EXPECT_EQ(*intersection_depth(n, p, {0, 0, 1}), 5.0);
    EXPECT_NEAR(*intersection_depth(n, p, Eigen::Vector3d(1, 0, 1).normalized()), 5.0, 1e-15);
    EXPECT_FALSE(intersection_depth(n, p, {1, 0, 0}));
}

TEST(IntersectionDepth, MatchesParametricIntersection) {
    Rng rng(9);
    for (int i = 0; i < 2000; ++i) {
        const Eigen::Vector3d n = rng.unit_vector();
        const Eigen::Vector3d p(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(1, 8));
        Eigen::Vector3d r = rng.unit_vector();
        r.z() = std::abs(r.z()) + 0.1;
        r.normalize();
        if (std::abs(n.dot(r)) < 1e-3) continue;
        // solve n . (t r - p) = 0 for t, then take the z coordinate
        const double t = n.dot(p) / n.dot(r);
        const double expect = (t * r).z();
        EXPECT_NEAR(*intersection_depth(n, p, r), expect, 1e-9 * std::max(1.0, std::abs(expect)));
    }
}

TEST(Render, EmptyCloud) {
    const Camera cam = frontal_camera(20, 12);
    const RenderBuffers b = render(cam, GaussianCloud{});
    EXPECT_EQ(b.depth.valid_count(), 0u);
    EXPECT_EQ(b.normal.valid_count(), 0u);
    for (double a : b.alpha.values) EXPECT_EQ(a, 0.0);
    EXPECT_TRUE(b.hit_counts.empty());
}

TEST(Render, FrontoParallelPlane) {
    const Camera cam = frontal_camera(32, 32, 40.0);
    GaussianCloud cloud;
    cloud.push_back(flat_gaussian({0, 0, 5}, Eigen::Quaterniond::Identity(), 10.0));
    const RenderBuffers b = render(cam, cloud);
    int checked = 0;
    for (std::size_t i = 0; i < b.alpha.size(); ++i) {
        if (b.alpha.values[i] < 0.5) continue;
        ++checked;
        ASSERT_TRUE(b.depth.valid[i]);
        EXPECT_NEAR(b.depth.values[i], 5.0, 1e-3);
        EXPECT_TRUE(b.normal.values[i].isApprox(Eigen::Vector3d(0, 0, -1), 1e-12));
    }
    EXPECT_EQ(checked, 32 * 32);
    EXPECT_EQ(b.hit_counts[0], 32u * 32u);
}

TEST(Render, TiltedPlaneDepthMatchesRayCast) {
    const Camera cam = frontal_camera(48, 40, 45.0);
    const Eigen::Quaterniond q(Eigen::AngleAxisd(0.5, Eigen::Vector3d(1, 1, 0).normalized()));
    const Eigen::Vector3d center(0.2, -0.1, 6.0);
    GaussianCloud cloud;
    cloud.push_back(flat_gaussian(center, q, 20.0));
    const RenderBuffers b = render(cam, cloud);
    const Eigen::Vector3d n = q.toRotationMatrix().col(2);
    int checked = 0;
    for (int v = 0; v < cam.height; ++v)
        for (int u = 0; u < cam.width; ++u) {
            if (!b.depth.is_valid(u, v)) continue;
            const Eigen::Vector3d r = generate_ray(cam, u, v);
            const double t = n.dot(center) / n.dot(r);
            EXPECT_NEAR(b.depth.at(u, v), t * r.z(), 1e-3);
            ++checked;
        }
    EXPECT_GT(checked, 1500);
}

TEST(Render, FrontSplatDominatesDepth) {
    const Camera cam = frontal_camera(16, 16, 20.0);
    GaussianCloud cloud;
    cloud.push_back(flat_gaussian({0, 0, 4}, Eigen::Quaterniond::Identity(), 5.0, 0.99));
    cloud.push_back(flat_gaussian({0, 0, 2}, Eigen::Quaterniond::Identity(), 5.0, 0.99));
    const RenderBuffers b = render(cam, cloud);
    const double d = b.depth.at(8, 8);
    EXPECT_LT(std::abs(d - 2.0) / 2.0, 0.02);
    // hand-computed two-term blend at the shared peak
    const double a = 0.99;
    EXPECT_NEAR(b.alpha.at(8, 8), a + (1 - a) * a, 1e-3);
}

TEST(Render, TransmittanceTelescopes) {
    const Camera cam = frontal_camera(32, 32, 35.0);
    GaussianCloud cloud = citysplat::testing::random_cloud(60, 17, 0.6);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        Gaussian g = cloud[i];
        g.position.z() += 3.0;
        g.log_scales = g.log_scales.array() + 1.5;
        cloud.set(i, g);
    }
    RenderTrace trace;
    const RenderBuffers b = render(cam, cloud, {}, &trace);
    for (int v = 0; v < cam.height; ++v)
        for (int u = 0; u < cam.width; ++u) {
            const Eigen::Vector2d pix(u + 0.5, v + 0.5);
            double t = 1.0;
            for (const Splat& s : trace.splats) {
                const Eigen::Vector2d d = pix - s.mean2d;
                const double maha = d.dot(s.conic * d);
                if (maha > 9.0) continue;
                t *= 1.0 - std::min(0.99, s.opacity * std::exp(-0.5 * maha));
                if (t < 1e-4) break;
            }
            EXPECT_NEAR(b.alpha.at(u, v), 1.0 - t, 1e-6);
            EXPECT_LE(b.alpha.at(u, v), 1.0);
            double wsum = 0.0;
            for (const auto& c : trace.pixels[b.alpha.index(u, v)]) wsum += c.weight;
            EXPECT_NEAR(wsum, b.alpha.at(u, v), 1e-12);
        }
}

TEST(Render, DeterministicAndExcludingEmptyMatches) {
    const Camera cam = frontal_camera(40, 24, 30.0);
    GaussianCloud cloud = citysplat::testing::random_cloud(80, 4, 0.8);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        Gaussian g = cloud[i];
        g.position.z() += 3.0;
        g.log_scales = g.log_scales.array() + 1.0;
        cloud.set(i, g);
    }
    const RenderBuffers a = render(cam, cloud);
    const RenderBuffers b = render(cam, cloud);
    EXPECT_TRUE(same_buffers(a, b));
    EXPECT_EQ(a.hit_counts, b.hit_counts);

    const RenderBuffers c = render_excluding(cam, cloud, {});
    EXPECT_TRUE(same_buffers(a, c));
    for (auto h : c.hit_counts) EXPECT_EQ(h, 0u);

    std::vector<std::size_t> all(cloud.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    EXPECT_TRUE(same_buffers(render_excluding(cam, cloud, all), render(cam, GaussianCloud{})));

    const std::vector<std::size_t> bad{cloud.size()};
    EXPECT_THROW(render_excluding(cam, cloud, bad), InvalidParameter);
}

TEST(Render, ExcludingSoleCoverDropsAlpha) {
    const Camera cam = frontal_camera(32, 16, 30.0);
    GaussianCloud cloud;
    cloud.push_back(flat_gaussian({-0.5, 0, 3}, Eigen::Quaterniond::Identity(), 0.1));
    cloud.push_back(flat_gaussian({0.5, 0, 3}, Eigen::Quaterniond::Identity(), 0.1));
    const std::vector<std::size_t> drop{0};
    const RenderBuffers full = render(cam, cloud);
    const RenderBuffers part = render_excluding(cam, cloud, drop);
    const int u_left = static_cast<int>(cam.project({-0.5, 0, 3}).x());
    const int u_right = static_cast<int>(cam.project({0.5, 0, 3}).x());
    EXPECT_GT(full.alpha.at(u_left, 8), 0.5);
    EXPECT_EQ(part.alpha.at(u_left, 8), 0.0);
    EXPECT_EQ(part.alpha.at(u_right, 8), full.alpha.at(u_right, 8));
}

TEST(Render, HitCountMonotoneInOwnOpacity) {
    const Camera cam = frontal_camera(32, 32, 35.0);
    GaussianCloud cloud = citysplat::testing::random_cloud(40, 12, 0.5);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        Gaussian g = cloud[i];
        g.position.z() += 3.0;
        g.log_scales = g.log_scales.array() + 1.0;
        cloud.set(i, g);
    }
    const RenderBuffers base = render(cam, cloud);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        GaussianCloud raised = cloud;
        Gaussian g = cloud[i];
        g.opacity_logit += 1.0;
        raised.set(i, g);
        EXPECT_GE(render(cam, raised).hit_counts[i], base.hit_counts[i]) << "gaussian " << i;
    }
}
