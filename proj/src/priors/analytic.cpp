#include "citysplat/priors/analytic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "citysplat/core/errors.hpp"
#include "citysplat/core/random.hpp"

namespace citysplat {
namespace {

std::optional<SurfaceHit> hit_plane(const AnalyticPlane& plane, const Eigen::Vector3d& o, const Eigen::Vector3d& d,
                                    int id) {
    const Eigen::Vector3d n = plane.normal.normalized();
    const double off = plane.offset / plane.normal.norm();
    const double denom = n.dot(d);
    if (std::abs(denom) < 1e-12) return std::nullopt;
    const double t = (off - n.dot(o)) / denom;
    if (!(t > 0.0)) return std::nullopt;
    return SurfaceHit{t, denom < 0.0 ? n : Eigen::Vector3d(-n), id};
}

std::optional<SurfaceHit> hit_box(const AnalyticBox& box, const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
    double t_near = -std::numeric_limits<double>::infinity();
    double t_far = std::numeric_limits<double>::infinity();
    int axis_near = -1, axis_far = -1;
    for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-15) {
            if (o[a] < box.min[a] || o[a] > box.max[a]) return std::nullopt;
            continue;
        }
        double t0 = (box.min[a] - o[a]) / d[a];
        double t1 = (box.max[a] - o[a]) / d[a];
        if (t0 > t1) std::swap(t0, t1);
        if (t0 > t_near) {
            t_near = t0;
            axis_near = a;
        }
        if (t1 < t_far) {
            t_far = t1;
            axis_far = a;
        }
    }
    if (t_near > t_far) return std::nullopt;
    double t;
    int axis;
    if (t_near > 0.0) {
        t = t_near;
        axis = axis_near;
    } else if (t_far > 0.0) {
        t = t_far;
        axis = axis_far;
    } else {
        return std::nullopt;
    }
    if (axis < 0) return std::nullopt;
    Eigen::Vector3d n = Eigen::Vector3d::Zero();
    n[axis] = d[axis] > 0.0 ? -1.0 : 1.0;
    const Eigen::Vector3d p = o + t * d;
    const bool at_max = std::abs(p[axis] - box.max[axis]) < std::abs(p[axis] - box.min[axis]);
    return SurfaceHit{t, n, 2 * axis + (at_max ? 1 : 0)};
}

double plane_distance(const AnalyticPlane& plane, const Eigen::Vector3d& p) {
    return std::abs(plane.normal.dot(p) - plane.offset) / plane.normal.norm();
}

} // namespace

std::optional<SurfaceHit> cast_ray(const AnalyticScene& scene, const Eigen::Vector3d& origin,
                                   const Eigen::Vector3d& direction) {
    if (const auto* plane = std::get_if<AnalyticPlane>(&scene)) return hit_plane(*plane, origin, direction, 0);
    if (const auto* box = std::get_if<AnalyticBox>(&scene)) return hit_box(*box, origin, direction);
    const auto& wedge = std::get<AnalyticWedge>(scene);
    auto a = hit_plane(wedge.first, origin, direction, 0);
    auto b = hit_plane(wedge.second, origin, direction, 1);
    if (a && b) return a->t <= b->t ? a : b;
    return a ? a : b;
}

double surface_distance(const AnalyticScene& scene, const Eigen::Vector3d& p) {
    if (const auto* plane = std::get_if<AnalyticPlane>(&scene)) return plane_distance(*plane, p);
    if (const auto* box = std::get_if<AnalyticBox>(&scene)) {
        const Eigen::Vector3d c = 0.5 * (box->min + box->max);
        const Eigen::Vector3d h = 0.5 * (box->max - box->min);
        const Eigen::Vector3d q = (p - c).cwiseAbs() - h;
        if ((q.array() <= 0.0).all()) return -q.maxCoeff();
        return q.cwiseMax(0.0).norm();
    }
    const auto& wedge = std::get<AnalyticWedge>(scene);
    return std::min(plane_distance(wedge.first, p), plane_distance(wedge.second, p));
}

std::vector<std::uint8_t> PriorSet::valid_mask() const {
    std::vector<std::uint8_t> m(pseudo_depth.size(), 0);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = pseudo_depth.valid[i] && pseudo_normal.valid[i];
    return m;
}

PriorSet synth_priors(const Camera& camera, const AnalyticScene& scene, std::size_t anchor_count, std::uint64_t seed) {
    camera.validate();
    PriorSet priors;
    priors.pseudo_depth = make_scalar_map(camera.width, camera.height);
    priors.pseudo_normal = make_vector_map(camera.width, camera.height);
    const Eigen::Vector3d origin = camera.center();
    std::vector<std::size_t> valid_pixels;
    for (int v = 0; v < camera.height; ++v) {
        for (int u = 0; u < camera.width; ++u) {
            const Eigen::Vector3d ray_cam = camera.unproject(u + 0.5, v + 0.5).normalized();
            const Eigen::Vector3d ray_world = camera.rotation.transpose() * ray_cam;
            const auto hit = cast_ray(scene, origin, ray_world);
            if (!hit) continue;
            const double depth = hit->t * ray_cam.z();
            if (!(depth > 0.0)) continue;
            Eigen::Vector3d n = camera.rotation * hit->normal_world;
            if (n.dot(ray_cam) > 0.0) n = -n;
            const std::size_t idx = priors.pseudo_depth.index(u, v);
            priors.pseudo_depth.values[idx] = depth;
            priors.pseudo_depth.valid[idx] = 1;
            priors.pseudo_normal.values[idx] = n;
            priors.pseudo_normal.valid[idx] = 1;
            valid_pixels.push_back(idx);
        }
    }
    if (valid_pixels.empty()) throw NumericError("camera " + camera.id + " sees no geometry");

    // partial Fisher-Yates: the first k entries are a uniform sample
    Rng rng(seed);
    const std::size_t k = std::min(anchor_count, valid_pixels.size());
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(valid_pixels.size() - i));
        std::swap(valid_pixels[i], valid_pixels[j]);
        const std::size_t idx = valid_pixels[i];
        priors.sparse_anchors.push_back({static_cast<int>(idx % static_cast<std::size_t>(camera.width)),
                                         static_cast<int>(idx / static_cast<std::size_t>(camera.width)),
                                         priors.pseudo_depth.values[idx]});
    }
    return priors;
}

} // namespace citysplat
