#include "citysplat/renderer/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <Eigen/Dense>

#include "citysplat/core/errors.hpp"

namespace citysplat {

Eigen::Vector3d generate_ray(const Camera& camera, double u, double v) {
    return camera.unproject(u + 0.5, v + 0.5).normalized();
}

std::optional<Splat> project_gaussian(const Camera& camera, const Gaussian& g, std::size_t source_index,
                                      const RenderOptions& options) {
    const Eigen::Vector3d p = camera.to_camera(g.position);
    if (p.z() <= options.near) return std::nullopt;

    const Eigen::Vector3d scales = g.scales();
    const Eigen::Matrix3d sigma_cam = camera.rotation * build_covariance(g.rotation, scales) *
                                      camera.rotation.transpose();
    Eigen::Matrix<double, 2, 3> jac;
    const double iz = 1.0 / p.z();
    jac << camera.fx * iz, 0.0, -camera.fx * p.x() * iz * iz, //
        0.0, camera.fy * iz, -camera.fy * p.y() * iz * iz;

    Splat s;
    s.cov2d = jac * sigma_cam * jac.transpose();
    s.cov2d = 0.5 * (s.cov2d + s.cov2d.transpose()) + options.dilation * Eigen::Matrix2d::Identity();
    const double det = s.cov2d.determinant();
    if (!(det > 0.0) || !std::isfinite(det)) return std::nullopt;
    s.conic = s.cov2d.inverse();
    const double mid = 0.5 * (s.cov2d(0, 0) + s.cov2d(1, 1));
    const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));
    s.radius = std::sqrt(options.cutoff_mahalanobis * lambda_max);

    s.mean2d = camera.project(p);
    s.center_cam = p;
    s.normal_axis = min_scale_axis(scales);
    s.normal_cam = camera.rotation * rotation_matrix(g.rotation).col(s.normal_axis);
    if (s.normal_cam.dot(p) > 0.0) {
        s.normal_cam = -s.normal_cam;
        s.normal_flipped = true;
    }
    s.opacity = g.opacity();
    s.color = g.color;
    s.source_index = source_index;
    return s;
}

std::optional<double> intersection_depth(const Eigen::Vector3d& normal_cam, const Eigen::Vector3d& center_cam,
                                         const Eigen::Vector3d& ray) {
    const double nr = normal_cam.dot(ray);
    if (std::abs(nr) < 1e-8) return std::nullopt;
    return ray.z() * normal_cam.dot(center_cam) / nr;
}

namespace {

RenderBuffers render_impl(const Camera& camera, const GaussianCloud& cloud, const std::vector<std::uint8_t>& skip,
                          bool count_hits, const RenderOptions& options, RenderTrace* trace) {
    camera.validate();
    const int w = camera.width;
    const int h = camera.height;
    const std::size_t n = cloud.size();

    RenderBuffers out;
    out.color = VectorMap(w, h, Eigen::Vector3d::Zero(), true);
    out.depth = make_scalar_map(w, h);
    out.normal = make_vector_map(w, h);
    out.alpha = ScalarMap(w, h, 0.0, true);
    out.hit_counts.assign(n, 0);

    std::vector<Splat> splats;
    std::vector<std::int32_t> splat_of(n, -1);
    for (std::size_t i = 0; i < n; ++i) {
        if (!skip.empty() && skip[i]) continue;
        if (auto s = project_gaussian(camera, cloud[i], i, options)) splats.push_back(*s);
    }
    // blend order: camera z, ties by cloud index
    std::sort(splats.begin(), splats.end(), [](const Splat& a, const Splat& b) {
        if (a.center_cam.z() != b.center_cam.z()) return a.center_cam.z() < b.center_cam.z();
        return a.source_index < b.source_index;
    });
    for (std::size_t k = 0; k < splats.size(); ++k) splat_of[splats[k].source_index] = static_cast<std::int32_t>(k);

    const int ts = options.tile_size;
    const int tiles_x = (w + ts - 1) / ts;
    const int tiles_y = (h + ts - 1) / ts;
    std::vector<std::vector<std::uint32_t>> tile_lists(static_cast<std::size_t>(tiles_x * tiles_y));
    for (std::size_t k = 0; k < splats.size(); ++k) {
        const Splat& s = splats[k];
        // pixel u is touched when its center u + 0.5 lies within the radius
        const double u0 = std::ceil(s.mean2d.x() - s.radius - 0.5);
        const double u1 = std::floor(s.mean2d.x() + s.radius - 0.5);
        const double v0 = std::ceil(s.mean2d.y() - s.radius - 0.5);
        const double v1 = std::floor(s.mean2d.y() + s.radius - 0.5);
        if (u1 < 0 || v1 < 0 || u0 > w - 1 || v0 > h - 1 || u0 > u1 || v0 > v1) continue;
        const int tx0 = static_cast<int>(std::max(0.0, u0)) / ts;
        const int tx1 = static_cast<int>(std::min<double>(w - 1, u1)) / ts;
        const int ty0 = static_cast<int>(std::max(0.0, v0)) / ts;
        const int ty1 = static_cast<int>(std::min<double>(h - 1, v1)) / ts;
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx)
                tile_lists[static_cast<std::size_t>(ty * tiles_x + tx)].push_back(static_cast<std::uint32_t>(k));
    }

    if (trace) {
        trace->pixels.assign(camera.pixel_count(), {});
    }
    std::vector<std::vector<std::uint32_t>> tile_hits(tile_lists.size());

    const int tile_count = tiles_x * tiles_y;
#pragma omp parallel for schedule(dynamic)
    for (int t = 0; t < tile_count; ++t) {
        const auto& list = tile_lists[static_cast<std::size_t>(t)];
        auto& hits = tile_hits[static_cast<std::size_t>(t)];
        hits.assign(list.size(), 0);
        const int tx = t % tiles_x;
        const int ty = t / tiles_x;
        for (int v = ty * ts; v < std::min(h, (ty + 1) * ts); ++v) {
            for (int u = tx * ts; u < std::min(w, (tx + 1) * ts); ++u) {
                const Eigen::Vector2d pix(u + 0.5, v + 0.5);
                const Eigen::Vector3d ray = generate_ray(camera, u, v);
                double transmittance = 1.0;
                double alpha_sum = 0.0;
                double depth_num = 0.0;
                double depth_den = 0.0;
                Eigen::Vector3d color = Eigen::Vector3d::Zero();
                Eigen::Vector3d normal = Eigen::Vector3d::Zero();
                std::vector<Contribution>* record = trace ? &trace->pixels[out.color.index(u, v)] : nullptr;
                for (std::size_t j = 0; j < list.size(); ++j) {
                    const Splat& s = splats[list[j]];
                    const Eigen::Vector2d d = pix - s.mean2d;
                    const double maha = d.dot(s.conic * d);
                    if (maha > options.cutoff_mahalanobis) continue;
                    const double alpha = std::min(options.max_alpha, s.opacity * std::exp(-0.5 * maha));
                    const double weight = alpha * transmittance;
                    if (weight >= options.hit_weight) ++hits[j];
                    color += weight * s.color;
                    normal += weight * s.normal_cam;
                    alpha_sum += weight;
                    Contribution c;
                    c.gaussian = static_cast<std::uint32_t>(s.source_index);
                    c.weight = weight;
                    if (auto di = intersection_depth(s.normal_cam, s.center_cam, ray); di && *di > options.near) {
                        depth_num += weight * *di;
                        depth_den += weight;
                        c.depth = *di;
                        c.has_depth = true;
                    }
                    if (record) record->push_back(c);
                    transmittance *= 1.0 - alpha;
                    if (transmittance < options.min_transmittance) break;
                }
                const std::size_t idx = out.color.index(u, v);
                out.color.values[idx] = color;
                out.alpha.values[idx] = alpha_sum;
                if (alpha_sum >= options.alpha_floor) {
                    if (depth_den > 0.0) {
                        out.depth.values[idx] = depth_num / depth_den;
                        out.depth.valid[idx] = 1;
                    }
                    const double len = normal.norm();
                    if (len > 0.0) {
                        out.normal.values[idx] = normal / len;
                        out.normal.valid[idx] = 1;
                    }
                }
            }
        }
    }

    if (count_hits) {
        for (std::size_t t = 0; t < tile_lists.size(); ++t)
            for (std::size_t j = 0; j < tile_lists[t].size(); ++j)
                out.hit_counts[splats[tile_lists[t][j]].source_index] += tile_hits[t][j];
    }
    if (trace) {
        trace->splat_of_gaussian = std::move(splat_of);
        trace->splats = std::move(splats);
    }
    return out;
}

} // namespace

RenderBuffers render(const Camera& camera, const GaussianCloud& cloud, const RenderOptions& options,
                     RenderTrace* trace) {
    return render_impl(camera, cloud, {}, true, options, trace);
}

RenderBuffers render_excluding(const Camera& camera, const GaussianCloud& cloud,
                               std::span<const std::size_t> excluded, const RenderOptions& options) {
    std::vector<std::uint8_t> skip(cloud.size(), 0);
    for (std::size_t i : excluded) {
        if (i >= cloud.size())
            throw InvalidParameter("excluded index " + std::to_string(i) + " out of range");
        skip[i] = 1;
    }
    return render_impl(camera, cloud, skip, false, options, nullptr);
}

} // namespace citysplat
