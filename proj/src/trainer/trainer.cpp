#include "citysplat/trainer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "citysplat/core/errors.hpp"

namespace citysplat {
namespace {

Eigen::Vector3d& group_entry(CloudGradient& g, ParamKind kind, std::size_t i) {
    switch (kind) {
    case ParamKind::Position: return g.position[i];
    case ParamKind::RotationTangent: return g.rotation[i];
    case ParamKind::LogScale: return g.log_scale[i];
    default: return g.color[i];
    }
}

bool finite(const CloudGradient& g) {
    for (std::size_t i = 0; i < g.size(); ++i)
        if (!g.position[i].allFinite() || !g.rotation[i].allFinite() || !g.log_scale[i].allFinite() ||
            !std::isfinite(g.opacity[i]) || !g.color[i].allFinite())
            return false;
    return true;
}

} // namespace

GradientMode parse_gradient_mode(const std::string& name) {
    if (name == "hybrid") return GradientMode::Hybrid;
    if (name == "fd" || name == "finite-difference") return GradientMode::FiniteDifference;
    throw InvalidParameter("unknown gradient mode: " + name);
}

void TrainConfig::validate() const {
    if (iterations < 1) throw InvalidParameter("trainer.iterations must be >= 1");
    for (double r : {lr.position, lr.rotation, lr.log_scale, lr.opacity, lr.color})
        if (!(r >= 0.0) || !std::isfinite(r)) throw InvalidParameter("trainer learning rates must be finite and >= 0");
    if (!(scale_loss_weight >= 0.0)) throw InvalidParameter("trainer.scale_loss_weight must be >= 0");
    if (!(fd_step > 0.0)) throw InvalidParameter("trainer.fd_step must be positive");
    if (cameras_per_step < 1) throw InvalidParameter("trainer.cameras_per_step must be >= 1");
    loss.validate();
    prune.validate();
}

CloudGradient::CloudGradient(std::size_t n)
    : position(n, Eigen::Vector3d::Zero()), rotation(n, Eigen::Vector3d::Zero()), log_scale(n, Eigen::Vector3d::Zero()),
      opacity(n, 0.0), color(n, Eigen::Vector3d::Zero()) {}

void CloudGradient::add(const CloudGradient& o, double f) {
    if (o.size() != size()) throw InvalidParameter("CloudGradient::add: size mismatch");
    for (std::size_t i = 0; i < size(); ++i) {
        position[i] += f * o.position[i];
        rotation[i] += f * o.rotation[i];
        log_scale[i] += f * o.log_scale[i];
        opacity[i] += f * o.opacity[i];
        color[i] += f * o.color[i];
    }
}

double CloudGradient::max_abs() const {
    double m = 0.0;
    for (std::size_t i = 0; i < size(); ++i)
        m = std::max({m, position[i].cwiseAbs().maxCoeff(), rotation[i].cwiseAbs().maxCoeff(),
                      log_scale[i].cwiseAbs().maxCoeff(), std::abs(opacity[i]), color[i].cwiseAbs().maxCoeff()});
    return m;
}

double view_objective(const GaussianCloud& cloud, const View& view, const TrainConfig& config) {
    const RenderBuffers b = render(*view.camera, cloud, config.render);
    const LossReport r = total_loss(b, *view.reference, *view.priors, *view.camera, config.loss);
    return r.total + config.scale_loss_weight * scale_loss(cloud);
}

CloudGradient scale_loss_gradient(const GaussianCloud& cloud, double weight) {
    CloudGradient g(cloud.size());
    if (cloud.empty() || weight == 0.0) return g;
    const double inv_n = weight / static_cast<double>(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Eigen::Vector3d s = cloud.scales(i);
        const int k = min_scale_axis(s);
        g.log_scale[i][k] = inv_n * s[k];
    }
    return g;
}

CloudGradient hybrid_gradient(const GaussianCloud& cloud, const View& view, const TrainConfig& config,
                              LossReport* report_out, RenderBuffers* buffers_out) {
    const Camera& cam = *view.camera;
    RenderTrace trace;
    RenderBuffers buffers = render(cam, cloud, config.render, &trace);
    LossReport report = total_loss(buffers, *view.reference, *view.priors, cam, config.loss);
    const MapGradients mg = loss_map_gradients(buffers, *view.reference, *view.priors, cam, config.loss, report);

    const std::size_t n = cloud.size();
    std::vector<Eigen::Vector3d> g_pcam(n, Eigen::Vector3d::Zero()), g_ncam(n, Eigen::Vector3d::Zero());
    CloudGradient g(n);

    for (int v = 0; v < cam.height; ++v) {
        for (int u = 0; u < cam.width; ++u) {
            const std::size_t idx = buffers.depth.index(u, v);
            const auto& contribs = trace.pixels[idx];
            if (contribs.empty()) continue;
            for (const auto& c : contribs) g.color[c.gaussian] += c.weight * mg.color.values[idx];

            const double gd = mg.depth.values[idx];
            if (buffers.depth.valid[idx] && gd != 0.0) {
                const Eigen::Vector3d ray = generate_ray(cam, u, v);
                double wsum = 0.0;
                for (const auto& c : contribs)
                    if (c.has_depth) wsum += c.weight;
                for (const auto& c : contribs) {
                    if (!c.has_depth) continue;
                    const Splat& s = trace.splats[static_cast<std::size_t>(trace.splat_of_gaussian[c.gaussian])];
                    const double nr = s.normal_cam.dot(ray);
                    if (std::abs(nr) < 1e-8) continue;
                    const DepthGradients dg = intersection_depth_grads(s.normal_cam, s.center_cam, ray);
                    const double coef = gd * c.weight / wsum;
                    g_pcam[c.gaussian] += coef * dg.d_position;
                    g_ncam[c.gaussian] += coef * dg.d_normal;
                }
            }

            const Eigen::Vector3d& gn = mg.normal.values[idx];
            if (buffers.normal.valid[idx] && !gn.isZero(0.0)) {
                Eigen::Vector3d sum = Eigen::Vector3d::Zero();
                for (const auto& c : contribs)
                    sum += c.weight *
                           trace.splats[static_cast<std::size_t>(trace.splat_of_gaussian[c.gaussian])].normal_cam;
                const double len = sum.norm();
                if (len > 0.0) {
                    const Eigen::Vector3d nh = sum / len;
                    const Eigen::Vector3d proj = (gn - nh * nh.dot(gn)) / len;
                    for (const auto& c : contribs) g_ncam[c.gaussian] += c.weight * proj;
                }
            }
        }
    }

    const Eigen::Matrix3d rt = cam.rotation.transpose();
    for (std::size_t i = 0; i < n; ++i) {
        const std::int32_t k = trace.splat_of_gaussian[i];
        if (k < 0) continue;
        const Splat& s = trace.splats[static_cast<std::size_t>(k)];
        g.position[i] = rt * g_pcam[i];
        const Eigen::Vector3d g_nworld = (s.normal_flipped ? -1.0 : 1.0) * (rt * g_ncam[i]);
        const Eigen::Matrix3d rg = rotation_matrix(cloud.rotation(i));
        g.rotation[i] = Eigen::Vector3d::Unit(s.normal_axis).cross(rg.transpose() * g_nworld);
    }
    if (report_out) *report_out = std::move(report);
    if (buffers_out) *buffers_out = std::move(buffers);
    return g;
}

CloudGradient fd_gradient(const GaussianCloud& cloud, const View& view, const TrainConfig& config,
                          const std::vector<ParamKind>& groups) {
    CloudGradient g(cloud.size());
    std::vector<ParamSelector> params;
    for (std::size_t i = 0; i < cloud.size(); ++i)
        for (const ParamSelector& p : gaussian_parameters(i))
            if (std::find(groups.begin(), groups.end(), p.kind) != groups.end()) params.push_back(p);
    if (params.empty()) return g;
    const LossEvaluator f = [&](const GaussianCloud& c) { return view_objective(c, view, config); };
    const std::vector<double> d = finite_diff_grad(f, cloud, params, config.fd_step);
    for (std::size_t k = 0; k < params.size(); ++k) {
        const ParamSelector& p = params[k];
        if (p.kind == ParamKind::Opacity)
            g.opacity[p.gaussian] = d[k];
        else
            group_entry(g, p.kind, p.gaussian)[p.component] = d[k];
    }
    return g;
}

GaussianCloud apply_gradient(const GaussianCloud& cloud, const CloudGradient& grad, const LearningRates& lr) {
    if (grad.size() != cloud.size()) throw InvalidParameter("apply_gradient: gradient size differs from cloud");
    GaussianCloud out = cloud;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        Gaussian g = cloud[i];
        g.position -= lr.position * grad.position[i];
        const Eigen::Vector3d delta = -lr.rotation * grad.rotation[i];
        const double angle = delta.norm();
        if (angle > 0.0) {
            const Eigen::Quaterniond dq(Eigen::AngleAxisd(angle, delta / angle));
            g.rotation = g.rotation.normalized() * dq;
        }
        g.log_scales -= lr.log_scale * grad.log_scale[i];
        g.opacity_logit -= lr.opacity * grad.opacity[i];
        g.color -= lr.color * grad.color[i];
        out.set(i, g);
    }
    return out;
}

double psnr(const VectorMap& image, const VectorMap& reference) {
    if (!image.same_shape(reference)) throw InvalidParameter("psnr: image sizes differ");
    if (image.size() == 0) throw InvalidParameter("psnr: empty image");
    double sum = 0.0;
    for (std::size_t i = 0; i < image.size(); ++i) sum += (image.values[i] - reference.values[i]).squaredNorm();
    const double mse = sum / (3.0 * static_cast<double>(image.size()));
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

StepResult step(const GaussianCloud& cloud, const std::vector<View>& views, const TrainConfig& config) {
    if (views.empty()) throw InvalidParameter("step: no views");
    StepResult out;
    CloudGradient total(cloud.size());
    out.hit_counts.assign(cloud.size(), 0);
    const double share = 1.0 / static_cast<double>(views.size());
    for (const View& view : views) {
        LossReport r;
        RenderBuffers b;
        if (config.mode == GradientMode::Hybrid) {
            total.add(hybrid_gradient(cloud, view, config, &r, &b), share);
            if (!config.fd_groups.empty()) total.add(fd_gradient(cloud, view, config, config.fd_groups), share);
        } else {
            b = render(*view.camera, cloud, config.render);
            r = total_loss(b, *view.reference, *view.priors, *view.camera, config.loss);
            total.add(fd_gradient(cloud, view, config,
                                  {ParamKind::Position, ParamKind::RotationTangent, ParamKind::LogScale,
                                   ParamKind::Opacity, ParamKind::Color}),
                      share);
        }
        if (!std::isfinite(r.total)) throw NumericError("non-finite loss at camera " + view.camera->id);
        out.report.total += share * r.total;
        out.report.rgb += share * r.rgb;
        out.report.n += share * r.n;
        out.report.dn += share * r.dn;
        out.report.id_weighted += share * r.id_weighted;
        out.report.n_pixels += r.n_pixels;
        out.report.dn_pixels += r.dn_pixels;
        out.report.id_pixels += r.id_pixels;
        out.report.ssim_window_shrunk = out.report.ssim_window_shrunk || r.ssim_window_shrunk;
        out.psnr += share * psnr(b.color, *view.reference);
        for (std::size_t i = 0; i < cloud.size(); ++i) out.hit_counts[i] += b.hit_counts[i];
    }
    // FD mode already differentiates L_s inside view_objective
    const double ls = config.scale_loss_weight * scale_loss(cloud);
    out.report.total += ls;
    if (config.mode == GradientMode::Hybrid &&
        std::find(config.fd_groups.begin(), config.fd_groups.end(), ParamKind::LogScale) == config.fd_groups.end())
        total.add(scale_loss_gradient(cloud, config.scale_loss_weight));
    if (!std::isfinite(out.report.total)) throw NumericError("non-finite scale loss");
    if (!finite(total)) throw NumericError("non-finite gradient");
    out.cloud = apply_gradient(cloud, total, config.lr);
    return out;
}

std::string TrainRecord::to_csv() const {
    std::string s = "iter,total,rgb,n,dn,idw,count,psnr,rms\n";
    char buf[512];
    for (const TrainRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%zu,%.17g,%.17g\n", r.iter, r.total, r.rgb,
                      r.n, r.dn, r.idw, r.count, r.psnr, r.rms);
        s += buf;
    }
    return s;
}

TrainResult train(const SceneBundle& bundle, const TrainConfig& config) {
    config.validate();
    if (bundle.cameras.empty()) throw InvalidParameter("train: scene has no cameras");
    if (bundle.priors.size() != bundle.cameras.size() || bundle.references.size() != bundle.cameras.size())
        throw InvalidParameter("train: priors/references do not match the cameras");
    const std::vector<PriorSet> priors = aligned_priors(bundle);
    const std::size_t ncam = bundle.cameras.size();

    TrainResult res;
    res.cloud = bundle.initial;
    std::vector<std::uint32_t> hits(res.cloud.size(), 0);
    std::size_t next = static_cast<std::size_t>(config.seed % ncam);
    for (int t = 0; t < config.iterations; ++t) {
        std::vector<View> views;
        for (int k = 0; k < config.cameras_per_step; ++k) {
            const std::size_t c = (next + static_cast<std::size_t>(k)) % ncam;
            views.push_back({&bundle.cameras[c], &priors[c], &bundle.references[c]});
        }
        next = (next + static_cast<std::size_t>(config.cameras_per_step)) % ncam;

        StepResult s;
        try {
            s = step(res.cloud, views, config);
        } catch (const NumericError& e) {
            res.aborted = true;
            res.diagnostic = "iteration " + std::to_string(t + 1) + ": " + e.what();
            return res;
        }
        res.cloud = std::move(s.cloud);
        for (std::size_t i = 0; i < hits.size(); ++i) hits[i] += s.hit_counts[i];

        const int done = t + 1;
        if (schedule_should_prune(done, config.iterations, config.prune.schedule_fractions) && !res.cloud.empty()) {
            const VoxelGrid grid = build_voxel_grid(res.cloud, config.prune);
            const ScoreSet scores = importance_scores(res.cloud, grid, hits, config.prune.kappa);
            PruneResult p = prune_by_ratio(res.cloud, scores.score, config.prune.prune_ratio);
            hits = carry_hit_counts(hits, p.old_to_new, p.cloud.size());
            res.cloud = std::move(p.cloud);
            res.prune_iterations.push_back(static_cast<std::size_t>(done));
        }

        TrainRow row;
        row.iter = done;
        row.total = s.report.total;
        row.rgb = s.report.rgb;
        row.n = s.report.n;
        row.dn = s.report.dn;
        row.idw = s.report.id_weighted;
        row.count = res.cloud.size();
        row.psnr = s.psnr;
        row.rms = bundle.surface ? rms_to_surface(res.cloud, *bundle.surface) : kNaN;
        res.record.rows.push_back(row);
    }
    return res;
}

} // namespace citysplat
