#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "citysplat/core/errors.hpp"
#include "citysplat/core/ply.hpp"
#include "citysplat/partitioner/partitioner.hpp"
#include "citysplat/priors/alignment.hpp"
#include "citysplat/priors/raster.hpp"
#include "citysplat/trainer/scene.hpp"
#include "citysplat/trainer/trainer.hpp"
#include "config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace citysplat;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitConfig = 4;

struct Common {
    std::uint64_t seed = 0;
    std::string config_path;

    Config config() const { return config_path.empty() ? Config{} : load_config(config_path); }
};

void add_common(CLI::App* cmd, Common& common) {
    cmd->add_option("--seed", common.seed, "Seed for all randomness; recorded in output manifests");
    cmd->add_option("--config", common.config_path, "key = value configuration file");
}

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    out << j.dump(2) << '\n';
    if (!out) throw ParseError("failed writing " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw ParseError("failed writing " + path.string());
}

const Camera& find_camera(const std::vector<Camera>& cams, const std::string& id) {
    for (const auto& c : cams)
        if (c.id == id) return c;
    throw ParseError("no camera with id '" + id + "'");
}

std::vector<std::uint32_t> coarse_hits(const GaussianCloud& cloud, const std::vector<Camera>& cams,
                                       const RenderOptions& opt) {
    std::vector<std::uint32_t> hits(cloud.size(), 0);
    for (const auto& cam : cams) {
        const RenderBuffers b = render(cam, cloud, opt);
        for (std::size_t i = 0; i < hits.size(); ++i) hits[i] += b.hit_counts[i];
    }
    return hits;
}

// ---- synth

struct SynthArgs {
    Common common;
    std::string kind = "plane";
    std::string out;
    SynthParams params;
};

int run_synth(const SynthArgs& a) {
    a.common.config();
    const SceneBundle b = synth_scene(parse_scene_kind(a.kind), a.params, a.common.seed);
    save_scene(b, a.out);
    std::printf("wrote %s scene (%zu gaussians, %zu cameras) to %s\n", a.kind.c_str(), b.initial.size(),
                b.cameras.size(), a.out.c_str());
    if (std::isfinite(b.initial_rms)) std::printf("initial_rms=%.17g\n", b.initial_rms);
    return 0;
}

// ---- render

struct RenderArgs {
    Common common;
    std::string cloud, cameras, out;
};

int run_render(const RenderArgs& a) {
    const Config cfg = a.common.config();
    const GaussianCloud cloud = load_cloud(a.cloud);
    const std::vector<Camera> cams = load_cameras(a.cameras);
    const fs::path out(a.out);
    fs::create_directories(out);
    std::vector<std::uint32_t> hits(cloud.size(), 0);
    json views = json::array();
    for (const auto& cam : cams) {
        const RenderBuffers b = render(cam, cloud, cfg.renderer);
        save_raster(to_raster(b.color), (out / (cam.id + "_color.ugsr")).string());
        save_raster(to_raster(b.depth), (out / (cam.id + "_depth.ugsr")).string());
        save_raster(to_raster(b.normal), (out / (cam.id + "_normal.ugsr")).string());
        save_raster(to_raster(b.alpha), (out / (cam.id + "_alpha.ugsr")).string());
        save_ppm(b.color, (out / (cam.id + "_color.ppm")).string());
        for (std::size_t i = 0; i < hits.size(); ++i) hits[i] += b.hit_counts[i];
        views.push_back(cam.id);
    }
    save_hit_counts(hits, (out / "hits.bin").string());
    write_json(out / "render.json", {{"seed", a.common.seed},
                                     {"cloud", a.cloud},
                                     {"cameras", a.cameras},
                                     {"views", views},
                                     {"gaussian_count", cloud.size()},
                                     {"hits", "hits.bin"}});
    std::printf("rendered %zu views of %zu gaussians to %s\n", cams.size(), cloud.size(), a.out.c_str());
    return 0;
}

// ---- losses

struct LossesArgs {
    Common common;
    std::string buffers, priors, cameras, camera;
    bool align = true;
};

int run_losses(const LossesArgs& a) {
    const Config cfg = a.common.config();
    const fs::path bdir(a.buffers), pdir(a.priors);
    const std::vector<Camera> cams = load_cameras(a.cameras.empty() ? (pdir / "cameras.json").string() : a.cameras);
    std::vector<const Camera*> selected;
    if (!a.camera.empty()) {
        selected.push_back(&find_camera(cams, a.camera));
    } else {
        for (const auto& c : cams)
            if (fs::exists(bdir / (c.id + "_depth.ugsr"))) selected.push_back(&c);
        if (selected.empty()) throw ParseError("no rendered buffers found in " + a.buffers);
    }
    for (const Camera* cam : selected) {
        const std::string id = cam->id;
        RenderBuffers b;
        b.color = vector_from_raster(load_raster((bdir / (id + "_color.ugsr")).string()));
        b.depth = scalar_from_raster(load_raster((bdir / (id + "_depth.ugsr")).string()));
        b.normal = vector_from_raster(load_raster((bdir / (id + "_normal.ugsr")).string()));
        b.alpha = scalar_from_raster(load_raster((bdir / (id + "_alpha.ugsr")).string()));
        PriorSet p;
        p.pseudo_depth = scalar_from_raster(load_raster((pdir / (id + "_depth.ugsr")).string()));
        p.pseudo_normal = vector_from_raster(load_raster((pdir / (id + "_normal.ugsr")).string()));
        const VectorMap ref = vector_from_raster(load_raster((pdir / (id + "_reference.ugsr")).string()));
        const fs::path anchors = pdir / (id + "_anchors.txt");
        if (a.align && fs::exists(anchors)) {
            p.sparse_anchors = load_anchors(anchors.string());
            p = align_prior(p);
        }
        const LossReport r = total_loss(b, ref, p, *cam, cfg.losses);
        std::printf("camera=%s\n%s", id.c_str(), r.to_text().c_str());
    }
    return 0;
}

// ---- prune

struct PruneArgs {
    Common common;
    std::string cloud, hits, out, strategy = "sagp", weights = "1.2,1.0,0.8";
    std::optional<double> ratio;
};

int run_prune(const PruneArgs& a) {
    Config cfg = a.common.config();
    if (a.ratio) cfg.sagp.prune_ratio = *a.ratio;
    try {
        cfg.sagp.validate();
    } catch (const InvalidParameter& e) {
        throw ConfigError(e.what());
    }
    const GaussianCloud cloud = load_cloud(a.cloud);
    const std::vector<std::uint32_t> hits = load_hit_counts(a.hits);
    if (hits.size() != cloud.size())
        throw ParseError("hit count file has " + std::to_string(hits.size()) + " entries for " +
                         std::to_string(cloud.size()) + " gaussians");
    PruneResult res;
    json extra = json::object();
    if (cloud.empty()) {
        res.cloud = cloud;
    } else {
        const VoxelGrid grid = build_voxel_grid(cloud, cfg.sagp);
        const ScoreSet s = importance_scores(cloud, grid, hits, cfg.sagp.kappa);
        if (a.strategy == "sagp") {
            res = prune_by_ratio(cloud, s.score, cfg.sagp.prune_ratio);
        } else if (a.strategy == "lwp") {
            std::vector<double> w;
            std::stringstream in(a.weights);
            std::string item;
            try {
                while (std::getline(in, item, ',')) w.push_back(std::stod(item));
            } catch (const std::exception&) {
                throw ConfigError("--weights expects three numbers, got '" + a.weights + "'");
            }
            if (w.size() != 3) throw ConfigError("--weights expects three numbers, got '" + a.weights + "'");
            const std::vector<double> lwp = lwp_scores(s.phi, s.tau_op, s.w_v, w[0], w[1], w[2]);
            res = prune_by_ratio(cloud, lwp, cfg.sagp.prune_ratio);
            extra["weights"] = w;
        } else {
            throw ConfigError("unknown strategy '" + a.strategy + "' (expected sagp or lwp)");
        }
    }
    save_cloud(res.cloud, a.out);
    const std::string hits_out = a.out + ".hits";
    save_hit_counts(cloud.empty() ? hits : carry_hit_counts(hits, res.old_to_new, res.cloud.size()), hits_out);
    json m{{"seed", a.common.seed},
           {"strategy", a.strategy},
           {"prune_ratio", cfg.sagp.prune_ratio},
           {"input", a.cloud},
           {"input_count", cloud.size()},
           {"output_count", res.cloud.size()},
           {"refused", res.refused},
           {"kept", res.kept},
           {"hits", fs::path(hits_out).filename().string()}};
    m.update(extra);
    write_json(a.out + ".json", m);
    std::printf("kept %zu of %zu gaussians\n", res.cloud.size(), cloud.size());
    return 0;
}

// ---- partition / merge

struct PartitionArgs {
    Common common;
    std::string cloud, cameras, hits, out;
};

int run_partition(const PartitionArgs& a) {
    const Config cfg = a.common.config();
    const GaussianCloud cloud = load_cloud(a.cloud);
    const std::vector<Camera> cams = load_cameras(a.cameras);
    const std::vector<std::uint32_t> hits = a.hits.empty() ? coarse_hits(cloud, cams, cfg.renderer) : load_hit_counts(a.hits);
    if (hits.size() != cloud.size()) throw ParseError("hit count file does not match the cloud");
    const PartitionResult res = global_prune_then_partition(cloud, hits, cams, cfg.sagp, cfg.partition, cfg.renderer);
    write_partition(res, cfg.partition, a.common.seed, a.out);
    std::printf("partitioned %zu gaussians (of %zu) into %zu blocks in %s\n", res.cloud.size(), cloud.size(),
                res.blocks.size(), a.out.c_str());
    return 0;
}

struct MergeArgs {
    Common common;
    std::string partition, out;
};

int run_merge(const MergeArgs& a) {
    const PartitionManifest m = read_partition(a.partition);
    const GaussianCloud merged = merge_blocks(m.blocks, m.gaussian_count);
    save_cloud(merged, a.out);
    std::printf("merged %zu blocks into %zu gaussians\n", m.blocks.size(), merged.size());
    return 0;
}

// ---- train

struct TrainArgs {
    Common common;
    std::string scene, out;
    std::optional<int> iterations;
};

int run_train(const TrainArgs& a) {
    const Config cfg = a.common.config();
    TrainConfig tc = cfg.train_config(a.common.seed);
    if (a.iterations) tc.iterations = *a.iterations;
    try {
        tc.validate();
    } catch (const InvalidParameter& e) {
        throw ConfigError(e.what());
    }
    const SceneBundle bundle = load_scene(a.scene);
    const TrainResult r = train(bundle, tc);
    const fs::path out(a.out);
    fs::create_directories(out);
    write_text(out / "train.csv", r.record.to_csv());
    save_cloud(r.cloud, (out / "final.ply").string());
    write_json(out / "train.json", {{"seed", a.common.seed},
                                    {"scene", a.scene},
                                    {"iterations", tc.iterations},
                                    {"recorded", r.record.rows.size()},
                                    {"prune_iterations", r.prune_iterations},
                                    {"final_count", r.cloud.size()},
                                    {"aborted", r.aborted},
                                    {"diagnostic", r.diagnostic},
                                    {"config", config_to_text(cfg)}});
    if (r.aborted) {
        std::fprintf(stderr, "training aborted: %s (last good cloud written)\n", r.diagnostic.c_str());
        return kExitNumeric;
    }
    if (!r.record.rows.empty()) {
        const TrainRow& last = r.record.rows.back();
        std::printf("iterations=%d total=%.17g psnr=%.17g rms=%.17g count=%zu\n", last.iter, last.total, last.psnr,
                    last.rms, last.count);
    }
    return 0;
}

// ---- fit-depth

struct FitArgs {
    Common common;
    std::string mono, anchors, out;
};

int run_fit_depth(const FitArgs& a) {
    a.common.config();
    const ScalarMap mono = scalar_from_raster(load_raster(a.mono));
    const std::vector<DepthAnchor> anchors = load_anchors(a.anchors);
    std::vector<double> m, d;
    for (const auto& an : anchors) {
        if (an.u < 0 || an.v < 0 || an.u >= mono.width || an.v >= mono.height)
            throw ParseError(a.anchors + ": anchor (" + std::to_string(an.u) + "," + std::to_string(an.v) +
                             ") outside the raster");
        if (!mono.is_valid(an.u, an.v)) continue;
        m.push_back(mono.at(an.u, an.v));
        d.push_back(an.depth);
    }
    const AlignmentFit fit = fit_scale_shift(m, d);
    save_raster(to_raster(apply_alignment(mono, fit)), a.out);
    write_json(a.out + ".json", {{"seed", a.common.seed},
                                 {"scale", fit.scale},
                                 {"shift", fit.shift},
                                 {"inliers", fit.inlier_count},
                                 {"residual_mad", fit.residual_mad}});
    std::printf("scale=%.17g\nshift=%.17g\ninliers=%zu\nresidual_mad=%.17g\n", fit.scale, fit.shift, fit.inlier_count,
                fit.residual_mad);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"citysplat: geometry-regularized Gaussian splatting toolkit"};
    app.require_subcommand(1);
    int code = 0;

    SynthArgs synth;
    auto* c_synth = app.add_subcommand("synth", "Generate a synthetic scene bundle");
    add_common(c_synth, synth.common);
    c_synth->add_option("--kind", synth.kind, "plane | box | wedge | redundant-city")->capture_default_str();
    c_synth->add_option("--out", synth.out, "Output directory")->required();
    c_synth->add_option("--gaussians", synth.params.gaussian_count)->capture_default_str();
    c_synth->add_option("--noise", synth.params.position_noise, "Initial position noise")->capture_default_str();
    c_synth->add_option("--size", synth.params.image_size, "Image width and height")->capture_default_str();
    c_synth->add_option("--cameras", synth.params.camera_count)->capture_default_str();
    c_synth->add_option("--anchors", synth.params.anchor_count, "Sparse depth anchors per view")->capture_default_str();
    c_synth->add_option("--planted", synth.params.planted_fraction, "redundant-city planted fraction")->capture_default_str();
    c_synth->callback([&] { code = run_synth(synth); });

    RenderArgs rnd;
    auto* c_render = app.add_subcommand("render", "Render color/depth/normal/alpha rasters per camera");
    add_common(c_render, rnd.common);
    c_render->add_option("--cloud", rnd.cloud)->required();
    c_render->add_option("--cameras", rnd.cameras)->required();
    c_render->add_option("--out", rnd.out)->required();
    c_render->callback([&] { code = run_render(rnd); });

    LossesArgs los;
    auto* c_losses = app.add_subcommand("losses", "Print the loss report of rendered buffers against priors");
    add_common(c_losses, los.common);
    c_losses->add_option("--buffers", los.buffers, "Directory written by render")->required();
    c_losses->add_option("--priors", los.priors, "Scene directory with priors and references")->required();
    c_losses->add_option("--cameras", los.cameras, "Camera file (default: <priors>/cameras.json)");
    c_losses->add_option("--camera", los.camera, "Only this camera id");
    c_losses->add_flag("!--no-align", los.align, "Use prior depth as stored, without anchor alignment");
    c_losses->callback([&] { code = run_losses(los); });

    PruneArgs pr;
    auto* c_prune = app.add_subcommand("prune", "Score and prune a cloud");
    add_common(c_prune, pr.common);
    c_prune->add_option("--cloud", pr.cloud)->required();
    c_prune->add_option("--hits", pr.hits, "Hit-count sidecar")->required();
    c_prune->add_option("--out", pr.out)->required();
    c_prune->add_option("--strategy", pr.strategy, "sagp | lwp")->capture_default_str();
    c_prune->add_option("--weights", pr.weights, "lwp weights alpha,beta,gamma")->capture_default_str();
    c_prune->add_option("--ratio", pr.ratio, "Override sagp.prune_ratio");
    c_prune->callback([&] { code = run_prune(pr); });

    PartitionArgs pa;
    auto* c_part = app.add_subcommand("partition", "Prune globally and split into blocks");
    add_common(c_part, pa.common);
    c_part->add_option("--cloud", pa.cloud)->required();
    c_part->add_option("--cameras", pa.cameras)->required();
    c_part->add_option("--hits", pa.hits, "Hit-count sidecar (default: render every camera)");
    c_part->add_option("--out", pa.out)->required();
    c_part->callback([&] { code = run_partition(pa); });

    MergeArgs me;
    auto* c_merge = app.add_subcommand("merge", "Merge block clouds back into one cloud");
    add_common(c_merge, me.common);
    c_merge->add_option("--partition", me.partition, "Directory written by partition")->required();
    c_merge->add_option("--out", me.out)->required();
    c_merge->callback([&] { code = run_merge(me); });

    TrainArgs tr;
    auto* c_train = app.add_subcommand("train", "Optimize a scene bundle");
    add_common(c_train, tr.common);
    c_train->add_option("--scene", tr.scene)->required();
    c_train->add_option("--out", tr.out)->required();
    c_train->add_option("--iterations", tr.iterations, "Override trainer.iterations");
    c_train->callback([&] { code = run_train(tr); });

    FitArgs fd;
    auto* c_fit = app.add_subcommand("fit-depth", "Fit scale and shift of a depth raster to sparse anchors");
    add_common(c_fit, fd.common);
    c_fit->add_option("--mono", fd.mono)->required();
    c_fit->add_option("--anchors", fd.anchors)->required();
    c_fit->add_option("--out", fd.out)->required();
    c_fit->callback([&] { code = run_fit_depth(fd); });

    auto* c_defaults = app.add_subcommand("defaults", "Print every configuration key with its default");
    c_defaults->callback([&] { std::fputs(config_to_text(Config{}).c_str(), stdout); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitInput;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const InvalidParameter& e) {
        std::fprintf(stderr, "invalid parameter: %s\n", e.what());
        return kExitConfig;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return kExitInput;
    } catch (const fs::filesystem_error& e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return kExitInput;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return code;
}
