#include "citysplat/trainer/scene.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "citysplat/core/errors.hpp"
#include "citysplat/core/ply.hpp"
#include "citysplat/core/random.hpp"
#include "citysplat/priors/alignment.hpp"
#include "citysplat/priors/raster.hpp"
#include "citysplat/renderer/renderer.hpp"

namespace citysplat {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr double kFaceOpacityLogit = 4.6; // ~0.99

Gaussian surfel(const Eigen::Vector3d& p, const Eigen::Quaterniond& q, double in_plane, double thickness,
                double opacity_logit, const Eigen::Vector3d& color) {
    Gaussian g;
    g.position = p;
    g.rotation = q;
    g.log_scales = Eigen::Vector3d(std::log(in_plane), std::log(in_plane), std::log(thickness));
    g.opacity_logit = opacity_logit;
    g.color = color;
    return g;
}

Eigen::Vector3d random_color(Rng& rng) { return {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)}; }

/// n surfels on a near-square grid over a planar patch spanned by unit axes a, b.
void tile_patch(GaussianCloud& out, std::size_t n, const Eigen::Vector3d& center, const Eigen::Vector3d& a,
                const Eigen::Vector3d& b, double half_a, double half_b, double thickness, double opacity_logit,
                Rng& rng) {
    if (n == 0) return;
    const double aspect = half_a / half_b;
    const auto cols = static_cast<std::size_t>(std::max(1.0, std::round(std::sqrt(n * aspect))));
    const std::size_t rows = (n + cols - 1) / cols;
    const double step_a = 2.0 * half_a / static_cast<double>(cols);
    const double step_b = 2.0 * half_b / static_cast<double>(rows);
    const Eigen::Vector3d normal = a.cross(b).normalized();
    const Eigen::Quaterniond q = Eigen::Quaterniond::FromTwoVectors(Eigen::Vector3d::UnitZ(), normal);
    const double in_plane = 0.4 * std::max(step_a, step_b);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t r = k / cols;
        const std::size_t c = k % cols;
        // the final row may be short; center it
        const std::size_t in_row = std::min(cols, n - r * cols);
        const double offset = 0.5 * static_cast<double>(cols - in_row);
        const double sa = -half_a + step_a * (static_cast<double>(c) + 0.5 + offset);
        const double sb = -half_b + step_b * (static_cast<double>(r) + 0.5);
        out.push_back(surfel(center + sa * a + sb * b, q, in_plane, thickness, opacity_logit, random_color(rng)));
    }
}

std::vector<Camera> ring_cameras(const Eigen::Vector3d& target, double radius, double height, int count,
                                 double focal, int size, const Eigen::Vector3d& down) {
    std::vector<Camera> cams;
    for (int i = 0; i < count; ++i) {
        const double t = 2.0 * std::numbers::pi * (static_cast<double>(i) + 0.125) / count;
        const Eigen::Vector3d eye = target + Eigen::Vector3d(radius * std::cos(t), radius * std::sin(t), height);
        cams.push_back(look_at("cam" + std::to_string(i), eye, target, down, focal, size, size));
    }
    return cams;
}

struct Box {
    Eigen::Vector3d lo, hi;
};

/// Five faces (no bottom) of an axis-aligned box sitting on z = lo.z.
void tile_building(GaussianCloud& out, std::size_t n, const Box& box, double thickness, Rng& rng) {
    const Eigen::Vector3d c = 0.5 * (box.lo + box.hi);
    const Eigen::Vector3d h = 0.5 * (box.hi - box.lo);
    const Eigen::Vector3d X = Eigen::Vector3d::UnitX(), Y = Eigen::Vector3d::UnitY(), Z = Eigen::Vector3d::UnitZ();
    const double areas[5] = {h.x() * h.y(), h.y() * h.z(), h.y() * h.z(), h.x() * h.z(), h.x() * h.z()};
    const double total = areas[0] + areas[1] + areas[2] + areas[3] + areas[4];
    std::size_t used = 0;
    for (int f = 0; f < 5; ++f) {
        const std::size_t k = f == 4 ? n - used : static_cast<std::size_t>(std::floor(n * areas[f] / total));
        used += k;
        switch (f) {
        case 0: tile_patch(out, k, c + h.z() * Z, X, Y, h.x(), h.y(), thickness, kFaceOpacityLogit, rng); break;
        case 1: tile_patch(out, k, c + h.x() * X, Y, Z, h.y(), h.z(), thickness, kFaceOpacityLogit, rng); break;
        case 2: tile_patch(out, k, c - h.x() * X, Z, Y, h.z(), h.y(), thickness, kFaceOpacityLogit, rng); break;
        case 3: tile_patch(out, k, c + h.y() * Y, Z, X, h.z(), h.x(), thickness, kFaceOpacityLogit, rng); break;
        default: tile_patch(out, k, c - h.y() * Y, X, Z, h.x(), h.z(), thickness, kFaceOpacityLogit, rng); break;
        }
    }
}

PriorSet rendered_priors(const Camera& camera, const GaussianCloud& clean, std::size_t anchor_count,
                         std::uint64_t seed) {
    const RenderBuffers b = render(camera, clean);
    PriorSet p;
    p.pseudo_depth = b.depth;
    p.pseudo_normal = b.normal;
    for (std::size_t i = 0; i < p.pseudo_depth.size(); ++i) {
        if (p.pseudo_depth.valid[i] != p.pseudo_normal.valid[i]) {
            p.pseudo_depth.valid[i] = p.pseudo_normal.valid[i] = 0;
            p.pseudo_depth.values[i] = kNaN;
            p.pseudo_normal.values[i] = Eigen::Vector3d::Constant(kNaN);
        }
    }
    std::vector<std::size_t> valid;
    for (std::size_t i = 0; i < p.pseudo_depth.size(); ++i)
        if (p.pseudo_depth.valid[i]) valid.push_back(i);
    if (valid.empty()) throw NumericError("camera " + camera.id + " sees no geometry");
    Rng rng(seed);
    const std::size_t k = std::min(anchor_count, valid.size());
    for (std::size_t i = 0; i < k; ++i) {
        std::swap(valid[i], valid[i + static_cast<std::size_t>(rng.below(valid.size() - i))]);
        const std::size_t idx = valid[i];
        p.sparse_anchors.push_back({static_cast<int>(idx % static_cast<std::size_t>(camera.width)),
                                    static_cast<int>(idx / static_cast<std::size_t>(camera.width)),
                                    p.pseudo_depth.values[idx]});
    }
    return p;
}

/// Replaces metric prior depth by (d - shift) / scale for a seeded scale and shift.
void distort_depth(PriorSet& p, Rng& rng) {
    const double scale = rng.uniform(0.5, 2.0);
    const double shift = rng.uniform(-0.5, 0.5);
    for (std::size_t i = 0; i < p.pseudo_depth.size(); ++i) {
        if (!p.pseudo_depth.valid[i]) continue;
        const double mono = (p.pseudo_depth.values[i] - shift) / scale;
        if (mono > 0.0) {
            p.pseudo_depth.values[i] = mono;
        } else {
            p.pseudo_depth.values[i] = kNaN;
            p.pseudo_depth.valid[i] = 0;
        }
    }
}

json plane_json(const AnalyticPlane& p) { return {{"normal", {p.normal.x(), p.normal.y(), p.normal.z()}}, {"offset", p.offset}}; }

AnalyticPlane plane_from(const json& j) {
    AnalyticPlane p;
    const auto n = j.at("normal").get<std::vector<double>>();
    if (n.size() != 3) throw ParseError("plane normal must have 3 components");
    p.normal = Eigen::Vector3d(n[0], n[1], n[2]);
    p.offset = j.at("offset").get<double>();
    return p;
}

Eigen::Vector3d vec_from(const json& j) {
    const auto v = j.get<std::vector<double>>();
    if (v.size() != 3) throw ParseError("expected a 3-vector");
    return {v[0], v[1], v[2]};
}

json surface_json(const AnalyticScene& s) {
    if (const auto* p = std::get_if<AnalyticPlane>(&s)) return {{"type", "plane"}, {"plane", plane_json(*p)}};
    if (const auto* b = std::get_if<AnalyticBox>(&s))
        return {{"type", "box"},
                {"min", {b->min.x(), b->min.y(), b->min.z()}},
                {"max", {b->max.x(), b->max.y(), b->max.z()}}};
    const auto& w = std::get<AnalyticWedge>(s);
    return {{"type", "wedge"}, {"first", plane_json(w.first)}, {"second", plane_json(w.second)}};
}

AnalyticScene surface_from(const json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "plane") return plane_from(j.at("plane"));
    if (type == "box") return AnalyticBox{vec_from(j.at("min")), vec_from(j.at("max"))};
    if (type == "wedge") return AnalyticWedge{plane_from(j.at("first")), plane_from(j.at("second"))};
    throw ParseError("unknown surface type: " + type);
}

} // namespace

SceneKind parse_scene_kind(const std::string& name) {
    if (name == "plane") return SceneKind::Plane;
    if (name == "box") return SceneKind::Box;
    if (name == "wedge") return SceneKind::Wedge;
    if (name == "redundant-city") return SceneKind::RedundantCity;
    throw InvalidParameter("unknown scene kind: " + name);
}

std::string scene_kind_name(SceneKind kind) {
    switch (kind) {
    case SceneKind::Plane: return "plane";
    case SceneKind::Box: return "box";
    case SceneKind::Wedge: return "wedge";
    case SceneKind::RedundantCity: return "redundant-city";
    }
    return "plane";
}

double rms_to_surface(const GaussianCloud& cloud, const AnalyticScene& surface) {
    if (cloud.empty()) return kNaN;
    double sum = 0.0;
    for (const auto& p : cloud.positions()) {
        const double d = surface_distance(surface, p);
        sum += d * d;
    }
    return std::sqrt(sum / static_cast<double>(cloud.size()));
}

SceneBundle synth_scene(SceneKind kind, const SynthParams& params, std::uint64_t seed) {
    if (params.gaussian_count == 0) throw InvalidParameter("synth: gaussian_count must be positive");
    if (!(params.position_noise >= 0.0)) throw InvalidParameter("synth: position_noise must be >= 0");
    if (params.image_size < 4) throw InvalidParameter("synth: image_size must be >= 4");
    if (params.camera_count < 1) throw InvalidParameter("synth: camera_count must be >= 1");
    if (!(params.planted_fraction >= 0.0 && params.planted_fraction < 1.0))
        throw InvalidParameter("synth: planted_fraction must lie in [0, 1)");

    SceneBundle b;
    b.kind = kind;
    b.seed = seed;
    b.params = params;
    Rng rng(seed);
    const std::size_t n = params.gaussian_count;
    const double focal = params.image_size;
    const int size = params.image_size;
    const double thickness = 0.02;
    GaussianCloud clean;

    switch (kind) {
    case SceneKind::Plane: {
        b.surface = AnalyticPlane{Eigen::Vector3d::UnitZ(), 5.0};
        tile_patch(b.ground_truth, n, {0, 0, 5}, Eigen::Vector3d::UnitX(), Eigen::Vector3d::UnitY(), 3.0, 3.0,
                   thickness, std::log(19.0), rng);
        const Eigen::Vector3d target(0, 0, 5);
        b.cameras.push_back(look_at("cam0", Eigen::Vector3d::Zero(), target, Eigen::Vector3d::UnitY(), focal, size, size));
        for (int i = 1; i < params.camera_count; ++i) {
            const double t = 2.0 * std::numbers::pi * (i - 1) / std::max(1, params.camera_count - 1);
            const Eigen::Vector3d eye(0.5 * std::cos(t), 0.5 * std::sin(t), 0.0);
            b.cameras.push_back(look_at("cam" + std::to_string(i), eye, target, Eigen::Vector3d::UnitY(), focal, size, size));
        }
        break;
    }
    case SceneKind::Box: {
        const AnalyticBox box{Eigen::Vector3d(-1, -1, 0), Eigen::Vector3d(1, 1, 2)};
        b.surface = box;
        tile_building(b.ground_truth, n, Box{box.min, box.max}, thickness, rng);
        b.cameras = ring_cameras({0, 0, 1}, 5.0, 3.0, params.camera_count, 0.8 * focal, size, -Eigen::Vector3d::UnitZ());
        break;
    }
    case SceneKind::Wedge: {
        // ridge toward the camera: z = 5 - 0.5 |x|
        const AnalyticPlane left{Eigen::Vector3d(-0.5, 0, 1), 5.0};
        const AnalyticPlane right{Eigen::Vector3d(0.5, 0, 1), 5.0};
        b.surface = AnalyticWedge{left, right};
        const double half_x = 1.5;
        const double run = std::hypot(half_x, 0.5 * half_x);
        const Eigen::Vector3d ax_l = Eigen::Vector3d(-half_x, 0, 0.5 * half_x).normalized();
        const Eigen::Vector3d ax_r = Eigen::Vector3d(half_x, 0, 0.5 * half_x).normalized();
        const std::size_t nl = n / 2;
        tile_patch(b.ground_truth, nl, Eigen::Vector3d(-0.5 * half_x, 0, 5 - 0.25 * half_x), Eigen::Vector3d::UnitY(),
                   ax_l, 3.0, 0.5 * run, thickness, std::log(19.0), rng);
        tile_patch(b.ground_truth, n - nl, Eigen::Vector3d(0.5 * half_x, 0, 5 - 0.25 * half_x), ax_r,
                   Eigen::Vector3d::UnitY(), 0.5 * run, 3.0, thickness, std::log(19.0), rng);
        const Eigen::Vector3d target(0, 0, 4.5);
        for (int i = 0; i < params.camera_count; ++i) {
            const double x = params.camera_count == 1 ? 0.0 : -0.4 + 0.8 * i / (params.camera_count - 1);
            b.cameras.push_back(look_at("cam" + std::to_string(i), Eigen::Vector3d(x, 0.0, 0.0), target,
                                        Eigen::Vector3d::UnitY(), 1.5 * focal, size, size));
        }
        break;
    }
    case SceneKind::RedundantCity: {
        const std::size_t planted = static_cast<std::size_t>(std::floor(params.planted_fraction * n));
        const std::size_t regular = n - planted;
        const std::vector<Box> buildings{{{-2.6, -2.6, 0.0}, {-1.0, -1.0, 1.6}},
                                         {{1.0, -2.6, 0.0}, {2.6, -1.0, 2.2}},
                                         {{-2.6, 1.0, 0.0}, {-1.0, 2.6, 1.4}},
                                         {{1.0, 1.0, 0.0}, {2.6, 2.6, 2.0}}};
        const std::size_t ground = regular / 4;
        tile_patch(b.ground_truth, ground, {0, 0, 0}, Eigen::Vector3d::UnitX(), Eigen::Vector3d::UnitY(), 3.5, 3.5,
                   thickness, kFaceOpacityLogit, rng);
        std::size_t left = regular - ground;
        for (std::size_t k = 0; k < buildings.size(); ++k) {
            const std::size_t m = k + 1 == buildings.size() ? left : (regular - ground) / buildings.size();
            left -= m;
            tile_building(b.ground_truth, m, buildings[k], thickness, rng);
        }
        clean = b.ground_truth;
        // oversized blobs well inside the buildings: 3 sigma stays behind the walls
        for (std::size_t k = 0; k < planted; ++k) {
            const Box& box = buildings[k % buildings.size()];
            const Eigen::Vector3d c = 0.5 * (box.lo + box.hi);
            const Eigen::Vector3d h = 0.5 * (box.hi - box.lo);
            Gaussian g;
            g.position = c + Eigen::Vector3d(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1),
                                             rng.uniform(-1.0, 1.0) * std::max(0.0, h.z() - 0.7));
            g.rotation = Eigen::Quaterniond(rng.normal(), rng.normal(), rng.normal(), rng.normal()).normalized();
            g.log_scales = Eigen::Vector3d::Constant(std::log(0.15)) +
                           Eigen::Vector3d(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));
            g.opacity_logit = 0.5;
            g.color = random_color(rng);
            b.planted.push_back(b.ground_truth.size());
            b.ground_truth.push_back(g);
        }
        b.cameras = ring_cameras({0, 0, 0.5}, 8.0, 5.0, params.camera_count, 0.7 * focal, size, -Eigen::Vector3d::UnitZ());
        break;
    }
    }

    b.initial = b.ground_truth;
    if (params.position_noise > 0.0) {
        for (std::size_t i = 0; i < b.initial.size(); ++i) {
            Gaussian g = b.initial[i];
            g.position += params.position_noise * rng.unit_vector();
            b.initial.set(i, g);
        }
    }
    if (b.surface) b.initial_rms = rms_to_surface(b.initial, *b.surface);

    for (std::size_t v = 0; v < b.cameras.size(); ++v) {
        const Camera& cam = b.cameras[v];
        const std::uint64_t view_seed = seed * 1000003ULL + v;
        PriorSet p = b.surface ? synth_priors(cam, *b.surface, params.anchor_count, view_seed)
                               : rendered_priors(cam, clean, params.anchor_count, view_seed);
        distort_depth(p, rng);
        b.priors.push_back(std::move(p));
        b.references.push_back(render(cam, b.ground_truth).color);
    }
    return b;
}

PriorSet align_prior(const PriorSet& p) {
    PriorSet a = p;
    std::vector<double> mono, metric;
    for (const auto& anchor : p.sparse_anchors) {
        if (anchor.u < 0 || anchor.v < 0 || anchor.u >= p.pseudo_depth.width || anchor.v >= p.pseudo_depth.height)
            throw ParseError("anchor (" + std::to_string(anchor.u) + "," + std::to_string(anchor.v) +
                             ") outside the prior raster");
        if (!p.pseudo_depth.is_valid(anchor.u, anchor.v)) continue;
        mono.push_back(p.pseudo_depth.at(anchor.u, anchor.v));
        metric.push_back(anchor.depth);
    }
    if (mono.size() >= 2) {
        AlignmentFit fit;
        try {
            fit = fit_scale_shift(mono, metric);
        } catch (const NumericError&) {
            double sxy = 0.0, sxx = 0.0;
            for (std::size_t i = 0; i < mono.size(); ++i) {
                sxy += mono[i] * metric[i];
                sxx += mono[i] * mono[i];
            }
            if (!(sxx > 0.0)) throw;
            fit.scale = sxy / sxx;
            fit.shift = 0.0;
        }
        a.pseudo_depth = apply_alignment(p.pseudo_depth, fit);
    }
    for (std::size_t i = 0; i < a.pseudo_depth.size(); ++i) {
        if (a.pseudo_depth.valid[i] && a.pseudo_normal.valid[i]) continue;
        a.pseudo_depth.valid[i] = a.pseudo_normal.valid[i] = 0;
    }
    return a;
}

std::vector<PriorSet> aligned_priors(const SceneBundle& bundle) {
    std::vector<PriorSet> out;
    for (const PriorSet& p : bundle.priors) out.push_back(align_prior(p));
    return out;
}

void save_scene(const SceneBundle& b, const std::string& dir) {
    fs::create_directories(dir);
    const fs::path root(dir);
    save_cameras(b.cameras, (root / "cameras.json").string());
    save_cloud(b.ground_truth, (root / "gt.ply").string());
    save_cloud(b.initial, (root / "init.ply").string());
    json m;
    m["kind"] = scene_kind_name(b.kind);
    m["seed"] = b.seed;
    m["gaussian_count"] = b.params.gaussian_count;
    m["position_noise"] = b.params.position_noise;
    m["image_size"] = b.params.image_size;
    m["camera_count"] = b.params.camera_count;
    m["anchor_count"] = b.params.anchor_count;
    m["planted_fraction"] = b.params.planted_fraction;
    m["initial_rms"] = std::isfinite(b.initial_rms) ? json(b.initial_rms) : json(nullptr);
    m["surface"] = b.surface ? surface_json(*b.surface) : json(nullptr);
    m["planted"] = b.planted;
    m["cameras"] = "cameras.json";
    m["ground_truth"] = "gt.ply";
    m["initial"] = "init.ply";
    m["views"] = json::array();
    for (std::size_t v = 0; v < b.cameras.size(); ++v) {
        const std::string id = b.cameras[v].id;
        json jv{{"id", id},
                {"depth", id + "_depth.ugsr"},
                {"normal", id + "_normal.ugsr"},
                {"reference", id + "_reference.ugsr"},
                {"anchors", id + "_anchors.txt"}};
        save_raster(to_raster(b.priors[v].pseudo_depth), (root / jv["depth"].get<std::string>()).string());
        save_raster(to_raster(b.priors[v].pseudo_normal), (root / jv["normal"].get<std::string>()).string());
        save_raster(to_raster(b.references[v]), (root / jv["reference"].get<std::string>()).string());
        save_anchors(b.priors[v].sparse_anchors, (root / jv["anchors"].get<std::string>()).string());
        m["views"].push_back(jv);
    }
    std::ofstream out(root / "scene.json");
    out << m.dump(2) << '\n';
    if (!out) throw ParseError("failed writing " + (root / "scene.json").string());
}

SceneBundle load_scene(const std::string& dir) {
    const fs::path root(dir);
    std::ifstream in(root / "scene.json");
    if (!in) throw ParseError("cannot open scene manifest: " + (root / "scene.json").string());
    SceneBundle b;
    try {
        const json m = json::parse(in);
        b.kind = parse_scene_kind(m.at("kind").get<std::string>());
        b.seed = m.at("seed").get<std::uint64_t>();
        b.params.gaussian_count = m.at("gaussian_count").get<std::size_t>();
        b.params.position_noise = m.at("position_noise").get<double>();
        b.params.image_size = m.at("image_size").get<int>();
        b.params.camera_count = m.at("camera_count").get<int>();
        b.params.anchor_count = m.at("anchor_count").get<std::size_t>();
        b.params.planted_fraction = m.at("planted_fraction").get<double>();
        b.initial_rms = m.at("initial_rms").is_null() ? kNaN : m.at("initial_rms").get<double>();
        if (!m.at("surface").is_null()) b.surface = surface_from(m.at("surface"));
        b.planted = m.at("planted").get<std::vector<std::size_t>>();
        b.cameras = load_cameras((root / m.at("cameras").get<std::string>()).string());
        b.ground_truth = load_cloud((root / m.at("ground_truth").get<std::string>()).string());
        b.initial = load_cloud((root / m.at("initial").get<std::string>()).string());
        const auto& views = m.at("views");
        if (views.size() != b.cameras.size()) throw ParseError("scene.json: view count differs from camera count");
        for (std::size_t v = 0; v < views.size(); ++v) {
            const auto& jv = views[v];
            if (jv.at("id").get<std::string>() != b.cameras[v].id)
                throw ParseError("scene.json: view " + std::to_string(v) + " does not match camera order");
            PriorSet p;
            p.pseudo_depth = scalar_from_raster(load_raster((root / jv.at("depth").get<std::string>()).string()));
            p.pseudo_normal = vector_from_raster(load_raster((root / jv.at("normal").get<std::string>()).string()));
            p.sparse_anchors = load_anchors((root / jv.at("anchors").get<std::string>()).string());
            VectorMap ref = vector_from_raster(load_raster((root / jv.at("reference").get<std::string>()).string()));
            const Camera& cam = b.cameras[v];
            if (!p.pseudo_depth.same_shape(cam.width, cam.height) || !p.pseudo_normal.same_shape(cam.width, cam.height) ||
                !ref.same_shape(cam.width, cam.height))
                throw ParseError("view " + cam.id + ": raster size differs from the camera");
            b.priors.push_back(std::move(p));
            b.references.push_back(std::move(ref));
        }
    } catch (const json::exception& e) {
        throw ParseError((root / "scene.json").string() + ": " + e.what());
    }
    for (std::size_t i : b.planted)
        if (i >= b.ground_truth.size()) throw ParseError("scene.json: planted index out of range");
    return b;
}

} // namespace citysplat
