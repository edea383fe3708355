#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "citysplat/core/camera.hpp"
#include "citysplat/core/gaussian.hpp"
#include "citysplat/core/maps.hpp"
#include "citysplat/priors/analytic.hpp"

namespace citysplat {

enum class SceneKind { Plane, Box, Wedge, RedundantCity };

SceneKind parse_scene_kind(const std::string& name);
std::string scene_kind_name(SceneKind kind);

struct SynthParams {
    std::size_t gaussian_count = 200;
    double position_noise = 0.1;   ///< displacement length, random direction
    int image_size = 64;
    int camera_count = 4;
    std::size_t anchor_count = 200;
    double planted_fraction = 0.5; ///< redundant-city only
};

/// Training inputs for a synthetic scene. Prior depths are stored unaligned
/// (a per-view affine distortion of metric depth); the anchors carry metric
/// depth so alignment can undo it.
struct SceneBundle {
    SceneKind kind = SceneKind::Plane;
    std::uint64_t seed = 0;
    SynthParams params;
    std::optional<AnalyticScene> surface; ///< absent for redundant-city
    GaussianCloud ground_truth;
    GaussianCloud initial;
    std::vector<Camera> cameras;
    std::vector<PriorSet> priors;
    std::vector<VectorMap> references;
    std::vector<std::size_t> planted; ///< redundant-city: oversized hidden Gaussians
    double initial_rms = kNaN;
};

SceneBundle synth_scene(SceneKind kind, const SynthParams& params, std::uint64_t seed);

/// Root mean square of the point-to-surface distance of every center.
/// NaN for an empty cloud.
double rms_to_surface(const GaussianCloud& cloud, const AnalyticScene& surface);

/// Prior depth fitted to the view's anchors. With fewer than two usable
/// anchors the depth is passed through; when the stored depths at the anchors
/// are all equal (a fronto-parallel plane) a scale-only fit is used. Pixels
/// left without depth or normal are marked invalid in both maps.
PriorSet align_prior(const PriorSet& priors);

std::vector<PriorSet> aligned_priors(const SceneBundle& bundle);

/// Directory layout: scene.json, cameras.json, gt.ply, init.ply and per view
/// <id>_depth.ugsr, <id>_normal.ugsr, <id>_reference.ugsr, <id>_anchors.txt.
void save_scene(const SceneBundle& bundle, const std::string& dir);
SceneBundle load_scene(const std::string& dir);

} // namespace citysplat
