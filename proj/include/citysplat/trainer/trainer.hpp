#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "citysplat/core/camera.hpp"
#include "citysplat/core/gaussian.hpp"
#include "citysplat/losses/gradcheck.hpp"
#include "citysplat/losses/losses.hpp"
#include "citysplat/renderer/renderer.hpp"
#include "citysplat/sagp/sagp.hpp"
#include "citysplat/trainer/scene.hpp"

namespace citysplat {

enum class GradientMode { FiniteDifference, Hybrid };

GradientMode parse_gradient_mode(const std::string& name);

struct LearningRates {
    double position = 3.0;
    double rotation = 20.0;
    double log_scale = 400.0;
    double opacity = 0.0;
    double color = 10.0;
};

struct TrainConfig {
    int iterations = 500;
    LearningRates lr;
    double scale_loss_weight = 1.0;
    LossWeights loss;
    PruneConfig prune;
    std::uint64_t seed = 0;
    GradientMode mode = GradientMode::Hybrid;
    double fd_step = 1e-4;
    int cameras_per_step = 1;
    /// Hybrid mode: parameter groups whose image-loss gradient is estimated
    /// by finite differences instead of being left out.
    std::vector<ParamKind> fd_groups;
    RenderOptions render;

    void validate() const;
};

/// Per-Gaussian gradients. Rotation entries are tangent-space (axis-angle)
/// derivatives at the current orientation.
struct CloudGradient {
    std::vector<Eigen::Vector3d> position;
    std::vector<Eigen::Vector3d> rotation;
    std::vector<Eigen::Vector3d> log_scale;
    std::vector<double> opacity;
    std::vector<Eigen::Vector3d> color;

    explicit CloudGradient(std::size_t n = 0);
    std::size_t size() const { return position.size(); }
    void add(const CloudGradient& other, double factor = 1.0);
    double max_abs() const;
};

/// One camera's loss inputs.
struct View {
    const Camera* camera = nullptr;
    const PriorSet* priors = nullptr;   ///< aligned
    const VectorMap* reference = nullptr;
};

/// total_loss at one view plus scale_loss_weight * L_s.
double view_objective(const GaussianCloud& cloud, const View& view, const TrainConfig& config);

/// Derivative of scale_loss_weight * L_s with respect to the log-scales.
CloudGradient scale_loss_gradient(const GaussianCloud& cloud, double weight);

/// Gradient of one view's total_loss with the compositing weights and the
/// confidence map frozen: position and rotation through the intersection
/// depth and the normal buffer, color through the blend. L_s is not included.
CloudGradient hybrid_gradient(const GaussianCloud& cloud, const View& view, const TrainConfig& config,
                              LossReport* report = nullptr, RenderBuffers* buffers = nullptr);

/// Central differences of view_objective for the listed parameter groups.
CloudGradient fd_gradient(const GaussianCloud& cloud, const View& view, const TrainConfig& config,
                          const std::vector<ParamKind>& groups);

/// p -= lr g, with rotations moved along the tangent direction and renormalized.
GaussianCloud apply_gradient(const GaussianCloud& cloud, const CloudGradient& grad, const LearningRates& lr);

struct StepResult {
    GaussianCloud cloud;
    LossReport report;      ///< averaged over the batch, evaluated before the update
    double psnr = 0.0;      ///< averaged over the batch, before the update
    std::vector<std::uint32_t> hit_counts;
};

/// One gradient-descent step over `views`. Throws NumericError on a
/// non-finite loss or gradient.
StepResult step(const GaussianCloud& cloud, const std::vector<View>& views, const TrainConfig& config);

/// 10 log10(1 / MSE) over all pixels and channels, capped at 99 dB.
double psnr(const VectorMap& image, const VectorMap& reference);
inline constexpr double kPsnrCap = 99.0;

struct TrainRow {
    int iter = 0;
    double total = 0.0;
    double rgb = 0.0;
    double n = 0.0;
    double dn = 0.0;
    double idw = 0.0;
    std::size_t count = 0; ///< after the step (and any prune)
    double psnr = 0.0;
    double rms = 0.0;      ///< after the step; NaN without an analytic surface
};

struct TrainRecord {
    std::vector<TrainRow> rows;
    std::string to_csv() const;
};

struct TrainResult {
    GaussianCloud cloud;
    TrainRecord record;
    std::vector<std::size_t> prune_iterations;
    bool aborted = false;
    std::string diagnostic;
};

/// Round-robin over the bundle's cameras starting at seed % camera count.
/// SAGP fires after iteration t when t is a scheduled fraction of the total;
/// hit counts accumulate across steps and are carried through each prune.
/// A numeric failure stops training and returns the last good cloud.
TrainResult train(const SceneBundle& bundle, const TrainConfig& config);

} // namespace citysplat
