#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "citysplat/core/camera.hpp"
#include "citysplat/core/maps.hpp"
#include "citysplat/priors/analytic.hpp"
#include "citysplat/renderer/renderer.hpp"

namespace citysplat {

struct LossWeights {
    double lambda1 = 0.05;  ///< rendered-normal term
    double lambda2 = 0.05;  ///< depth-derived normal term
    double lambda3 = 0.10;  ///< confidence-weighted inverse depth term
    double gamma_d = 0.01;  ///< gradient-direction decay
    double tau = 0.1;       ///< inverse-depth deviation decay
    double dssim_mix = 0.2; ///< share of (1 - SSIM) inside the color loss

    void validate() const;
};

/// Mean over jointly valid pixels. An empty mask yields value 0, count 0.
struct MaskedMean {
    double value = 0.0;
    std::size_t count = 0;
    bool empty() const { return count == 0; }
};

/// Per pixel ||a - b||_1 + (1 - a . b), averaged over pixels valid in both
/// maps (and in `mask` when given).
MaskedMean normal_loss(const VectorMap& rendered, const VectorMap& prior, std::span<const std::uint8_t> mask = {});

/// Camera-frame points D(u,v) * K^-1 (u+0.5, v+0.5, 1).
VectorMap backproject(const ScalarMap& depth, const Camera& camera);

/// Normals from the cross product of forward differences of the backprojected
/// points (vertical x horizontal), oriented toward the camera. The last
/// row/column reuses the previous difference. Pixels whose stencil touches
/// invalid depth, or whose cross product vanishes, are invalid.
VectorMap dnormal_map(const ScalarMap& depth, const Camera& camera);

/// Same functional form as normal_loss, applied to depth-derived normals.
MaskedMean dnormal_loss(const VectorMap& dnormals, const VectorMap& prior, std::span<const std::uint8_t> mask = {});

/// |1/rendered - 1/prior| where both are valid.
ScalarMap inverse_depth_loss(const ScalarMap& rendered, const ScalarMap& prior);

/// Cosine between image-space depth gradients. Central differences, one-sided
/// where a neighbor is outside the image or invalid, zero when both are. A
/// vanishing gradient (norm < 1e-12) on either side gives cos = 1.
ScalarMap gradient_cosine(const ScalarMap& rendered, const ScalarMap& prior);

/// id_loss / median(1 / rendered) over valid rendered pixels.
/// Throws NumericError when the median is <= 1e-12 or no pixel is valid.
ScalarMap depth_deviation(const ScalarMap& id_loss, const ScalarMap& rendered);

double confidence_value(double cos_phi, double eps_d, double gamma_d, double tau);

/// exp((cos - 1) / gamma_d) * exp(-eps / tau), valid where both inputs are.
ScalarMap confidence(const ScalarMap& cos_phi, const ScalarMap& eps_d, double gamma_d, double tau);

struct SsimResult {
    double value = 1.0;
    int window = 11;
    bool window_shrunk = false;
};

/// Gaussian-window SSIM (11x11, sigma 1.5, K1 0.01, K2 0.03, range 1) averaged
/// over all full-window positions and the three channels. Images smaller than
/// the window use the largest odd window that fits.
SsimResult ssim(const VectorMap& a, const VectorMap& b);

/// Mean absolute difference over all pixels and channels.
double l1_loss(const VectorMap& a, const VectorMap& b);

/// (1 - mix) * L1 + mix * (1 - SSIM).
double rgb_loss(const VectorMap& rendered, const VectorMap& reference, double dssim_mix);

struct LossReport {
    double total = 0.0;
    double rgb = 0.0;
    double n = 0.0;
    double dn = 0.0;
    double id_weighted = 0.0;

    std::size_t n_pixels = 0;
    std::size_t dn_pixels = 0;
    std::size_t id_pixels = 0;
    bool ssim_window_shrunk = false;

    VectorMap dnormal;
    ScalarMap id_loss;
    ScalarMap cos_phi;
    ScalarMap eps_d;
    ScalarMap w_d;

    /// Flat "key=value" lines.
    std::string to_text() const;
};

/// L_rgb + lambda1 L_n + lambda2 L_dn + lambda3 mean(w_d * L_id), each term over
/// its own valid pixels. `priors.pseudo_depth` must already be scale aligned.
LossReport total_loss(const RenderBuffers& buffers, const VectorMap& reference, const PriorSet& priors,
                      const Camera& camera, const LossWeights& weights);

/// Derivatives of total_loss with respect to the rendered maps, holding the
/// confidence map w_d fixed. The D-SSIM part of the color loss is not
/// differentiated here.
struct MapGradients {
    ScalarMap depth;  ///< dL/dD, zero (valid) wherever it does not contribute
    VectorMap normal; ///< dL/dN
    VectorMap color;  ///< dL/dC
};

MapGradients loss_map_gradients(const RenderBuffers& buffers, const VectorMap& reference, const PriorSet& priors,
                                const Camera& camera, const LossWeights& weights, const LossReport& report);

/// Backward pass of dnormal_loss: dL_dn/dD for every depth pixel.
ScalarMap dnormal_loss_depth_gradient(const ScalarMap& depth, const VectorMap& prior, const Camera& camera);

} // namespace citysplat
