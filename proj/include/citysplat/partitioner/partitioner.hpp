#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "citysplat/core/camera.hpp"
#include "citysplat/core/gaussian.hpp"
#include "citysplat/renderer/renderer.hpp"
#include "citysplat/sagp/sagp.hpp"

namespace citysplat {

struct PartitionConfig {
    std::array<int, 3> grid_dims{2, 2, 1};
    double delta_share = 0.05;   ///< contracted units
    double epsilon_ssim = 0.01;
    double foreground_radius = 0.0; ///< world units; <= 0 derives it from the cameras
    bool perceptual = true;         ///< evaluate the SSIM criterion at all

    void validate() const;
};

struct Block {
    int id = 0;
    std::array<int, 3> coords{0, 0, 0};
    Eigen::Vector3d bounds_min = -Eigen::Vector3d::Ones();
    Eigen::Vector3d bounds_max = Eigen::Vector3d::Ones();
    std::vector<std::size_t> owned;
    std::vector<std::size_t> shared;
    std::vector<std::string> cameras;
};

/// L-infinity scene contraction into the open cube (-1, 1)^3: linear (halved)
/// inside the foreground radius, 1 - 1/(2m) along each ray beyond it.
Eigen::Vector3d contract(const Eigen::Vector3d& point, double foreground_radius);

/// Regular grid over [-1,1]^3, numbered x fastest.
std::vector<Block> make_blocks(const std::array<int, 3>& dims);

/// Index of the block holding a contracted point. Cells are right-open except
/// the last slab on each axis, which is closed.
std::size_t block_index_of(const Eigen::Vector3d& contracted, const std::array<int, 3>& dims);

/// L-infinity distance from a point to an axis-aligned box (0 inside).
double box_distance(const Eigen::Vector3d& point, const Eigen::Vector3d& lo, const Eigen::Vector3d& hi);

/// Fills owned (by containing block) and shared (other blocks within
/// delta_share of the contracted center) index lists.
void assign_gaussians(const GaussianCloud& cloud, std::vector<Block>& blocks, const std::array<int, 3>& dims,
                      double delta_share, double foreground_radius);

bool camera_geometric(const Camera& camera, const Block& block, const std::array<int, 3>& dims,
                      double foreground_radius);

struct PerceptualResult {
    bool fires = false;
    double ssim = 1.0;
    bool fully_masked = false; ///< nothing visible in the full render; treated as SSIM 1
};

/// SSIM between the full render and the render without the block's owned and
/// shared Gaussians; fires when SSIM < 1 - epsilon. `full` may carry a cached
/// full render of this camera.
PerceptualResult camera_perceptual(const Camera& camera, const GaussianCloud& cloud, const Block& block,
                                   double epsilon, const RenderOptions& options = {},
                                   const RenderBuffers* full = nullptr);

/// Attaches each camera to every block where the geometric or perceptual
/// criterion holds.
void assign_views(const std::vector<Camera>& cameras, std::vector<Block>& blocks, const GaussianCloud& cloud,
                  const PartitionConfig& config, double foreground_radius, const RenderOptions& options = {});

/// 90th percentile of camera-center distances to their centroid; 1 when
/// that is (numerically) zero.
double default_foreground_radius(const std::vector<Camera>& cameras);

struct PartitionResult {
    GaussianCloud cloud;              ///< after global pruning
    std::vector<std::size_t> kept;    ///< pruned index -> input index
    std::vector<Block> blocks;
    double foreground_radius = 1.0;
    double prune_threshold = 0.0;
    bool prune_refused = false;
};

/// Threshold-mode SAGP (threshold = cut score of prune_cfg.prune_ratio), then
/// contraction, block grid, Gaussian and view assignment.
PartitionResult global_prune_then_partition(const GaussianCloud& cloud, std::span<const std::uint32_t> hit_counts,
                                            const std::vector<Camera>& cameras, const PruneConfig& prune_cfg,
                                            const PartitionConfig& part_cfg, const RenderOptions& options = {});

/// A block's training cloud: owned Gaussians first, then shared ones, each
/// tagged with its index in the partitioned cloud.
struct BlockCloud {
    GaussianCloud cloud;
    std::vector<std::uint32_t> provenance;
    std::size_t owned_count = 0;
};

BlockCloud block_subcloud(const GaussianCloud& cloud, const Block& block);

/// Reassembles the partitioned cloud. A Gaussian present in several blocks
/// takes its owner's copy. Throws ParseError listing any index in
/// [0, total_count) that no block provides.
GaussianCloud merge_blocks(std::span<const BlockCloud> blocks, std::size_t total_count);

/// Writes manifest.json plus one block_<id>.ply per block into `dir`.
void write_partition(const PartitionResult& result, const PartitionConfig& config, std::uint64_t seed,
                     const std::string& dir);

struct PartitionManifest {
    std::size_t gaussian_count = 0;
    std::vector<BlockCloud> blocks;
    std::vector<std::vector<std::string>> cameras;
};

PartitionManifest read_partition(const std::string& dir);

} // namespace citysplat
