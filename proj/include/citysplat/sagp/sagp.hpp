#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "citysplat/core/gaussian.hpp"

namespace citysplat {

struct PruneConfig {
    double lambda_cell = 1.2;  ///< cell size multiplier
    double percentile_t = 90.0;
    double kappa = 0.5;        ///< sub-linear volume exponent
    double prune_ratio = 0.30; ///< fraction removed per prune event
    std::vector<double> schedule_fractions{7.0 / 30.0, 15.0 / 30.0, 25.0 / 30.0};

    void validate() const;
};

/// Regular grid over the cloud's bounding box. Only occupied cells are
/// stored; they are numbered densely in order of their linear grid key.
struct VoxelGrid {
    double cell_length = 0.0;
    Eigen::Vector3d origin = Eigen::Vector3d::Zero();
    std::array<int, 3> dims{1, 1, 1};
    bool padded = false; ///< a zero bounding-box extent was padded to 1e-6

    std::vector<std::size_t> cell_of;                ///< Gaussian -> occupied cell
    std::vector<std::uint64_t> cell_keys;            ///< occupied cell -> x + dx (y + dy z)
    std::vector<std::vector<std::size_t>> members;   ///< occupied cell -> Gaussians, ascending
    std::vector<double> percentile_volume;           ///< occupied cell -> t-th percentile of s1 s2 s3

    std::size_t cell_count() const { return members.size(); }
    std::array<int, 3> cell_coords(std::size_t cell) const;
};

/// lambda * (V / N)^(1/3).
double cell_length(double volume, std::size_t n_gaussians, double lambda_cell);

/// s1 s2 s3 of Gaussian i.
double gaussian_volume(const GaussianCloud& cloud, std::size_t i);

VoxelGrid build_voxel_grid(const GaussianCloud& cloud, const PruneConfig& config);

/// (min(v / theta, 1))^kappa.
double volume_weight(double v, double theta_local, double kappa);

struct ScoreSet {
    std::vector<double> phi;    ///< hits relative to the busiest Gaussian in the same cell
    std::vector<double> tau_op; ///< sigmoid opacity
    std::vector<double> w_v;    ///< volume weight
    std::vector<double> score;  ///< phi * tau_op * w_v
};

ScoreSet importance_scores(const GaussianCloud& cloud, const VoxelGrid& grid,
                           std::span<const std::uint32_t> hit_counts, double kappa);

/// Linear weighted pruning baseline: alpha phi + beta tau + gamma w_v.
std::vector<double> lwp_scores(std::span<const double> phi, std::span<const double> tau_op,
                               std::span<const double> w_v, double alpha, double beta, double gamma);

struct PruneResult {
    GaussianCloud cloud;
    std::vector<std::size_t> kept;       ///< surviving old indices, ascending
    std::vector<std::int64_t> old_to_new; ///< -1 for removed Gaussians
    bool refused = false;                ///< the request would have emptied the cloud; the top score was kept
};

/// Number of Gaussians a ratio removes: floor(ratio * n).
std::size_t prune_count(double ratio, std::size_t n);

/// Removes the floor(ratio * N) lowest scores. Among equal scores the higher
/// index goes first.
PruneResult prune_by_ratio(const GaussianCloud& cloud, std::span<const double> scores, double ratio);

/// Keeps exactly the Gaussians with score > theta.
PruneResult prune_by_threshold(const GaussianCloud& cloud, std::span<const double> scores, double theta);

/// Cut score equivalent to a ratio: the k-th smallest score with
/// k = floor(ratio * N), or -infinity when k = 0. When that score is tied
/// with the (k+1)-th, the largest score below the tie is returned instead, so
/// threshold pruning never removes more than k.
double ratio_threshold(std::span<const double> scores, double ratio);

/// True when iteration == round(f * total) for a configured fraction f.
bool schedule_should_prune(long long iteration, long long total, std::span<const double> fractions);

/// Maps per-Gaussian hit counts through a prune's old -> new index map.
std::vector<std::uint32_t> carry_hit_counts(std::span<const std::uint32_t> hits,
                                            std::span<const std::int64_t> old_to_new, std::size_t new_size);

/// Hit-count sidecar: u64 little-endian count, then that many u32 values.
void save_hit_counts(std::span<const std::uint32_t> hits, const std::string& path);
std::vector<std::uint32_t> load_hit_counts(const std::string& path);

} // namespace citysplat
