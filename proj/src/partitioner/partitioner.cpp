#include "citysplat/partitioner/partitioner.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "citysplat/core/errors.hpp"
#include "citysplat/core/ply.hpp"
#include "citysplat/core/stats.hpp"
#include "citysplat/losses/losses.hpp"

namespace citysplat {

void PartitionConfig::validate() const {
    for (int d : grid_dims)
        if (d < 1) throw InvalidParameter("partition.grid_dims must be >= 1 on every axis");
    if (!(delta_share >= 0.0)) throw InvalidParameter("partition.delta_share must be >= 0");
    if (!(epsilon_ssim > 0.0 && epsilon_ssim < 1.0)) throw InvalidParameter("partition.epsilon must lie in (0, 1)");
    if (!std::isfinite(foreground_radius)) throw InvalidParameter("partition.foreground_radius must be finite");
}

Eigen::Vector3d contract(const Eigen::Vector3d& point, double foreground_radius) {
    if (!point.allFinite()) throw InvalidParameter("contract: non-finite point");
    if (!(foreground_radius > 0.0)) throw InvalidParameter("contract: foreground radius must be positive");
    const Eigen::Vector3d y = point / foreground_radius;
    const double m = y.cwiseAbs().maxCoeff();
    if (m <= 1.0) return 0.5 * y;
    return 0.5 * (2.0 - 1.0 / m) * (y / m);
}

std::vector<Block> make_blocks(const std::array<int, 3>& dims) {
    for (int d : dims)
        if (d < 1) throw InvalidParameter("make_blocks: dims must be >= 1");
    std::vector<Block> blocks;
    for (int z = 0; z < dims[2]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x) {
                Block b;
                b.id = static_cast<int>(blocks.size());
                b.coords = {x, y, z};
                for (int a = 0; a < 3; ++a) {
                    const double d = dims[static_cast<std::size_t>(a)];
                    const int c = b.coords[static_cast<std::size_t>(a)];
                    b.bounds_min[a] = -1.0 + 2.0 * c / d;
                    b.bounds_max[a] = -1.0 + 2.0 * (c + 1) / d;
                }
                blocks.push_back(std::move(b));
            }
    return blocks;
}

std::size_t block_index_of(const Eigen::Vector3d& contracted, const std::array<int, 3>& dims) {
    std::size_t index = 0, stride = 1;
    for (int a = 0; a < 3; ++a) {
        const int d = dims[static_cast<std::size_t>(a)];
        const double c = std::floor((contracted[a] + 1.0) * 0.5 * d);
        const int i = static_cast<int>(std::clamp(c, 0.0, static_cast<double>(d - 1)));
        index += static_cast<std::size_t>(i) * stride;
        stride *= static_cast<std::size_t>(d);
    }
    return index;
}

double box_distance(const Eigen::Vector3d& point, const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
    double d = 0.0;
    for (int a = 0; a < 3; ++a) d = std::max({d, lo[a] - point[a], point[a] - hi[a]});
    return d;
}

void assign_gaussians(const GaussianCloud& cloud, std::vector<Block>& blocks, const std::array<int, 3>& dims,
                      double delta_share, double foreground_radius) {
    const std::size_t expected = static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
                                 static_cast<std::size_t>(dims[2]);
    if (blocks.size() != expected) throw InvalidParameter("assign_gaussians: blocks do not match the grid dims");
    for (auto& b : blocks) {
        b.owned.clear();
        b.shared.clear();
    }
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Eigen::Vector3d c = contract(cloud.position(i), foreground_radius);
        const std::size_t home = block_index_of(c, dims);
        blocks[home].owned.push_back(i);
        for (std::size_t j = 0; j < blocks.size(); ++j) {
            if (j == home) continue;
            if (box_distance(c, blocks[j].bounds_min, blocks[j].bounds_max) < delta_share) blocks[j].shared.push_back(i);
        }
    }
}

bool camera_geometric(const Camera& camera, const Block& block, const std::array<int, 3>& dims,
                      double foreground_radius) {
    const std::size_t home = block_index_of(contract(camera.center(), foreground_radius), dims);
    return home == static_cast<std::size_t>(block.id);
}

PerceptualResult camera_perceptual(const Camera& camera, const GaussianCloud& cloud, const Block& block,
                                   double epsilon, const RenderOptions& options, const RenderBuffers* full) {
    PerceptualResult r;
    if (block.owned.empty() && block.shared.empty()) return r;
    RenderBuffers own;
    if (!full) {
        own = render(camera, cloud, options);
        full = &own;
    }
    const bool anything = std::any_of(full->alpha.values.begin(), full->alpha.values.end(),
                                      [&](double a) { return a >= options.alpha_floor; });
    if (!anything) {
        r.fully_masked = true;
        return r;
    }
    std::vector<std::size_t> excluded(block.owned);
    excluded.insert(excluded.end(), block.shared.begin(), block.shared.end());
    const RenderBuffers without = render_excluding(camera, cloud, excluded, options);
    r.ssim = ssim(full->color, without.color).value;
    r.fires = r.ssim < 1.0 - epsilon;
    return r;
}

void assign_views(const std::vector<Camera>& cameras, std::vector<Block>& blocks, const GaussianCloud& cloud,
                  const PartitionConfig& config, double foreground_radius, const RenderOptions& options) {
    config.validate();
    for (auto& b : blocks) b.cameras.clear();
    for (const Camera& cam : cameras) {
        RenderBuffers full;
        if (config.perceptual) full = render(cam, cloud, options);
        for (Block& b : blocks) {
            bool attach = camera_geometric(cam, b, config.grid_dims, foreground_radius);
            if (!attach && config.perceptual)
                attach = camera_perceptual(cam, cloud, b, config.epsilon_ssim, options, &full).fires;
            if (attach) b.cameras.push_back(cam.id);
        }
    }
}

double default_foreground_radius(const std::vector<Camera>& cameras) {
    if (cameras.empty()) return 1.0;
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    for (const auto& c : cameras) centroid += c.center();
    centroid /= static_cast<double>(cameras.size());
    std::vector<double> d;
    for (const auto& c : cameras) d.push_back((c.center() - centroid).norm());
    const double r = percentile(d, 90.0);
    return r > 1e-9 ? r : 1.0;
}

PartitionResult global_prune_then_partition(const GaussianCloud& cloud, std::span<const std::uint32_t> hit_counts,
                                            const std::vector<Camera>& cameras, const PruneConfig& prune_cfg,
                                            const PartitionConfig& part_cfg, const RenderOptions& options) {
    prune_cfg.validate();
    part_cfg.validate();
    if (hit_counts.size() != cloud.size())
        throw InvalidParameter("global_prune_then_partition: hit count length differs from cloud size");
    PartitionResult out;
    if (cloud.empty()) {
        out.prune_threshold = -std::numeric_limits<double>::infinity();
    } else {
        const VoxelGrid grid = build_voxel_grid(cloud, prune_cfg);
        const ScoreSet scores = importance_scores(cloud, grid, hit_counts, prune_cfg.kappa);
        out.prune_threshold = ratio_threshold(scores.score, prune_cfg.prune_ratio);
        PruneResult pruned = prune_by_threshold(cloud, scores.score, out.prune_threshold);
        out.cloud = std::move(pruned.cloud);
        out.kept = std::move(pruned.kept);
        out.prune_refused = pruned.refused;
    }
    out.foreground_radius =
        part_cfg.foreground_radius > 0.0 ? part_cfg.foreground_radius : default_foreground_radius(cameras);
    out.blocks = make_blocks(part_cfg.grid_dims);
    assign_gaussians(out.cloud, out.blocks, part_cfg.grid_dims, part_cfg.delta_share, out.foreground_radius);
    assign_views(cameras, out.blocks, out.cloud, part_cfg, out.foreground_radius, options);
    return out;
}

BlockCloud block_subcloud(const GaussianCloud& cloud, const Block& block) {
    BlockCloud b;
    std::vector<std::size_t> order(block.owned);
    order.insert(order.end(), block.shared.begin(), block.shared.end());
    b.cloud = cloud.subset(order);
    b.owned_count = block.owned.size();
    for (auto i : order) {
        if (i > std::numeric_limits<std::uint32_t>::max()) throw InvalidParameter("provenance index exceeds u32");
        b.provenance.push_back(static_cast<std::uint32_t>(i));
    }
    return b;
}

GaussianCloud merge_blocks(std::span<const BlockCloud> blocks, std::size_t total_count) {
    // 0 = missing, 1 = shared copy, 2 = owner copy
    std::vector<int> rank(total_count, 0);
    std::vector<std::pair<std::size_t, std::size_t>> source(total_count);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const BlockCloud& bc = blocks[b];
        if (bc.provenance.size() != bc.cloud.size()) throw InvalidParameter("merge_blocks: provenance length mismatch");
        for (std::size_t k = 0; k < bc.provenance.size(); ++k) {
            const std::size_t p = bc.provenance[k];
            if (p >= total_count)
                throw ParseError("merge_blocks: provenance index " + std::to_string(p) + " out of range");
            const int r = k < bc.owned_count ? 2 : 1;
            if (r == 2 && rank[p] == 2) throw ParseError("merge_blocks: index " + std::to_string(p) + " owned twice");
            if (r > rank[p]) {
                rank[p] = r;
                source[p] = {b, k};
            }
        }
    }
    std::string gaps;
    std::size_t gap_count = 0;
    for (std::size_t i = 0; i < total_count; ++i) {
        if (rank[i] != 0) continue;
        if (gap_count++ < 50) gaps += (gaps.empty() ? "" : ",") + std::to_string(i);
    }
    if (gap_count > 0)
        throw ParseError("incomplete merge: " + std::to_string(gap_count) + " missing provenance indices [" + gaps +
                         (gap_count > 50 ? ",..." : "") + "]");
    GaussianCloud merged;
    merged.reserve(total_count);
    for (std::size_t i = 0; i < total_count; ++i) {
        const auto [b, k] = source[i];
        merged.push_back_ingest(blocks[b].cloud[k]);
    }
    return merged;
}

namespace {

nlohmann::json vec_json(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

} // namespace

void write_partition(const PartitionResult& result, const PartitionConfig& config, std::uint64_t seed,
                     const std::string& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json m;
    m["seed"] = seed;
    m["gaussian_count"] = result.cloud.size();
    m["grid_dims"] = config.grid_dims;
    m["delta_share"] = config.delta_share;
    m["epsilon_ssim"] = config.epsilon_ssim;
    m["foreground_radius"] = result.foreground_radius;
    m["prune_threshold"] = std::isfinite(result.prune_threshold) ? nlohmann::json(result.prune_threshold)
                                                                  : nlohmann::json(nullptr);
    m["prune_refused"] = result.prune_refused;
    m["kept_input_indices"] = result.kept;
    m["blocks"] = nlohmann::json::array();
    for (const Block& b : result.blocks) {
        const BlockCloud bc = block_subcloud(result.cloud, b);
        const std::string file = "block_" + std::to_string(b.id) + ".ply";
        save_cloud_with_provenance(bc.cloud, bc.provenance, (std::filesystem::path(dir) / file).string());
        nlohmann::json jb;
        jb["id"] = b.id;
        jb["coords"] = b.coords;
        jb["bounds_min"] = vec_json(b.bounds_min);
        jb["bounds_max"] = vec_json(b.bounds_max);
        jb["file"] = file;
        jb["owned_count"] = b.owned.size();
        jb["shared_count"] = b.shared.size();
        jb["cameras"] = b.cameras;
        if (bc.provenance.empty()) {
            jb["provenance_range"] = nullptr;
        } else {
            const auto [lo, hi] = std::minmax_element(bc.provenance.begin(), bc.provenance.end());
            jb["provenance_range"] = {*lo, *hi};
        }
        m["blocks"].push_back(jb);
    }
    std::ofstream out(std::filesystem::path(dir) / "manifest.json");
    out << m.dump(2) << '\n';
    if (!out) throw ParseError("failed writing partition manifest in " + dir);
}

PartitionManifest read_partition(const std::string& dir) {
    const auto path = std::filesystem::path(dir) / "manifest.json";
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open partition manifest: " + path.string());
    PartitionManifest pm;
    try {
        const nlohmann::json m = nlohmann::json::parse(in);
        pm.gaussian_count = m.at("gaussian_count").get<std::size_t>();
        for (const auto& jb : m.at("blocks")) {
            const ProvenanceCloud pc =
                load_cloud_with_provenance((std::filesystem::path(dir) / jb.at("file").get<std::string>()).string());
            BlockCloud bc;
            bc.cloud = pc.cloud;
            bc.provenance = pc.provenance;
            bc.owned_count = jb.at("owned_count").get<std::size_t>();
            if (bc.owned_count > bc.cloud.size()) throw ParseError("block owned_count exceeds its cloud size");
            pm.blocks.push_back(std::move(bc));
            pm.cameras.push_back(jb.at("cameras").get<std::vector<std::string>>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return pm;
}

} // namespace citysplat
