#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "citysplat/core/errors.hpp"
#include "citysplat/core/ply.hpp"
#include "citysplat/partitioner/partitioner.hpp"
#include "test_util.hpp"

using namespace citysplat;
using citysplat::testing::TempDir;

namespace {

Gaussian blob(const Eigen::Vector3d& p, double log_scale = -2.0, Eigen::Vector3d color = {0.8, 0.2, 0.1}) {
    Gaussian g;
    g.position = p;
    g.log_scales = Eigen::Vector3d::Constant(log_scale);
    g.opacity_logit = 3.0;
    g.color = color;
    return g;
}

int owner_count(const std::vector<Block>& blocks, std::size_t i) {
    int n = 0;
    for (const auto& b : blocks) n += static_cast<int>(std::count(b.owned.begin(), b.owned.end(), i));
    return n;
}

} // namespace

TEST(Contract, LinearInsideRadius) {
    const Eigen::Vector3d c = contract({1.0, -2.0, 0.5}, 4.0);
    EXPECT_TRUE(c.isApprox(Eigen::Vector3d(0.125, -0.25, 0.0625)));
    EXPECT_DOUBLE_EQ(contract({4.0, 0.0, 0.0}, 4.0).x(), 0.5);
}

TEST(Contract, ContinuousAtRadiusAndBoundedOutside) {
    const Eigen::Vector3d in = contract({1.0 - 1e-12, 0.3, 0.0}, 1.0);
    const Eigen::Vector3d out = contract({1.0 + 1e-12, 0.3, 0.0}, 1.0);
    EXPECT_NEAR((in - out).norm(), 0.0, 1e-10);
    // m = 2: scale (2 - 1/2) / 2 along y / m
    EXPECT_TRUE(contract({2.0, 1.0, 0.0}, 1.0).isApprox(Eigen::Vector3d(0.75, 0.375, 0.0)));
    const Eigen::Vector3d far = contract({1e12, -3e11, 5.0}, 1.0);
    EXPECT_LT(far.cwiseAbs().maxCoeff(), 1.0);
    EXPECT_NEAR(far.x(), 1.0, 1e-9);
    EXPECT_THROW(contract({0, 0, 0}, 0.0), InvalidParameter);
}

TEST(Blocks, GridLayoutAndBounds) {
    const auto blocks = make_blocks({2, 3, 1});
    ASSERT_EQ(blocks.size(), 6u);
    EXPECT_EQ(blocks[1].coords, (std::array<int, 3>{1, 0, 0}));
    EXPECT_EQ(blocks[2].coords, (std::array<int, 3>{0, 1, 0}));
    EXPECT_DOUBLE_EQ(blocks[5].bounds_min.y(), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(blocks[5].bounds_max.x(), 1.0);
    EXPECT_DOUBLE_EQ(blocks[0].bounds_min.z(), -1.0);
}

TEST(Blocks, RightOpenCellsWithClosedLastSlab) {
    const std::array<int, 3> dims{2, 2, 2};
    EXPECT_EQ(block_index_of({0.0, -0.5, -0.5}, dims), 1u);
    EXPECT_EQ(block_index_of({-1.0, -1.0, -1.0}, dims), 0u);
    EXPECT_EQ(block_index_of({1.0, 1.0, 1.0}, dims), 7u);
    EXPECT_EQ(block_index_of({-1e-9, 0.0, -0.2}, dims), 2u);
}

TEST(Blocks, EveryGaussianHasExactlyOneOwner) {
    GaussianCloud cloud = citysplat::testing::random_cloud(500, 11, 6.0);
    cloud.push_back(blob({0, 0, 0}));
    cloud.push_back(blob({2, 2, 0}));     // contracted (1, 1, 0) with r = 1
    cloud.push_back(blob({-1, 0.5, 1}));
    const std::array<int, 3> dims{3, 2, 2};
    auto blocks = make_blocks(dims);
    assign_gaussians(cloud, blocks, dims, 0.05, 1.0);
    for (std::size_t i = 0; i < cloud.size(); ++i) ASSERT_EQ(owner_count(blocks, i), 1) << i;
    for (const auto& b : blocks)
        for (auto i : b.shared) EXPECT_EQ(std::count(b.owned.begin(), b.owned.end(), i), 0);
}

TEST(Blocks, SharingAcrossOneFace) {
    // contracted x = -delta/2, well inside the y/z extent of its block
    const double delta = 0.05;
    GaussianCloud cloud;
    cloud.push_back(blob({-delta, -1.0, -1.0}));
    const std::array<int, 3> dims{2, 2, 1};
    auto blocks = make_blocks(dims);
    assign_gaussians(cloud, blocks, dims, delta, 2.0);
    std::vector<int> shared_in;
    for (const auto& b : blocks)
        if (!b.shared.empty()) shared_in.push_back(b.id);
    ASSERT_EQ(owner_count(blocks, 0), 1);
    EXPECT_EQ(blocks[0].owned.size(), 1u);
    EXPECT_EQ(shared_in, std::vector<int>{1});
}

TEST(Blocks, SharingNearAnEdgeReachesThreeNeighbors) {
    GaussianCloud cloud;
    cloud.push_back(blob({-0.02, -0.02, 0.0}));
    const std::array<int, 3> dims{2, 2, 1};
    auto blocks = make_blocks(dims);
    assign_gaussians(cloud, blocks, dims, 0.05, 1.0);
    EXPECT_EQ(blocks[0].owned.size(), 1u);
    EXPECT_EQ(blocks[1].shared.size() + blocks[2].shared.size() + blocks[3].shared.size(), 3u);
}

TEST(Blocks, ZeroDeltaSharesNothing) {
    GaussianCloud cloud = citysplat::testing::random_cloud(200, 4, 3.0);
    const std::array<int, 3> dims{2, 2, 2};
    auto blocks = make_blocks(dims);
    assign_gaussians(cloud, blocks, dims, 0.0, 1.0);
    for (const auto& b : blocks) EXPECT_TRUE(b.shared.empty());
}

TEST(Views, GeometricUsesContractedCenter) {
    const std::array<int, 3> dims{2, 1, 1};
    const auto blocks = make_blocks(dims);
    const Camera left = look_at("l", {-3, 0, -5}, {-3, 0, 0}, {0, 1, 0}, 40, 16, 16);
    EXPECT_TRUE(camera_geometric(left, blocks[0], dims, 1.0));
    EXPECT_FALSE(camera_geometric(left, blocks[1], dims, 1.0));
}

TEST(Views, PerceptualFiresOnlyForVisibleContent) {
    const Camera cam = citysplat::testing::frontal_camera(32, 32, 40);
    GaussianCloud cloud;
    cloud.push_back(blob({0, 0, 5}, -1.0));
    cloud.push_back(blob({0, 0, -5}, -1.0)); // behind the camera
    Block seen, unseen, empty;
    seen.owned = {0};
    unseen.owned = {1};
    const auto a = camera_perceptual(cam, cloud, seen, 0.01);
    const auto b = camera_perceptual(cam, cloud, unseen, 0.01);
    const auto c = camera_perceptual(cam, cloud, empty, 0.01);
    EXPECT_TRUE(a.fires);
    EXPECT_LT(a.ssim, 0.99);
    EXPECT_FALSE(b.fires);
    EXPECT_DOUBLE_EQ(b.ssim, 1.0);
    EXPECT_FALSE(c.fires);
}

TEST(Views, FullyMaskedViewDoesNotFire) {
    const Camera cam = citysplat::testing::frontal_camera(16, 16, 20);
    GaussianCloud cloud;
    cloud.push_back(blob({0, 0, -5}));
    Block b;
    b.owned = {0};
    const auto r = camera_perceptual(cam, cloud, b, 0.01);
    EXPECT_TRUE(r.fully_masked);
    EXPECT_FALSE(r.fires);
}

TEST(Views, EpsilonSweepIsMonotone) {
    const Camera cam = citysplat::testing::frontal_camera(32, 32, 40);
    GaussianCloud cloud;
    cloud.push_back(blob({0, 0, 5}, -0.5, {0.2, 0.6, 0.9}));
    cloud.push_back(blob({0.3, 0.1, 5.2}, -2.5));
    Block b;
    b.owned = {1};
    const double s = camera_perceptual(cam, cloud, b, 0.5).ssim;
    ASSERT_LT(s, 1.0);
    bool was_firing = true;
    for (double eps : {1e-6, 1e-4, 1e-2, 0.1, 0.5, 0.9}) {
        const bool fires = camera_perceptual(cam, cloud, b, eps).fires;
        EXPECT_EQ(fires, s < 1.0 - eps);
        if (fires) {
            EXPECT_TRUE(was_firing);
        }
        was_firing = fires;
    }
}

TEST(Views, ForegroundRadius) {
    std::vector<Camera> cams;
    for (int i = 0; i < 10; ++i) {
        Camera c = citysplat::testing::frontal_camera();
        c.translation = -Eigen::Vector3d(static_cast<double>(i), 0, 0);
        cams.push_back(c);
    }
    // distances to centroid 4.5: 0.5,0.5,1.5,1.5,...,4.5,4.5 -> p90 = 4.5
    EXPECT_NEAR(default_foreground_radius(cams), 4.5, 1e-12);
    EXPECT_DOUBLE_EQ(default_foreground_radius({cams[0]}), 1.0);
}

TEST(Merge, RoundTripThroughManifest) {
    GaussianCloud cloud = citysplat::testing::random_cloud(300, 21, 4.0);
    std::vector<std::uint32_t> hits(cloud.size(), 5);
    std::vector<Camera> cams{look_at("a", {0, 0, -12}, {0, 0, 0}, {0, 1, 0}, 20, 24, 24),
                             look_at("b", {8, 0, -8}, {0, 0, 0}, {0, 1, 0}, 20, 24, 24)};
    PruneConfig pc;
    pc.prune_ratio = 0.2;
    PartitionConfig cfg;
    cfg.grid_dims = {2, 2, 1};
    cfg.delta_share = 0.1;
    const PartitionResult res = global_prune_then_partition(cloud, hits, cams, pc, cfg);
    EXPECT_LT(res.cloud.size(), cloud.size());
    EXPECT_GE(res.cloud.size(), cloud.size() - 60);
    TempDir dir("partition");
    write_partition(res, cfg, 7, dir.path().string());
    const PartitionManifest m = read_partition(dir.path().string());
    ASSERT_EQ(m.gaussian_count, res.cloud.size());
    ASSERT_EQ(m.blocks.size(), 4u);
    const GaussianCloud merged = merge_blocks(m.blocks, m.gaussian_count);
    save_cloud(res.cloud, dir.file("pruned.ply"));
    EXPECT_TRUE(merged == load_cloud(dir.file("pruned.ply")));
    std::size_t shared = 0;
    for (const auto& b : res.blocks) shared += b.shared.size();
    EXPECT_GT(shared, 0u);
    for (std::size_t i = 0; i < m.cameras.size(); ++i) EXPECT_EQ(m.cameras[i], res.blocks[i].cameras);
}

TEST(Merge, OwnerCopyWins) {
    GaussianCloud base;
    base.push_back(blob({0, 0, 0}));
    base.push_back(blob({1, 0, 0}));
    BlockCloud a, b;
    a.cloud.push_back(blob({0, 0, 0}, -2.0, {0.1, 0.1, 0.1}));
    a.cloud.push_back(blob({1, 0, 0}, -2.0, {0.9, 0.9, 0.9})); // shared copy of 1
    a.provenance = {0, 1};
    a.owned_count = 1;
    b.cloud.push_back(blob({1, 0, 0}, -2.0, {0.5, 0.5, 0.5}));
    b.provenance = {1};
    b.owned_count = 1;
    const std::vector<BlockCloud> blocks{a, b};
    const GaussianCloud merged = merge_blocks(blocks, 2);
    EXPECT_DOUBLE_EQ(merged[1].color.x(), 0.5);
    EXPECT_DOUBLE_EQ(merged[0].color.x(), 0.1);
}

TEST(Merge, GapsAreReported) {
    BlockCloud a;
    a.cloud.push_back(blob({0, 0, 0}));
    a.cloud.push_back(blob({1, 0, 0}));
    a.provenance = {0, 3};
    a.owned_count = 2;
    const std::vector<BlockCloud> blocks{a};
    try {
        merge_blocks(blocks, 5);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[1,2,4]"), std::string::npos) << msg;
    }
}

TEST(Partition, ZeroRatioKeepsEverything) {
    GaussianCloud cloud = citysplat::testing::random_cloud(100, 2, 2.0);
    std::vector<std::uint32_t> hits(cloud.size(), 0);
    PruneConfig pc;
    pc.prune_ratio = 0.0;
    PartitionConfig cfg;
    cfg.perceptual = false;
    const auto res = global_prune_then_partition(cloud, hits, {}, pc, cfg);
    EXPECT_TRUE(res.cloud == cloud);
    EXPECT_DOUBLE_EQ(res.foreground_radius, 1.0);
}

TEST(Partition, ConfigValidation) {
    PartitionConfig cfg;
    cfg.grid_dims = {0, 1, 1};
    EXPECT_THROW(cfg.validate(), InvalidParameter);
    cfg = {};
    cfg.epsilon_ssim = 0.0;
    EXPECT_THROW(cfg.validate(), InvalidParameter);
    cfg = {};
    cfg.delta_share = -0.1;
    EXPECT_THROW(cfg.validate(), InvalidParameter);
}
