#include <cmath>
#include <fstream>
#include <numbers>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "citysplat/core/camera.hpp"
#include "citysplat/core/errors.hpp"
#include "citysplat/core/gaussian.hpp"
#include "citysplat/core/ply.hpp"
#include "citysplat/core/stats.hpp"
#include "test_util.hpp"

using namespace citysplat;
using citysplat::testing::TempDir;

namespace {

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string payload_of(const std::string& bytes) {
    const auto end = bytes.find("end_header\n");
    return bytes.substr(end + 11);
}

} // namespace

TEST(Covariance, AxisAligned) {
    const Eigen::Matrix3d cov = build_covariance(Eigen::Quaterniond::Identity(), {1, 2, 3});
    EXPECT_TRUE(cov.isApprox(Eigen::Vector3d(1, 4, 9).asDiagonal().toDenseMatrix(), 1e-12));
}

TEST(Covariance, QuarterTurnAboutZPermutesAxes) {
    const Eigen::Quaterniond q(Eigen::AngleAxisd(std::numbers::pi / 2, Eigen::Vector3d::UnitZ()));
    const Eigen::Matrix3d cov = build_covariance(q, {1, 2, 1});
    EXPECT_NEAR((cov - Eigen::Vector3d(4, 1, 1).asDiagonal().toDenseMatrix()).norm(), 0.0, 1e-12);
}

TEST(Covariance, EigenvaluesAreSquaredScales) {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const auto q = citysplat::testing::random_quaternion(rng);
        const Eigen::Vector3d s(rng.uniform(0.01, 3), rng.uniform(0.01, 3), rng.uniform(0.01, 3));
        const Eigen::Matrix3d cov = build_covariance(q, s);
        EXPECT_EQ(cov, cov.transpose());
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
        std::array<double, 3> expect{s[0] * s[0], s[1] * s[1], s[2] * s[2]};
        std::sort(expect.begin(), expect.end());
        for (int i = 0; i < 3; ++i) EXPECT_NEAR(es.eigenvalues()[i], expect[static_cast<std::size_t>(i)], 1e-9 * expect[2]);

        const Eigen::Matrix3d flipped = build_covariance(Eigen::Quaterniond(-q.coeffs()), s);
        EXPECT_TRUE(flipped.isApprox(cov, 1e-14));
    }
}

TEST(Covariance, RejectsNonFiniteInput) {
    EXPECT_THROW(build_covariance(Eigen::Quaterniond::Identity(), {1, NAN, 1}), InvalidParameter);
    EXPECT_THROW(build_covariance(Eigen::Quaterniond::Identity(), {1, -1, 1}), InvalidParameter);
}

TEST(Normal, SmallestAxis) {
    EXPECT_EQ(gaussian_normal(Eigen::Quaterniond::Identity(), {1, 2, 0.1}), Eigen::Vector3d(0, 0, 1));
    EXPECT_EQ(gaussian_normal(Eigen::Quaterniond::Identity(), {0.1, 2, 3}), Eigen::Vector3d(1, 0, 0));
}

TEST(Normal, TieBreakIsLastIndex) {
    const Eigen::Quaterniond q(Eigen::AngleAxisd(0.3, Eigen::Vector3d(1, 2, 3).normalized()));
    const Eigen::Vector3d first = gaussian_normal(q, {1, 1, 1});
    for (int i = 0; i < 5; ++i) EXPECT_EQ(gaussian_normal(q, {1, 1, 1}), first);
    EXPECT_EQ(min_scale_axis({1, 1, 1}), 2);
    EXPECT_EQ(min_scale_axis({0.5, 0.5, 1}), 1);
    EXPECT_TRUE(first.isApprox(rotation_matrix(q).col(2)));
}

TEST(Normal, IsEigenvectorWithSmallestEigenvalue) {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const auto q = citysplat::testing::random_quaternion(rng);
        const Eigen::Vector3d s(rng.uniform(0.01, 2), rng.uniform(0.01, 2), rng.uniform(0.01, 2));
        const Eigen::Vector3d n = gaussian_normal(q, s);
        const double smin = s.minCoeff();
        EXPECT_NEAR(n.norm(), 1.0, 1e-12);
        EXPECT_LT((build_covariance(q, s) * n - smin * smin * n).norm(), 1e-7);
    }
}

TEST(Evaluate, PeakAndUnitIsotropic) {
    Gaussian g;
    g.position = {1, -2, 3};
    EXPECT_EQ(evaluate_gaussian(g, g.position), 1.0);
    EXPECT_NEAR(evaluate_gaussian(g, g.position + Eigen::Vector3d(1, 0, 0)), std::exp(-0.5), 1e-15);
    EXPECT_NEAR(evaluate_gaussian(g, g.position + Eigen::Vector3d(1, 0, 0)), 0.6065306597, 1e-9);
}

TEST(Evaluate, AnisotropicMatchesDenseInverse) {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        Gaussian g = citysplat::testing::random_gaussian(rng);
        g.log_scales = Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        const Eigen::Vector3d p = g.position + Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
        const Eigen::Matrix3d cov = build_covariance(g.rotation, g.scales());
        const Eigen::Vector3d d = p - g.position;
        const double expect = std::exp(-0.5 * d.dot(cov.inverse() * d));
        EXPECT_NEAR(evaluate_gaussian(g, p), expect, 1e-10 * std::max(expect, 1e-300) + 1e-14);
    }
}

TEST(Evaluate, RigidTransformInvariance) {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        Gaussian g = citysplat::testing::random_gaussian(rng);
        g.log_scales = Eigen::Vector3d(rng.uniform(-1, 0), rng.uniform(-1, 0), rng.uniform(-1, 0));
        const Eigen::Vector3d p = g.position + 0.3 * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
        const auto q = citysplat::testing::random_quaternion(rng);
        const Eigen::Vector3d t(rng.normal(), rng.normal(), rng.normal());
        Gaussian moved = g;
        moved.position = q * g.position + t;
        moved.rotation = q * g.rotation;
        EXPECT_NEAR(evaluate_gaussian(moved, q * p + t), evaluate_gaussian(g, p), 1e-10);
    }
}

TEST(Evaluate, NearSingularStaysFinite) {
    Gaussian g;
    g.log_scales = {0.0, 0.0, -60.0};
    const double v = evaluate_gaussian(g, {0.1, 0.1, 1e-9});
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
}

TEST(ScaleLoss, Examples) {
    GaussianCloud one;
    Gaussian g;
    g.log_scales = Eigen::Vector3d(1, 2, 3).array().log();
    one.push_back(g);
    EXPECT_NEAR(scale_loss(one), 1.0, 1e-15);

    GaussianCloud two;
    g.log_scales = Eigen::Vector3d(0.5, 2, 3).array().log();
    two.push_back(g);
    g.log_scales = Eigen::Vector3d(4, 1.5, 3).array().log();
    two.push_back(g);
    EXPECT_NEAR(scale_loss(two), 1.0, 1e-15);

    EXPECT_EQ(scale_loss(GaussianCloud{}), 0.0);
}

TEST(ScaleLoss, MatchesLoop) {
    const GaussianCloud cloud = citysplat::testing::random_cloud(500, 8);
    double sum = 0.0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Eigen::Vector3d s = cloud[i].scales();
        sum += std::min({s[0], s[1], s[2]});
    }
    EXPECT_NEAR(scale_loss(cloud), sum / 500.0, 1e-15);
}

TEST(GaussianCloud, MutationsKeepInvariants) {
    GaussianCloud cloud;
    Gaussian g;
    g.rotation = Eigen::Quaterniond(2, 0, 0, 0);
    g.color = {1.5, -0.2, 0.5};
    cloud.push_back(g);
    EXPECT_NEAR(cloud.rotation(0).norm(), 1.0, 1e-15);
    EXPECT_EQ(cloud.color(0), Eigen::Vector3d(1.0, 0.0, 0.5));
    g.rotation = Eigen::Quaterniond(1, 1, 1, 1);
    cloud.set(0, g);
    EXPECT_NEAR(cloud.rotation(0).norm(), 1.0, 1e-15);

    g.log_scales[1] = INFINITY;
    EXPECT_THROW(cloud.push_back(g), InvalidParameter);
    EXPECT_EQ(cloud.size(), 1u);
}

TEST(Ply, RoundTripIsByteExact) {
    TempDir dir("ply");
    const GaussianCloud cloud = citysplat::testing::random_cloud(257, 21);
    save_cloud(cloud, dir.file("a.ply"));
    const GaussianCloud loaded = load_cloud(dir.file("a.ply"));
    ASSERT_EQ(loaded.size(), cloud.size());
    save_cloud(loaded, dir.file("b.ply"));
    EXPECT_EQ(read_bytes(dir.file("a.ply")), read_bytes(dir.file("b.ply")));
    EXPECT_TRUE(load_cloud(dir.file("b.ply")) == loaded);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        EXPECT_EQ(loaded.position(i).x(), static_cast<double>(static_cast<float>(cloud.position(i).x())));
        EXPECT_EQ(loaded.opacity_logit(i), static_cast<double>(static_cast<float>(cloud.opacity_logit(i))));
    }
}

TEST(Ply, EmptyCloud) {
    TempDir dir("ply_empty");
    save_cloud(GaussianCloud{}, dir.file("e.ply"));
    EXPECT_NE(read_bytes(dir.file("e.ply")).find("element vertex 0\n"), std::string::npos);
    EXPECT_EQ(load_cloud(dir.file("e.ply")).size(), 0u);
}

TEST(Ply, MissingOpacityIsNamed) {
    TempDir dir("ply_missing");
    save_cloud(citysplat::testing::random_cloud(3, 1), dir.file("ok.ply"));
    std::string bytes = read_bytes(dir.file("ok.ply"));
    // drop the opacity property and its 4 bytes from every vertex
    const std::string line = "property float opacity\n";
    const auto pos = bytes.find(line);
    ASSERT_NE(pos, std::string::npos);
    bytes.erase(pos, line.size());
    std::string payload = payload_of(bytes);
    std::string header = bytes.substr(0, bytes.size() - payload.size());
    std::string trimmed;
    for (std::size_t v = 0; v < 3; ++v) {
        const std::string rec = payload.substr(v * 56, 56);
        trimmed += rec.substr(0, 40) + rec.substr(44);
    }
    std::ofstream(dir.file("bad.ply"), std::ios::binary) << header << trimmed;
    try {
        load_cloud(dir.file("bad.ply"));
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("missing property: opacity"), std::string::npos) << e.what();
    }
}

TEST(Ply, TruncatedPayloadAndUnknownProperty) {
    TempDir dir("ply_trunc");
    save_cloud(citysplat::testing::random_cloud(4, 2), dir.file("ok.ply"));
    const std::string bytes = read_bytes(dir.file("ok.ply"));
    std::ofstream(dir.file("short.ply"), std::ios::binary) << bytes.substr(0, bytes.size() - 10);
    try {
        load_cloud(dir.file("short.ply"));
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("truncated payload"), std::string::npos) << e.what();
    }

    std::string odd = bytes;
    odd.replace(odd.find("property float red"), 18, "property float reD");
    std::ofstream(dir.file("odd.ply"), std::ios::binary) << odd;
    EXPECT_THROW(load_cloud(dir.file("odd.ply")), ParseError);
    EXPECT_THROW(load_cloud(dir.file("nope.ply")), ParseError);
}

TEST(Ply, ProvenanceRoundTrip) {
    TempDir dir("ply_prov");
    const GaussianCloud cloud = citysplat::testing::random_cloud(10, 3);
    std::vector<std::uint32_t> prov(10);
    for (std::uint32_t i = 0; i < 10; ++i) prov[i] = 1000 + 7 * i;
    save_cloud_with_provenance(cloud, prov, dir.file("p.ply"));
    const ProvenanceCloud back = load_cloud_with_provenance(dir.file("p.ply"));
    EXPECT_EQ(back.provenance, prov);
    EXPECT_EQ(back.cloud.size(), 10u);
    save_cloud(cloud, dir.file("plain.ply"));
    EXPECT_THROW(load_cloud_with_provenance(dir.file("plain.ply")), ParseError);
}

TEST(Camera, ValidateAndRoundTrip) {
    TempDir dir("cams");
    std::vector<Camera> cams;
    cams.push_back(look_at("a", {0, 0, -5}, {0, 0, 0}, {0, 1, 0}, 50, 64, 48));
    cams.push_back(look_at("b", {3, 1, -4}, {0, 0, 0}, {0, 1, 0}, 60, 32, 32));
    for (const auto& c : cams) EXPECT_NO_THROW(c.validate());
    save_cameras(cams, dir.file("c.json"));
    const auto back = load_cameras(dir.file("c.json"));
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[1].id, "b");
    EXPECT_EQ(back[1].rotation, cams[1].rotation);
    EXPECT_EQ(back[1].translation, cams[1].translation);
    EXPECT_EQ(back[0].cx, 32.0);

    Camera bad = cams[0];
    bad.cx = 64;
    EXPECT_THROW(bad.validate(), InvalidParameter);
    bad = cams[0];
    bad.rotation(0, 1) += 1e-6;
    EXPECT_THROW(bad.validate(), InvalidParameter);
}

TEST(Camera, LookAtSeesTarget) {
    const Camera cam = look_at("c", {2, -1, -6}, {0.5, 0.2, 0}, {0, 1, 0}, 50, 40, 30);
    const Eigen::Vector3d c = cam.to_camera({0.5, 0.2, 0});
    EXPECT_NEAR(c.x(), 0.0, 1e-12);
    EXPECT_NEAR(c.y(), 0.0, 1e-12);
    EXPECT_GT(c.z(), 0.0);
    EXPECT_TRUE(cam.center().isApprox(Eigen::Vector3d(2, -1, -6), 1e-12));
}

TEST(Stats, PercentileAndMedian) {
    std::vector<double> v;
    for (int i = 1; i <= 100; ++i) v.push_back(i);
    EXPECT_NEAR(percentile(v, 90), 90.1, 1e-12);
    EXPECT_EQ(percentile(v, 100), 100.0);
    EXPECT_EQ(median({3, 1, 2}), 2.0);
    EXPECT_EQ(median({4, 1, 3, 2}), 2.5);
    EXPECT_THROW(percentile({}, 50), InvalidParameter);
}
