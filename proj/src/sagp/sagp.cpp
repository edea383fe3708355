#include "citysplat/sagp/sagp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>

#include "citysplat/core/errors.hpp"
#include "citysplat/core/stats.hpp"

namespace citysplat {

static_assert(std::endian::native == std::endian::little, "hit-count I/O assumes a little-endian host");

void PruneConfig::validate() const {
    if (!(lambda_cell > 0.0)) throw InvalidParameter("sagp.lambda_cell must be positive");
    if (!(percentile_t > 0.0 && percentile_t <= 100.0)) throw InvalidParameter("sagp.percentile must lie in (0, 100]");
    if (!(kappa > 0.0)) throw InvalidParameter("sagp.kappa must be positive");
    if (!(prune_ratio >= 0.0 && prune_ratio < 1.0)) throw InvalidParameter("sagp.prune_ratio must lie in [0, 1)");
    for (std::size_t i = 0; i < schedule_fractions.size(); ++i) {
        const double f = schedule_fractions[i];
        if (!(f > 0.0 && f < 1.0)) throw InvalidParameter("sagp schedule fractions must lie in (0, 1)");
        if (i > 0 && !(f > schedule_fractions[i - 1]))
            throw InvalidParameter("sagp schedule fractions must be strictly increasing");
    }
}

std::array<int, 3> VoxelGrid::cell_coords(std::size_t cell) const {
    std::uint64_t key = cell_keys.at(cell);
    const auto dx = static_cast<std::uint64_t>(dims[0]);
    const auto dy = static_cast<std::uint64_t>(dims[1]);
    return {static_cast<int>(key % dx), static_cast<int>((key / dx) % dy), static_cast<int>(key / (dx * dy))};
}

double cell_length(double volume, std::size_t n_gaussians, double lambda_cell) {
    if (!(volume > 0.0) || !std::isfinite(volume)) throw InvalidParameter("cell_length: volume must be positive");
    if (n_gaussians == 0) throw InvalidParameter("cell_length: need at least one Gaussian");
    return lambda_cell * std::cbrt(volume / static_cast<double>(n_gaussians));
}

double gaussian_volume(const GaussianCloud& cloud, std::size_t i) {
    const Eigen::Vector3d s = cloud.scales(i);
    return s[0] * s[1] * s[2];
}

VoxelGrid build_voxel_grid(const GaussianCloud& cloud, const PruneConfig& config) {
    config.validate();
    const std::size_t n = cloud.size();
    if (n == 0) throw InvalidParameter("build_voxel_grid: empty cloud");

    Eigen::Vector3d lo = cloud.position(0), hi = cloud.position(0);
    for (const auto& p : cloud.positions()) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    VoxelGrid grid;
    grid.origin = lo;
    Eigen::Vector3d extent = hi - lo;
    for (int a = 0; a < 3; ++a) {
        if (extent[a] <= 0.0) {
            extent[a] = 1e-6;
            grid.padded = true;
        }
    }
    grid.cell_length = cell_length(extent.prod(), n, config.lambda_cell);
    for (int a = 0; a < 3; ++a) {
        const double cells = std::floor(extent[a] / grid.cell_length) + 1.0;
        if (cells > 1e6) throw InvalidParameter("build_voxel_grid: grid too fine along one axis");
        grid.dims[static_cast<std::size_t>(a)] = static_cast<int>(cells);
    }

    std::vector<std::uint64_t> key_of(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t key = 0, stride = 1;
        for (int a = 0; a < 3; ++a) {
            const int d = grid.dims[static_cast<std::size_t>(a)];
            const double c = std::floor((cloud.position(i)[a] - lo[a]) / grid.cell_length);
            const auto ci = static_cast<std::uint64_t>(std::clamp(c, 0.0, static_cast<double>(d - 1)));
            key += ci * stride;
            stride *= static_cast<std::uint64_t>(d);
        }
        key_of[i] = key;
    }
    grid.cell_keys = key_of;
    std::sort(grid.cell_keys.begin(), grid.cell_keys.end());
    grid.cell_keys.erase(std::unique(grid.cell_keys.begin(), grid.cell_keys.end()), grid.cell_keys.end());

    grid.cell_of.resize(n);
    grid.members.assign(grid.cell_keys.size(), {});
    for (std::size_t i = 0; i < n; ++i) {
        const auto it = std::lower_bound(grid.cell_keys.begin(), grid.cell_keys.end(), key_of[i]);
        const auto c = static_cast<std::size_t>(it - grid.cell_keys.begin());
        grid.cell_of[i] = c;
        grid.members[c].push_back(i);
    }

    grid.percentile_volume.assign(grid.cell_count(), 0.0);
    const auto cells = static_cast<std::ptrdiff_t>(grid.cell_count());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t c = 0; c < cells; ++c) {
        const auto& m = grid.members[static_cast<std::size_t>(c)];
        std::vector<double> v;
        v.reserve(m.size());
        for (auto i : m) v.push_back(gaussian_volume(cloud, i));
        grid.percentile_volume[static_cast<std::size_t>(c)] = percentile(std::move(v), config.percentile_t);
    }
    return grid;
}

double volume_weight(double v, double theta_local, double kappa) {
    if (!(theta_local > 0.0)) throw InvalidParameter("volume_weight: percentile volume must be positive");
    return std::pow(std::min(v / theta_local, 1.0), kappa);
}

ScoreSet importance_scores(const GaussianCloud& cloud, const VoxelGrid& grid,
                           std::span<const std::uint32_t> hit_counts, double kappa) {
    const std::size_t n = cloud.size();
    if (hit_counts.size() != n) throw InvalidParameter("importance_scores: hit count length differs from cloud size");
    if (grid.cell_of.size() != n) throw InvalidParameter("importance_scores: grid built for a different cloud");
    ScoreSet s;
    s.phi.assign(n, 0.0);
    s.tau_op.assign(n, 0.0);
    s.w_v.assign(n, 0.0);
    s.score.assign(n, 0.0);
    const auto cells = static_cast<std::ptrdiff_t>(grid.cell_count());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t c = 0; c < cells; ++c) {
        const auto& m = grid.members[static_cast<std::size_t>(c)];
        std::uint32_t busiest = 0;
        for (auto i : m) busiest = std::max(busiest, hit_counts[i]);
        const double theta = grid.percentile_volume[static_cast<std::size_t>(c)];
        for (auto i : m) {
            s.phi[i] = busiest == 0 ? 0.0 : static_cast<double>(hit_counts[i]) / static_cast<double>(busiest);
            s.tau_op[i] = cloud.opacity(i);
            s.w_v[i] = volume_weight(gaussian_volume(cloud, i), theta, kappa);
            s.score[i] = s.phi[i] * s.tau_op[i] * s.w_v[i];
        }
    }
    return s;
}

std::vector<double> lwp_scores(std::span<const double> phi, std::span<const double> tau_op,
                               std::span<const double> w_v, double alpha, double beta, double gamma) {
    if (phi.size() != tau_op.size() || phi.size() != w_v.size())
        throw InvalidParameter("lwp_scores: attribute lengths differ");
    if (!(alpha >= 0.0 && beta >= 0.0 && gamma >= 0.0)) throw InvalidParameter("lwp_scores: weights must be >= 0");
    std::vector<double> out(phi.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * phi[i] + beta * tau_op[i] + gamma * w_v[i];
    return out;
}

namespace {

PruneResult compact(const GaussianCloud& cloud, const std::vector<std::uint8_t>& keep, bool refused) {
    PruneResult r;
    r.refused = refused;
    r.old_to_new.assign(cloud.size(), -1);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (!keep[i]) continue;
        r.old_to_new[i] = static_cast<std::int64_t>(r.kept.size());
        r.kept.push_back(i);
    }
    r.cloud = cloud.subset(r.kept);
    return r;
}

// ascending score, higher index first among equals: the removal order
std::vector<std::size_t> removal_order(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] < scores[b];
        return a > b;
    });
    return order;
}

void check_scores(const GaussianCloud& cloud, std::span<const double> scores) {
    if (scores.size() != cloud.size()) throw InvalidParameter("prune: score count differs from cloud size");
    for (double s : scores)
        if (std::isnan(s)) throw InvalidParameter("prune: NaN score");
}

} // namespace

std::size_t prune_count(double ratio, std::size_t n) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw InvalidParameter("prune ratio must lie in [0, 1]");
    // tolerate representation error such as 0.29 * 100 = 28.999999999999996
    const double k = std::floor(ratio * static_cast<double>(n) + 1e-9);
    return std::min(n, static_cast<std::size_t>(k));
}

PruneResult prune_by_ratio(const GaussianCloud& cloud, std::span<const double> scores, double ratio) {
    check_scores(cloud, scores);
    const std::size_t n = cloud.size();
    std::size_t k = prune_count(ratio, n);
    bool refused = false;
    if (n > 0 && k >= n) {
        k = n - 1;
        refused = true;
    }
    std::vector<std::uint8_t> keep(n, 1);
    const auto order = removal_order(scores);
    for (std::size_t j = 0; j < k; ++j) keep[order[j]] = 0;
    return compact(cloud, keep, refused);
}

PruneResult prune_by_threshold(const GaussianCloud& cloud, std::span<const double> scores, double theta) {
    check_scores(cloud, scores);
    const std::size_t n = cloud.size();
    std::vector<std::uint8_t> keep(n, 0);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < n; ++i) {
        keep[i] = scores[i] > theta;
        kept += keep[i];
    }
    bool refused = false;
    if (n > 0 && kept == 0) {
        keep[removal_order(scores).back()] = 1;
        refused = true;
    }
    return compact(cloud, keep, refused);
}

double ratio_threshold(std::span<const double> scores, double ratio) {
    const std::size_t k = prune_count(ratio, scores.size());
    if (k == 0) return -std::numeric_limits<double>::infinity();
    std::vector<double> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end());
    if (k == sorted.size() || sorted[k] != sorted[k - 1]) return sorted[k - 1];
    // a tie straddles the cut: step below it so nothing past k is removed
    const auto first = std::lower_bound(sorted.begin(), sorted.end(), sorted[k - 1]);
    if (first == sorted.begin()) return -std::numeric_limits<double>::infinity();
    return *(first - 1);
}

bool schedule_should_prune(long long iteration, long long total, std::span<const double> fractions) {
    if (total < 0 || iteration < 0 || iteration > total)
        throw InvalidParameter("schedule_should_prune: iteration must lie in [0, total]");
    for (double f : fractions)
        if (iteration == std::llround(f * static_cast<double>(total))) return true;
    return false;
}

std::vector<std::uint32_t> carry_hit_counts(std::span<const std::uint32_t> hits,
                                            std::span<const std::int64_t> old_to_new, std::size_t new_size) {
    if (hits.size() != old_to_new.size()) throw InvalidParameter("carry_hit_counts: length mismatch");
    std::vector<std::uint32_t> out(new_size, 0);
    for (std::size_t i = 0; i < hits.size(); ++i) {
        const std::int64_t j = old_to_new[i];
        if (j < 0) continue;
        if (static_cast<std::size_t>(j) >= new_size) throw InvalidParameter("carry_hit_counts: index out of range");
        out[static_cast<std::size_t>(j)] = hits[i];
    }
    return out;
}

void save_hit_counts(std::span<const std::uint32_t> hits, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write hit counts: " + path);
    const auto count = static_cast<std::uint64_t>(hits.size());
    out.write(reinterpret_cast<const char*>(&count), sizeof count);
    out.write(reinterpret_cast<const char*>(hits.data()), static_cast<std::streamsize>(hits.size_bytes()));
    if (!out) throw ParseError("failed writing hit counts: " + path);
}

std::vector<std::uint32_t> load_hit_counts(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open hit counts: " + path);
    const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (bytes.size() < 8) throw ParseError(path + ": hit-count file shorter than its 8-byte header");
    std::uint64_t count = 0;
    std::memcpy(&count, bytes.data(), 8);
    if (bytes.size() - 8 != count * 4)
        throw ParseError(path + ": hit-count payload holds " + std::to_string((bytes.size() - 8) / 4) +
                         " values, header says " + std::to_string(count));
    std::vector<std::uint32_t> hits(count);
    std::memcpy(hits.data(), bytes.data() + 8, count * 4);
    return hits;
}

} // namespace citysplat
