#include "citysplat/losses/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>

#include "citysplat/core/errors.hpp"
#include "citysplat/core/stats.hpp"

namespace citysplat {
namespace {

// L1 subgradient; differences at rounding level count as an exact match
constexpr double kSignDeadZone = 1e-12;

double sign(double x) { return x > kSignDeadZone ? 1.0 : (x < -kSignDeadZone ? -1.0 : 0.0); }

Eigen::Vector3d sign(const Eigen::Vector3d& v) { return {sign(v.x()), sign(v.y()), sign(v.z())}; }

double normal_pair_loss(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
    return (a - b).cwiseAbs().sum() + (1.0 - a.dot(b));
}

void require_same_shape(int w0, int h0, int w1, int h1, const char* what) {
    if (w0 != w1 || h0 != h1) throw InvalidParameter(std::string(what) + ": map shapes differ");
}

/// Pair of pixel indices (a, b) whose difference P[b] - P[a] forms one axis of
/// the depth-normal stencil.
struct Edge {
    std::size_t a;
    std::size_t b;
};

std::optional<Edge> horizontal_edge(int u, int v, int w) {
    const auto row = static_cast<std::size_t>(v) * static_cast<std::size_t>(w);
    if (u + 1 < w) return Edge{row + static_cast<std::size_t>(u), row + static_cast<std::size_t>(u + 1)};
    if (u >= 1) return Edge{row + static_cast<std::size_t>(u - 1), row + static_cast<std::size_t>(u)};
    return std::nullopt;
}

std::optional<Edge> vertical_edge(int u, int v, int w, int h) {
    const auto at = [w](int uu, int vv) {
        return static_cast<std::size_t>(vv) * static_cast<std::size_t>(w) + static_cast<std::size_t>(uu);
    };
    if (v + 1 < h) return Edge{at(u, v), at(u, v + 1)};
    if (v >= 1) return Edge{at(u, v - 1), at(u, v)};
    return std::nullopt;
}

/// Forward pieces of one depth-normal pixel, shared by the loss and its gradient.
struct DNormalPixel {
    Edge h, v;
    Eigen::Vector3d grad_h, grad_v, cross;
    double orientation = 1.0; ///< +1 or -1 applied to cross / |cross|
};

std::optional<DNormalPixel> dnormal_pixel(const VectorMap& points, int u, int v) {
    const auto he = horizontal_edge(u, v, points.width);
    const auto ve = vertical_edge(u, v, points.width, points.height);
    if (!he || !ve) return std::nullopt;
    const std::size_t center = points.index(u, v);
    if (!points.valid[center] || !points.valid[he->a] || !points.valid[he->b] || !points.valid[ve->a] ||
        !points.valid[ve->b])
        return std::nullopt;
    DNormalPixel px{*he, *ve, {}, {}, {}, 1.0};
    px.grad_h = points.values[he->b] - points.values[he->a];
    px.grad_v = points.values[ve->b] - points.values[ve->a];
    px.cross = px.grad_v.cross(px.grad_h);
    const double len = px.cross.norm();
    if (!(len > 1e-12 * px.grad_h.norm() * px.grad_v.norm()) || !(len > 0.0)) return std::nullopt;
    px.orientation = px.cross.dot(points.values[center]) > 0.0 ? -1.0 : 1.0;
    return px;
}

double axis_gradient(const ScalarMap& m, int u, int v, int du, int dv) {
    const int u0 = u - du, v0 = v - dv, u1 = u + du, v1 = v + dv;
    const bool has_lo = u0 >= 0 && v0 >= 0 && m.is_valid(u0, v0);
    const bool has_hi = u1 < m.width && v1 < m.height && m.is_valid(u1, v1);
    if (has_lo && has_hi) return 0.5 * (m.at(u1, v1) - m.at(u0, v0));
    if (has_hi) return m.at(u1, v1) - m.at(u, v);
    if (has_lo) return m.at(u, v) - m.at(u0, v0);
    return 0.0;
}

} // namespace

void LossWeights::validate() const {
    if (!(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda3 >= 0.0))
        throw InvalidParameter("loss weights must be non-negative");
    if (!(gamma_d > 0.0) || !(tau > 0.0)) throw InvalidParameter("gamma_d and tau must be positive");
    if (!(dssim_mix >= 0.0 && dssim_mix <= 1.0)) throw InvalidParameter("dssim_mix must lie in [0, 1]");
}

MaskedMean normal_loss(const VectorMap& rendered, const VectorMap& prior, std::span<const std::uint8_t> mask) {
    require_same_shape(rendered.width, rendered.height, prior.width, prior.height, "normal_loss");
    if (!mask.empty() && mask.size() != rendered.size()) throw InvalidParameter("normal_loss: mask size mismatch");
    MaskedMean out;
    double sum = 0.0;
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        if (!rendered.valid[i] || !prior.valid[i] || (!mask.empty() && !mask[i])) continue;
        sum += normal_pair_loss(rendered.values[i], prior.values[i]);
        ++out.count;
    }
    if (out.count > 0) out.value = sum / static_cast<double>(out.count);
    return out;
}

VectorMap backproject(const ScalarMap& depth, const Camera& camera) {
    require_same_shape(depth.width, depth.height, camera.width, camera.height, "backproject");
    VectorMap points = make_vector_map(depth.width, depth.height);
    for (int v = 0; v < depth.height; ++v) {
        for (int u = 0; u < depth.width; ++u) {
            const std::size_t i = depth.index(u, v);
            if (!depth.valid[i]) continue;
            points.values[i] = depth.values[i] * camera.unproject(u + 0.5, v + 0.5);
            points.valid[i] = 1;
        }
    }
    return points;
}

VectorMap dnormal_map(const ScalarMap& depth, const Camera& camera) {
    const VectorMap points = backproject(depth, camera);
    VectorMap normals = make_vector_map(depth.width, depth.height);
    for (int v = 0; v < depth.height; ++v) {
        for (int u = 0; u < depth.width; ++u) {
            const auto px = dnormal_pixel(points, u, v);
            if (!px) continue;
            const std::size_t i = depth.index(u, v);
            normals.values[i] = px->orientation * px->cross.normalized();
            normals.valid[i] = 1;
        }
    }
    return normals;
}

MaskedMean dnormal_loss(const VectorMap& dnormals, const VectorMap& prior, std::span<const std::uint8_t> mask) {
    return normal_loss(dnormals, prior, mask);
}

ScalarMap inverse_depth_loss(const ScalarMap& rendered, const ScalarMap& prior) {
    require_same_shape(rendered.width, rendered.height, prior.width, prior.height, "inverse_depth_loss");
    ScalarMap out = make_scalar_map(rendered.width, rendered.height);
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        if (!rendered.valid[i] || !prior.valid[i]) continue;
        out.values[i] = std::abs(1.0 / rendered.values[i] - 1.0 / prior.values[i]);
        out.valid[i] = 1;
    }
    return out;
}

ScalarMap gradient_cosine(const ScalarMap& rendered, const ScalarMap& prior) {
    require_same_shape(rendered.width, rendered.height, prior.width, prior.height, "gradient_cosine");
    ScalarMap out = make_scalar_map(rendered.width, rendered.height);
    for (int v = 0; v < rendered.height; ++v) {
        for (int u = 0; u < rendered.width; ++u) {
            const std::size_t i = rendered.index(u, v);
            if (!rendered.valid[i] || !prior.valid[i]) continue;
            const Eigen::Vector2d a(axis_gradient(rendered, u, v, 1, 0), axis_gradient(rendered, u, v, 0, 1));
            const Eigen::Vector2d b(axis_gradient(prior, u, v, 1, 0), axis_gradient(prior, u, v, 0, 1));
            const double na = a.norm(), nb = b.norm();
            out.values[i] = (na < 1e-12 || nb < 1e-12) ? 1.0 : std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
            out.valid[i] = 1;
        }
    }
    return out;
}

ScalarMap depth_deviation(const ScalarMap& id_loss, const ScalarMap& rendered) {
    require_same_shape(id_loss.width, id_loss.height, rendered.width, rendered.height, "depth_deviation");
    std::vector<double> inv;
    for (std::size_t i = 0; i < rendered.size(); ++i)
        if (rendered.valid[i]) inv.push_back(1.0 / rendered.values[i]);
    if (inv.empty()) throw NumericError("depth_deviation: no valid rendered depth");
    const double med = median(std::move(inv));
    if (!(med > 1e-12)) throw NumericError("depth_deviation: degenerate scene (median inverse depth <= 1e-12)");
    ScalarMap out = make_scalar_map(id_loss.width, id_loss.height);
    for (std::size_t i = 0; i < id_loss.size(); ++i) {
        if (!id_loss.valid[i]) continue;
        out.values[i] = id_loss.values[i] / med;
        out.valid[i] = 1;
    }
    return out;
}

double confidence_value(double cos_phi, double eps_d, double gamma_d, double tau) {
    return std::exp((cos_phi - 1.0) / gamma_d) * std::exp(-eps_d / tau);
}

ScalarMap confidence(const ScalarMap& cos_phi, const ScalarMap& eps_d, double gamma_d, double tau) {
    require_same_shape(cos_phi.width, cos_phi.height, eps_d.width, eps_d.height, "confidence");
    ScalarMap out = make_scalar_map(cos_phi.width, cos_phi.height);
    for (std::size_t i = 0; i < cos_phi.size(); ++i) {
        if (!cos_phi.valid[i] || !eps_d.valid[i]) continue;
        out.values[i] = confidence_value(std::clamp(cos_phi.values[i], -1.0, 1.0), eps_d.values[i], gamma_d, tau);
        out.valid[i] = 1;
    }
    return out;
}

SsimResult ssim(const VectorMap& a, const VectorMap& b) {
    require_same_shape(a.width, a.height, b.width, b.height, "ssim");
    if (a.width <= 0 || a.height <= 0) throw InvalidParameter("ssim: empty image");
    SsimResult res;
    const int smallest = std::min(a.width, a.height);
    if (smallest < 11) {
        res.window = smallest % 2 == 1 ? smallest : smallest - 1;
        res.window_shrunk = true;
    }
    const int win = res.window;
    const int half = win / 2;
    std::vector<double> kernel(static_cast<std::size_t>(win));
    double ksum = 0.0;
    for (int k = 0; k < win; ++k) {
        const double x = k - half;
        kernel[static_cast<std::size_t>(k)] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
        ksum += kernel[static_cast<std::size_t>(k)];
    }
    for (auto& k : kernel) k /= ksum;

    const int ow = a.width - win + 1;
    const int oh = a.height - win + 1;
    const double c1 = 0.01 * 0.01;
    const double c2 = 0.03 * 0.03;

    // separable "valid" filtering of a row-major image
    auto filter = [&](const std::vector<double>& img) {
        std::vector<double> rows(static_cast<std::size_t>(ow) * static_cast<std::size_t>(a.height));
        for (int v = 0; v < a.height; ++v)
            for (int u = 0; u < ow; ++u) {
                double s = 0.0;
                for (int k = 0; k < win; ++k)
                    s += kernel[static_cast<std::size_t>(k)] *
                         img[static_cast<std::size_t>(v) * static_cast<std::size_t>(a.width) +
                             static_cast<std::size_t>(u + k)];
                rows[static_cast<std::size_t>(v) * static_cast<std::size_t>(ow) + static_cast<std::size_t>(u)] = s;
            }
        std::vector<double> out(static_cast<std::size_t>(ow) * static_cast<std::size_t>(oh));
        for (int v = 0; v < oh; ++v)
            for (int u = 0; u < ow; ++u) {
                double s = 0.0;
                for (int k = 0; k < win; ++k)
                    s += kernel[static_cast<std::size_t>(k)] *
                         rows[static_cast<std::size_t>(v + k) * static_cast<std::size_t>(ow) + static_cast<std::size_t>(u)];
                out[static_cast<std::size_t>(v) * static_cast<std::size_t>(ow) + static_cast<std::size_t>(u)] = s;
            }
        return out;
    };

    double total = 0.0;
    const std::size_t n = a.size();
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (int c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = a.values[i][c];
            y[i] = b.values[i][c];
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = filter(x), my = filter(y), mxx = filter(xx), myy = filter(yy), mxy = filter(xy);
        for (std::size_t k = 0; k < mx.size(); ++k) {
            const double vx = mxx[k] - mx[k] * mx[k];
            const double vy = myy[k] - my[k] * my[k];
            const double cxy = mxy[k] - mx[k] * my[k];
            total += ((2.0 * mx[k] * my[k] + c1) * (2.0 * cxy + c2)) /
                     ((mx[k] * mx[k] + my[k] * my[k] + c1) * (vx + vy + c2));
        }
    }
    res.value = total / (3.0 * static_cast<double>(ow) * static_cast<double>(oh));
    return res;
}

double l1_loss(const VectorMap& a, const VectorMap& b) {
    require_same_shape(a.width, a.height, b.width, b.height, "l1_loss");
    if (a.size() == 0) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += (a.values[i] - b.values[i]).cwiseAbs().sum();
    return sum / (3.0 * static_cast<double>(a.size()));
}

double rgb_loss(const VectorMap& rendered, const VectorMap& reference, double dssim_mix) {
    const double l1 = l1_loss(rendered, reference);
    if (dssim_mix == 0.0) return l1;
    return (1.0 - dssim_mix) * l1 + dssim_mix * (1.0 - ssim(rendered, reference).value);
}

std::string LossReport::to_text() const {
    std::string out;
    char line[128];
    auto put = [&](const char* key, double v) {
        std::snprintf(line, sizeof line, "%s=%.17g\n", key, v);
        out += line;
    };
    auto put_count = [&](const char* key, std::size_t v) {
        std::snprintf(line, sizeof line, "%s=%zu\n", key, v);
        out += line;
    };
    put("total", total);
    put("rgb", rgb);
    put("n", n);
    put("dn", dn);
    put("id_weighted", id_weighted);
    put_count("n_pixels", n_pixels);
    put_count("dn_pixels", dn_pixels);
    put_count("id_pixels", id_pixels);
    put_count("ssim_window_shrunk", ssim_window_shrunk ? 1 : 0);
    return out;
}

LossReport total_loss(const RenderBuffers& buffers, const VectorMap& reference, const PriorSet& priors,
                      const Camera& camera, const LossWeights& weights) {
    weights.validate();
    LossReport r;
    if (weights.dssim_mix == 0.0) {
        r.rgb = l1_loss(buffers.color, reference);
    } else {
        const auto s = ssim(buffers.color, reference);
        r.ssim_window_shrunk = s.window_shrunk;
        r.rgb = (1.0 - weights.dssim_mix) * l1_loss(buffers.color, reference) + weights.dssim_mix * (1.0 - s.value);
    }

    const MaskedMean n = normal_loss(buffers.normal, priors.pseudo_normal);
    r.n = n.value;
    r.n_pixels = n.count;

    r.dnormal = dnormal_map(buffers.depth, camera);
    const MaskedMean dn = dnormal_loss(r.dnormal, priors.pseudo_normal);
    r.dn = dn.value;
    r.dn_pixels = dn.count;

    r.id_loss = inverse_depth_loss(buffers.depth, priors.pseudo_depth);
    r.cos_phi = gradient_cosine(buffers.depth, priors.pseudo_depth);
    if (r.id_loss.valid_count() > 0) {
        r.eps_d = depth_deviation(r.id_loss, buffers.depth);
        r.w_d = confidence(r.cos_phi, r.eps_d, weights.gamma_d, weights.tau);
        double sum = 0.0;
        for (std::size_t i = 0; i < r.id_loss.size(); ++i) {
            if (!r.id_loss.valid[i] || !r.w_d.valid[i]) continue;
            sum += r.w_d.values[i] * r.id_loss.values[i];
            ++r.id_pixels;
        }
        if (r.id_pixels > 0) r.id_weighted = sum / static_cast<double>(r.id_pixels);
    } else {
        r.eps_d = make_scalar_map(buffers.depth.width, buffers.depth.height);
        r.w_d = make_scalar_map(buffers.depth.width, buffers.depth.height);
    }

    r.total = r.rgb + weights.lambda1 * r.n + weights.lambda2 * r.dn + weights.lambda3 * r.id_weighted;
    return r;
}

ScalarMap dnormal_loss_depth_gradient(const ScalarMap& depth, const VectorMap& prior, const Camera& camera) {
    const VectorMap points = backproject(depth, camera);
    require_same_shape(depth.width, depth.height, prior.width, prior.height, "dnormal_loss_depth_gradient");
    std::vector<DNormalPixel> pixels;
    std::vector<std::size_t> where;
    for (int v = 0; v < depth.height; ++v)
        for (int u = 0; u < depth.width; ++u) {
            const std::size_t i = depth.index(u, v);
            if (!prior.valid[i]) continue;
            if (auto px = dnormal_pixel(points, u, v)) {
                pixels.push_back(*px);
                where.push_back(i);
            }
        }

    std::vector<Eigen::Vector3d> grad_points(depth.size(), Eigen::Vector3d::Zero());
    const double inv_count = pixels.empty() ? 0.0 : 1.0 / static_cast<double>(pixels.size());
    for (std::size_t k = 0; k < pixels.size(); ++k) {
        const DNormalPixel& px = pixels[k];
        const double len = px.cross.norm();
        const Eigen::Vector3d unit = px.cross / len;
        const Eigen::Vector3d nbar = px.orientation * unit;
        const Eigen::Vector3d& target = prior.values[where[k]];
        const Eigen::Vector3d g_nbar = inv_count * (sign(Eigen::Vector3d(nbar - target)) - target);
        const Eigen::Vector3d g_cross = px.orientation * (g_nbar - unit * unit.dot(g_nbar)) / len;
        // cross = grad_v x grad_h
        const Eigen::Vector3d g_v = px.grad_h.cross(g_cross);
        const Eigen::Vector3d g_h = g_cross.cross(px.grad_v);
        grad_points[px.h.b] += g_h;
        grad_points[px.h.a] -= g_h;
        grad_points[px.v.b] += g_v;
        grad_points[px.v.a] -= g_v;
    }

    ScalarMap grad(depth.width, depth.height, 0.0, true);
    for (int v = 0; v < depth.height; ++v)
        for (int u = 0; u < depth.width; ++u) {
            const std::size_t i = depth.index(u, v);
            grad.values[i] = grad_points[i].dot(camera.unproject(u + 0.5, v + 0.5));
        }
    return grad;
}

MapGradients loss_map_gradients(const RenderBuffers& buffers, const VectorMap& reference, const PriorSet& priors,
                                const Camera& camera, const LossWeights& weights, const LossReport& report) {
    const int w = buffers.depth.width;
    const int h = buffers.depth.height;
    MapGradients g;
    g.depth = ScalarMap(w, h, 0.0, true);
    g.normal = VectorMap(w, h, Eigen::Vector3d::Zero(), true);
    g.color = VectorMap(w, h, Eigen::Vector3d::Zero(), true);

    if (weights.lambda2 > 0.0) {
        const ScalarMap gd = dnormal_loss_depth_gradient(buffers.depth, priors.pseudo_normal, camera);
        for (std::size_t i = 0; i < gd.size(); ++i) g.depth.values[i] += weights.lambda2 * gd.values[i];
    }
    if (weights.lambda3 > 0.0 && report.id_pixels > 0) {
        const double scale = weights.lambda3 / static_cast<double>(report.id_pixels);
        for (std::size_t i = 0; i < g.depth.size(); ++i) {
            if (!report.id_loss.valid[i] || !report.w_d.valid[i]) continue;
            const double d = buffers.depth.values[i];
            const double diff = 1.0 / d - 1.0 / priors.pseudo_depth.values[i];
            g.depth.values[i] += scale * report.w_d.values[i] * sign(diff) * (-1.0 / (d * d));
        }
    }
    if (weights.lambda1 > 0.0 && report.n_pixels > 0) {
        const double scale = weights.lambda1 / static_cast<double>(report.n_pixels);
        for (std::size_t i = 0; i < g.normal.size(); ++i) {
            if (!buffers.normal.valid[i] || !priors.pseudo_normal.valid[i]) continue;
            const Eigen::Vector3d& nh = buffers.normal.values[i];
            const Eigen::Vector3d& np = priors.pseudo_normal.values[i];
            g.normal.values[i] = scale * (sign(Eigen::Vector3d(nh - np)) - np);
        }
    }
    const double l1_scale = (1.0 - weights.dssim_mix) / (3.0 * static_cast<double>(buffers.color.size()));
    for (std::size_t i = 0; i < g.color.size(); ++i)
        g.color.values[i] = l1_scale * sign(Eigen::Vector3d(buffers.color.values[i] - reference.values[i]));
    return g;
}

} // namespace citysplat
