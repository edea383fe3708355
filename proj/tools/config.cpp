#include "config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <vector>

#include "citysplat/core/errors.hpp"

namespace citysplat {
namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, sep)) out.push_back(trim(item));
    return out;
}

double to_double(const std::string& s) {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v))
        throw ConfigError("expected a finite number, got '" + s + "'");
    return v;
}

long long to_integer(const std::string& s) {
    long long v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("expected an integer, got '" + s + "'");
    return v;
}

int to_int(const std::string& s) {
    const long long v = to_integer(s);
    if (v < -2147483648LL || v > 2147483647LL) throw ConfigError("integer out of range: " + s);
    return static_cast<int>(v);
}

bool to_bool(const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("expected true or false, got '" + s + "'");
}

std::string num(double v) {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

std::string kind_name(ParamKind k) {
    switch (k) {
    case ParamKind::Position: return "position";
    case ParamKind::RotationTangent: return "rotation";
    case ParamKind::LogScale: return "log_scale";
    case ParamKind::Opacity: return "opacity";
    case ParamKind::Color: return "color";
    }
    return "position";
}

ParamKind kind_from(const std::string& s) {
    for (ParamKind k : {ParamKind::Position, ParamKind::RotationTangent, ParamKind::LogScale, ParamKind::Opacity,
                        ParamKind::Color})
        if (kind_name(k) == s) return k;
    throw ConfigError("unknown parameter group '" + s + "'");
}

struct Key {
    std::string name;
    std::function<void(Config&, const std::string&)> set;
    std::function<std::string(const Config&)> get;
};

#define CS_DOUBLE(key, field)                                                                       \
    Key { key, [](Config& c, const std::string& v) { c.field = to_double(v); },                    \
          [](const Config& c) { return num(c.field); } }
#define CS_INT(key, field)                                                                          \
    Key { key, [](Config& c, const std::string& v) { c.field = to_int(v); },                       \
          [](const Config& c) { return std::to_string(c.field); } }

const std::vector<Key>& keys() {
    static const std::vector<Key> table{
        CS_DOUBLE("renderer.near", renderer.near),
        CS_DOUBLE("renderer.dilation", renderer.dilation),
        CS_DOUBLE("renderer.max_alpha", renderer.max_alpha),
        CS_DOUBLE("renderer.min_transmittance", renderer.min_transmittance),
        CS_DOUBLE("renderer.alpha_floor", renderer.alpha_floor),
        CS_DOUBLE("renderer.hit_weight", renderer.hit_weight),
        CS_DOUBLE("renderer.cutoff_mahalanobis", renderer.cutoff_mahalanobis),
        CS_INT("renderer.tile_size", renderer.tile_size),
        CS_DOUBLE("losses.lambda1", losses.lambda1),
        CS_DOUBLE("losses.lambda2", losses.lambda2),
        CS_DOUBLE("losses.lambda3", losses.lambda3),
        CS_DOUBLE("losses.gamma_d", losses.gamma_d),
        CS_DOUBLE("losses.tau", losses.tau),
        CS_DOUBLE("losses.dssim_mix", losses.dssim_mix),
        CS_DOUBLE("sagp.lambda_cell", sagp.lambda_cell),
        CS_DOUBLE("sagp.percentile", sagp.percentile_t),
        CS_DOUBLE("sagp.kappa", sagp.kappa),
        CS_DOUBLE("sagp.prune_ratio", sagp.prune_ratio),
        Key{"sagp.schedule",
            [](Config& c, const std::string& v) {
                c.sagp.schedule_fractions.clear();
                if (v.empty() || v == "none") return;
                for (const auto& item : split(v, ',')) c.sagp.schedule_fractions.push_back(to_double(item));
            },
            [](const Config& c) {
                if (c.sagp.schedule_fractions.empty()) return std::string("none");
                std::string s;
                for (double f : c.sagp.schedule_fractions) s += (s.empty() ? "" : ",") + num(f);
                return s;
            }},
        Key{"partition.grid_dims",
            [](Config& c, const std::string& v) {
                const auto items = split(v, ',');
                if (items.size() != 3) throw ConfigError("grid_dims needs three integers");
                for (int a = 0; a < 3; ++a) c.partition.grid_dims[static_cast<std::size_t>(a)] = to_int(items[static_cast<std::size_t>(a)]);
            },
            [](const Config& c) {
                return std::to_string(c.partition.grid_dims[0]) + "," + std::to_string(c.partition.grid_dims[1]) + "," +
                       std::to_string(c.partition.grid_dims[2]);
            }},
        CS_DOUBLE("partition.delta_share", partition.delta_share),
        CS_DOUBLE("partition.epsilon", partition.epsilon_ssim),
        CS_DOUBLE("partition.foreground_radius", partition.foreground_radius),
        Key{"partition.perceptual", [](Config& c, const std::string& v) { c.partition.perceptual = to_bool(v); },
            [](const Config& c) { return std::string(c.partition.perceptual ? "true" : "false"); }},
        CS_INT("trainer.iterations", trainer.iterations),
        CS_DOUBLE("trainer.lr_position", trainer.lr.position),
        CS_DOUBLE("trainer.lr_rotation", trainer.lr.rotation),
        CS_DOUBLE("trainer.lr_log_scale", trainer.lr.log_scale),
        CS_DOUBLE("trainer.lr_opacity", trainer.lr.opacity),
        CS_DOUBLE("trainer.lr_color", trainer.lr.color),
        CS_DOUBLE("trainer.scale_loss_weight", trainer.scale_loss_weight),
        Key{"trainer.mode",
            [](Config& c, const std::string& v) {
                try {
                    c.trainer.mode = parse_gradient_mode(v);
                } catch (const InvalidParameter& e) {
                    throw ConfigError(e.what());
                }
            },
            [](const Config& c) {
                return std::string(c.trainer.mode == GradientMode::Hybrid ? "hybrid" : "fd");
            }},
        CS_DOUBLE("trainer.fd_step", trainer.fd_step),
        CS_INT("trainer.cameras_per_step", trainer.cameras_per_step),
        Key{"trainer.fd_groups",
            [](Config& c, const std::string& v) {
                c.trainer.fd_groups.clear();
                if (v.empty() || v == "none") return;
                for (const auto& item : split(v, ',')) c.trainer.fd_groups.push_back(kind_from(item));
            },
            [](const Config& c) {
                if (c.trainer.fd_groups.empty()) return std::string("none");
                std::string s;
                for (ParamKind k : c.trainer.fd_groups) s += (s.empty() ? "" : ",") + kind_name(k);
                return s;
            }},
    };
    return table;
}

#undef CS_DOUBLE
#undef CS_INT

void validate_all(const Config& c) {
    const RenderOptions& r = c.renderer;
    if (!(r.near > 0.0)) throw InvalidParameter("renderer.near must be positive");
    if (!(r.dilation >= 0.0)) throw InvalidParameter("renderer.dilation must be >= 0");
    if (!(r.max_alpha > 0.0 && r.max_alpha < 1.0)) throw InvalidParameter("renderer.max_alpha must lie in (0, 1)");
    if (!(r.min_transmittance > 0.0 && r.min_transmittance < 1.0))
        throw InvalidParameter("renderer.min_transmittance must lie in (0, 1)");
    if (!(r.alpha_floor >= 0.0 && r.alpha_floor < 1.0)) throw InvalidParameter("renderer.alpha_floor must lie in [0, 1)");
    if (!(r.hit_weight > 0.0 && r.hit_weight <= 1.0)) throw InvalidParameter("renderer.hit_weight must lie in (0, 1]");
    if (!(r.cutoff_mahalanobis > 0.0)) throw InvalidParameter("renderer.cutoff_mahalanobis must be positive");
    if (r.tile_size < 1) throw InvalidParameter("renderer.tile_size must be >= 1");
    c.losses.validate();
    c.sagp.validate();
    c.partition.validate();
    c.train_config(0).validate();
}

} // namespace

TrainConfig Config::train_config(std::uint64_t seed) const {
    TrainConfig t = trainer;
    t.loss = losses;
    t.prune = sagp;
    t.render = renderer;
    t.seed = seed;
    return t;
}

Config parse_config(std::string_view text, const std::string& origin) {
    Config c;
    std::set<std::string> seen;
    std::istringstream in{std::string(text)};
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        const std::string where = origin + ":" + std::to_string(number) + ": ";
        const auto hash = line.find('#');
        const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
        const std::string key = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));
        const auto it = std::find_if(keys().begin(), keys().end(), [&](const Key& k) { return k.name == key; });
        if (it == keys().end()) throw ConfigError(where + "unknown key '" + key + "'");
        if (!seen.insert(key).second) throw ConfigError(where + "repeated key '" + key + "'");
        try {
            it->set(c, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + key + ": " + e.what());
        }
    }
    try {
        validate_all(c);
    } catch (const InvalidParameter& e) {
        throw ConfigError(origin + ": " + e.what());
    }
    return c;
}

Config load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path);
}

std::string config_to_text(const Config& config) {
    std::string out;
    for (const Key& k : keys()) out += k.name + " = " + k.get(config) + "\n";
    return out;
}

} // namespace citysplat
