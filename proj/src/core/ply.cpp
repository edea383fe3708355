#include "citysplat/core/ply.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>

#include "citysplat/core/errors.hpp"

namespace citysplat {
namespace {

static_assert(std::endian::native == std::endian::little, "PLY I/O assumes a little-endian host");

constexpr std::array<const char*, 14> kFloatProps = {"x",     "y",     "z",       "rot_0", "rot_1",
                                                     "rot_2", "rot_3", "scale_0", "scale_1", "scale_2",
                                                     "opacity", "red", "green",  "blue"};
constexpr const char* kProvenance = "provenance";

struct Header {
    std::size_t count = 0;
    std::vector<std::string> props; // payload order
    std::vector<bool> is_uint;
    std::size_t payload_offset = 0;
};

Header parse_header(const std::string& bytes, const std::string& path) {
    const auto end = bytes.find("end_header\n");
    if (bytes.rfind("ply\n", 0) != 0 || end == std::string::npos)
        throw ParseError(path + ": not a PLY file (missing magic or end_header)");
    Header h;
    h.payload_offset = end + std::string("end_header\n").size();
    std::istringstream lines(bytes.substr(0, end));
    std::string line;
    bool saw_format = false, saw_vertex = false;
    std::getline(lines, line); // "ply"
    while (std::getline(lines, line)) {
        std::istringstream ls(line);
        std::string kw;
        ls >> kw;
        if (kw.empty() || kw == "comment" || kw == "obj_info") continue;
        if (kw == "format") {
            std::string fmt, ver;
            ls >> fmt >> ver;
            if (fmt != "binary_little_endian") throw ParseError(path + ": unsupported format '" + fmt + "'");
            saw_format = true;
        } else if (kw == "element") {
            std::string name;
            long long n = -1;
            ls >> name >> n;
            if (name != "vertex") throw ParseError(path + ": unexpected element '" + name + "'");
            if (saw_vertex) throw ParseError(path + ": duplicate vertex element");
            if (!ls || n < 0) throw ParseError(path + ": bad vertex count");
            h.count = static_cast<std::size_t>(n);
            saw_vertex = true;
        } else if (kw == "property") {
            if (!saw_vertex) throw ParseError(path + ": property before element");
            std::string type, name;
            ls >> type >> name;
            if (type == "list") throw ParseError(path + ": list property '" + name + "' not supported");
            const bool known_float =
                std::find_if(kFloatProps.begin(), kFloatProps.end(), [&](const char* p) { return name == p; }) !=
                kFloatProps.end();
            if (known_float) {
                if (type != "float" && type != "float32")
                    throw ParseError(path + ": property " + name + " must be float, got " + type);
                h.is_uint.push_back(false);
            } else if (name == kProvenance) {
                if (type != "uint" && type != "uint32")
                    throw ParseError(path + ": property provenance must be uint, got " + type);
                h.is_uint.push_back(true);
            } else {
                throw ParseError(path + ": unexpected property: " + name);
            }
            if (std::find(h.props.begin(), h.props.end(), name) != h.props.end())
                throw ParseError(path + ": duplicate property: " + name);
            h.props.push_back(name);
        } else {
            throw ParseError(path + ": unexpected header line '" + line + "'");
        }
    }
    if (!saw_format) throw ParseError(path + ": missing format line");
    if (!saw_vertex) throw ParseError(path + ": missing vertex element");
    for (const char* p : kFloatProps)
        if (std::find(h.props.begin(), h.props.end(), p) == h.props.end())
            throw ParseError(path + ": missing property: " + p);
    return h;
}

std::string read_all(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open cloud file: " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ProvenanceCloud load_impl(const std::string& path, bool require_provenance) {
    const std::string bytes = read_all(path);
    const Header h = parse_header(bytes, path);
    const std::size_t stride = h.props.size() * 4;
    const std::size_t available = bytes.size() - h.payload_offset;
    if (available < stride * h.count) {
        const std::size_t vertex = available / stride;
        const std::size_t prop = (available % stride) / 4;
        throw ParseError(path + ": truncated payload at vertex " + std::to_string(vertex) +
                         ", property " + h.props[prop]);
    }

    ProvenanceCloud out;
    out.cloud.reserve(h.count);
    const bool has_prov = std::find(h.props.begin(), h.props.end(), kProvenance) != h.props.end();
    if (require_provenance && !has_prov) throw ParseError(path + ": missing property: provenance");
    const char* data = bytes.data() + h.payload_offset;
    std::array<float, kFloatProps.size()> f{};
    for (std::size_t i = 0; i < h.count; ++i) {
        std::uint32_t prov = 0;
        for (std::size_t p = 0; p < h.props.size(); ++p) {
            const char* src = data + i * stride + p * 4;
            if (h.is_uint[p]) {
                std::memcpy(&prov, src, 4);
                continue;
            }
            const auto slot = static_cast<std::size_t>(
                std::find_if(kFloatProps.begin(), kFloatProps.end(), [&](const char* n) { return h.props[p] == n; }) -
                kFloatProps.begin());
            std::memcpy(&f[slot], src, 4);
        }
        Gaussian g;
        g.position = {f[0], f[1], f[2]};
        g.rotation = Eigen::Quaterniond(f[3], f[4], f[5], f[6]);
        g.log_scales = {f[7], f[8], f[9]};
        g.opacity_logit = f[10];
        g.color = {f[11], f[12], f[13]};
        try {
            out.cloud.push_back_ingest(g);
        } catch (const InvalidParameter& e) {
            throw ParseError(path + ": vertex " + std::to_string(i) + ": " + e.what());
        }
        if (has_prov) out.provenance.push_back(prov);
    }
    return out;
}

void save_impl(const GaussianCloud& cloud, const std::vector<std::uint32_t>* provenance, const std::string& path) {
    std::ostringstream header;
    header << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.size() << '\n';
    for (const char* p : kFloatProps) header << "property float " << p << '\n';
    if (provenance) header << "property uint " << kProvenance << '\n';
    header << "end_header\n";

    std::string payload;
    const std::size_t stride = (kFloatProps.size() + (provenance ? 1 : 0)) * 4;
    payload.resize(stride * cloud.size());
    char* dst = payload.data();
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto& q = cloud.rotation(i);
        const std::array<float, kFloatProps.size()> f = {
            static_cast<float>(cloud.position(i).x()),  static_cast<float>(cloud.position(i).y()),
            static_cast<float>(cloud.position(i).z()),  static_cast<float>(q.w()),
            static_cast<float>(q.x()),                  static_cast<float>(q.y()),
            static_cast<float>(q.z()),                  static_cast<float>(cloud.log_scale(i).x()),
            static_cast<float>(cloud.log_scale(i).y()), static_cast<float>(cloud.log_scale(i).z()),
            static_cast<float>(cloud.opacity_logit(i)), static_cast<float>(cloud.color(i).x()),
            static_cast<float>(cloud.color(i).y()),     static_cast<float>(cloud.color(i).z())};
        std::memcpy(dst, f.data(), f.size() * 4);
        dst += f.size() * 4;
        if (provenance) {
            std::memcpy(dst, &(*provenance)[i], 4);
            dst += 4;
        }
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write cloud file: " + path);
    out << header.str();
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw ParseError("write failed: " + path);
}

} // namespace

void save_cloud(const GaussianCloud& cloud, const std::string& path) { save_impl(cloud, nullptr, path); }

GaussianCloud load_cloud(const std::string& path) { return load_impl(path, false).cloud; }

void save_cloud_with_provenance(const GaussianCloud& cloud, const std::vector<std::uint32_t>& provenance,
                                const std::string& path) {
    if (provenance.size() != cloud.size()) throw InvalidParameter("provenance length does not match cloud size");
    save_impl(cloud, &provenance, path);
}

ProvenanceCloud load_cloud_with_provenance(const std::string& path) {
    return load_impl(path, true);
}

} // namespace citysplat
