#include "citysplat/priors/raster.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "citysplat/core/errors.hpp"

namespace citysplat {
namespace {

static_assert(std::endian::native == std::endian::little, "raster I/O assumes a little-endian host");

constexpr std::size_t kHeaderBytes = 32;

void put_u32(std::string& buf, std::size_t offset, std::uint32_t v) { std::memcpy(buf.data() + offset, &v, 4); }

std::uint32_t get_u32(const std::string& buf, std::size_t offset) {
    std::uint32_t v = 0;
    std::memcpy(&v, buf.data() + offset, 4);
    return v;
}

} // namespace

void validate_raster(const RasterMap& map) {
    if (map.width < 0 || map.height < 0) throw InvalidParameter("raster: negative size");
    if (map.channels != 1 && map.channels != 3) throw InvalidParameter("raster: channels must be 1 or 3");
    const std::size_t px = map.pixel_count();
    if (map.data.size() != px * static_cast<std::size_t>(map.channels))
        throw InvalidParameter("raster: data length does not match width*height*channels");
    if (map.valid.size() != px) throw InvalidParameter("raster: mask length does not match pixel count");
    for (std::size_t i = 0; i < px; ++i) {
        if (map.valid[i]) {
            for (int c = 0; c < map.channels; ++c)
                if (std::isnan(map.data[i * static_cast<std::size_t>(map.channels) + static_cast<std::size_t>(c)]))
                    throw InvalidParameter("raster: NaN on a valid pixel");
        }
    }
}

void save_raster(const RasterMap& map, const std::string& path) {
    validate_raster(map);
    const std::size_t px = map.pixel_count();
    const bool has_mask = std::any_of(map.valid.begin(), map.valid.end(), [](auto b) { return b == 0; });
    std::string buf(kHeaderBytes, '\0');
    std::memcpy(buf.data(), "UGSR", 4);
    put_u32(buf, 4, static_cast<std::uint32_t>(map.width));
    put_u32(buf, 8, static_cast<std::uint32_t>(map.height));
    put_u32(buf, 12, static_cast<std::uint32_t>(map.channels));
    put_u32(buf, 16, has_mask ? 1u : 0u);
    buf.append(reinterpret_cast<const char*>(map.data.data()), map.data.size() * sizeof(float));
    if (has_mask) {
        std::string bits((px + 7) / 8, '\0');
        for (std::size_t i = 0; i < px; ++i)
            if (map.valid[i]) bits[i / 8] = static_cast<char>(bits[i / 8] | (1 << (i % 8)));
        buf += bits;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write raster: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw ParseError("write failed: " + path);
}

RasterMap load_raster(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open raster: " + path);
    const std::string buf{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (buf.size() < kHeaderBytes || buf.compare(0, 4, "UGSR") != 0)
        throw ParseError(path + ": not a UGSR raster");
    RasterMap map;
    map.width = static_cast<int>(get_u32(buf, 4));
    map.height = static_cast<int>(get_u32(buf, 8));
    map.channels = static_cast<int>(get_u32(buf, 12));
    const std::uint32_t flag = get_u32(buf, 16);
    if (map.channels != 1 && map.channels != 3) throw ParseError(path + ": channels must be 1 or 3");
    if (flag > 1) throw ParseError(path + ": bad mask flag");
    const std::size_t px = map.pixel_count();
    const std::size_t data_bytes = px * static_cast<std::size_t>(map.channels) * sizeof(float);
    const std::size_t mask_bytes = flag ? (px + 7) / 8 : 0;
    if (buf.size() != kHeaderBytes + data_bytes + mask_bytes)
        throw ParseError(path + ": payload size does not match header");
    map.data.resize(px * static_cast<std::size_t>(map.channels));
    std::memcpy(map.data.data(), buf.data() + kHeaderBytes, data_bytes);
    map.valid.assign(px, 1);
    if (flag) {
        const char* bits = buf.data() + kHeaderBytes + data_bytes;
        for (std::size_t i = 0; i < px; ++i)
            map.valid[i] = static_cast<std::uint8_t>((static_cast<unsigned char>(bits[i / 8]) >> (i % 8)) & 1u);
    }
    try {
        validate_raster(map);
    } catch (const InvalidParameter& e) {
        throw ParseError(path + ": " + e.what());
    }
    return map;
}

RasterMap to_raster(const ScalarMap& map) {
    RasterMap r;
    r.width = map.width;
    r.height = map.height;
    r.channels = 1;
    r.data.resize(map.size());
    r.valid = map.valid;
    for (std::size_t i = 0; i < map.size(); ++i)
        r.data[i] = map.valid[i] ? static_cast<float>(map.values[i]) : std::numeric_limits<float>::quiet_NaN();
    return r;
}

RasterMap to_raster(const VectorMap& map) {
    RasterMap r;
    r.width = map.width;
    r.height = map.height;
    r.channels = 3;
    r.data.resize(map.size() * 3);
    r.valid = map.valid;
    for (std::size_t i = 0; i < map.size(); ++i)
        for (int c = 0; c < 3; ++c)
            r.data[3 * i + static_cast<std::size_t>(c)] =
                map.valid[i] ? static_cast<float>(map.values[i][c]) : std::numeric_limits<float>::quiet_NaN();
    return r;
}

ScalarMap scalar_from_raster(const RasterMap& raster) {
    if (raster.channels != 1) throw InvalidParameter("expected a single-channel raster");
    ScalarMap m = make_scalar_map(raster.width, raster.height);
    for (std::size_t i = 0; i < m.size(); ++i) {
        m.valid[i] = raster.valid[i];
        if (m.valid[i]) m.values[i] = raster.data[i];
    }
    return m;
}

VectorMap vector_from_raster(const RasterMap& raster) {
    if (raster.channels != 3) throw InvalidParameter("expected a three-channel raster");
    VectorMap m = make_vector_map(raster.width, raster.height);
    for (std::size_t i = 0; i < m.size(); ++i) {
        m.valid[i] = raster.valid[i];
        if (m.valid[i]) m.values[i] = {raster.data[3 * i], raster.data[3 * i + 1], raster.data[3 * i + 2]};
    }
    return m;
}

void save_ppm(const VectorMap& color, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write image: " + path);
    out << "P6\n" << color.width << ' ' << color.height << "\n255\n";
    std::string px(color.size() * 3, '\0');
    for (std::size_t i = 0; i < color.size(); ++i) {
        for (int c = 0; c < 3; ++c) {
            const double v = color.valid[i] ? std::clamp(color.values[i][c], 0.0, 1.0) : 0.0;
            px[3 * i + static_cast<std::size_t>(c)] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
        }
    }
    out.write(px.data(), static_cast<std::streamsize>(px.size()));
}

} // namespace citysplat
