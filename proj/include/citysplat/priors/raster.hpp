#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "citysplat/core/maps.hpp"

namespace citysplat {

/// float32 raster as stored on disk.
///
/// File layout ("UGSR"), all little-endian:
///   bytes  0..3   magic "UGSR"
///   bytes  4..7   u32 width
///   bytes  8..11  u32 height
///   bytes 12..15  u32 channels (1 or 3)
///   bytes 16..19  u32 mask-present flag (0 or 1)
///   bytes 20..31  reserved, zero
///   then width*height*channels float32 values, row-major, channels interleaved
///   then, if the flag is set, ceil(width*height/8) bytes of mask bits,
///   pixel i at bit (i % 8) of byte i / 8, 1 = valid.
/// Without a mask every pixel is valid.
struct RasterMap {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<float> data;
    std::vector<std::uint8_t> valid;

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
};

/// Throws InvalidParameter when shapes disagree or a valid pixel holds NaN.
void validate_raster(const RasterMap& map);

void save_raster(const RasterMap& map, const std::string& path);
RasterMap load_raster(const std::string& path);

RasterMap to_raster(const ScalarMap& map);
RasterMap to_raster(const VectorMap& map);
ScalarMap scalar_from_raster(const RasterMap& raster);
VectorMap vector_from_raster(const RasterMap& raster);

/// 8-bit binary PPM export of a color map (values clamped to [0,1]).
void save_ppm(const VectorMap& color, const std::string& path);

} // namespace citysplat
