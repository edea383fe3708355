#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "citysplat/core/gaussian.hpp"

namespace citysplat {

// Binary little-endian PLY with float32 vertex properties
//   x y z rot_0..rot_3 (w,x,y,z) scale_0..scale_2 (log) opacity (logit) red green blue
// and, for block sub-clouds, a trailing `uint provenance`.

void save_cloud(const GaussianCloud& cloud, const std::string& path);
GaussianCloud load_cloud(const std::string& path);

struct ProvenanceCloud {
    GaussianCloud cloud;
    std::vector<std::uint32_t> provenance;
};

void save_cloud_with_provenance(const GaussianCloud& cloud, const std::vector<std::uint32_t>& provenance,
                                const std::string& path);
ProvenanceCloud load_cloud_with_provenance(const std::string& path);

} // namespace citysplat
