#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Core>

namespace citysplat {

/// Row-major per-pixel field with a validity mask. Invalid pixels carry no
/// meaningful value (scalar maps store NaN there).
template <typename T>
struct PixelMap {
    int width = 0;
    int height = 0;
    std::vector<T> values;
    std::vector<std::uint8_t> valid;

    PixelMap() = default;
    PixelMap(int w, int h, const T& fill, bool is_valid)
        : width(w), height(h), values(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill),
          valid(values.size(), is_valid ? 1 : 0) {}

    std::size_t size() const { return values.size(); }
    std::size_t index(int u, int v) const {
        return static_cast<std::size_t>(v) * static_cast<std::size_t>(width) + static_cast<std::size_t>(u);
    }
    T& at(int u, int v) { return values[index(u, v)]; }
    const T& at(int u, int v) const { return values[index(u, v)]; }
    bool is_valid(int u, int v) const { return valid[index(u, v)] != 0; }
    bool same_shape(int w, int h) const { return width == w && height == h; }
    template <typename U>
    bool same_shape(const PixelMap<U>& o) const { return width == o.width && height == o.height; }

    std::size_t valid_count() const {
        std::size_t n = 0;
        for (auto b : valid) n += b != 0;
        return n;
    }
};

using ScalarMap = PixelMap<double>;
using VectorMap = PixelMap<Eigen::Vector3d>;

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

inline ScalarMap make_scalar_map(int w, int h) { return ScalarMap(w, h, kNaN, false); }
inline VectorMap make_vector_map(int w, int h) { return VectorMap(w, h, Eigen::Vector3d::Constant(kNaN), false); }

} // namespace citysplat
