#include "citysplat/core/stats.hpp"

#include <algorithm>
#include <cmath>

#include "citysplat/core/errors.hpp"

namespace citysplat {

double percentile(std::vector<double> values, double t) {
    if (values.empty()) throw InvalidParameter("percentile of an empty set");
    if (!(t > 0.0 && t <= 100.0)) throw InvalidParameter("percentile must lie in (0, 100]");
    std::sort(values.begin(), values.end());
    const double rank = t / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

double median(std::vector<double> values) {
    if (values.empty()) throw InvalidParameter("median of an empty set");
    const std::size_t n = values.size();
    const auto mid = values.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(values.begin(), mid, values.end());
    const double upper = *mid;
    if (n % 2 == 1) return upper;
    const double lower = *std::max_element(values.begin(), mid);
    return 0.5 * (lower + upper);
}

} // namespace citysplat
