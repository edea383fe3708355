#pragma once

#include <span>
#include <vector>

namespace citysplat {

/// t-th percentile (t in (0, 100]) with linear interpolation between the
/// closest ranks: rank = t/100 * (n - 1). Empty input is an error.
double percentile(std::vector<double> values, double t);

/// Median; the mean of the two middle order statistics for even counts.
double median(std::vector<double> values);

} // namespace citysplat
