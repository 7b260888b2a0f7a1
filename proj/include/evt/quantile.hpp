#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace evt {

// Linear-interpolation sample quantile (R type 7): h = (n-1)q, interpolate
// between the floor(h)-th and next order statistic.
inline double quantile_type7(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw std::domain_error("evt: quantile of empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw std::domain_error("evt: quantile level outside [0, 1]");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted.back();
    const double w = h - static_cast<double>(lo);
    return sorted[lo] + w * (sorted[lo + 1] - sorted[lo]);
}

inline std::vector<double> sorted_copy(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v;
}

}  // namespace evt
