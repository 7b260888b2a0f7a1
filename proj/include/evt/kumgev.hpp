#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "gev.hpp"
#include "rng.hpp"

namespace evt {

// Kumaraswamy transform of a GEV base: F(y) = 1 - (1 - G(y)^a)^b.
// a = b = 1 recovers the base distribution.
struct KumGevParams {
    GevParams base;
    double a = 1.0;
    double b = 1.0;
};

inline void check_kumgev(const KumGevParams& k) {
    check_scale(k.base.scale);
    if (!(k.a > 0.0 && k.b > 0.0)) throw std::domain_error("evt: Kumaraswamy exponents must be positive");
}

inline double kumgev_cdf(double y, const KumGevParams& k) {
    check_kumgev(k);
    const double g = gev_cdf(y, k.base);
    if (g <= 0.0) return 0.0;
    if (g >= 1.0) return 1.0;
    return -std::expm1(k.b * std::log1p(-std::pow(g, k.a)));
}

// Draw conditional on Y < upper.  The CDF is inverted by bisection on a
// bracket grown geometrically below `upper`.
inline double kumgev_truncated_sample(Rng& g, const KumGevParams& k, double upper) {
    check_kumgev(k);
    const double f_upper = kumgev_cdf(upper, k);
    if (!(f_upper > 0.0))
        throw std::domain_error("evt: truncation point has zero mass below it");
    const double target = runif(g) * f_upper;

    double hi = upper;
    double step = k.base.scale;
    double lo = upper - step;
    int grow = 0;
    while (kumgev_cdf(lo, k) > target) {
        step *= 2.0;
        lo = upper - step;
        if (++grow > 200)
            throw std::runtime_error("evt: truncated draw bracket failed to enclose target after 200 doublings (target=" +
                                     std::to_string(target) + ")");
    }
    int it = 0;
    while (hi - lo > 1e-10) {
        const double mid = 0.5 * (lo + hi);
        if (kumgev_cdf(mid, k) < target)
            lo = mid;
        else
            hi = mid;
        if (++it > 200)
            throw std::runtime_error("evt: truncated draw bisection failed to converge (bracket=[" +
                                     std::to_string(lo) + "," + std::to_string(hi) + "])");
    }
    double y = 0.5 * (lo + hi);
    if (y >= upper) y = std::nextafter(upper, neg_inf);
    return y;
}

}  // namespace evt
