#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

#include "rng.hpp"

namespace evt {

// Shapes up to this magnitude are evaluated on the Gumbel branch, so the
// cdf is flat in the shape across [-1e-4, 1e-4].  At the cutover the branches
// differ by ~|shape|*z^2/2 in the exponent, which is negligible downstream:
// likelihood surfaces are locally flat there because the shape score is O(1)
// per observation while the window is 1e-4 wide.
inline constexpr double shape_zero_tol = 1e-4;

inline constexpr double neg_inf = -std::numeric_limits<double>::infinity();

struct GevParams {
    double loc = 0.0;
    double scale = 1.0;
    double shape = 0.0;
};

inline void check_scale(double scale) {
    if (!(scale > 0.0)) throw std::domain_error("evt: scale must be positive");
}

inline void check_prob(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::domain_error("evt: probability must lie in (0,1)");
}

// P(Y <= y).  Outside the support the limiting value 0 or 1 is returned.
inline double gev_cdf(double y, const GevParams& p) {
    check_scale(p.scale);
    const double z = (y - p.loc) / p.scale;
    double t;  // (1 + shape*z)^(-1/shape), or exp(-z) in the limit
    if (std::fabs(p.shape) <= shape_zero_tol) {
        t = std::exp(-z);
    } else {
        const double w = p.shape * z;
        if (w <= -1.0) return p.shape < 0.0 ? 1.0 : 0.0;
        t = std::exp(-std::log1p(w) / p.shape);
    }
    return std::exp(-t);
}

// log f(y); -inf outside the support so likelihood code can use it directly.
inline double gev_log_pdf(double y, const GevParams& p) {
    check_scale(p.scale);
    const double z = (y - p.loc) / p.scale;
    if (std::fabs(p.shape) <= shape_zero_tol) {
        return -std::log(p.scale) - z - std::exp(-z);
    }
    const double w = p.shape * z;
    if (w <= -1.0) return neg_inf;
    const double lw = std::log1p(w);
    return -std::log(p.scale) - (1.0 / p.shape + 1.0) * lw - std::exp(-lw / p.shape);
}

inline double gev_quantile(double pr, const GevParams& p) {
    check_scale(p.scale);
    check_prob(pr);
    const double ll = std::log(-std::log(pr));
    if (std::fabs(p.shape) <= shape_zero_tol) return p.loc - p.scale * ll;
    return p.loc + p.scale * std::expm1(-p.shape * ll) / p.shape;
}

inline double sample_gev(Rng& g, const GevParams& p) {
    return gev_quantile(runif(g), p);
}

// Level exceeded once every `period` blocks on average; period > 1.
inline double gev_return_level(double period, const GevParams& p) {
    check_scale(p.scale);
    if (!(period > 1.0)) throw std::domain_error("evt: return period must exceed 1");
    const double ll = std::log(-std::log1p(-1.0 / period));
    if (std::fabs(p.shape) <= shape_zero_tol) return p.loc - p.scale * ll;
    return p.loc + p.scale * std::expm1(-p.shape * ll) / p.shape;
}

}  // namespace evt
