#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "gev.hpp"
#include "gpd.hpp"

namespace evt {

inline constexpr double euler_gamma = 0.57721566490153286;

struct LMoments {
    double l1 = 0.0;
    double l2 = 0.0;
    double l3 = 0.0;
    double t3 = 0.0;  // l3 / l2
};

// Unbiased sample L-moments from probability-weighted moments.
inline LMoments sample_lmoments(std::vector<double> x) {
    const std::size_t n = x.size();
    if (n < 2) throw std::domain_error("evt: L-moments need at least two observations");
    std::sort(x.begin(), x.end());
    double b0 = 0.0, b1 = 0.0, b2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        b0 += x[i];
        b1 += x[i] * static_cast<double>(i) / static_cast<double>(n - 1);
        if (n >= 3)
            b2 += x[i] * static_cast<double>(i) * static_cast<double>(i > 0 ? i - 1 : 0) /
                  (static_cast<double>(n - 1) * static_cast<double>(n - 2));
    }
    b0 /= static_cast<double>(n);
    b1 /= static_cast<double>(n);
    b2 /= static_cast<double>(n);
    LMoments lm;
    lm.l1 = b0;
    lm.l2 = 2.0 * b1 - b0;
    if (n >= 3) lm.l3 = 6.0 * b2 - 6.0 * b1 + b0;
    lm.t3 = lm.l2 != 0.0 ? lm.l3 / lm.l2 : 0.0;
    return lm;
}

// GEV parameters matching (l1, l2, t3); the shape uses the rational
// approximation of the t3 inversion.  Intended as a starting value.
inline GevParams gev_from_lmoments(const LMoments& lm) {
    if (!(lm.l2 > 0.0)) throw std::domain_error("evt: second L-moment must be positive");
    const double t3 = std::clamp(lm.t3, -0.95, 0.95);
    const double c = 2.0 / (3.0 + t3) - std::log(2.0) / std::log(3.0);
    double k = 7.8590 * c + 2.9554 * c * c;
    k = std::clamp(k, -0.95, 0.95);
    GevParams p;
    if (std::fabs(k) < 1e-6) {
        p.shape = 0.0;
        p.scale = lm.l2 / std::log(2.0);
        p.loc = lm.l1 - p.scale * euler_gamma;
        return p;
    }
    const double g = std::tgamma(1.0 + k);
    p.shape = -k;
    p.scale = lm.l2 * k / ((1.0 - std::pow(2.0, -k)) * g);
    p.loc = lm.l1 - p.scale * (1.0 - g) / k;
    return p;
}

// GPD parameters matching (l1, l2) for excesses above zero.  Intended as a
// starting value; the shape is kept below 1 so the scale stays positive.
inline GpdParams gpd_from_lmoments(const LMoments& lm) {
    if (!(lm.l1 > 0.0) || !(lm.l2 > 0.0))
        throw std::domain_error("evt: GPD L-moments need positive mean and spread");
    GpdParams p;
    p.shape = std::min(2.0 - lm.l1 / lm.l2, 0.95);
    p.scale = lm.l1 * (1.0 - p.shape);
    return p;
}

// Population L-moment pieces for GEV(1, e^g0, x0):
//   l1 = 1 - e^g0 * lm_a(x0),   l2 = e^g0 * lm_b(x0)
inline double lm_a(double shape) {
    if (std::fabs(shape) < 1e-10) return -euler_gamma;
    return -std::expm1(std::lgamma(1.0 - shape)) / shape;
}

inline double lm_b(double shape) {
    if (std::fabs(shape) < 1e-10) return std::log(2.0);
    return std::expm1(shape * std::log(2.0)) * std::exp(std::lgamma(1.0 - shape)) / shape;
}

struct PooledLmomSolution {
    double log_propscale = 0.0;  // g0
    double shape = 0.0;          // x0
    bool ok = false;
};

// Solve (l1, l2) = population L-moments of GEV(1, e^g0, x0) for (g0, x0),
// shape restricted to (-1, 1).  Scans for a sign change, then bisects.
inline PooledLmomSolution solve_pooled_lmoments(double l1, double l2) {
    PooledLmomSolution sol;
    if (!(l2 > 0.0)) return sol;
    auto fn = [&](double s) { return 1.0 - (l2 / lm_b(s)) * lm_a(s) - l1; };
    constexpr int grid_n = 400;
    constexpr double lo_end = -0.999, hi_end = 0.999;
    double best_lo = 0.0, best_hi = 0.0, best_mid = 2.0;
    double prev_s = lo_end, prev_f = fn(lo_end);
    for (int i = 1; i <= grid_n; ++i) {
        const double s = lo_end + (hi_end - lo_end) * i / grid_n;
        const double fv = fn(s);
        if (std::isfinite(prev_f) && std::isfinite(fv) && prev_f * fv <= 0.0) {
            const double mid = 0.5 * (prev_s + s);
            if (std::fabs(mid) < std::fabs(best_mid)) {
                best_lo = prev_s;
                best_hi = s;
                best_mid = mid;
            }
        }
        prev_s = s;
        prev_f = fv;
    }
    if (best_mid == 2.0) return sol;
    double lo = best_lo, hi = best_hi;
    double flo = fn(lo);
    for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = fn(mid);
        if (flo * fm <= 0.0) {
            hi = mid;
        } else {
            lo = mid;
            flo = fm;
        }
    }
    sol.shape = 0.5 * (lo + hi);
    sol.log_propscale = std::log(l2 / lm_b(sol.shape));
    sol.ok = true;
    return sol;
}

}  // namespace evt
