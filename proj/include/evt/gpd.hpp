#pragma once

#include <cmath>
#include <stdexcept>

#include "gev.hpp"
#include "rng.hpp"

namespace evt {

// Generalized Pareto for threshold excesses y >= 0.
struct GpdParams {
    double scale = 1.0;
    double shape = 0.0;
};

inline double gpd_cdf(double y, const GpdParams& p) {
    check_scale(p.scale);
    if (y <= 0.0) return 0.0;
    const double z = y / p.scale;
    if (std::fabs(p.shape) <= shape_zero_tol) return -std::expm1(-z);
    const double w = p.shape * z;
    if (w <= -1.0) return 1.0;  // at or past the upper endpoint (shape < 0)
    return -std::expm1(-std::log1p(w) / p.shape);
}

inline double gpd_log_pdf(double y, const GpdParams& p) {
    check_scale(p.scale);
    if (y < 0.0) return neg_inf;
    const double z = y / p.scale;
    if (std::fabs(p.shape) <= shape_zero_tol) return -std::log(p.scale) - z;
    const double w = p.shape * z;
    if (w <= -1.0) return neg_inf;
    return -std::log(p.scale) - (1.0 / p.shape + 1.0) * std::log1p(w);
}

inline double gpd_quantile(double q, const GpdParams& p) {
    check_scale(p.scale);
    check_prob(q);
    const double e = -std::log1p(-q);  // exponential quantile
    if (std::fabs(p.shape) <= shape_zero_tol) return p.scale * e;
    return p.scale * std::expm1(p.shape * e) / p.shape;
}

inline double sample_gpd(Rng& g, const GpdParams& p) {
    return gpd_quantile(runif(g), p);
}

// Level exceeded on average once every `period` years, for exceedances over
// threshold u occurring at rate `exceed_prob` per observation and `obs_per_year`
// observations per year.
inline double gpd_return_level(double period, double threshold, double exceed_prob,
                               double obs_per_year, const GpdParams& p) {
    check_scale(p.scale);
    if (!(period > 0.0)) throw std::domain_error("evt: return period must be positive");
    if (!(exceed_prob > 0.0 && exceed_prob <= 1.0))
        throw std::domain_error("evt: exceedance probability must lie in (0,1]");
    if (!(obs_per_year > 0.0)) throw std::domain_error("evt: observations per year must be positive");
    const double m = period * obs_per_year * exceed_prob;  // expected exceedances per period
    if (!(m > 1.0)) throw std::domain_error("evt: return period too short for this exceedance rate");
    const double lm = std::log(m);
    if (std::fabs(p.shape) <= shape_zero_tol) return threshold + p.scale * lm;
    return threshold + p.scale * std::expm1(p.shape * lm) / p.shape;
}

}  // namespace evt
