#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "gev.hpp"
#include "rng.hpp"

namespace evt {

// n blocks by r columns, row-major; column j holds the (j+1)-th largest
// value of its block, so every row is strictly decreasing left to right.
struct TopROrderSample {
    std::vector<double> values;
    std::size_t n = 0;
    std::size_t r = 0;

    TopROrderSample() = default;
    TopROrderSample(std::size_t n_, std::size_t r_) : values(n_ * r_), n(n_), r(r_) {}

    double& operator()(std::size_t i, std::size_t j) { return values[i * r + j]; }
    double operator()(std::size_t i, std::size_t j) const { return values[i * r + j]; }
    const double* row(std::size_t i) const { return values.data() + i * r; }
    double* row(std::size_t i) { return values.data() + i * r; }

    // First `rr` columns as a new sample.
    TopROrderSample head_columns(std::size_t rr) const {
        if (rr == 0 || rr > r) throw std::domain_error("evt: column count out of range");
        TopROrderSample out(n, rr);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < rr; ++j) out(i, j) = (*this)(i, j);
        return out;
    }
};

inline void validate_top_r(const TopROrderSample& s) {
    if (s.n == 0 || s.r == 0) throw std::domain_error("evt: empty sample");
    if (s.values.size() != s.n * s.r) throw std::domain_error("evt: sample storage size mismatch");
    for (std::size_t i = 0; i < s.n; ++i)
        for (std::size_t j = 1; j < s.r; ++j)
            if (!(s(i, j) < s(i, j - 1)))
                throw std::domain_error("evt: rows must be strictly decreasing");
}

// Joint log-density of the r largest order statistics of one block.
// `row` points at r values in strictly decreasing order.  Returns -inf on
// any support violation.
inline double gevr_log_pdf(const double* row, std::size_t r, const GevParams& p) {
    check_scale(p.scale);
    if (r == 0) throw std::domain_error("evt: r must be positive");
    const double log_scale = std::log(p.scale);
    if (std::fabs(p.shape) <= shape_zero_tol) {
        double sum_z = 0.0;
        for (std::size_t j = 0; j < r; ++j) sum_z += (row[j] - p.loc) / p.scale;
        const double z_r = (row[r - 1] - p.loc) / p.scale;
        return -static_cast<double>(r) * log_scale - std::exp(-z_r) - sum_z;
    }
    double sum_lw = 0.0;
    double lw_last = 0.0;
    for (std::size_t j = 0; j < r; ++j) {
        const double w = p.shape * (row[j] - p.loc) / p.scale;
        if (w <= -1.0) return neg_inf;
        lw_last = std::log1p(w);
        sum_lw += lw_last;
    }
    return -static_cast<double>(r) * log_scale - std::exp(-lw_last / p.shape) -
           (1.0 / p.shape + 1.0) * sum_lw;
}

// Sum of block log-densities over the whole sample.
inline double gevr_log_likelihood(const TopROrderSample& s, const GevParams& p) {
    double total = 0.0;
    for (std::size_t i = 0; i < s.n; ++i) {
        const double ll = gevr_log_pdf(s.row(i), s.r, p);
        if (ll == neg_inf) return neg_inf;
        total += ll;
    }
    return total;
}

// Exact draw of the r largest values of a block: the running product of
// uniforms is a uniform lower record sequence, and mapping it through the
// quantile function yields the top-r order statistics in decreasing order.
inline TopROrderSample sample_gevr(Rng& g, std::size_t n, std::size_t r, const GevParams& p) {
    if (n == 0 || r == 0) throw std::domain_error("evt: sample dimensions must be positive");
    TopROrderSample out(n, r);
    for (std::size_t i = 0; i < n; ++i) {
        double c = 1.0;
        for (std::size_t j = 0; j < r; ++j) {
            c *= runif(g);
            out(i, j) = gev_quantile(c, p);
        }
    }
    return out;
}

}  // namespace evt
