#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "fit.hpp"
#include "gpd.hpp"
#include "numdiff.hpp"
#include "quantile.hpp"
#include "rng.hpp"

namespace evt {

// Goodness-of-fit tests for threshold excesses under a fitted GPD:
// Anderson-Darling and Cramer-von Mises with table-interpolated p-values,
// Moran's normalized spacings test, and a piecewise-shape score test.

enum class TailStat : std::uint32_t { anderson_darling = 0, cramer_von_mises = 1 };

struct GpdTestOutcome {
    double statistic = std::numeric_limits<double>::quiet_NaN();
    double p_value = 1.0;
    GpdParams theta_hat{};
    std::string method;
    int bootstrap_size = 0;
    int failed_replicates = 0;
    bool unreliable = false;
    // Set when the fitted shape fell outside the null table's range and the
    // p-value came from a parametric bootstrap instead.
    bool bootstrap_fallback = false;
};

namespace detail {

// Probability transforms z_(i) = F(y_(i); theta), sorted ascending and clamped
// away from {0, 1} so the log terms stay finite. The clamp moves any statistic
// by less than 1e-12 for realistic sample sizes; occurrences are reported
// through the optional counter.
inline std::vector<double> gpd_pit_sorted(const std::vector<double>& excesses,
                                          const GpdParams& theta,
                                          std::size_t* clamped) {
    if (excesses.empty()) throw std::domain_error("evt: empty sample");
    std::vector<double> z(excesses.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < excesses.size(); ++i) {
        double zi = gpd_cdf(excesses[i], theta);
        if (zi < 1e-300) {
            zi = 1e-300;
            ++hits;
        } else if (zi > 1.0 - 1e-16) {
            zi = 1.0 - 1e-16;
            ++hits;
        }
        z[i] = zi;
    }
    std::sort(z.begin(), z.end());
    if (clamped) *clamped += hits;
    return z;
}

}  // namespace detail

inline double ad_statistic(const std::vector<double>& excesses, const GpdParams& theta,
                           std::size_t* clamped = nullptr) {
    const std::vector<double> z = detail::gpd_pit_sorted(excesses, theta, clamped);
    const std::size_t n = z.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        acc += (2.0 * static_cast<double>(i) + 1.0) *
               (std::log(z[i]) + std::log1p(-z[n - 1 - i]));
    return -static_cast<double>(n) - acc / static_cast<double>(n);
}

inline double cvm_statistic(const std::vector<double>& excesses, const GpdParams& theta,
                            std::size_t* clamped = nullptr) {
    const std::vector<double> z = detail::gpd_pit_sorted(excesses, theta, clamped);
    const std::size_t n = z.size();
    const double dn = static_cast<double>(n);
    double acc = 1.0 / (12.0 * dn);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = z[i] - (2.0 * static_cast<double>(i) + 1.0) / (2.0 * dn);
        acc += d * d;
    }
    return acc;
}

// Empirical null critical values of both tail statistics on a grid of GPD
// shapes, built by Monte Carlo at a fixed sample size. Rows are upper-tail
// probabilities from 0.999 down to 0.001; critical values increase as the
// tail probability decreases.
struct NullTable {
    std::vector<double> shape_grid;
    std::vector<double> percentile_grid;  // upper-tail probabilities, decreasing
    std::vector<std::uint32_t> fit_failures;  // per shape
    // Statistic-major layout: [stat][shape][percentile].
    std::vector<double> critical_values;
    std::uint64_t mc_replicates = 0;
    std::uint64_t mc_sample_size = 0;
    std::uint64_t seed = 0;

    double critical(TailStat stat, std::size_t shape_idx, std::size_t pct_idx) const {
        const std::size_t ns = shape_grid.size(), np = percentile_grid.size();
        return critical_values[(static_cast<std::size_t>(stat) * ns + shape_idx) * np + pct_idx];
    }
};

namespace detail {

inline std::vector<double> null_table_percentiles() {
    return {0.999, 0.995, 0.99,  0.975, 0.95,  0.9,   0.85, 0.8,  0.75,
            0.7,   0.65,  0.6,   0.55,  0.5,   0.45,  0.4,  0.35, 0.3,
            0.25,  0.2,   0.15,  0.1,   0.09,  0.08,  0.07, 0.06, 0.05,
            0.04,  0.03,  0.02,  0.015, 0.01,  0.005, 0.0025, 0.001};
}

inline std::vector<double> null_table_shapes() {
    std::vector<double> s(16);
    for (int i = 0; i < 16; ++i) s[static_cast<std::size_t>(i)] = (i - 5) / 10.0;
    return s;
}

}  // namespace detail

inline NullTable build_null_table(std::uint64_t mc_replicates, std::uint64_t mc_sample_size,
                                  std::uint64_t seed) {
    if (mc_replicates < 10000)
        throw std::domain_error("evt: null table needs at least 10^4 replicates");
    if (mc_sample_size < 500)
        throw std::domain_error("evt: null table needs sample size at least 500");
    NullTable t;
    t.shape_grid = detail::null_table_shapes();
    t.percentile_grid = detail::null_table_percentiles();
    t.mc_replicates = mc_replicates;
    t.mc_sample_size = mc_sample_size;
    t.seed = seed;
    const std::size_t ns = t.shape_grid.size(), np = t.percentile_grid.size();
    t.fit_failures.assign(ns, 0);
    t.critical_values.assign(2 * ns * np, 0.0);
    std::vector<double> sample(mc_sample_size);
    std::vector<double> ad_vals, cvm_vals;
    for (std::size_t si = 0; si < ns; ++si) {
        const GpdParams truth{1.0, t.shape_grid[si]};
        ad_vals.clear();
        cvm_vals.clear();
        ad_vals.reserve(mc_replicates);
        cvm_vals.reserve(mc_replicates);
        for (std::uint64_t k = 0; k < mc_replicates; ++k) {
            Rng g(derive_seed(seed, (static_cast<std::uint64_t>(si) << 32) | k));
            for (auto& y : sample) y = sample_gpd(g, truth);
            FitResult fit;
            try {
                fit = fit_gpd_mle(sample);
            } catch (const std::exception&) {
                ++t.fit_failures[si];
                continue;
            }
            if (!fit.converged) {
                ++t.fit_failures[si];
                continue;
            }
            const double a = ad_statistic(sample, fit.gpd());
            const double w = cvm_statistic(sample, fit.gpd());
            if (!std::isfinite(a) || !std::isfinite(w)) {
                ++t.fit_failures[si];
                continue;
            }
            ad_vals.push_back(a);
            cvm_vals.push_back(w);
        }
        if (ad_vals.size() < np)
            throw std::runtime_error("evt: too many fit failures while building null table");
        std::sort(ad_vals.begin(), ad_vals.end());
        std::sort(cvm_vals.begin(), cvm_vals.end());
        for (std::size_t j = 0; j < np; ++j) {
            const double q = 1.0 - t.percentile_grid[j];
            t.critical_values[(0 * ns + si) * np + j] = quantile_type7(ad_vals, q);
            t.critical_values[(1 * ns + si) * np + j] = quantile_type7(cvm_vals, q);
        }
        for (std::size_t stat = 0; stat < 2; ++stat)
            for (std::size_t j = 1; j < np; ++j)
                if (!(t.critical_values[(stat * ns + si) * np + j] >
                      t.critical_values[(stat * ns + si) * np + j - 1]))
                    throw std::runtime_error("evt: null table critical values not increasing");
    }
    return t;
}

namespace detail {

inline constexpr char null_table_magic[8] = {'E', 'V', 'T', 'N', 'U', 'L', 'T', '1'};

inline std::uint64_t fnv1a64(const unsigned char* data, std::size_t len) {
    std::uint64_t h = 14695981039346656037ull;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= data[i];
        h *= 1099511628211ull;
    }
    return h;
}

template <class T>
void put_raw(std::string& buf, const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const char* p = reinterpret_cast<const char*>(&v);
    buf.append(p, sizeof(T));
}

template <class T>
T get_raw(const unsigned char* data, std::size_t len, std::size_t& off) {
    static_assert(std::is_trivially_copyable_v<T>);
    if (off + sizeof(T) > len) throw std::runtime_error("evt: truncated null table");
    T v;
    std::memcpy(&v, data + off, sizeof(T));
    off += sizeof(T);
    return v;
}

}  // namespace detail

// Byte layout (little-endian throughout):
//   magic "EVTNULT1" (8 bytes), version u32, n_stats u32, n_shapes u32,
//   n_percentiles u32, mc_replicates u64, mc_sample_size u64, seed u64,
//   shape_grid f64[n_shapes], percentile_grid f64[n_percentiles],
//   fit_failures u32[n_shapes],
//   critical_values f64[n_stats][n_shapes][n_percentiles] (statistic-major),
//   FNV-1a-64 checksum u64 over all preceding bytes.
inline std::string serialize_null_table(const NullTable& t) {
    static_assert(std::endian::native == std::endian::little,
                  "null table serialization assumes a little-endian host");
    std::string buf;
    buf.append(detail::null_table_magic, 8);
    detail::put_raw(buf, std::uint32_t{1});
    detail::put_raw(buf, std::uint32_t{2});
    detail::put_raw(buf, static_cast<std::uint32_t>(t.shape_grid.size()));
    detail::put_raw(buf, static_cast<std::uint32_t>(t.percentile_grid.size()));
    detail::put_raw(buf, t.mc_replicates);
    detail::put_raw(buf, t.mc_sample_size);
    detail::put_raw(buf, t.seed);
    for (double v : t.shape_grid) detail::put_raw(buf, v);
    for (double v : t.percentile_grid) detail::put_raw(buf, v);
    for (std::uint32_t v : t.fit_failures) detail::put_raw(buf, v);
    for (double v : t.critical_values) detail::put_raw(buf, v);
    detail::put_raw(buf, detail::fnv1a64(reinterpret_cast<const unsigned char*>(buf.data()),
                                         buf.size()));
    return buf;
}

inline NullTable parse_null_table(const unsigned char* data, std::size_t len) {
    if (len < 8 + sizeof(std::uint64_t) ||
        std::memcmp(data, detail::null_table_magic, 8) != 0)
        throw std::runtime_error("evt: not a null table file");
    const std::size_t body = len - sizeof(std::uint64_t);
    std::size_t off = body;
    const std::uint64_t want = detail::get_raw<std::uint64_t>(data, len, off);
    if (detail::fnv1a64(data, body) != want)
        throw std::runtime_error("evt: null table checksum mismatch");
    off = 8;
    const auto version = detail::get_raw<std::uint32_t>(data, len, off);
    if (version != 1) throw std::runtime_error("evt: unsupported null table version");
    const auto n_stats = detail::get_raw<std::uint32_t>(data, len, off);
    const auto n_shapes = detail::get_raw<std::uint32_t>(data, len, off);
    const auto n_pct = detail::get_raw<std::uint32_t>(data, len, off);
    if (n_stats != 2 || n_shapes == 0 || n_pct < 2)
        throw std::runtime_error("evt: malformed null table header");
    NullTable t;
    t.mc_replicates = detail::get_raw<std::uint64_t>(data, len, off);
    t.mc_sample_size = detail::get_raw<std::uint64_t>(data, len, off);
    t.seed = detail::get_raw<std::uint64_t>(data, len, off);
    t.shape_grid.resize(n_shapes);
    for (auto& v : t.shape_grid) v = detail::get_raw<double>(data, len, off);
    t.percentile_grid.resize(n_pct);
    for (auto& v : t.percentile_grid) v = detail::get_raw<double>(data, len, off);
    t.fit_failures.resize(n_shapes);
    for (auto& v : t.fit_failures) v = detail::get_raw<std::uint32_t>(data, len, off);
    t.critical_values.resize(std::size_t{2} * n_shapes * n_pct);
    for (auto& v : t.critical_values) v = detail::get_raw<double>(data, len, off);
    if (off != body) throw std::runtime_error("evt: null table has trailing bytes");
    return t;
}

inline void save_null_table(const NullTable& t, const std::string& path) {
    const std::string buf = serialize_null_table(t);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("evt: cannot open " + path + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("evt: short write to " + path);
}

inline NullTable load_null_table(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("evt: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_null_table(reinterpret_cast<const unsigned char*>(buf.data()), buf.size());
}

namespace detail {

// -log p at `stat` for one shape row, by log-linear interpolation between
// table nodes. Below the table the p-value clamps to 0.999; above it the
// fitted exponential tail extends from the last node with the least-squares
// slope of -log(p) on the critical values over the 0.05..0.001 window.
inline double neg_log_p_row(const NullTable& t, TailStat stat, std::size_t shape_idx,
                            double x) {
    const std::size_t np = t.percentile_grid.size();
    const auto c = [&](std::size_t j) { return t.critical(stat, shape_idx, j); };
    const auto l = [&](std::size_t j) { return -std::log(t.percentile_grid[j]); };
    if (x <= c(0)) return -std::log(0.999);
    if (x >= c(np - 1)) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        int m = 0;
        for (std::size_t j = 0; j < np; ++j) {
            if (t.percentile_grid[j] > 0.05 + 1e-12 || t.percentile_grid[j] < 0.001 - 1e-12)
                continue;
            sx += c(j);
            sy += l(j);
            sxx += c(j) * c(j);
            sxy += c(j) * l(j);
            ++m;
        }
        const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
        return l(np - 1) + slope * (x - c(np - 1));
    }
    std::size_t j = 1;
    while (j + 1 < np && x > c(j)) ++j;
    return l(j - 1) + (l(j) - l(j - 1)) * (x - c(j - 1)) / (c(j) - c(j - 1));
}

}  // namespace detail

inline double ad_cvm_pvalue(double stat, double xi_hat, const NullTable& table,
                            TailStat which) {
    if (table.shape_grid.empty()) throw std::domain_error("evt: empty null table");
    if (!(xi_hat >= table.shape_grid.front() && xi_hat <= table.shape_grid.back()))
        throw std::domain_error("evt: shape outside null table range");
    const auto& grid = table.shape_grid;
    std::size_t hi = 1;
    while (hi + 1 < grid.size() && xi_hat > grid[hi]) ++hi;
    const std::size_t lo = hi - 1;
    const double l0 = detail::neg_log_p_row(table, which, lo, stat);
    const double l1 = detail::neg_log_p_row(table, which, hi, stat);
    const double w = (xi_hat - grid[lo]) / (grid[hi] - grid[lo]);
    return std::exp(-((1.0 - w) * l0 + w * l1));
}

namespace detail {

inline GpdTestOutcome tail_test(const std::vector<double>& excesses, const NullTable& table,
                                TailStat which, int boot, std::uint64_t seed) {
    const FitResult fit = fit_gpd_mle(excesses);
    if (!fit.converged) throw std::runtime_error("evt: GPD fit failed");
    const GpdParams theta = fit.gpd();
    const bool ad = which == TailStat::anderson_darling;
    GpdTestOutcome out;
    out.theta_hat = theta;
    std::size_t clamped = 0;
    out.statistic = ad ? ad_statistic(excesses, theta, &clamped)
                       : cvm_statistic(excesses, theta, &clamped);
    if (theta.shape >= table.shape_grid.front() && theta.shape <= table.shape_grid.back()) {
        out.p_value = ad_cvm_pvalue(out.statistic, theta.shape, table, which);
        out.method = ad ? "ad_table" : "cvm_table";
        out.unreliable = clamped > 0;
        return out;
    }
    if (boot < 99) throw std::domain_error("evt: bootstrap count must be at least 99");
    int kept = 0, exceed = 0, failed = 0;
    std::vector<double> rep(excesses.size());
    for (int b = 0; b < boot; ++b) {
        Rng g(derive_seed(seed, static_cast<std::uint64_t>(b)));
        for (auto& y : rep) y = sample_gpd(g, theta);
        try {
            const FitResult rf = fit_gpd_mle(rep);
            if (!rf.converged) {
                ++failed;
                continue;
            }
            const double v = ad ? ad_statistic(rep, rf.gpd()) : cvm_statistic(rep, rf.gpd());
            if (!std::isfinite(v)) {
                ++failed;
                continue;
            }
            ++kept;
            if (v > out.statistic) ++exceed;
        } catch (const std::exception&) {
            ++failed;
        }
    }
    if (kept == 0) throw std::runtime_error("evt: every bootstrap replicate failed to refit");
    out.p_value = static_cast<double>(exceed) / static_cast<double>(kept);
    out.method = ad ? "ad_bootstrap" : "cvm_bootstrap";
    out.bootstrap_size = kept;
    out.failed_replicates = failed;
    out.bootstrap_fallback = true;
    out.unreliable = failed * 10 > boot || clamped > 0;
    return out;
}

}  // namespace detail

inline GpdTestOutcome ad_test(const std::vector<double>& excesses, const NullTable& table,
                              int boot = 199, std::uint64_t seed = 1) {
    return detail::tail_test(excesses, table, TailStat::anderson_darling, boot, seed);
}

inline GpdTestOutcome cvm_test(const std::vector<double>& excesses, const NullTable& table,
                               int boot = 199, std::uint64_t seed = 1) {
    return detail::tail_test(excesses, table, TailStat::cramer_von_mises, boot, seed);
}

// Moran's test. M is the maximum-product-of-spacings objective at the MPS
// optimum; T = (M + 1 - C1) / C2 is referred to an upper chi-square tail with
// n degrees of freedom.
inline double moran_mean(std::size_t n) {
    const double m = static_cast<double>(n) + 1.0;
    constexpr double euler_gamma = 0.57721566490153286;
    return m * (std::log(m) + euler_gamma) - 0.5 - 1.0 / (12.0 * m);
}

inline double moran_variance(std::size_t n) {
    const double m = static_cast<double>(n) + 1.0;
    constexpr double pi = 3.14159265358979324;
    return m * (pi * pi / 6.0 - 1.0) - 0.5 - 1.0 / (6.0 * m);
}

inline GpdTestOutcome moran_test(const std::vector<double>& excesses) {
    const FitResult fit = fit_mps(excesses, DistFamily::gpd);
    if (!fit.converged) throw std::runtime_error("evt: MPS fit failed");
    const double n = static_cast<double>(excesses.size());
    const double m_val = -fit.max_objective;
    const double mu = moran_mean(excesses.size());
    const double sigma = std::sqrt(moran_variance(excesses.size()));
    const double c1 = mu - std::sqrt(n / 2.0) * sigma;
    const double c2 = sigma / std::sqrt(2.0 * n);
    GpdTestOutcome out;
    out.theta_hat = fit.gpd();
    out.statistic = (m_val + 1.0 - c1) / c2;
    out.p_value = boost::math::gamma_q(n / 2.0, std::max(0.0, out.statistic) / 2.0);
    out.method = "moran";
    out.unreliable = fit.shape_warning;
    return out;
}

namespace detail {

// Piecewise-shape exceedance model: shape is constant on each interval
// between consecutive thresholds, and the scale continues across interval
// boundaries (sigma_{i+1} = sigma_i + xi_i * interval width) so the implied
// distribution is threshold-stable within each piece.
struct PiecewiseChain {
    std::vector<double> sigma;      // scale at each piece's lower threshold
    std::vector<double> log_surv;   // log P(X > lower threshold of piece)
    bool ok = false;
};

inline PiecewiseChain piecewise_chain(const std::vector<double>& thresholds,
                                      const Eigen::VectorXd& par) {
    PiecewiseChain ch;
    const std::size_t k = thresholds.size();
    if (!(par[0] > 0.0)) return ch;
    ch.sigma.assign(k + 1, 0.0);
    ch.log_surv.assign(k + 1, 0.0);
    ch.sigma[0] = par[0];
    for (std::size_t i = 0; i < k; ++i) {
        const double lo = i == 0 ? 0.0 : thresholds[i - 1];
        const double width = thresholds[i] - lo;
        const double xi = par[static_cast<Eigen::Index>(1 + i)];
        const double w = xi * width / ch.sigma[i];
        if (w <= -1.0) return ch;
        const double piece = std::fabs(xi) <= shape_zero_tol ? -width / ch.sigma[i]
                                                             : -std::log1p(w) / xi;
        ch.log_surv[i + 1] = ch.log_surv[i] + piece;
        ch.sigma[i + 1] = ch.sigma[i] + xi * width;
        if (!(ch.sigma[i + 1] > 0.0)) return ch;
    }
    ch.ok = true;
    return ch;
}

inline double piecewise_gpd_logpdf(double x, const std::vector<double>& thresholds,
                                   const PiecewiseChain& ch, const Eigen::VectorXd& par) {
    std::size_t i = 0;
    while (i < thresholds.size() && x > thresholds[i]) ++i;
    const double lo = i == 0 ? 0.0 : thresholds[i - 1];
    const GpdParams piece{ch.sigma[i], par[static_cast<Eigen::Index>(1 + i)]};
    return ch.log_surv[i] + gpd_log_pdf(x - lo, piece);
}

inline double piecewise_gpd_loglik(const std::vector<double>& sorted_excesses,
                                   const std::vector<double>& thresholds,
                                   const Eigen::VectorXd& par) {
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();
    const PiecewiseChain ch = piecewise_chain(thresholds, par);
    if (!ch.ok) return neg_inf;
    double ll = 0.0;
    for (const double x : sorted_excesses) {
        const double lp = piecewise_gpd_logpdf(x, thresholds, ch, par);
        if (!std::isfinite(lp)) return neg_inf;
        ll += lp;
    }
    return ll;
}

// Fisher information of the piecewise model at a common-shape point, by
// Gauss-Legendre quadrature of the expected score outer product under the
// fitted null. Integration runs in t = -log(1 - F(x)) so the tail piece
// decays exponentially; the integrand there behaves like exp(-(1+2*xi)t),
// integrable for xi > -0.5.
inline Eigen::MatrixXd piecewise_fisher(const std::vector<double>& thresholds,
                                        const Eigen::VectorXd& at, const GpdParams& null_theta,
                                        double n) {
    const Eigen::Index d = at.size();
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(d, d);
    const auto score_at = [&](double x) {
        return num_gradient(
            [&](const Eigen::VectorXd& p) {
                const PiecewiseChain ch = piecewise_chain(thresholds, p);
                if (!ch.ok) return -std::numeric_limits<double>::infinity();
                return piecewise_gpd_logpdf(x, thresholds, ch, p);
            },
            at);
    };
    using Quad = boost::math::quadrature::gauss<double, 30>;
    const auto add_segment = [&](double a, double b) {
        const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
        for (std::size_t j = 0; j < Quad::abscissa().size(); ++j) {
            for (const double sgn : {-1.0, 1.0}) {
                const double t = mid + sgn * half * Quad::abscissa()[j];
                const double x = std::fabs(null_theta.shape) <= shape_zero_tol
                                     ? null_theta.scale * t
                                     : null_theta.scale * std::expm1(null_theta.shape * t) /
                                           null_theta.shape;
                const Eigen::VectorXd g = score_at(x);
                acc.noalias() += (Quad::weights()[j] * half * std::exp(-t)) * g * g.transpose();
            }
        }
    };
    std::vector<double> tb{0.0};
    for (const double u : thresholds) tb.push_back(-std::log1p(-gpd_cdf(u, null_theta)));
    for (std::size_t i = 0; i + 1 < tb.size(); ++i) add_segment(tb[i], tb[i + 1]);
    const double rate = std::max(0.05, 1.0 + 2.0 * null_theta.shape);
    const double t_top = tb.back() + 45.0 / rate;
    double a = tb.back(), len = 2.0;
    while (a < t_top) {
        const double b = std::min(t_top, a + len);
        add_segment(a, b);
        len *= 2.0;
        a = b;
    }
    return n * acc;
}

}  // namespace detail

// Score test of a common shape against a piecewise shape over k interior
// thresholds placed at the i/(k+1) quantiles of the excesses (deciles for
// k = 9). Only the restricted two-parameter MLE is needed; the score is
// evaluated numerically at that fit and referred to the Fisher information
// of the piecewise model under the fitted null.
inline GpdTestOutcome rao_score_test(const std::vector<double>& excesses, int k = 9) {
    if (k < 1) throw std::domain_error("evt: need at least one interior threshold");
    const FitResult fit = fit_gpd_mle(excesses);
    if (!fit.converged) throw std::runtime_error("evt: GPD fit failed");
    // Work on excesses divided by the fitted scale: the statistic is scale
    // invariant in exact arithmetic, and differentiating at sigma near 1
    // keeps it that way numerically.
    std::vector<double> sorted = sorted_copy(excesses);
    for (auto& v : sorted) v /= fit.params[0];
    std::vector<double> thresholds(static_cast<std::size_t>(k));
    for (int i = 1; i <= k; ++i)
        thresholds[static_cast<std::size_t>(i - 1)] =
            quantile_type7(sorted, static_cast<double>(i) / (k + 1.0));
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        const double lo = i == 0 ? 0.0 : thresholds[i - 1];
        if (!(thresholds[i] > lo))
            throw std::domain_error("evt: tied interior thresholds");
    }
    if (sorted.back() <= thresholds.back())
        throw std::domain_error("evt: empty interval above the top threshold");
    // Newton-polish the restricted optimum so the nuisance components of the
    // score vanish to differentiation accuracy.
    const auto ll2 = [&](const Eigen::VectorXd& p) {
        constexpr double neg_inf = -std::numeric_limits<double>::infinity();
        if (!(p[0] > 0.0)) return neg_inf;
        const GpdParams th{p[0], p[1]};
        double ll = 0.0;
        for (const double x : sorted) {
            const double lp = gpd_log_pdf(x, th);
            if (!std::isfinite(lp)) return neg_inf;
            ll += lp;
        }
        return ll;
    };
    Eigen::Vector2d th2{1.0, fit.params[1]};
    double best = ll2(th2);
    for (int step = 0; step < 3; ++step) {
        const Eigen::VectorXd g2 = num_gradient(ll2, th2);
        const Eigen::MatrixXd h2 = num_hessian(ll2, th2);
        if (!g2.allFinite() || !h2.allFinite() || std::fabs(h2.determinant()) < 1e-12) break;
        const Eigen::Vector2d cand = th2 - h2.inverse() * g2;
        const double val = ll2(cand);
        if (!(val >= best)) break;
        th2 = cand;
        best = val;
    }
    const GpdParams null_theta{th2[0], th2[1]};
    Eigen::VectorXd at(k + 2);
    at[0] = null_theta.scale;
    for (int i = 0; i <= k; ++i) at[i + 1] = null_theta.shape;
    const Eigen::VectorXd u = num_gradient(
        [&](const Eigen::VectorXd& p) {
            return detail::piecewise_gpd_loglik(sorted, thresholds, p);
        },
        at);
    const Eigen::MatrixXd info =
        detail::piecewise_fisher(thresholds, at, null_theta, static_cast<double>(sorted.size()));
    if (!u.allFinite() || !info.allFinite())
        throw std::runtime_error("evt: piecewise likelihood not differentiable at the fit");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(info);
    const double emax = es.eigenvalues().maxCoeff(), emin = es.eigenvalues().minCoeff();
    if (!(emin > 1e-12 * std::max(emax, 1.0)))
        throw std::runtime_error("evt: information matrix singular (condition number " +
                                 std::to_string(emax / std::max(emin, 1e-300)) + ")");
    GpdTestOutcome out;
    out.theta_hat = {null_theta.scale * fit.params[0], null_theta.shape};
    out.statistic = u.dot(es.eigenvectors() *
                          (es.eigenvalues().cwiseInverse().asDiagonal() *
                           (es.eigenvectors().transpose() * u)));
    out.p_value = boost::math::gamma_q(k / 2.0, std::max(0.0, out.statistic) / 2.0);
    out.method = "rao_score";
    out.unreliable = fit.shape_warning;
    return out;
}

}  // namespace evt
