#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "gevr.hpp"
#include "gpd.hpp"
#include "lmoments.hpp"
#include "neldermead.hpp"
#include "numdiff.hpp"

namespace evt {

enum class FitMethod { mle, mps, lmom, hybrid };
enum class DistFamily { gev, gpd };

struct FitResult {
    std::vector<double> params;  // natural parameterization, layout per fit function
    double max_objective = neg_inf;
    bool converged = false;
    bool shape_warning = false;  // shape at or below -0.5: asymptotics unreliable
    FitMethod method = FitMethod::mle;
    Eigen::MatrixXd covariance;  // 0x0 when not available
    bool covariance_ok = false;

    GevParams gev() const { return {params.at(0), params.at(1), params.at(2)}; }
    GpdParams gpd() const { return {params.at(0), params.at(1)}; }
};

namespace detail {

inline void check_not_constant(const std::vector<double>& x) {
    for (std::size_t i = 1; i < x.size(); ++i)
        if (x[i] != x[0]) return;
    throw std::domain_error("evt: degenerate (constant) data");
}

// Optimization runs over (loc, log scale, shape); these bounds only stop the
// simplex from wandering off to non-finite territory.
inline bool gev_box_ok(double loc, double log_scale, double shape) {
    return std::fabs(loc) < 1e8 && std::fabs(log_scale) < 30.0 && std::fabs(shape) < 10.0;
}

// Numerical covariance from the Hessian of the maximized objective in natural
// parameters.  `f` returns the objective being maximized.
template <class F>
void attach_covariance(FitResult& out, F&& f) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(out.params.size()));
    for (std::size_t j = 0; j < out.params.size(); ++j) x[static_cast<Eigen::Index>(j)] = out.params[j];
    Eigen::MatrixXd h = num_hessian(f, x);
    h = 0.5 * (h + h.transpose()).eval();
    Eigen::MatrixXd info = -h;
    Eigen::LLT<Eigen::MatrixXd> llt(info);
    if (llt.info() != Eigen::Success) {
        out.covariance_ok = false;
        return;
    }
    out.covariance = llt.solve(Eigen::MatrixXd::Identity(info.rows(), info.cols()));
    out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
    out.covariance_ok = out.covariance.diagonal().minCoeff() > 0.0;
}

}  // namespace detail

// Weighted Moran spacing objective on sorted data.  Tied values merge into a
// single spacing carrying their multiplicity as weight; the leading spacing
// F(u_1) - 0 carries the first multiplicity and the trailing 1 - F(u_m)
// carries weight one, so weights always sum to n + 1.
template <class Cdf>
double moran_objective(const std::vector<double>& sorted, Cdf&& cdf) {
    if (sorted.empty()) throw std::domain_error("evt: empty sample");
    double total = 0.0;
    double prev = 0.0;
    std::size_t i = 0;
    while (i < sorted.size()) {
        std::size_t j = i;
        while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
        const double f_i = cdf(sorted[i]);
        double d = f_i - prev;
        if (!(d > 1e-300)) d = 1e-300;
        total -= static_cast<double>(j - i + 1) * std::log(d);
        prev = f_i;
        i = j + 1;
    }
    double d_end = 1.0 - prev;
    if (!(d_end > 1e-300)) d_end = 1e-300;
    return total - std::log(d_end);
}

// Feasible starting point for GEV-family likelihoods.  The L-moment fit can
// place observations outside the support; the Gumbel fallback never does.
inline GevParams gev_feasible_start(const TopROrderSample& s) {
    std::vector<double> col0(s.n);
    for (std::size_t i = 0; i < s.n; ++i) col0[i] = s(i, 0);
    GevParams cand = gev_from_lmoments(sample_lmoments(col0));
    for (int k = 0; k < 8; ++k) {
        if (gevr_log_likelihood(s, cand) > neg_inf) return cand;
        cand.shape *= 0.5;
        cand.scale *= 1.5;
    }
    double lo = s.values[0], hi = s.values[0];
    for (double v : s.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return {0.5 * (lo + hi), std::max(0.25 * (hi - lo), 1e-8), 0.0};
}

inline FitResult fit_gevr_mle(const TopROrderSample& s) {
    validate_top_r(s);
    if (s.n < 3) throw std::domain_error("evt: need at least 3 blocks");
    detail::check_not_constant(s.values);
    const GevParams start = gev_feasible_start(s);
    auto objective = [&](const std::vector<double>& th) {
        if (!detail::gev_box_ok(th[0], th[1], th[2])) return std::numeric_limits<double>::infinity();
        return -gevr_log_likelihood(s, {th[0], std::exp(th[1]), th[2]});
    };
    const NmResult nm = nelder_mead(objective, {start.loc, std::log(start.scale), start.shape});
    FitResult out;
    out.method = FitMethod::mle;
    out.params = {nm.x[0], std::exp(nm.x[1]), nm.x[2]};
    out.max_objective = -nm.fmin;
    out.converged = nm.converged && std::isfinite(nm.fmin);
    out.shape_warning = out.params[2] <= -0.5;
    if (out.converged)
        detail::attach_covariance(out, [&](const Eigen::VectorXd& th) {
            return gevr_log_likelihood(s, {th[0], th[1], th[2]});
        });
    return out;
}

inline FitResult fit_gev_mle(const std::vector<double>& maxima) {
    TopROrderSample s(maxima.size(), 1);
    for (std::size_t i = 0; i < maxima.size(); ++i) s(i, 0) = maxima[i];
    return fit_gevr_mle(s);
}

inline FitResult fit_gpd_mle(const std::vector<double>& excesses) {
    if (excesses.size() < 5) throw std::domain_error("evt: need at least 5 excesses");
    for (double y : excesses)
        if (y < 0.0) throw std::domain_error("evt: excesses must be non-negative");
    detail::check_not_constant(excesses);
    GpdParams start = gpd_from_lmoments(sample_lmoments(excesses));
    auto loglik = [&](const GpdParams& p) {
        double total = 0.0;
        for (double y : excesses) {
            const double l = gpd_log_pdf(y, p);
            if (l == neg_inf) return neg_inf;
            total += l;
        }
        return total;
    };
    for (int k = 0; k < 8 && loglik(start) == neg_inf; ++k) start.scale *= 1.5;
    auto objective = [&](const std::vector<double>& th) {
        if (std::fabs(th[0]) > 30.0 || std::fabs(th[1]) > 10.0)
            return std::numeric_limits<double>::infinity();
        return -loglik({std::exp(th[0]), th[1]});
    };
    const NmResult nm = nelder_mead(objective, {std::log(start.scale), start.shape});
    FitResult out;
    out.method = FitMethod::mle;
    out.params = {std::exp(nm.x[0]), nm.x[1]};
    out.max_objective = -nm.fmin;
    out.converged = nm.converged && std::isfinite(nm.fmin);
    out.shape_warning = out.params[1] <= -0.5;
    if (out.converged)
        detail::attach_covariance(out, [&](const Eigen::VectorXd& th) {
            return th[0] > 0.0 ? loglik({th[0], th[1]}) : neg_inf;
        });
    return out;
}

// Maximum product of spacings.  Works where the MLE does not exist (shape
// below -1); ties are handled by the multiplicity rule in moran_objective.
inline FitResult fit_mps(std::vector<double> data, DistFamily family) {
    if (data.size() < 5) throw std::domain_error("evt: need at least 5 observations");
    detail::check_not_constant(data);
    std::sort(data.begin(), data.end());
    FitResult out;
    out.method = FitMethod::mps;
    if (family == DistFamily::gev) {
        TopROrderSample wrap(data.size(), 1);
        for (std::size_t i = 0; i < data.size(); ++i) wrap(i, 0) = data[i];
        const GevParams start = gev_feasible_start(wrap);
        auto objective = [&](const std::vector<double>& th) {
            if (!detail::gev_box_ok(th[0], th[1], th[2]))
                return std::numeric_limits<double>::infinity();
            const GevParams p{th[0], std::exp(th[1]), th[2]};
            return moran_objective(data, [&](double y) { return gev_cdf(y, p); });
        };
        const NmResult nm = nelder_mead(objective, {start.loc, std::log(start.scale), start.shape});
        out.params = {nm.x[0], std::exp(nm.x[1]), nm.x[2]};
        out.max_objective = -nm.fmin;
        out.converged = nm.converged && std::isfinite(nm.fmin);
        out.shape_warning = out.params[2] <= -0.5;
        if (out.converged)
            detail::attach_covariance(out, [&](const Eigen::VectorXd& th) {
                if (!(th[1] > 0.0)) return neg_inf;
                const GevParams p{th[0], th[1], th[2]};
                return -moran_objective(data, [&](double y) { return gev_cdf(y, p); });
            });
    } else {
        if (data.front() < 0.0) throw std::domain_error("evt: excesses must be non-negative");
        GpdParams start = gpd_from_lmoments(sample_lmoments(data));
        auto objective = [&](const std::vector<double>& th) {
            if (std::fabs(th[0]) > 30.0 || std::fabs(th[1]) > 10.0)
                return std::numeric_limits<double>::infinity();
            const GpdParams p{std::exp(th[0]), th[1]};
            return moran_objective(data, [&](double y) { return gpd_cdf(y, p); });
        };
        const NmResult nm = nelder_mead(objective, {std::log(start.scale), start.shape});
        out.params = {std::exp(nm.x[0]), nm.x[1]};
        out.max_objective = -nm.fmin;
        out.converged = nm.converged && std::isfinite(nm.fmin);
        out.shape_warning = out.params[1] <= -0.5;
        if (out.converged)
            detail::attach_covariance(out, [&](const Eigen::VectorXd& th) {
                if (!(th[0] > 0.0)) return neg_inf;
                const GpdParams p{th[0], th[1]};
                return -moran_objective(data, [&](double y) { return gpd_cdf(y, p); });
            });
    }
    return out;
}

}  // namespace evt
