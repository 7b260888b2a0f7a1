#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "fit.hpp"
#include "gev.hpp"
#include "lmoments.hpp"
#include "neldermead.hpp"
#include "numdiff.hpp"

namespace evt {

// Linked GEV model for m sites observed over n periods:
//   mu_st    = x^mu_st . beta_mu          (identity link)
//   gamma_t  = exp(x^gamma_t . beta_gamma)
//   xi_t     = x^xi_t . beta_xi           (identity link)
//   sigma_st = gamma_t * mu_st
// Row s*n + t of loc_design belongs to site s, period t.
struct LinkedModelSpec {
    Eigen::MatrixXd loc_design;        // (m*n) x (m + p_mu), site indicators first
    Eigen::MatrixXd propscale_design;  // n x p_gamma, intercept first
    Eigen::MatrixXd shape_design;      // n x p_xi, intercept first
    std::size_t m = 0;
    std::size_t n = 0;

    std::size_t n_loc_covs() const { return loc_design.cols() - m; }
    std::size_t dim() const {
        return static_cast<std::size_t>(loc_design.cols() + propscale_design.cols() +
                                        shape_design.cols());
    }
};

struct CoefficientSet {
    Eigen::VectorXd beta_mu;
    Eigen::VectorXd beta_gamma;
    Eigen::VectorXd beta_xi;
};

inline LinkedModelSpec make_flood_index_spec(std::size_t m, std::size_t n,
                                             const Eigen::MatrixXd& loc_covs,
                                             const Eigen::MatrixXd& gamma_covs,
                                             const Eigen::MatrixXd& xi_covs) {
    if (m == 0 || n == 0) throw std::domain_error("evt: need at least one site and period");
    if ((loc_covs.size() && loc_covs.rows() != static_cast<Eigen::Index>(n)) ||
        (gamma_covs.size() && gamma_covs.rows() != static_cast<Eigen::Index>(n)) ||
        (xi_covs.size() && xi_covs.rows() != static_cast<Eigen::Index>(n)))
        throw std::domain_error("evt: covariate rows must match the number of periods");
    LinkedModelSpec spec;
    spec.m = m;
    spec.n = n;
    const Eigen::Index mn = static_cast<Eigen::Index>(m * n);
    spec.loc_design = Eigen::MatrixXd::Zero(mn, static_cast<Eigen::Index>(m) + loc_covs.cols());
    for (std::size_t s = 0; s < m; ++s)
        for (std::size_t t = 0; t < n; ++t) {
            const Eigen::Index row = static_cast<Eigen::Index>(s * n + t);
            spec.loc_design(row, static_cast<Eigen::Index>(s)) = 1.0;
            for (Eigen::Index c = 0; c < loc_covs.cols(); ++c)
                spec.loc_design(row, static_cast<Eigen::Index>(m) + c) =
                    loc_covs(static_cast<Eigen::Index>(t), c);
        }
    spec.propscale_design = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(n), 1 + gamma_covs.cols());
    spec.propscale_design.rightCols(gamma_covs.cols()) = gamma_covs;
    spec.shape_design = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(n), 1 + xi_covs.cols());
    spec.shape_design.rightCols(xi_covs.cols()) = xi_covs;
    return spec;
}

inline Eigen::VectorXd pack_coefficients(const CoefficientSet& c) {
    Eigen::VectorXd th(c.beta_mu.size() + c.beta_gamma.size() + c.beta_xi.size());
    th << c.beta_mu, c.beta_gamma, c.beta_xi;
    return th;
}

inline CoefficientSet unpack_coefficients(const LinkedModelSpec& spec, const Eigen::VectorXd& th) {
    if (th.size() != static_cast<Eigen::Index>(spec.dim()))
        throw std::domain_error("evt: coefficient vector length mismatch");
    CoefficientSet c;
    c.beta_mu = th.head(spec.loc_design.cols());
    c.beta_gamma = th.segment(spec.loc_design.cols(), spec.propscale_design.cols());
    c.beta_xi = th.tail(spec.shape_design.cols());
    return c;
}

// Per-(site, period) GEV parameters implied by the links.
struct RfaParamField {
    Eigen::VectorXd mu;     // m*n, site-major
    Eigen::VectorXd gamma;  // n
    Eigen::VectorXd xi;     // n
};

inline RfaParamField eval_links(const LinkedModelSpec& spec, const CoefficientSet& c) {
    RfaParamField f;
    f.mu = spec.loc_design * c.beta_mu;
    f.gamma = (spec.propscale_design * c.beta_gamma).array().exp();
    f.xi = spec.shape_design * c.beta_xi;
    return f;
}

// Unit Frechet map Z = (1 + shape*(y - loc)/scale)^(1/shape); the GEV cdf of
// y equals exp(-1/z).
inline double frechet_transform(double y, const GevParams& p) {
    check_scale(p.scale);
    const double w = p.shape * (y - p.loc) / p.scale;
    if (std::fabs(p.shape) <= shape_zero_tol) return std::exp((y - p.loc) / p.scale);
    if (w <= -1.0) throw std::domain_error("evt: observation outside GEV support");
    return std::exp(std::log1p(w) / p.shape);
}

inline double frechet_inverse(double z, const GevParams& p) {
    check_scale(p.scale);
    if (!(z > 0.0)) throw std::domain_error("evt: unit Frechet values are positive");
    if (std::fabs(p.shape) <= shape_zero_tol) return p.loc + p.scale * std::log(z);
    return p.loc + p.scale * std::expm1(p.shape * std::log(z)) / p.shape;
}

inline double rfa_log_likelihood(const Eigen::MatrixXd& y, const LinkedModelSpec& spec,
                                 const CoefficientSet& c) {
    const RfaParamField f = eval_links(spec, c);
    double total = 0.0;
    for (std::size_t s = 0; s < spec.m; ++s)
        for (std::size_t t = 0; t < spec.n; ++t) {
            const double mu = f.mu[static_cast<Eigen::Index>(s * spec.n + t)];
            const double sigma = f.gamma[static_cast<Eigen::Index>(t)] * mu;
            if (!(sigma > 0.0)) return neg_inf;
            const double ll = gev_log_pdf(y(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t)),
                                          {mu, sigma, f.xi[static_cast<Eigen::Index>(t)]});
            if (ll == neg_inf) return neg_inf;
            total += ll;
        }
    return total;
}

// Moran objective of the linked model: within-site spacings of the fitted
// unit-Frechet transforms, endpoints included, summed over sites.
inline double rfa_moran_objective(const Eigen::MatrixXd& y, const LinkedModelSpec& spec,
                                  const CoefficientSet& c) {
    const RfaParamField f = eval_links(spec, c);
    double total = 0.0;
    std::vector<double> z(spec.n);
    for (std::size_t s = 0; s < spec.m; ++s) {
        for (std::size_t t = 0; t < spec.n; ++t) {
            const double mu = f.mu[static_cast<Eigen::Index>(s * spec.n + t)];
            const double sigma = f.gamma[static_cast<Eigen::Index>(t)] * mu;
            if (!(sigma > 0.0)) return std::numeric_limits<double>::infinity();
            const double w = f.xi[static_cast<Eigen::Index>(t)] *
                             (y(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t)) - mu) / sigma;
            if (std::fabs(f.xi[static_cast<Eigen::Index>(t)]) <= shape_zero_tol)
                z[t] = std::exp((y(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t)) - mu) / sigma);
            else if (w <= -1.0)
                return std::numeric_limits<double>::infinity();
            else
                z[t] = std::exp(std::log1p(w) / f.xi[static_cast<Eigen::Index>(t)]);
        }
        std::sort(z.begin(), z.end());
        total += moran_objective(z, [](double v) { return std::exp(-1.0 / v); });
    }
    return total;
}

namespace detail {

// Centering/scaling of covariate columns, with the affine back-map from
// standardized coefficients to original-scale coefficients.
struct StandardizedDesign {
    LinkedModelSpec spec;
    Eigen::MatrixXd back;  // theta_original = back * theta_standardized
};

inline void standardize_block(Eigen::MatrixXd& x, Eigen::Index first_cov,
                              const std::vector<Eigen::Index>& absorb_cols,
                              Eigen::MatrixXd& back, Eigen::Index offset) {
    for (Eigen::Index c = first_cov; c < x.cols(); ++c) {
        const double mean = x.col(c).mean();
        const double sd = std::sqrt((x.col(c).array() - mean).square().sum() /
                                    std::max<double>(1.0, static_cast<double>(x.rows() - 1)));
        if (!(sd > 0.0)) continue;
        x.col(c) = (x.col(c).array() - mean) / sd;
        back(offset + c, offset + c) = 1.0 / sd;
        for (Eigen::Index a : absorb_cols) back(offset + a, offset + c) = -mean / sd;
    }
}

inline StandardizedDesign standardize(const LinkedModelSpec& spec) {
    StandardizedDesign out;
    out.spec = spec;
    const Eigen::Index d = static_cast<Eigen::Index>(spec.dim());
    out.back = Eigen::MatrixXd::Identity(d, d);
    std::vector<Eigen::Index> sites(spec.m);
    for (std::size_t s = 0; s < spec.m; ++s) sites[s] = static_cast<Eigen::Index>(s);
    standardize_block(out.spec.loc_design, static_cast<Eigen::Index>(spec.m), sites, out.back, 0);
    const Eigen::Index off_g = spec.loc_design.cols();
    standardize_block(out.spec.propscale_design, 1, {0}, out.back, off_g);
    const Eigen::Index off_x = off_g + spec.propscale_design.cols();
    standardize_block(out.spec.shape_design, 1, {0}, out.back, off_x);
    return out;
}

inline void check_rfa_data(const Eigen::MatrixXd& y, const LinkedModelSpec& spec) {
    if (y.rows() != static_cast<Eigen::Index>(spec.m) || y.cols() != static_cast<Eigen::Index>(spec.n))
        throw std::domain_error("evt: data matrix must be m sites by n periods");
    if (spec.n < 2) throw std::domain_error("evt: need at least two periods per site");
}

}  // namespace detail

// Stationary starting values: per-site L-moment locations, pooled scale-free
// L-moment solution for the shared intercepts, zeros for covariate effects.
inline CoefficientSet rfa_lmoment_start(const Eigen::MatrixXd& y, const LinkedModelSpec& spec) {
    CoefficientSet c;
    c.beta_mu = Eigen::VectorXd::Zero(spec.loc_design.cols());
    c.beta_gamma = Eigen::VectorXd::Zero(spec.propscale_design.cols());
    c.beta_xi = Eigen::VectorXd::Zero(spec.shape_design.cols());
    std::vector<double> row(spec.n), pooled;
    pooled.reserve(spec.m * spec.n);
    for (std::size_t s = 0; s < spec.m; ++s) {
        for (std::size_t t = 0; t < spec.n; ++t) row[t] = y(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t));
        double loc = gev_from_lmoments(sample_lmoments(row)).loc;
        if (!(loc > 0.0)) loc = std::max(1e-8, sample_lmoments(row).l1);
        c.beta_mu[static_cast<Eigen::Index>(s)] = loc;
        for (double v : row) pooled.push_back(v / loc);
    }
    const LMoments lm = sample_lmoments(pooled);
    const PooledLmomSolution sol = solve_pooled_lmoments(lm.l1, lm.l2);
    if (sol.ok) {
        c.beta_gamma[0] = sol.log_propscale;
        c.beta_xi[0] = sol.shape;
    } else {
        const GevParams p = gev_from_lmoments(lm);
        c.beta_gamma[0] = std::log(std::max(p.scale, 1e-8));
        c.beta_xi[0] = std::clamp(p.shape, -0.9, 0.9);
    }
    return c;
}

namespace detail {

template <class Objective>
FitResult rfa_minimize(const Eigen::MatrixXd& y, const LinkedModelSpec& spec,
                       Objective&& objective_orig, const CoefficientSet& start,
                       FitMethod method) {
    const StandardizedDesign sd = standardize(spec);
    // map the original-scale start into standardized coordinates
    const Eigen::VectorXd th0_orig = pack_coefficients(start);
    const Eigen::VectorXd th0 = sd.back.partialPivLu().solve(th0_orig);
    auto objective_std = [&](const std::vector<double>& v) {
        Eigen::VectorXd th(static_cast<Eigen::Index>(v.size()));
        for (std::size_t j = 0; j < v.size(); ++j) th[static_cast<Eigen::Index>(j)] = v[j];
        const Eigen::VectorXd orig = sd.back * th;
        for (Eigen::Index j = 0; j < orig.size(); ++j)
            if (std::fabs(orig[j]) > 1e8) return std::numeric_limits<double>::infinity();
        return objective_orig(unpack_coefficients(spec, orig));
    };
    std::vector<double> v0(static_cast<std::size_t>(th0.size()));
    for (Eigen::Index j = 0; j < th0.size(); ++j) v0[static_cast<std::size_t>(j)] = th0[j];
    const NmResult nm = nelder_mead(objective_std, v0, {.ftol = 1e-10, .max_iter = 0, .restarts = 2, .init_step = 0.1});
    Eigen::VectorXd th(static_cast<Eigen::Index>(nm.x.size()));
    for (std::size_t j = 0; j < nm.x.size(); ++j) th[static_cast<Eigen::Index>(j)] = nm.x[j];
    const Eigen::VectorXd th_orig = sd.back * th;

    FitResult out;
    out.method = method;
    out.params.assign(th_orig.data(), th_orig.data() + th_orig.size());
    out.max_objective = -nm.fmin;
    out.converged = nm.converged && std::isfinite(nm.fmin);
    const CoefficientSet c = unpack_coefficients(spec, th_orig);
    out.shape_warning = eval_links(spec, c).xi.minCoeff() <= -0.5;
    if (out.converged) {
        attach_covariance(out, [&](const Eigen::VectorXd& t) {
            return -objective_orig(unpack_coefficients(spec, t));
        });
    }
    return out;
}

}  // namespace detail

inline CoefficientSet rfa_coefficients(const LinkedModelSpec& spec, const FitResult& fr) {
    Eigen::VectorXd th(static_cast<Eigen::Index>(fr.params.size()));
    for (std::size_t j = 0; j < fr.params.size(); ++j) th[static_cast<Eigen::Index>(j)] = fr.params[j];
    return unpack_coefficients(spec, th);
}

inline FitResult fit_rfa_hybrid(const Eigen::MatrixXd& y, const LinkedModelSpec& spec,
                                std::vector<double>* loglik_trace = nullptr);

inline FitResult fit_rfa_mle(const Eigen::MatrixXd& y, const LinkedModelSpec& spec) {
    detail::check_rfa_data(y, spec);
    auto objective = [&](const CoefficientSet& c) { return -rfa_log_likelihood(y, spec, c); };
    FitResult out = detail::rfa_minimize(y, spec, objective, rfa_lmoment_start(y, spec), FitMethod::mle);
    if (!out.converged || !std::isfinite(out.max_objective)) {
        const FitResult hybrid = fit_rfa_hybrid(y, spec);
        if (std::isfinite(hybrid.max_objective)) {
            const FitResult retry = detail::rfa_minimize(y, spec, objective,
                                                         rfa_coefficients(spec, hybrid), FitMethod::mle);
            if (retry.converged && retry.max_objective >= out.max_objective) return retry;
        }
    }
    return out;
}

inline FitResult fit_rfa_mps(const Eigen::MatrixXd& y, const LinkedModelSpec& spec) {
    detail::check_rfa_data(y, spec);
    auto objective = [&](const CoefficientSet& c) { return rfa_moran_objective(y, spec, c); };
    FitResult out = detail::rfa_minimize(y, spec, objective, rfa_lmoment_start(y, spec), FitMethod::mps);
    if (!out.converged || !std::isfinite(out.max_objective)) {
        const FitResult hybrid = fit_rfa_hybrid(y, spec);
        if (std::isfinite(hybrid.max_objective)) {
            const FitResult retry = detail::rfa_minimize(y, spec, objective,
                                                         rfa_coefficients(spec, hybrid), FitMethod::mps);
            if (retry.converged && retry.max_objective >= out.max_objective) return retry;
        }
    }
    return out;
}

// Iterative hybrid estimator: alternate (1) site-stationarizing probability
// transform under the current coefficients, (2) per-site L-moment locations,
// (3) pooled scale-free L-moment solve for the shared intercepts, and
// (4) likelihood maximization over the covariate coefficients only, until the
// full log-likelihood stabilizes.
inline FitResult fit_rfa_hybrid(const Eigen::MatrixXd& y, const LinkedModelSpec& spec,
                                std::vector<double>* loglik_trace) {
    detail::check_rfa_data(y, spec);
    const std::size_t m = spec.m, n = spec.n;
    CoefficientSet c = rfa_lmoment_start(y, spec);
    const std::size_t n_nonstat = spec.dim() - m - 2;

    FitResult out;
    out.method = FitMethod::hybrid;
    double prev_ll = neg_inf;
    Eigen::MatrixXd ytilde = y;
    for (int iter = 0; iter < 50; ++iter) {
        // (1) transform to site-stationary margins under the current coefficients
        if (iter > 0) {
            const RfaParamField f = eval_links(spec, c);
            for (std::size_t s = 0; s < m; ++s) {
                const double bmu = c.beta_mu[static_cast<Eigen::Index>(s)];
                const GevParams target{bmu, bmu * std::exp(c.beta_gamma[0]), c.beta_xi[0]};
                if (!(target.scale > 0.0)) break;
                for (std::size_t t = 0; t < n; ++t) {
                    const double mu = f.mu[static_cast<Eigen::Index>(s * n + t)];
                    const double sigma = f.gamma[static_cast<Eigen::Index>(t)] * mu;
                    double u = sigma > 0.0
                                   ? gev_cdf(y(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t)),
                                             {mu, sigma, f.xi[static_cast<Eigen::Index>(t)]})
                                   : 0.5;
                    u = std::clamp(u, 1e-12, 1.0 - 1e-12);
                    ytilde(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t)) =
                        gev_quantile(u, target);
                }
            }
        }
        // (2) per-site stationary locations, (3) pooled scale-free solve
        std::vector<double> row(n), pooled;
        pooled.reserve(m * n);
        bool step_ok = true;
        for (std::size_t s = 0; s < m; ++s) {
            for (std::size_t t = 0; t < n; ++t)
                row[t] = ytilde(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t));
            double loc = gev_from_lmoments(sample_lmoments(row)).loc;
            if (!(loc > 0.0)) loc = std::max(1e-8, sample_lmoments(row).l1);
            c.beta_mu[static_cast<Eigen::Index>(s)] = loc;
            for (double v : row) pooled.push_back(v / loc);
        }
        const LMoments lm = sample_lmoments(pooled);
        const PooledLmomSolution sol = solve_pooled_lmoments(lm.l1, lm.l2);
        if (sol.ok) {
            c.beta_gamma[0] = sol.log_propscale;
            c.beta_xi[0] = sol.shape;
        } else {
            step_ok = false;
        }
        // (4) maximize the likelihood over the covariate coefficients only
        double ll;
        if (n_nonstat == 0) {
            ll = rfa_log_likelihood(y, spec, c);
            const Eigen::VectorXd packed = pack_coefficients(c);
            out.params.assign(packed.data(), packed.data() + packed.size());
            out.max_objective = ll;
            out.converged = step_ok && std::isfinite(ll);
            return out;
        }
        auto to_coeffs = [&](const std::vector<double>& v) {
            CoefficientSet cc = c;
            std::size_t k = 0;
            for (Eigen::Index j = static_cast<Eigen::Index>(m); j < cc.beta_mu.size(); ++j)
                cc.beta_mu[j] = v[k++];
            for (Eigen::Index j = 1; j < cc.beta_gamma.size(); ++j) cc.beta_gamma[j] = v[k++];
            for (Eigen::Index j = 1; j < cc.beta_xi.size(); ++j) cc.beta_xi[j] = v[k++];
            return cc;
        };
        auto objective = [&](const std::vector<double>& v) {
            for (double x : v)
                if (std::fabs(x) > 1e8) return std::numeric_limits<double>::infinity();
            return -rfa_log_likelihood(y, spec, to_coeffs(v));
        };
        std::vector<double> v0;
        for (Eigen::Index j = static_cast<Eigen::Index>(m); j < c.beta_mu.size(); ++j)
            v0.push_back(c.beta_mu[j]);
        for (Eigen::Index j = 1; j < c.beta_gamma.size(); ++j) v0.push_back(c.beta_gamma[j]);
        for (Eigen::Index j = 1; j < c.beta_xi.size(); ++j) v0.push_back(c.beta_xi[j]);
        const NmResult nm = nelder_mead(objective, v0);
        c = to_coeffs(nm.x);
        ll = -nm.fmin;
        if (loglik_trace) loglik_trace->push_back(ll);

        const Eigen::VectorXd packed = pack_coefficients(c);
        out.params.assign(packed.data(), packed.data() + packed.size());
        out.max_objective = ll;
        if (step_ok && std::isfinite(ll) && std::isfinite(prev_ll) &&
            std::fabs(ll - prev_ll) < 1e-6) {
            out.converged = true;
            return out;
        }
        prev_ll = ll;
    }
    out.converged = false;  // iteration cap; last iterate stays attached
    return out;
}

}  // namespace evt
