#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/special_functions/digamma.hpp>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "fit.hpp"
#include "gevr.hpp"
#include "numdiff.hpp"
#include "rng.hpp"

namespace evt {

struct TestOutcome {
    double statistic = 0.0;
    double p_value = 1.0;
    GevParams theta_hat;
    std::string method;
    int bootstrap_size = 0;  // 0 for asymptotic tests
    int failed_replicates = 0;
    bool unreliable = false;
};

namespace detail {

// Per-block score vectors at theta, central differences; n x 3.
inline Eigen::MatrixXd block_scores(const TopROrderSample& s, const GevParams& p) {
    Eigen::VectorXd x(3);
    x << p.loc, p.scale, p.shape;
    Eigen::MatrixXd scores(static_cast<Eigen::Index>(s.n), 3);
    for (std::size_t i = 0; i < s.n; ++i) {
        auto f = [&](const Eigen::VectorXd& th) {
            if (!(th[1] > 0.0)) return neg_inf;
            return gevr_log_pdf(s.row(i), s.r, {th[0], th[1], th[2]});
        };
        scores.row(static_cast<Eigen::Index>(i)) = num_gradient(f, x).transpose();
    }
    return scores;
}

struct ScorePieces {
    Eigen::MatrixXd scores;                            // n x 3
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es; // of the average outer product
};

inline ScorePieces score_pieces(const TopROrderSample& s, const GevParams& p) {
    ScorePieces sp;
    sp.scores = block_scores(s, p);
    if (!sp.scores.allFinite())
        throw std::domain_error("evt: score not finite; theta must be interior to the support");
    const Eigen::Matrix3d info = (sp.scores.transpose() * sp.scores) / static_cast<double>(s.n);
    sp.es.compute(info);
    const double emax = sp.es.eigenvalues().maxCoeff();
    const double emin = sp.es.eigenvalues().minCoeff();
    if (!(emax > 0.0) || !(emin > 1e-12 * emax))
        throw std::runtime_error("evt: information matrix singular (condition number " +
                                 std::to_string(emax / std::max(emin, 1e-300)) + ")");
    return sp;
}

// Marginal cdf of the j-th largest value (1-based) at one observation:
// P(X_(j) <= y) = P(Poisson(z) <= j-1) with z the Frechet-scale transform
// (1 + shape (y-loc)/scale)^(-1/shape).  Uniform(0,1) under the model.
inline double column_cdf(double y, std::size_t j, const GevParams& p) {
    const double w = (y - p.loc) / p.scale;
    double z;
    if (std::fabs(p.shape) <= shape_zero_tol) {
        z = std::exp(-w);
    } else {
        const double t = p.shape * w;
        if (t <= -1.0) return p.shape > 0.0 ? 0.0 : 1.0;
        z = std::exp(-std::log1p(t) / p.shape);
    }
    if (!(z < 700.0)) return 0.0;  // exp(-z) underflows
    double term = std::exp(-z), sum = term;
    for (std::size_t m = 1; m < j; ++m) {
        term *= z / static_cast<double>(m);
        sum += term;
    }
    return std::min(sum, 1.0);
}

// Per-block moment residual rows g_i: averages of (P1, P2, P3)(u_ij) over
// columns j in [from_col, to_col), with u_ij the marginal cdf of column j
// and P_k the shifted Legendre polynomials, which have mean zero under a
// uniform law.  The rows depend on the data only through probability
// transforms, so any root is exactly location-scale equivariant.
inline Eigen::MatrixXd pit_rows(const TopROrderSample& s, const GevParams& p,
                                std::size_t from_col, std::size_t to_col) {
    const double width = static_cast<double>(to_col - from_col);
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(s.n), 3);
    for (std::size_t i = 0; i < s.n; ++i) {
        Eigen::RowVector3d acc = Eigen::RowVector3d::Zero();
        for (std::size_t j = from_col; j < to_col; ++j) {
            const double u = column_cdf(s(i, j), j + 1, p);
            acc[0] += 2.0 * u - 1.0;
            acc[1] += (6.0 * u - 6.0) * u + 1.0;
            acc[2] += ((20.0 * u - 30.0) * u + 12.0) * u - 1.0;
        }
        rows.row(static_cast<Eigen::Index>(i)) = acc / width;
    }
    return rows;
}

inline Eigen::Vector3d pit_residual(const TopROrderSample& s, const GevParams& p) {
    return pit_rows(s, p, 0, s.r).colwise().mean();
}

// Exponent z = (1 + shape (y - loc)/scale)^(-1/shape) of the fitted cdf,
// with the limiting exp(-(y - loc)/scale) near shape zero.  Support
// violations map to the appropriate boundary value.
inline double frechet_z(double y, const GevParams& p) {
    const double w = (y - p.loc) / p.scale;
    if (std::fabs(p.shape) <= shape_zero_tol) return std::exp(-w);
    const double t = p.shape * w;
    if (t <= -1.0) return p.shape > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    return std::exp(-std::log1p(t) / p.shape);
}

// Moment conditions for the score tests, built on the spacing transforms
// u_ij = 1 - exp(-(z_ij - z_i,j-1)) with z_i0 = 0.  In the z scale the
// block's order statistics behave like arrival times of a unit-rate Poisson
// process, so under the model every u_ij is uniform and the u_ij are
// mutually independent.  The first three Legendre moments of the spacings a
// narrower model already explains (columns 1..r-1, pooled) sit next to the
// same moments of the spacing the widest column adds, giving six conditions
// (three for r = 1).  Keeping the new spacing in its own block preserves the
// between-column contrast that pooling was measured to wash out, while the
// pooled block keeps the test an omnibus check of the whole spacing
// structure.
inline Eigen::MatrixXd gap_pit_rows(const TopROrderSample& s, const GevParams& p) {
    const Eigen::Index q = s.r == 1 ? 3 : 6;
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(s.n), q);
    for (std::size_t i = 0; i < s.n; ++i) {
        Eigen::RowVector3d prefix = Eigen::RowVector3d::Zero();
        double zprev = 0.0;
        for (std::size_t j = 0; j < s.r; ++j) {
            const double z = frechet_z(s(i, j), p);
            const double u = -std::expm1(-(z - zprev));
            zprev = z;
            Eigen::RowVector3d leg;
            leg[0] = 2.0 * u - 1.0;
            leg[1] = (6.0 * u - 6.0) * u + 1.0;
            leg[2] = ((20.0 * u - 30.0) * u + 12.0) * u - 1.0;
            if (j + 1 < s.r)
                prefix += leg;
            else
                rows.row(static_cast<Eigen::Index>(i)).rightCols(3) = leg;
        }
        if (s.r > 1)
            rows.row(static_cast<Eigen::Index>(i)).leftCols(3) =
                prefix / static_cast<double>(s.r - 1);
    }
    return rows;
}

// Jacobian of the average gap moment residual in natural parameters, central
// differences.
inline Eigen::MatrixXd gap_pit_jacobian(const TopROrderSample& s, const GevParams& p) {
    const Eigen::Index q = s.r == 1 ? 3 : 6;
    Eigen::MatrixXd jac(q, 3);
    const Eigen::Vector3d x(p.loc, p.scale, p.shape);
    for (int j = 0; j < 3; ++j) {
        const double h = grad_step_rel * std::max(1.0, std::fabs(x[j]));
        Eigen::Vector3d xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        const Eigen::VectorXd rp =
            gap_pit_rows(s, {xp[0], xp[1], xp[2]}).colwise().mean();
        const Eigen::VectorXd rm =
            gap_pit_rows(s, {xm[0], xm[1], xm[2]}).colwise().mean();
        jac.col(j) = (rp - rm) / (2.0 * h);
    }
    return jac;
}

// Jacobian of the pooled moment residual, used by the moment fit's Newton
// polish.
inline Eigen::Matrix3d pit_jacobian(const TopROrderSample& s, const GevParams& p) {
    Eigen::Matrix3d jac;
    const Eigen::Vector3d x(p.loc, p.scale, p.shape);
    for (int j = 0; j < 3; ++j) {
        const double h = grad_step_rel * std::max(1.0, std::fabs(x[j]));
        Eigen::Vector3d xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        jac.col(j) = (pit_residual(s, {xp[0], xp[1], xp[2]}) -
                      pit_residual(s, {xm[0], xm[1], xm[2]})) /
                     (2.0 * h);
    }
    return jac;
}

}  // namespace detail

struct MomentFit {
    GevParams params;
    bool converged = false;
    double moment_gap = 0.0;  // worst absolute moment residual at the solution
};

// Moment-matching plug-in for the score tests: chooses theta so the fitted
// marginal probability transforms of all r columns, pooled, match the first
// three Legendre moments of a uniform variable.  Unlike the MLE this
// estimate does not zero the likelihood score, so the score statistic keeps
// a non-degenerate sampling law.  The search is constrained to parameters
// whose support contains every observation in all r columns, which the score
// evaluation requires.
inline MomentFit fit_gevr_moments(const TopROrderSample& s) {
    validate_top_r(s);
    if (s.n < 3) throw std::domain_error("evt: need at least 3 blocks");
    double first_max = s(0, 0), last_min = s(0, s.r - 1);
    for (std::size_t i = 1; i < s.n; ++i) {
        first_max = std::max(first_max, s(i, 0));
        last_min = std::min(last_min, s(i, s.r - 1));
    }
    auto feasible = [&](const GevParams& p) {
        if (!(p.scale > 0.0) || std::fabs(p.shape) > 0.9 || std::fabs(p.loc) > 1e8) return false;
        if (p.shape > shape_zero_tol && 1.0 + p.shape * (last_min - p.loc) / p.scale <= 0.0)
            return false;
        if (p.shape < -shape_zero_tol && 1.0 + p.shape * (first_max - p.loc) / p.scale <= 0.0)
            return false;
        return true;
    };
    const GevParams start = gev_feasible_start(s);
    const std::vector<double> x0{start.loc, std::log(start.scale),
                                 std::clamp(start.shape, -0.85, 0.85)};
    auto obj = [&](const std::vector<double>& x) -> double {
        if (std::fabs(x[1]) > 30.0) return std::numeric_limits<double>::infinity();
        const GevParams p{x[0], std::exp(x[1]), x[2]};
        if (!feasible(p)) return std::numeric_limits<double>::infinity();
        return detail::pit_residual(s, p).squaredNorm();
    };
    const NmResult nm = nelder_mead(obj, x0, NmOptions{});
    GevParams cur{nm.x[0], std::exp(nm.x[1]), nm.x[2]};
    // Newton polish on the moment system; the simplex search only locates the
    // root to about the square root of its function tolerance.
    Eigen::Vector3d res = detail::pit_residual(s, cur);
    for (int it = 0; it < 8 && res.squaredNorm() > 0.0; ++it) {
        const Eigen::FullPivLU<Eigen::Matrix3d> lu(detail::pit_jacobian(s, cur));
        if (!lu.isInvertible()) break;
        const Eigen::Vector3d step = lu.solve(res);
        bool moved = false;
        double damp = 1.0;
        for (int half = 0; half < 6; ++half, damp *= 0.5) {
            const GevParams cand{cur.loc - damp * step[0], cur.scale - damp * step[1],
                                 cur.shape - damp * step[2]};
            if (!feasible(cand)) continue;
            const Eigen::Vector3d res2 = detail::pit_residual(s, cand);
            if (res2.squaredNorm() < res.squaredNorm()) {
                cur = cand;
                res = res2;
                moved = true;
                break;
            }
        }
        if (!moved) break;
    }
    MomentFit out;
    out.params = cur;
    out.moment_gap = res.cwiseAbs().maxCoeff();
    out.converged = out.moment_gap <= 1e-6;
    return out;
}

// V_n = (1/n) S' I^{-1} S with S the total score and I the average outer
// product of per-block scores, both evaluated numerically at theta.
inline double score_statistic(const TopROrderSample& s, const GevParams& p) {
    validate_top_r(s);
    const detail::ScorePieces sp = detail::score_pieces(s, p);
    const Eigen::Vector3d total = sp.scores.colwise().sum();
    const Eigen::Vector3d w = sp.es.eigenvectors().transpose() * total;
    double v = 0.0;
    for (int j = 0; j < 3; ++j) v += w[j] * w[j] / sp.es.eigenvalues()[j];
    return v / static_cast<double>(s.n);
}

namespace detail {

struct MomentScore {
    double v = 0.0;       // studentized moment-score statistic
    Eigen::MatrixXd phi;  // n x q standardized influence rows
};

struct MomentPieces {
    Eigen::MatrixXd kmat;  // G H^{-1}: maps per-block scores to residual drift
    Eigen::MatrixXd root;  // Omega^{-1/2}
};

// Blocks simulated at the fitted parameters to estimate the variance
// machinery for the multiplier test.  The seed is a fixed internal constant
// (the simulation plays the role of a quadrature rule for model
// expectations), so the statistic depends on the data and the fit only.
inline constexpr std::size_t variance_sim_blocks = 20000;
inline constexpr std::uint64_t variance_sim_seed = 0x243F6A8885A308D3ull;

// Estimation-adjusted variance machinery for the moment residuals evaluated
// on `basis` at theta: psi_i = g_i - G H^{-1} S_i with G the Jacobian of the
// moment conditions, H the average score Jacobian (from the likelihood
// Hessian, not the score outer product: the two differ here since the
// support moves with the parameters) and S_i the per-block scores;
// Omega = Var(psi).  Omega^{-1/2} comes from the symmetric eigendecomposition
// with eigenvalues floored at 1e-10.
inline MomentPieces moment_pieces(const TopROrderSample& basis, const GevParams& th) {
    const double m = static_cast<double>(basis.n);
    const Eigen::MatrixXd gmat = gap_pit_rows(basis, th);
    const Eigen::MatrixXd smat = block_scores(basis, th);
    if (!gmat.allFinite() || !smat.allFinite())
        throw std::domain_error("evt: score not finite; theta must be interior to the support");
    const Eigen::MatrixXd gjac = gap_pit_jacobian(basis, th);
    Eigen::VectorXd xth(3);
    xth << th.loc, th.scale, th.shape;
    const Eigen::MatrixXd hbar =
        num_hessian(
            [&](const Eigen::VectorXd& x) {
                if (!(x[1] > 0.0)) return neg_inf;
                return gevr_log_likelihood(basis, {x[0], x[1], x[2]});
            },
            xth) /
        m;
    if (!hbar.allFinite())
        throw std::runtime_error("evt: likelihood Hessian not finite at the fit");
    const Eigen::FullPivLU<Eigen::Matrix3d> lu(hbar);
    if (!lu.isInvertible())
        throw std::runtime_error("evt: singular likelihood Hessian; score test unavailable");
    MomentPieces out;
    out.kmat = gjac * lu.inverse();
    const Eigen::MatrixXd psi = gmat - smat * out.kmat.transpose();
    const Eigen::RowVectorXd psibar = psi.colwise().mean();
    const Eigen::MatrixXd centered = psi.rowwise() - psibar;
    const Eigen::MatrixXd omega = (centered.transpose() * centered) / m;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(omega);
    const double emax = es.eigenvalues().maxCoeff();
    const double emin = es.eigenvalues().minCoeff();
    if (!(emax > 0.0) || !(emin > 1e-12 * emax))
        throw std::runtime_error("evt: information matrix singular (condition number " +
                                 std::to_string(emax / std::max(emin, 0.0)) + ")");
    Eigen::VectorXd inv_sqrt(omega.rows());
    for (Eigen::Index j = 0; j < omega.rows(); ++j)
        inv_sqrt[j] = 1.0 / std::sqrt(std::max(es.eigenvalues()[j], 1e-10));
    out.root = es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose();
    return out;
}

// Moment-score statistic V = n gbar' Omega^{-1} gbar in the averaged split
// moment residuals at theta, plus the standardized influence rows phi_i =
// Omega^{-1/2} psi_i.  The residuals are bounded functions of probability
// transforms, so V is location-scale invariant under refitting.
inline MomentScore moment_score_with(const TopROrderSample& s, const GevParams& th,
                                     const MomentPieces& pieces) {
    const Eigen::MatrixXd gmat = gap_pit_rows(s, th);
    const Eigen::MatrixXd smat = block_scores(s, th);
    if (!gmat.allFinite() || !smat.allFinite())
        throw std::domain_error("evt: score not finite; theta must be interior to the support");
    MomentScore out;
    const Eigen::VectorXd gbar = gmat.colwise().mean();
    out.v = static_cast<double>(s.n) * (pieces.root * gbar).squaredNorm();
    out.phi = (gmat - smat * pieces.kmat.transpose()) * pieces.root;
    return out;
}

// Self-contained version with the variance machinery estimated from the
// sample itself.
inline MomentScore moment_score(const TopROrderSample& s, const GevParams& th) {
    return moment_score_with(s, th, moment_pieces(s, th));
}

}  // namespace detail

// Parametric bootstrap: the moment-score statistic at the MLE, recomputed on
// L samples drawn from the fitted model with theta re-estimated on each
// draw, so the bootstrap law mirrors the sampling law.  Replicates whose
// refit fails are dropped and counted; more than 10% failures flags the
// outcome unreliable.
inline TestOutcome score_test_parametric(const TopROrderSample& s, int boot = 199,
                                         std::uint64_t seed = 1) {
    if (boot < 99) throw std::domain_error("evt: bootstrap count must be at least 99");
    const FitResult fit = fit_gevr_mle(s);
    if (!fit.converged)
        throw std::runtime_error("evt: MLE did not converge; score test unavailable");
    const GevParams th = fit.gev();
    const double v_obs = detail::moment_score(s, th).v;
    int kept = 0, exceed = 0, failed = 0;
    for (int k = 0; k < boot; ++k) {
        Rng g(derive_seed(seed, static_cast<std::uint64_t>(k)));
        const TopROrderSample rep = sample_gevr(g, s.n, s.r, th);
        try {
            const FitResult refit = fit_gevr_mle(rep);
            if (!refit.converged) {
                ++failed;
                continue;
            }
            const double v = detail::moment_score(rep, refit.gev()).v;
            ++kept;
            if (v > v_obs) ++exceed;
        } catch (const std::exception&) {
            ++failed;
        }
    }
    if (kept == 0) throw std::runtime_error("evt: every bootstrap replicate failed to refit");
    TestOutcome out;
    out.statistic = v_obs;
    out.p_value = static_cast<double>(exceed) / static_cast<double>(kept);
    out.theta_hat = th;
    out.method = "score_parametric";
    out.bootstrap_size = kept;
    out.failed_replicates = failed;
    out.unreliable = failed * 10 > boot;
    return out;
}

// Multiplier bootstrap: the MLE is computed once, on the observed data only.
// Replicates are weighted recombinations W = n^{-1/2} sum (Z_i - Zbar) phi_i
// of the standardized influence rows phi_i = Omega^{-1/2} psi_i with standard
// normal multipliers Z, so each V^(k) = W'W draws from the asymptotic law of
// the observed statistic at a fraction of the parametric bootstrap's cost.
// The variance machinery is estimated from blocks simulated at the fitted
// parameters: a studentizer built from the observed blocks is correlated
// with the observed residuals and over-rejects in small samples.
inline TestOutcome score_test_multiplier(const TopROrderSample& s, int boot = 1000,
                                         std::uint64_t seed = 1) {
    if (boot < 99) throw std::domain_error("evt: bootstrap count must be at least 99");
    const FitResult fit = fit_gevr_mle(s);
    if (!fit.converged)
        throw std::runtime_error("evt: MLE did not converge; score test unavailable");
    const GevParams th = fit.gev();
    validate_top_r(s);
    Rng sim(detail::variance_sim_seed);
    const TopROrderSample basis = sample_gevr(sim, detail::variance_sim_blocks, s.r, th);
    const detail::MomentScore ms =
        detail::moment_score_with(s, th, detail::moment_pieces(basis, th));

    const double n = static_cast<double>(s.n);
    int exceed = 0;
    std::vector<double> z(s.n);
    for (int k = 0; k < boot; ++k) {
        Rng g(derive_seed(seed, static_cast<std::uint64_t>(k)));
        double zbar = 0.0;
        for (std::size_t i = 0; i < s.n; ++i) {
            z[i] = rnorm(g);
            zbar += z[i];
        }
        zbar /= n;
        Eigen::VectorXd wn = Eigen::VectorXd::Zero(ms.phi.cols());
        for (std::size_t i = 0; i < s.n; ++i)
            wn += (z[i] - zbar) * ms.phi.row(static_cast<Eigen::Index>(i)).transpose();
        wn /= std::sqrt(n);
        if (wn.squaredNorm() > ms.v) ++exceed;
    }
    TestOutcome out;
    out.statistic = ms.v;
    out.p_value = static_cast<double>(exceed) / static_cast<double>(boot);
    out.theta_hat = th;
    out.method = "score_multiplier";
    out.bootstrap_size = boot;
    return out;
}

// Population mean of the per-block entropy difference under the null.
inline double ed_eta(std::size_t r, double scale, double shape) {
    check_scale(scale);
    return -std::log(scale) - 1.0 + (1.0 + shape) * boost::math::digamma(static_cast<double>(r));
}

// T_n = sqrt(n) (Dbar_r - eta_r) / S_D where D_i is the drop in block
// log-density from widening r-1 to r columns; uses only those two columns.
inline double entropy_difference_statistic(const TopROrderSample& s, const GevParams& p) {
    validate_top_r(s);
    if (s.r < 2) throw std::domain_error("evt: entropy difference needs r >= 2");
    check_scale(p.scale);
    const double log_scale = std::log(p.scale);
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t i = 0; i < s.n; ++i) {
        const double z_prev = (s(i, s.r - 2) - p.loc) / p.scale;
        const double z_last = (s(i, s.r - 1) - p.loc) / p.scale;
        double d;
        if (std::fabs(p.shape) <= shape_zero_tol) {
            d = -log_scale - std::exp(-z_last) + std::exp(-z_prev) - z_last;
        } else {
            const double w_prev = p.shape * z_prev;
            const double w_last = p.shape * z_last;
            if (w_prev <= -1.0 || w_last <= -1.0)
                throw std::domain_error("evt: observation outside support");
            const double t_prev = std::exp(-std::log1p(w_prev) / p.shape);
            const double t_last = std::exp(-std::log1p(w_last) / p.shape);
            d = -log_scale - t_last + t_prev - (1.0 / p.shape + 1.0) * std::log1p(w_last);
        }
        sum += d;
        sumsq += d * d;
    }
    const double n = static_cast<double>(s.n);
    const double mean = sum / n;
    const double var = (sumsq - n * mean * mean) / (n - 1.0);
    if (!(var > 0.0)) throw std::domain_error("evt: degenerate entropy differences");
    return std::sqrt(n) * (mean - ed_eta(s.r, p.scale, p.shape)) / std::sqrt(var);
}

// Entropy-difference test with the full-sample MLE plugged in; two-sided
// normal p-value.  A shape at or below -0.5 voids the limit theorem, so the
// outcome is flagged rather than suppressed.
inline TestOutcome ed_test(const TopROrderSample& s) {
    const FitResult fit = fit_gevr_mle(s);
    if (!fit.converged) throw std::runtime_error("evt: MLE did not converge; ED test unavailable");
    TestOutcome out;
    out.theta_hat = fit.gev();
    out.statistic = entropy_difference_statistic(s, out.theta_hat);
    out.p_value = std::erfc(std::fabs(out.statistic) / std::sqrt(2.0));
    out.method = "ed";
    out.unreliable = fit.shape_warning;
    return out;
}

}  // namespace evt
