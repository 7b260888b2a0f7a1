#pragma once

#include <Eigen/Dense>
#include <cmath>

namespace evt {

// Central-difference steps: eps^(1/3) for gradients, eps^(1/4) for Hessians.
inline constexpr double grad_step_rel = 6.05545445239334e-6;
inline constexpr double hess_step_rel = 1.22070312500000e-4;

template <class F>
Eigen::VectorXd num_gradient(F&& f, const Eigen::VectorXd& x) {
    const Eigen::Index d = x.size();
    Eigen::VectorXd g(d);
    Eigen::VectorXd xp = x;
    for (Eigen::Index j = 0; j < d; ++j) {
        const double h = grad_step_rel * std::max(1.0, std::fabs(x[j]));
        const double orig = x[j];
        xp[j] = orig + h;
        const double fp = f(xp);
        xp[j] = orig - h;
        const double fm = f(xp);
        xp[j] = orig;
        g[j] = (fp - fm) / (2.0 * h);
    }
    return g;
}

template <class F>
Eigen::MatrixXd num_hessian(F&& f, const Eigen::VectorXd& x) {
    const Eigen::Index d = x.size();
    Eigen::MatrixXd h_mat(d, d);
    Eigen::VectorXd hs(d);
    for (Eigen::Index j = 0; j < d; ++j) hs[j] = hess_step_rel * std::max(1.0, std::fabs(x[j]));
    const double f0 = f(x);
    Eigen::VectorXd xp = x;
    for (Eigen::Index j = 0; j < d; ++j) {
        xp[j] = x[j] + hs[j];
        const double fp = f(xp);
        xp[j] = x[j] - hs[j];
        const double fm = f(xp);
        xp[j] = x[j];
        h_mat(j, j) = (fp - 2.0 * f0 + fm) / (hs[j] * hs[j]);
    }
    for (Eigen::Index j = 0; j < d; ++j) {
        for (Eigen::Index k = j + 1; k < d; ++k) {
            xp[j] = x[j] + hs[j]; xp[k] = x[k] + hs[k];
            const double fpp = f(xp);
            xp[k] = x[k] - hs[k];
            const double fpm = f(xp);
            xp[j] = x[j] - hs[j]; xp[k] = x[k] + hs[k];
            const double fmp = f(xp);
            xp[k] = x[k] - hs[k];
            const double fmm = f(xp);
            xp[j] = x[j]; xp[k] = x[k];
            const double v = (fpp - fpm - fmp + fmm) / (4.0 * hs[j] * hs[k]);
            h_mat(j, k) = v;
            h_mat(k, j) = v;
        }
    }
    return h_mat;
}

}  // namespace evt
