#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace evt {

struct NmOptions {
    double ftol = 1e-10;      // relative spread of simplex values at convergence
    int max_iter = 0;         // 0 means 600 * dimension
    int restarts = 2;         // extra runs from the incumbent with a fresh simplex
    double init_step = 0.1;   // first-run simplex edge, relative to max(|x_j|, 1)
};

struct NmResult {
    std::vector<double> x;
    double fmin = std::numeric_limits<double>::infinity();
    bool converged = false;
    int iterations = 0;
};

namespace detail {

template <class F>
double nm_eval(F& f, const std::vector<double>& x) {
    const double v = f(x);
    return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
}

template <class F>
NmResult nelder_mead_single(F& f, const std::vector<double>& x0, double step_rel,
                            const NmOptions& opt) {
    const std::size_t d = x0.size();
    const int max_iter = opt.max_iter > 0 ? opt.max_iter : 600 * static_cast<int>(d);

    std::vector<std::vector<double>> pts(d + 1, x0);
    std::vector<double> fv(d + 1);
    for (std::size_t j = 0; j < d; ++j)
        pts[j + 1][j] += step_rel * std::max(std::fabs(x0[j]), 1.0);
    for (std::size_t i = 0; i <= d; ++i) fv[i] = nm_eval(f, pts[i]);

    std::vector<std::size_t> order(d + 1);
    std::vector<double> centroid(d), cand(d);
    NmResult res;
    for (int it = 0; it < max_iter; ++it) {
        res.iterations = it;
        for (std::size_t i = 0; i <= d; ++i) order[i] = i;
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
        const std::size_t best = order[0], worst = order[d], second = order[d - 1];

        if (std::isfinite(fv[best]) && std::isfinite(fv[worst]) &&
            std::fabs(fv[worst] - fv[best]) <= opt.ftol * std::max(1.0, std::fabs(fv[best]))) {
            res.converged = true;
            break;
        }

        for (std::size_t j = 0; j < d; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i <= d; ++i)
                if (i != worst) s += pts[i][j];
            centroid[j] = s / static_cast<double>(d);
        }

        auto blend = [&](double coef) {
            for (std::size_t j = 0; j < d; ++j)
                cand[j] = centroid[j] + coef * (pts[worst][j] - centroid[j]);
            return nm_eval(f, cand);
        };

        const double fr = blend(-1.0);  // reflection
        if (fr < fv[order[0]]) {
            const double saved_fr = fr;
            std::vector<double> refl = cand;
            const double fe = blend(-2.0);  // expansion
            if (fe < saved_fr) {
                pts[worst] = cand;
                fv[worst] = fe;
            } else {
                pts[worst] = refl;
                fv[worst] = saved_fr;
            }
        } else if (fr < fv[second]) {
            pts[worst] = cand;
            fv[worst] = fr;
        } else {
            const double fc = fr < fv[worst] ? blend(-0.5) : blend(0.5);
            if (fc < std::min(fr, fv[worst])) {
                pts[worst] = cand;
                fv[worst] = fc;
            } else {  // shrink toward the best point
                for (std::size_t i = 0; i <= d; ++i) {
                    if (i == best) continue;
                    for (std::size_t j = 0; j < d; ++j)
                        pts[i][j] = pts[best][j] + 0.5 * (pts[i][j] - pts[best][j]);
                    fv[i] = nm_eval(f, pts[i]);
                }
            }
        }
    }
    std::size_t ib = 0;
    for (std::size_t i = 1; i <= d; ++i)
        if (fv[i] < fv[ib]) ib = i;
    res.x = pts[ib];
    res.fmin = fv[ib];
    return res;
}

}  // namespace detail

// Derivative-free simplex minimizer.  After the first run converges (or runs
// out of iterations) the search restarts from the incumbent with a smaller
// simplex; the best point across runs is returned.
template <class F>
NmResult nelder_mead(F f, std::vector<double> x0, NmOptions opt = {}) {
    NmResult best = detail::nelder_mead_single(f, x0, opt.init_step, opt);
    double step = opt.init_step;
    for (int r = 0; r < opt.restarts; ++r) {
        step *= 0.35;
        NmResult next = detail::nelder_mead_single(f, best.x, step, opt);
        if (next.fmin <= best.fmin) {
            next.converged = next.converged || best.converged;
            best = std::move(next);
        }
    }
    return best;
}

}  // namespace evt
