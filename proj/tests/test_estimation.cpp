#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "evt/fit.hpp"
#include "evt/lmoments.hpp"
#include "evt/neldermead.hpp"

using namespace evt;

TEST_CASE("nelder-mead minimizes standard test functions") {
    auto rosenbrock = [](const std::vector<double>& x) {
        const double a = 1.0 - x[0];
        const double b = x[1] - x[0] * x[0];
        return a * a + 100.0 * b * b;
    };
    const NmResult r = nelder_mead(rosenbrock, {-1.2, 1.0});
    REQUIRE(r.converged);
    REQUIRE(std::fabs(r.x[0] - 1.0) < 1e-5);
    REQUIRE(std::fabs(r.x[1] - 1.0) < 1e-5);

    auto quad = [](const std::vector<double>& x) {
        double s = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) s += (x[j] - 2.0) * (x[j] - 2.0) * (1.0 + j);
        return s;
    };
    const NmResult q = nelder_mead(quad, {10.0, -5.0, 0.0, 3.0});
    REQUIRE(q.converged);
    for (double v : q.x) REQUIRE(std::fabs(v - 2.0) < 1e-5);
}

TEST_CASE("sample L-moments on fixed vectors") {
    const LMoments two = sample_lmoments({0.0, 1.0});
    REQUIRE(std::fabs(two.l1 - 0.5) < 1e-15);
    REQUIRE(std::fabs(two.l2 - 0.5) < 1e-15);
    const LMoments four = sample_lmoments({4.0, 1.0, 3.0, 2.0});
    REQUIRE(std::fabs(four.l1 - 2.5) < 1e-14);
    REQUIRE(std::fabs(four.l2 - 5.0 / 6.0) < 1e-14);
    REQUIRE(std::fabs(four.l3 - 0.0) < 1e-14);
    const LMoments flat = sample_lmoments({2.0, 2.0, 2.0});
    REQUIRE(flat.l2 == 0.0);
    REQUIRE_THROWS_AS(sample_lmoments({1.0}), std::domain_error);
}

TEST_CASE("sample L-moments approach population values") {
    Rng g(11);
    std::vector<double> x(20000);
    for (double& v : x) v = gev_quantile(runif(g), {0.0, 1.0, 0.0});
    const LMoments lm = sample_lmoments(x);
    REQUIRE(std::fabs(lm.l1 - euler_gamma) < 0.02);
    REQUIRE(std::fabs(lm.l2 - std::log(2.0)) < 0.02);
}

TEST_CASE("L-moment parameter maps invert population values") {
    // Gumbel(0,1): the t3 inversion is exact at shape 0
    LMoments lm;
    lm.l1 = euler_gamma;
    lm.l2 = std::log(2.0);
    lm.t3 = 2.0 * std::log(3.0) / std::log(2.0) - 3.0;
    const GevParams p = gev_from_lmoments(lm);
    REQUIRE(std::fabs(p.loc) < 1e-12);
    REQUIRE(std::fabs(p.scale - 1.0) < 1e-12);
    REQUIRE(std::fabs(p.shape) < 1e-12);

    // GPD(2, 0.25): population L-moments are exactly invertible
    LMoments gl;
    gl.l1 = 8.0 / 3.0;
    gl.l2 = 32.0 / 21.0;
    const GpdParams gp = gpd_from_lmoments(gl);
    REQUIRE(std::fabs(gp.scale - 2.0) < 1e-12);
    REQUIRE(std::fabs(gp.shape - 0.25) < 1e-12);
}

TEST_CASE("scale-free pooled L-moment solver round trips") {
    // population values computed from (g0, x0) = (-1.041, -0.0186)
    const double l1 = 1.1974285191265224;
    const double l2 = 0.24065125198408709;
    const PooledLmomSolution sol = solve_pooled_lmoments(l1, l2);
    REQUIRE(sol.ok);
    REQUIRE(std::fabs(sol.log_propscale - (-1.041)) < 1e-8);
    REQUIRE(std::fabs(sol.shape - (-0.0186)) < 1e-8);

    // continuity across shape = 0
    auto roundtrip = [](double g0, double x0) {
        const double e = std::exp(g0);
        return solve_pooled_lmoments(1.0 - e * lm_a(x0), e * lm_b(x0));
    };
    const PooledLmomSolution up = roundtrip(-1.0, 1e-6);
    const PooledLmomSolution dn = roundtrip(-1.0, -1e-6);
    REQUIRE(up.ok);
    REQUIRE(dn.ok);
    REQUIRE(std::fabs(up.shape - dn.shape) < 1e-4);
    REQUIRE(std::fabs(up.log_propscale - dn.log_propscale) < 1e-4);

    REQUIRE_FALSE(solve_pooled_lmoments(1.0, -0.5).ok);
    REQUIRE_FALSE(solve_pooled_lmoments(1.0, 0.0).ok);
}

TEST_CASE("gevr MLE recovers truth on synthetic data") {
    Rng g(1234);
    const auto s = sample_gevr(g, 5000, 2, {0.0, 1.0, 0.25});
    const FitResult fr = fit_gevr_mle(s);
    REQUIRE(fr.converged);
    REQUIRE(fr.covariance_ok);
    const double truth[3] = {0.0, 1.0, 0.25};
    for (int j = 0; j < 3; ++j) {
        const double se = std::sqrt(fr.covariance(j, j));
        REQUIRE(se > 0.0);
        REQUIRE(std::fabs(fr.params[j] - truth[j]) < 3.0 * se);
    }
    REQUIRE(std::fabs(fr.max_objective - gevr_log_likelihood(s, fr.gev())) < 1e-9);
    REQUIRE(fr.max_objective >= gevr_log_likelihood(s, {0.0, 1.0, 0.25}));
}

TEST_CASE("gevr MLE edge cases") {
    TopROrderSample two(2, 1);
    two(0, 0) = 1.0;
    two(1, 0) = 2.0;
    REQUIRE_THROWS_AS(fit_gevr_mle(two), std::domain_error);
    TopROrderSample flat(5, 1);
    for (std::size_t i = 0; i < 5; ++i) flat(i, 0) = 3.0;
    REQUIRE_THROWS_AS(fit_gevr_mle(flat), std::domain_error);

    // r = 1 column fit equals a plain GEV fit
    Rng g(99);
    const auto s = sample_gevr(g, 300, 3, {1.0, 2.0, 0.1});
    const auto col = s.head_columns(1);
    std::vector<double> maxima(s.n);
    for (std::size_t i = 0; i < s.n; ++i) maxima[i] = s(i, 0);
    const FitResult a = fit_gevr_mle(col);
    const FitResult b = fit_gev_mle(maxima);
    for (int j = 0; j < 3; ++j) REQUIRE(std::fabs(a.params[j] - b.params[j]) < 1e-8);
}

TEST_CASE("gevr MLE is location-scale equivariant") {
    Rng g(7);
    const auto s = sample_gevr(g, 500, 2, {0.0, 1.0, 0.1});
    TopROrderSample t = s;
    for (double& v : t.values) v = 2.0 * v + 3.0;
    const FitResult fa = fit_gevr_mle(s);
    const FitResult fb = fit_gevr_mle(t);
    REQUIRE(std::fabs(fb.params[0] - (2.0 * fa.params[0] + 3.0)) < 1e-4 * 10);
    REQUIRE(std::fabs(fb.params[1] - 2.0 * fa.params[1]) < 1e-4 * 10);
    REQUIRE(std::fabs(fb.params[2] - fa.params[2]) < 1e-4 * 10);
}

TEST_CASE("gpd MLE recovers truth") {
    Rng g(17);
    std::vector<double> x(5000);
    for (double& v : x) v = sample_gpd(g, {1.0, 0.0});
    const FitResult fr = fit_gpd_mle(x);
    REQUIRE(fr.converged);
    REQUIRE(fr.covariance_ok);
    REQUIRE(std::fabs(fr.params[1]) < 3.0 * std::sqrt(fr.covariance(1, 1)));

    std::vector<double> y(10000);
    for (double& v : y) v = sample_gpd(g, {1.0, 0.25});
    const FitResult f2 = fit_gpd_mle(y);
    REQUIRE(f2.converged);
    REQUIRE(std::fabs(f2.params[0] - 1.0) < 3.0 * std::sqrt(f2.covariance(0, 0)));
    REQUIRE(std::fabs(f2.params[1] - 0.25) < 3.0 * std::sqrt(f2.covariance(1, 1)));

    REQUIRE_THROWS_AS(fit_gpd_mle({1.0, 2.0, 3.0}), std::domain_error);
    REQUIRE_THROWS_AS(fit_gpd_mle({1.0, 2.0, 3.0, -0.5, 4.0}), std::domain_error);
    REQUIRE_THROWS_AS(fit_gpd_mle({2.0, 2.0, 2.0, 2.0, 2.0}), std::domain_error);
}

TEST_CASE("mps matches mle asymptotically and survives ties") {
    Rng g(23);
    std::vector<double> x(10000);
    for (double& v : x) v = sample_gpd(g, {1.0, 0.25});
    const FitResult mle = fit_gpd_mle(x);
    const FitResult mps = fit_mps(x, DistFamily::gpd);
    REQUIRE(mps.converged);
    REQUIRE(std::fabs(mps.params[0] - mle.params[0]) < 0.05);
    REQUIRE(std::fabs(mps.params[1] - mle.params[1]) < 0.05);

    // exact tie keeps the objective finite
    std::vector<double> tied(x.begin(), x.begin() + 200);
    tied[10] = tied[20];
    const FitResult ft = fit_mps(tied, DistFamily::gpd);
    REQUIRE(std::isfinite(ft.max_objective));
    REQUIRE(ft.converged);
}

TEST_CASE("mps works at tiny n and for gev family") {
    Rng g(31);
    std::vector<double> five(5);
    for (double& v : five) v = sample_gev(g, {0.0, 1.0, 0.1});
    const FitResult fr = fit_mps(five, DistFamily::gev);
    REQUIRE(std::isfinite(fr.max_objective));
    for (double v : fr.params) REQUIRE(std::isfinite(v));

    std::vector<double> x(2000);
    for (double& v : x) v = sample_gev(g, {0.0, 1.0, 0.25});
    const FitResult big = fit_mps(x, DistFamily::gev);
    REQUIRE(big.converged);
    REQUIRE(std::fabs(big.params[0] - 0.0) < 0.1);
    REQUIRE(std::fabs(big.params[1] - 1.0) < 0.1);
    REQUIRE(std::fabs(big.params[2] - 0.25) < 0.1);
}

TEST_CASE("mps handles shapes where the MLE does not exist") {
    Rng g(41);
    std::vector<double> x(400);
    for (double& v : x) v = sample_gpd(g, {1.0, -1.5});
    const FitResult fr = fit_mps(x, DistFamily::gpd);
    REQUIRE(std::isfinite(fr.max_objective));
    REQUIRE(fr.params[1] < -0.9);
    REQUIRE(fr.shape_warning);
}

TEST_CASE("moran objective weights spacings by multiplicity") {
    // uniform cdf on [0,1]: unique data {0.25, 0.5} with 0.5 doubled
    const std::vector<double> data{0.25, 0.5, 0.5};
    const double m = moran_objective(data, [](double y) { return y; });
    // spacings 0.25 (w=1), 0.25 (w=2), 0.5 (w=1): weights sum to n+1 = 4
    const double expect = -std::log(0.25) - 2.0 * std::log(0.25) - std::log(0.5);
    REQUIRE(std::fabs(m - expect) < 1e-14);
}
