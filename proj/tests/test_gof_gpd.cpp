#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <random>
#include <vector>

#include "evt/gof_gpd.hpp"

using namespace evt;

namespace {

// Synthetic table whose critical values are exactly exponential in -log p:
// c = a + b * (-log p). Interpolation is then exact at every point and the
// tail slope is 1/b, so every p-value rule can be checked in closed form.
NullTable synthetic_table() {
    NullTable t;
    t.shape_grid = {0.0, 0.5};
    t.percentile_grid = {0.999, 0.995, 0.99,  0.975, 0.95,  0.9,   0.85, 0.8,  0.75,
                         0.7,   0.65,  0.6,   0.55,  0.5,   0.45,  0.4,  0.35, 0.3,
                         0.25,  0.2,   0.15,  0.1,   0.09,  0.08,  0.07, 0.06, 0.05,
                         0.04,  0.03,  0.02,  0.015, 0.01,  0.005, 0.0025, 0.001};
    t.fit_failures = {3, 0};
    t.mc_replicates = 12345;
    t.mc_sample_size = 600;
    t.seed = 7;
    const std::size_t np = t.percentile_grid.size();
    t.critical_values.resize(2 * 2 * np);
    const double a[2] = {0.1, 0.2};   // per shape row
    const double b[2] = {0.5, 0.45};  // per shape row
    for (std::size_t stat = 0; stat < 2; ++stat)
        for (std::size_t si = 0; si < 2; ++si)
            for (std::size_t j = 0; j < np; ++j) {
                const double ell = -std::log(t.percentile_grid[j]);
                const double scale = stat == 0 ? 1.0 : 0.1;  // CvM stats are smaller
                t.critical_values[(stat * 2 + si) * np + j] = scale * (a[si] + b[si] * ell);
            }
    return t;
}

std::vector<double> gpd_sample(std::uint64_t seed, std::size_t n, const GpdParams& p) {
    Rng g(seed);
    std::vector<double> y(n);
    for (auto& v : y) v = sample_gpd(g, p);
    return y;
}

}  // namespace

TEST_CASE("tail statistics match hand-computed values") {
    const GpdParams theta{1.0, 0.25};
    // Single observation placed exactly at the median: z = 0.5 is also the
    // minimizing configuration for n = 1.
    const std::vector<double> one{gpd_quantile(0.5, theta)};
    REQUIRE(std::fabs(ad_statistic(one, theta) - (2.0 * std::log(2.0) - 1.0)) < 1e-12);
    REQUIRE(std::fabs(cvm_statistic(one, theta) - 1.0 / 12.0) < 1e-12);
    const std::vector<double> quarter{gpd_quantile(0.25, theta)};
    REQUIRE(std::fabs(cvm_statistic(quarter, theta) - (1.0 / 12.0 + 0.0625)) < 1e-12);

    // Perfectly spaced z_(i) = (2i-1)/(2n) at n = 10, against an independent
    // high-precision evaluation of the definition.
    std::vector<double> spaced(10);
    for (int i = 0; i < 10; ++i)
        spaced[static_cast<std::size_t>(i)] = gpd_quantile((2.0 * i + 1.0) / 20.0, theta);
    REQUIRE(std::fabs(ad_statistic(spaced, theta) - 0.076579714075570834) < 1e-10);
    REQUIRE(std::fabs(cvm_statistic(spaced, theta) - 1.0 / 120.0) < 1e-12);

    // Order of the input does not matter.
    std::vector<double> shuffled = spaced;
    std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937{3});
    REQUIRE(ad_statistic(shuffled, theta) == ad_statistic(spaced, theta));
    REQUIRE(cvm_statistic(shuffled, theta) == cvm_statistic(spaced, theta));
}

TEST_CASE("probability transforms at the support edge are clamped and counted") {
    const GpdParams theta{1.0, -0.5};  // upper endpoint at 2
    const std::vector<double> y{0.5, 1.0, 2.0, 3.0};
    std::size_t clamped = 0;
    const double a = ad_statistic(y, theta, &clamped);
    REQUIRE(clamped == 2);  // the two observations at or past the endpoint
    REQUIRE(std::isfinite(a));
    clamped = 0;
    const double w = cvm_statistic(y, theta, &clamped);
    REQUIRE(clamped == 2);
    REQUIRE(std::isfinite(w));
    REQUIRE(w >= 1.0 / (12.0 * 4.0));
}

TEST_CASE("table p-values interpolate log-linearly with an anchored tail") {
    const NullTable t = synthetic_table();
    const std::size_t np = t.percentile_grid.size();

    // Exactly at a node the p-value is the node's tail probability.
    const double c05 = t.critical(TailStat::anderson_darling, 0, 26);
    REQUIRE(t.percentile_grid[26] == 0.05);
    REQUIRE(std::fabs(ad_cvm_pvalue(c05, 0.0, t, TailStat::anderson_darling) - 0.05) < 1e-12);

    // The synthetic rows are exactly exponential, so interior points also
    // reproduce p = exp(-(c - a)/b).
    const double mid = 0.1 + 0.5 * 1.7;
    REQUIRE(std::fabs(ad_cvm_pvalue(mid, 0.0, t, TailStat::anderson_darling) -
                      std::exp(-1.7)) < 1e-12);

    // A shape midway between grid rows gives a p-value between the two
    // single-row values.
    const double stat = 1.3;
    const double p0 = ad_cvm_pvalue(stat, 0.0, t, TailStat::anderson_darling);
    const double p1 = ad_cvm_pvalue(stat, 0.5, t, TailStat::anderson_darling);
    const double pm = ad_cvm_pvalue(stat, 0.25, t, TailStat::anderson_darling);
    REQUIRE(pm > std::min(p0, p1));
    REQUIRE(pm < std::max(p0, p1));

    // Below the table the p-value clamps to 0.999.
    REQUIRE(ad_cvm_pvalue(0.0, 0.0, t, TailStat::anderson_darling) == 0.999);

    // Above the table: exponential tail, anchored at the 0.001 node with the
    // least-squares slope of -log p on the critical values over the
    // 0.05..0.001 window. Reproduce that regression by hand on the stored row.
    const double c001 = t.critical(TailStat::anderson_darling, 0, np - 1);
    const double x = 2.0 * c001;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int m = 0;
    for (std::size_t j = 0; j < np; ++j) {
        if (t.percentile_grid[j] > 0.05 || t.percentile_grid[j] < 0.001) continue;
        const double cj = t.critical(TailStat::anderson_darling, 0, j);
        const double lj = -std::log(t.percentile_grid[j]);
        sx += cj;
        sy += lj;
        sxx += cj * cj;
        sxy += cj * lj;
        ++m;
    }
    const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    const double expect = std::exp(-(-std::log(0.001) + slope * (x - c001)));
    const double got = ad_cvm_pvalue(x, 0.0, t, TailStat::anderson_darling);
    REQUIRE(got < 0.001);
    REQUIRE(std::fabs(got - expect) < 1e-15);
    REQUIRE(std::fabs(slope - 2.0) < 1e-12);  // synthetic row has b = 0.5

    // Strictly decreasing across the whole table + tail range.
    const double lo = t.critical(TailStat::cramer_von_mises, 0, 0);
    double prev = ad_cvm_pvalue(lo, 0.1, t, TailStat::cramer_von_mises);
    for (int i = 1; i <= 400; ++i) {
        const double xi = lo + (4.0 * c001 * 0.1 - lo) * i / 400.0;
        const double p = ad_cvm_pvalue(xi, 0.1, t, TailStat::cramer_von_mises);
        REQUIRE(p < prev);
        prev = p;
    }

    // Shapes outside the grid are an explicit error.
    REQUIRE_THROWS_AS(ad_cvm_pvalue(1.0, 0.6, t, TailStat::anderson_darling),
                      std::domain_error);
}

TEST_CASE("null table serialization round-trips and detects corruption") {
    const NullTable t = synthetic_table();
    const std::string buf = serialize_null_table(t);
    const NullTable r =
        parse_null_table(reinterpret_cast<const unsigned char*>(buf.data()), buf.size());
    REQUIRE(r.shape_grid == t.shape_grid);
    REQUIRE(r.percentile_grid == t.percentile_grid);
    REQUIRE(r.fit_failures == t.fit_failures);
    REQUIRE(r.critical_values == t.critical_values);
    REQUIRE(r.mc_replicates == t.mc_replicates);
    REQUIRE(r.mc_sample_size == t.mc_sample_size);
    REQUIRE(r.seed == t.seed);
    REQUIRE(serialize_null_table(r) == buf);

    std::string bad = buf;
    bad[40] = static_cast<char>(bad[40] ^ 0x01);
    REQUIRE_THROWS_AS(parse_null_table(reinterpret_cast<const unsigned char*>(bad.data()),
                                       bad.size()),
                      std::runtime_error);
    REQUIRE_THROWS_AS(parse_null_table(reinterpret_cast<const unsigned char*>(buf.data()),
                                       buf.size() - 8),
                      std::runtime_error);

    REQUIRE_THROWS_AS(build_null_table(9999, 1000, 1), std::domain_error);
    REQUIRE_THROWS_AS(build_null_table(10000, 499, 1), std::domain_error);
}

TEST_CASE("tail test wrappers pick the table or fall back to the bootstrap") {
    const NullTable t = synthetic_table();
    const auto y = gpd_sample(11, 200, {1.0, 0.25});
    const GpdTestOutcome ad = ad_test(y, t);
    REQUIRE(ad.method == "ad_table");
    REQUIRE(!ad.bootstrap_fallback);
    REQUIRE(ad.p_value > 0.0);
    REQUIRE(ad.p_value <= 0.999);
    REQUIRE(std::fabs(ad.statistic - ad_statistic(y, ad.theta_hat)) < 1e-15);

    const GpdTestOutcome cv = cvm_test(y, t);
    REQUIRE(cv.method == "cvm_table");
    REQUIRE(cv.statistic < ad.statistic);

    // A very heavy tail pushes the fitted shape above the table range and
    // triggers the parametric bootstrap.
    const auto heavy = gpd_sample(13, 150, {1.0, 1.6});
    const GpdTestOutcome fb = ad_test(heavy, t, 99, 5);
    REQUIRE(fb.bootstrap_fallback);
    REQUIRE(fb.method == "ad_bootstrap");
    REQUIRE(fb.theta_hat.shape > 1.0);
    REQUIRE(fb.bootstrap_size + fb.failed_replicates == 99);
    REQUIRE(fb.p_value >= 0.0);
    REQUIRE(fb.p_value <= 1.0);
    const GpdTestOutcome fb2 = ad_test(heavy, t, 99, 5);
    REQUIRE(fb2.p_value == fb.p_value);  // deterministic given the seed
}

TEST_CASE("moran normalization constants match the printed formulas") {
    // (n+1)(log(n+1) + gamma) - 1/2 - 1/(12(n+1)) at n = 1.
    REQUIRE(std::fabs(moran_mean(1) - 1.9990590242562897) < 1e-14);
    REQUIRE(std::fabs(moran_variance(1) - 0.70653480036311954) < 1e-14);
}

TEST_CASE("moran test holds its size on null GPD data") {
    int reject = 0, done = 0;
    for (int rep = 0; rep < 1000; ++rep) {
        const auto y = gpd_sample(derive_seed(8101, static_cast<std::uint64_t>(rep)), 50,
                                  {1.0, 0.25});
        try {
            const GpdTestOutcome out = moran_test(y);
            ++done;
            if (out.p_value < 0.05) ++reject;
        } catch (const std::exception&) {
        }
    }
    REQUIRE(done >= 950);
    const double size = static_cast<double>(reject) / done;
    REQUIRE(size > 0.035);  // paper reports 5.5% on this cell
    REQUIRE(size < 0.075);
}

TEST_CASE("piecewise-shape score test holds its size on null GPD data") {
    int reject = 0, done = 0;
    for (int rep = 0; rep < 1000; ++rep) {
        const auto y = gpd_sample(derive_seed(8102, static_cast<std::uint64_t>(rep)), 100,
                                  {1.0, 0.25});
        try {
            const GpdTestOutcome out = rao_score_test(y);
            ++done;
            if (out.p_value < 0.05) ++reject;
        } catch (const std::exception&) {
        }
    }
    REQUIRE(done >= 900);
    const double size = static_cast<double>(reject) / done;
    REQUIRE(size > 0.03);  // paper reports 5.0% on this cell
    REQUIRE(size < 0.07);
}

TEST_CASE("score test rejects a mixture of shapes") {
    // Half GPD(1,-0.4), half GPD(1,0.4): the paper reports 63.8% power at
    // n = 400; with 200 replicates allow a wide band around it.
    int reject = 0, done = 0;
    for (int rep = 0; rep < 200; ++rep) {
        Rng g(derive_seed(8103, static_cast<std::uint64_t>(rep)));
        std::vector<double> y(400);
        for (auto& v : y)
            v = sample_gpd(g, runif(g) < 0.5 ? GpdParams{1.0, -0.4} : GpdParams{1.0, 0.4});
        try {
            const GpdTestOutcome out = rao_score_test(y);
            ++done;
            if (out.p_value < 0.05) ++reject;
        } catch (const std::exception&) {
        }
    }
    REQUIRE(done >= 180);
    const double power = static_cast<double>(reject) / done;
    REQUIRE(power > 0.45);
    REQUIRE(power < 0.85);
}

TEST_CASE("score test degenerate partitions are errors") {
    // Top half of the data tied at the maximum: the interval above the top
    // threshold is empty.
    const std::vector<double> tied{1.0, 2.0, 3.0, 4.0, 9.0, 9.0, 9.0, 9.0, 9.0, 9.0};
    REQUIRE_THROWS_AS(rao_score_test(tied, 1), std::domain_error);
    REQUIRE_THROWS_AS(rao_score_test(gpd_sample(21, 100, {1.0, 0.1}), 0), std::domain_error);
}

TEST_CASE("all four tests are scale invariant") {
    const auto y = gpd_sample(31, 200, {2.3, 0.1});
    std::vector<double> scaled = y;
    for (auto& v : scaled) v *= 1000.0;

    const FitResult f1 = fit_gpd_mle(y);
    const FitResult f2 = fit_gpd_mle(scaled);
    REQUIRE(std::fabs(ad_statistic(y, f1.gpd()) - ad_statistic(scaled, f2.gpd())) < 1e-3);
    REQUIRE(std::fabs(cvm_statistic(y, f1.gpd()) - cvm_statistic(scaled, f2.gpd())) < 1e-3);
    REQUIRE(std::fabs(moran_test(y).statistic - moran_test(scaled).statistic) < 1e-3);
    REQUIRE(std::fabs(rao_score_test(y).statistic - rao_score_test(scaled).statistic) < 1e-3);
}

TEST_CASE("shipped null table is well formed") {
    const char* env = std::getenv("EVT_NULL_TABLE_PATH");
    const std::string path = env ? env : std::string(EVT_SOURCE_DIR) + "/data/null_table.bin";
    const NullTable t = load_null_table(path);
    REQUIRE(t.shape_grid.size() == 16);
    REQUIRE(std::fabs(t.shape_grid.front() + 0.5) < 1e-15);
    REQUIRE(std::fabs(t.shape_grid.back() - 1.0) < 1e-15);
    REQUIRE(t.percentile_grid.front() == 0.999);
    REQUIRE(t.percentile_grid.back() == 0.001);
    REQUIRE(t.mc_sample_size >= 500);
    REQUIRE(t.mc_replicates >= 10000);
    const std::size_t np = t.percentile_grid.size();
    for (std::size_t stat = 0; stat < 2; ++stat)
        for (std::size_t si = 0; si < t.shape_grid.size(); ++si)
            for (std::size_t j = 1; j < np; ++j)
                REQUIRE(t.critical(static_cast<TailStat>(stat), si, j) >
                        t.critical(static_cast<TailStat>(stat), si, j - 1));
    std::uint64_t failures = 0;
    for (auto f : t.fit_failures) failures += f;
    REQUIRE(failures < t.mc_replicates / 100);

    // Null data should be accepted most of the time at the 5% level.
    int reject = 0;
    for (int rep = 0; rep < 100; ++rep) {
        const auto y = gpd_sample(derive_seed(8104, static_cast<std::uint64_t>(rep)), 300,
                                  {1.0, 0.0});
        if (ad_test(y, t).p_value < 0.05) ++reject;
    }
    REQUIRE(reject <= 15);
}
