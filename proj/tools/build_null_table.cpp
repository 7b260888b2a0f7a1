// Regenerates the Anderson-Darling / Cramer-von Mises null critical-value
// table. The shipped asset was produced by:
//   evt-build-null-table data/null_table.bin 100000 1000 20260815
#include <evt/gof_gpd.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>

int main(int argc, char** argv) {
    if (argc < 2 || argc > 5) {
        std::fprintf(stderr,
                     "usage: %s OUTPUT.bin [replicates=100000] [sample_size=1000] "
                     "[seed=20260815]\n",
                     argv[0]);
        return 2;
    }
    const std::uint64_t reps = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 100000;
    const std::uint64_t n = argc > 3 ? std::strtoull(argv[3], nullptr, 10) : 1000;
    const std::uint64_t seed = argc > 4 ? std::strtoull(argv[4], nullptr, 10) : 20260815;
    try {
        const auto t0 = std::chrono::steady_clock::now();
        const evt::NullTable table = evt::build_null_table(reps, n, seed);
        evt::save_null_table(table, argv[1]);
        const double secs = std::chrono::duration<double>(
                                std::chrono::steady_clock::now() - t0)
                                .count();
        std::uint64_t failures = 0;
        for (auto f : table.fit_failures) failures += f;
        std::printf("wrote %s: %llu replicates x %zu shapes at n=%llu, %llu fit failures, %.0f s\n",
                    argv[1], static_cast<unsigned long long>(reps), table.shape_grid.size(),
                    static_cast<unsigned long long>(n),
                    static_cast<unsigned long long>(failures), secs);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
