// Times the serial reference kernels against the OpenMP variants and checks
// that both produce bit-identical output.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "cmr/kernels.hpp"
#include "cmr/tensor.hpp"

using clock_type = std::chrono::steady_clock;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warmup
    auto t0 = clock_type::now();
    for (int i = 0; i < reps; ++i) fn();
    auto t1 = clock_type::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

}  // namespace

int main() {
    cmr::Rng rng(42);
    std::printf("%-12s %8s %12s %12s %8s %s\n", "kernel", "size", "serial(ms)",
                "omp(ms)", "speedup", "bitexact");
    for (std::size_t n : {64, 128, 256, 512, 1024}) {
        std::vector<double> a(n * n), b(n * n), c1(n * n), c2(n * n);
        for (auto& x : a) x = rng.normal();
        for (auto& x : b) x = rng.normal();
        struct Case {
            const char* name;
            void (*serial)(const double*, const double*, double*, std::size_t, std::size_t,
                           std::size_t);
            void (*omp)(const double*, const double*, double*, std::size_t, std::size_t,
                        std::size_t);
        };
        const Case cases[] = {
            {"matmul", cmr::kernels::matmul_serial, cmr::kernels::matmul_omp},
            {"matmul_nt", cmr::kernels::matmul_nt_serial, cmr::kernels::matmul_nt_omp},
            {"matmul_tn", cmr::kernels::matmul_tn_serial, cmr::kernels::matmul_tn_omp},
        };
        int reps = n <= 256 ? 20 : 3;
        for (const auto& k : cases) {
            double ts = time_ms([&] { k.serial(a.data(), b.data(), c1.data(), n, n, n); }, reps);
            double to = time_ms([&] { k.omp(a.data(), b.data(), c2.data(), n, n, n); }, reps);
            bool exact = c1 == c2;
            std::printf("%-12s %8zu %12.3f %12.3f %7.2fx %s\n", k.name, n, ts, to,
                        ts / to, exact ? "yes" : "NO");
            if (!exact) return 1;
        }
    }
    return 0;
}
