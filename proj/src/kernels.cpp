#include "cmr/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cmr::kernels {

namespace {
bool g_parallel = true;
// Below this many output elements the OpenMP fork costs more than it saves.
constexpr std::size_t kParallelCutoff = 4096;
}  // namespace

bool parallel_enabled() {
#ifdef _OPENMP
    return g_parallel;
#else
    return false;
#endif
}

void set_parallel(bool on) { g_parallel = on; }

void matmul_serial(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            double av = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void matmul_omp(const double* a, const double* b, double* c,
                std::size_t m, std::size_t k, std::size_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < static_cast<long long>(m); ++ii) {
        std::size_t i = static_cast<std::size_t>(ii);
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            double av = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
#else
    matmul_serial(a, b, c, m, k, n);
#endif
}

void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n) {
    if (parallel_enabled() && m * n >= kParallelCutoff)
        matmul_omp(a, b, c, m, k, n);
    else
        matmul_serial(a, b, c, m, k, n);
}

void matmul_nt_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            c[i * n + j] = s;
        }
    }
}

void matmul_nt_omp(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < static_cast<long long>(m); ++ii) {
        std::size_t i = static_cast<std::size_t>(ii);
        const double* ai = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            c[i * n + j] = s;
        }
    }
#else
    matmul_nt_serial(a, b, c, m, k, n);
#endif
}

void matmul_nt(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
    if (parallel_enabled() && m * n >= kParallelCutoff)
        matmul_nt_omp(a, b, c, m, k, n);
    else
        matmul_nt_serial(a, b, c, m, k, n);
}

void matmul_tn_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t r = 0; r < k; ++r) {
        double* cr = c + r * n;
        for (std::size_t j = 0; j < n; ++j) cr[j] = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            double av = a[i * k + r];
            const double* bi = b + i * n;
            for (std::size_t j = 0; j < n; ++j) cr[j] += av * bi[j];
        }
    }
}

void matmul_tn_omp(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (long long rr = 0; rr < static_cast<long long>(k); ++rr) {
        std::size_t r = static_cast<std::size_t>(rr);
        double* cr = c + r * n;
        for (std::size_t j = 0; j < n; ++j) cr[j] = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            double av = a[i * k + r];
            const double* bi = b + i * n;
            for (std::size_t j = 0; j < n; ++j) cr[j] += av * bi[j];
        }
    }
#else
    matmul_tn_serial(a, b, c, m, k, n);
#endif
}

void matmul_tn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
    if (parallel_enabled() && k * n >= kParallelCutoff)
        matmul_tn_omp(a, b, c, m, k, n);
    else
        matmul_tn_serial(a, b, c, m, k, n);
}

}  // namespace cmr::kernels
