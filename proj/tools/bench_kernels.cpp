// Timing comparison between the serial reference kernels and the OpenMP
// versions. Build and run:
//   cmake --build build --target bench_kernels && ./build/tools/bench_kernels
#include <omp.h>

#include <cstdio>
#include <functional>
#include <vector>

#include "lmforge/kernels.hpp"
#include "lmforge/rng.hpp"

namespace par = lmforge::kernels;
namespace ref = lmforge::kernels::ref;
using lmforge::Rng;

namespace {

std::vector<float> random_vec(size_t n, Rng& rng) {
    std::vector<float> v(n);
    for (float& x : v) x = 2.0f * rng.next_float() - 1.0f;
    return v;
}

double time_it(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    const double t0 = omp_get_wtime();
    for (int i = 0; i < reps; ++i) fn();
    return (omp_get_wtime() - t0) / reps;
}

void report(const char* name, double serial_s, double parallel_s) {
    std::printf("%-28s %10.3f ms %10.3f ms %8.2fx\n", name, serial_s * 1e3,
                parallel_s * 1e3, serial_s / parallel_s);
}

}  // namespace

int main() {
    Rng rng(7);
    std::printf("threads: %d\n", omp_get_max_threads());
    std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

    {
        const int64_t b = 8, m = 128, k = 128, n = 128;
        auto a = random_vec(static_cast<size_t>(b * m * k), rng);
        auto w = random_vec(static_cast<size_t>(b * k * n), rng);
        std::vector<float> c(static_cast<size_t>(b * m * n));
        report("matmul_nn 8x128x128x128",
               time_it([&] { ref::matmul_nn(a.data(), w.data(), c.data(), b, m, k, n, false); }, 5),
               time_it([&] { par::matmul_nn(a.data(), w.data(), c.data(), b, m, k, n, false); }, 5));
    }
    {
        const int64_t outer = 4096, n = 512;
        auto x = random_vec(static_cast<size_t>(outer * n), rng);
        std::vector<float> y(x.size());
        report("softmax 4096x512",
               time_it([&] { ref::softmax(x.data(), y.data(), outer, n, 1); }, 5),
               time_it([&] { par::softmax(x.data(), y.data(), outer, n, 1); }, 5));
    }
    {
        const int64_t rows = 8192, d = 512;
        auto x = random_vec(static_cast<size_t>(rows * d), rng);
        auto gain = random_vec(static_cast<size_t>(d), rng);
        auto bias = random_vec(static_cast<size_t>(d), rng);
        std::vector<float> y(x.size());
        std::vector<float> mean(static_cast<size_t>(rows)), rstd(static_cast<size_t>(rows));
        report("layer_norm 8192x512",
               time_it([&] { ref::layer_norm(x.data(), gain.data(), bias.data(), 1e-5f,
                                             y.data(), mean.data(), rstd.data(), rows, d); }, 5),
               time_it([&] { par::layer_norm(x.data(), gain.data(), bias.data(), 1e-5f,
                                             y.data(), mean.data(), rstd.data(), rows, d); }, 5));
    }
    {
        const int64_t n = 1 << 22;
        auto x = random_vec(static_cast<size_t>(n), rng);
        std::vector<float> y(x.size());
        report("gelu 4M",
               time_it([&] { ref::gelu(x.data(), y.data(), n); }, 5),
               time_it([&] { par::gelu(x.data(), y.data(), n); }, 5));
    }
    {
        const int64_t n = 1 << 22;
        auto p1 = random_vec(static_cast<size_t>(n), rng);
        auto g = random_vec(static_cast<size_t>(n), rng);
        std::vector<float> m(static_cast<size_t>(n), 0.0f), v(static_cast<size_t>(n), 0.0f);
        report("adam_update 4M",
               time_it([&] { ref::adam_update(p1.data(), g.data(), m.data(), v.data(), n,
                                              1e-3f, 0.9f, 0.999f, 1e-8f, 2.0f, 2.0f); }, 5),
               time_it([&] { par::adam_update(p1.data(), g.data(), m.data(), v.data(), n,
                                              1e-3f, 0.9f, 0.999f, 1e-8f, 2.0f, 2.0f); }, 5));
    }
    return 0;
}
