// Kernel benchmark: serial reference vs OpenMP variants on the shapes the
// toolkit actually runs, plus a float pass for the inference-mode numbers.
// Build with the rest of the tree; not registered with ctest.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tale/eval.hpp"
#include "tale/kernels.hpp"
#include "tale/model.hpp"
#include "tale/rng.hpp"
#include "tale/task.hpp"

using namespace tale;
using Clock = std::chrono::steady_clock;

namespace {

double time_of(int reps, const std::function<void()>& fn) {
    fn();  // warm
    const auto t0 = Clock::now();
    for (int i = 0; i < reps; ++i) fn();
    return std::chrono::duration<double>(Clock::now() - t0).count() / reps;
}

template <typename T>
void bench_matmul(const char* label, std::size_t n, int reps) {
    Rng rng(1);
    std::vector<T> a(n * n), b(n * n), out(n * n);
    for (auto& v : a) v = static_cast<T>(rng.gaussian());
    for (auto& v : b) v = static_cast<T>(rng.gaussian());

    const double serial = time_of(reps, [&] {
        kernels::serial::matmul(out.data(), a.data(), b.data(), n, n, n);
    });
    const double parallel = time_of(reps, [&] {
        kernels::matmul(out.data(), a.data(), b.data(), n, n, n);
    });
    const double flops = 2.0 * n * n * n;
    std::printf("  %-18s n=%-4zu serial %8.3f ms (%6.2f GF/s)  omp %8.3f ms (%6.2f GF/s)  x%.2f\n",
                label, n, serial * 1e3, flops / serial * 1e-9, parallel * 1e3,
                flops / parallel * 1e-9, serial / parallel);
}

void bench_attention(std::size_t seq, std::size_t d_model, std::size_t heads, int reps) {
    Rng rng(2);
    std::vector<double> q(seq * d_model), k(seq * d_model), v(seq * d_model), out(seq * d_model);
    for (auto& x : q) x = rng.gaussian();
    for (auto& x : k) x = rng.gaussian();
    for (auto& x : v) x = rng.gaussian();

    const double serial = time_of(reps, [&] {
        kernels::serial::causal_attention(out.data(), q.data(), k.data(), v.data(), seq, d_model,
                                          heads);
    });
    const double parallel = time_of(reps, [&] {
        kernels::causal_attention(out.data(), q.data(), k.data(), v.data(), seq, d_model, heads);
    });
    std::printf("  attention          seq=%-3zu d=%-3zu serial %8.3f ms            omp %8.3f ms"
                "            x%.2f\n",
                seq, d_model, serial * 1e3, parallel * 1e3, serial / parallel);
}

void bench_eval() {
    // candidate evaluation is the search's hot loop: one accuracy pass per
    // surviving layer, parallel over examples inside each pass
    TaskSpec spec = TaskSpec::defaults(TaskKind::copy_last, 3);
    const TaskDataset ds = generate(spec);
    ModelConfig cfg;
    cfg.n_layers = 6;
    cfg.d_model = 64;
    cfg.n_heads = 4;
    cfg.d_ff = 128;
    cfg.vocab_size = spec.vocab_size();
    cfg.max_seq_len = spec.seq_len;
    cfg.seed = 3;
    const TransformerModel model = TransformerModel::init(cfg);

    const double t = time_of(3, [&] {
        (void)accuracy(model, LayerMask{}, ds.val, spec);
    });
    std::printf("  eval pass          %zu examples, 6 layers, d=64: %.3f ms\n", ds.val.size(),
                t * 1e3);
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("OpenMP with %d threads (cutoff %zu madds)\n", omp_get_max_threads(),
                kernels::parallel_cutoff);
#else
    std::printf("built without OpenMP; parallel variants run serially\n");
#endif
    std::printf("double kernels:\n");
    bench_matmul<double>("matmul<double>", 64, 50);
    bench_matmul<double>("matmul<double>", 128, 20);
    bench_matmul<double>("matmul<double>", 256, 5);
    std::printf("float kernels (inference mode):\n");
    bench_matmul<float>("matmul<float>", 128, 20);
    bench_matmul<float>("matmul<float>", 256, 5);
    std::printf("attention:\n");
    bench_attention(64, 64, 4, 20);
    bench_attention(256, 64, 4, 5);
    std::printf("end-to-end:\n");
    bench_eval();
    return 0;
}
