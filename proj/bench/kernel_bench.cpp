// Reference vs. OpenMP kernels: wall time and max deviation.
//   kernel_bench [reps]

#include "steerbench/kernels.hpp"
#include "steerbench/runtime/forward.hpp"
#include "steerbench/runtime/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <vector>

namespace sb = steerbench;

namespace {

double seconds(const std::function<void()> &f, int reps) {
    f(); // warm-up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) f();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count() / reps;
}

float max_diff(const std::vector<float> &a, const std::vector<float> &b) {
    float m = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

std::vector<float> random_vec(std::size_t n, std::mt19937 &rng) {
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    std::vector<float> v(n);
    for (auto &x : v) x = u(rng);
    return v;
}

void report(const char *name, double ref, double par, float diff) {
    std::printf("%-28s reference %9.3f ms   parallel %9.3f ms   speedup %5.2fx   max|diff| %.3g\n", name, ref * 1e3,
                par * 1e3, ref / par, static_cast<double>(diff));
}

} // namespace

int main(int argc, char **argv) {
    const int reps = argc > 1 ? std::max(1, std::atoi(argv[1])) : 5;
    std::printf("threads: %d, reps: %d\n", sb::kernels::max_threads(), reps);
    std::mt19937 rng(0);

    // GPT-2-small sized projections over a 64-token window.
    struct Case { const char *name; std::size_t rows, in, out; };
    for (const Case c : {Case{"linear 64x768 -> 2304", 64, 768, 2304}, Case{"linear 64x768 -> 3072", 64, 768, 3072},
                         Case{"linear 1x768 -> 768", 1, 768, 768}}) {
        const auto x = random_vec(c.rows * c.in, rng), w = random_vec(c.out * c.in, rng), b = random_vec(c.out, rng);
        std::vector<float> y_ref(c.rows * c.out), y_par(c.rows * c.out);
        const double tr = seconds([&] { sb::kernels::reference::linear(x, c.rows, c.in, w, b, c.out, y_ref); }, reps);
        const double tp = seconds([&] { sb::kernels::parallel::linear(x, c.rows, c.in, w, b, c.out, y_par); }, reps);
        report(c.name, tr, tp, max_diff(y_ref, y_par));
    }

    {
        const sb::kernels::AttentionShape s{128, 128, 0, 12, 64};
        const std::size_t d = s.n_heads * s.head_dim;
        const auto q = random_vec(s.n_queries * d, rng), k = random_vec(s.n_keys * d, rng),
                   v = random_vec(s.n_keys * d, rng);
        std::vector<float> o_ref(s.n_queries * d), o_par(s.n_queries * d);
        const double tr = seconds([&] { sb::kernels::reference::causal_attention(q, k, v, s, o_ref); }, reps);
        const double tp = seconds([&] { sb::kernels::parallel::causal_attention(q, k, v, s, o_par); }, reps);
        report("attention 128 tok x 12 heads", tr, tp, max_diff(o_ref, o_par));
    }

    {
        const auto model = sb::runtime::build_tiny_model(0);
        std::vector<int> tokens(128);
        for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = static_cast<int>(32 + i % 90);
        sb::runtime::ForwardResult fr_ref, fr_par;
        const double tr = seconds([&] { fr_ref = sb::runtime::forward(model, tokens, {}, sb::runtime::KernelBackend::Reference); }, reps);
        const double tp = seconds([&] { fr_par = sb::runtime::forward(model, tokens, {}, sb::runtime::KernelBackend::Parallel); }, reps);
        report("tiny model forward 128 tok", tr, tp, max_diff(fr_ref.logits, fr_par.logits));
    }
    return 0;
}
