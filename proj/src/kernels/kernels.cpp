#include "steerbench/kernels.hpp"

#include <cmath>
#include <limits>
#include <vector>

#ifdef STEERBENCH_HAVE_OPENMP
#include <omp.h>
#endif

namespace steerbench::kernels {

float dot(const float *a, const float *b, std::size_t n) {
    float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
    }
    for (std::size_t l = 0; i < n; ++i, ++l) acc[l] += a[i] * b[i];
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

namespace {

inline void linear_element(const float *x, std::size_t in, const float *w, const float *bias,
                           std::size_t r, std::size_t j, float *y, std::size_t out) {
    float s = dot(x + r * in, w + j * in, in);
    if (bias) s += bias[j];
    y[r * out + j] = s;
}

// One (head, query) cell of causal attention. `scores` is scratch of length
// >= n_keys.
inline void attention_cell(const float *q, const float *k, const float *v,
                           const AttentionShape &s, std::size_t h, std::size_t qi, float *scores,
                           float *out) {
    const std::size_t width = s.n_heads * s.head_dim;
    const std::size_t limit = s.query_offset + qi + 1;
    const float scale = 1.0f / std::sqrt(static_cast<float>(s.head_dim));
    const float *qrow = q + qi * width + h * s.head_dim;

    float maxv = -std::numeric_limits<float>::infinity();
    for (std::size_t t = 0; t < limit; ++t) {
        scores[t] = dot(qrow, k + t * width + h * s.head_dim, s.head_dim) * scale;
        if (scores[t] > maxv) maxv = scores[t];
    }
    float denom = 0.0f;
    for (std::size_t t = 0; t < limit; ++t) {
        scores[t] = std::exp(scores[t] - maxv);
        denom += scores[t];
    }
    float *orow = out + qi * width + h * s.head_dim;
    for (std::size_t e = 0; e < s.head_dim; ++e) orow[e] = 0.0f;
    for (std::size_t t = 0; t < limit; ++t) {
        const float p = scores[t] / denom;
        const float *vrow = v + t * width + h * s.head_dim;
        for (std::size_t e = 0; e < s.head_dim; ++e) orow[e] += p * vrow[e];
    }
}

} // namespace

namespace reference {

void linear(std::span<const float> x, std::size_t rows, std::size_t in,
            std::span<const float> w, std::span<const float> bias, std::size_t out,
            std::span<float> y) {
    const float *b = bias.empty() ? nullptr : bias.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < out; ++j) linear_element(x.data(), in, w.data(), b, r, j, y.data(), out);
}

void causal_attention(std::span<const float> q, std::span<const float> k,
                      std::span<const float> v, const AttentionShape &shape,
                      std::span<float> out) {
    std::vector<float> scores(shape.n_keys);
    for (std::size_t qi = 0; qi < shape.n_queries; ++qi)
        for (std::size_t h = 0; h < shape.n_heads; ++h)
            attention_cell(q.data(), k.data(), v.data(), shape, h, qi, scores.data(), out.data());
}

} // namespace reference

namespace parallel {

void linear(std::span<const float> x, std::size_t rows, std::size_t in,
            std::span<const float> w, std::span<const float> bias, std::size_t out,
            std::span<float> y) {
    const float *b = bias.empty() ? nullptr : bias.data();
    const long long total = static_cast<long long>(rows * out);
    // Small problems are not worth a fork/join.
    if (total * static_cast<long long>(in) < 32768) {
        reference::linear(x, rows, in, w, bias, out, y);
        return;
    }
#pragma omp parallel for schedule(static)
    for (long long idx = 0; idx < total; ++idx) {
        const std::size_t r = static_cast<std::size_t>(idx) / out;
        const std::size_t j = static_cast<std::size_t>(idx) % out;
        linear_element(x.data(), in, w.data(), b, r, j, y.data(), out);
    }
}

void causal_attention(std::span<const float> q, std::span<const float> k,
                      std::span<const float> v, const AttentionShape &shape,
                      std::span<float> out) {
    const long long total = static_cast<long long>(shape.n_queries * shape.n_heads);
#pragma omp parallel
    {
        std::vector<float> scores(shape.n_keys);
#pragma omp for schedule(static)
        for (long long idx = 0; idx < total; ++idx) {
            const std::size_t qi = static_cast<std::size_t>(idx) / shape.n_heads;
            const std::size_t h = static_cast<std::size_t>(idx) % shape.n_heads;
            attention_cell(q.data(), k.data(), v.data(), shape, h, qi, scores.data(), out.data());
        }
    }
}

} // namespace parallel

void layer_norm(std::span<const float> x, std::span<const float> gain,
                std::span<const float> bias, float eps, std::span<float> out) {
    const std::size_t n = x.size();
    float mean = 0.0f;
    for (float v : x) mean += v;
    mean /= static_cast<float>(n);
    float var = 0.0f;
    for (float v : x) var += (v - mean) * (v - mean);
    var /= static_cast<float>(n);
    const float inv = 1.0f / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) out[i] = (x[i] - mean) * inv * gain[i] + bias[i];
}

void gelu_inplace(std::span<float> x) {
    // tanh approximation used by GPT-2 ("gelu_new")
    constexpr float c = 0.7978845608028654f; // sqrt(2/pi)
    for (float &v : x) v = 0.5f * v * (1.0f + std::tanh(c * (v + 0.044715f * v * v * v)));
}

int max_threads() {
#ifdef STEERBENCH_HAVE_OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

} // namespace steerbench::kernels
