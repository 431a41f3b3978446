#pragma once

// Dense float kernels used by the transformer runtime.
//
// Every kernel exists twice: `reference` is a plain serial loop nest kept for
// testing and benchmarking, `parallel` distributes independent output
// elements over OpenMP threads. Both compute each output element with the
// same reduction order, so their results are bitwise identical. The runtime
// relies on this for cached/uncached generation equivalence.

#include <cstddef>
#include <span>

namespace steerbench::kernels {

// Fixed-order dot product (8 interleaved partial sums, combined pairwise).
float dot(const float *a, const float *b, std::size_t n);

// Shapes for the attention kernel. q, k, v and out are row-major
// [positions, n_heads * head_dim]; queries occupy absolute positions
// [query_offset, query_offset + n_queries) and attend causally to keys
// [0, query_offset + q].
struct AttentionShape {
    std::size_t n_queries = 0;
    std::size_t n_keys = 0;
    std::size_t query_offset = 0;
    std::size_t n_heads = 0;
    std::size_t head_dim = 0;
};

namespace reference {

// y[r, j] = dot(x[r, :], w[j, :]) + bias[j]; w is [out, in], bias may be empty.
void linear(std::span<const float> x, std::size_t rows, std::size_t in,
            std::span<const float> w, std::span<const float> bias, std::size_t out,
            std::span<float> y);

void causal_attention(std::span<const float> q, std::span<const float> k,
                      std::span<const float> v, const AttentionShape &shape,
                      std::span<float> out);

} // namespace reference

namespace parallel {

void linear(std::span<const float> x, std::size_t rows, std::size_t in,
            std::span<const float> w, std::span<const float> bias, std::size_t out,
            std::span<float> y);

void causal_attention(std::span<const float> q, std::span<const float> k,
                      std::span<const float> v, const AttentionShape &shape,
                      std::span<float> out);

} // namespace parallel

// Row-wise helpers; cheap enough that they are not parallelized.
void layer_norm(std::span<const float> x, std::span<const float> gain,
                std::span<const float> bias, float eps, std::span<float> out);
void gelu_inplace(std::span<float> x);

// Number of worker threads the parallel kernels will use (1 without OpenMP).
int max_threads();

} // namespace steerbench::kernels
