#pragma once

#include "steerbench/runtime/model.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace steerbench::runtime {

enum class TapMode { Read, Replace };

struct PositionSelector {
    enum class Kind { All, Last, Explicit };
    Kind kind = Kind::All;
    std::vector<int> positions;

    static PositionSelector all() { return {}; }
    static PositionSelector last() { return {Kind::Last, {}}; }
    static PositionSelector only(std::vector<int> p) { return {Kind::Explicit, std::move(p)}; }

    // `seq_len` is the full sequence length of the current pass.
    bool selects(int position, int seq_len) const;
};

// Receives the absolute token position and the residual row (length d) and
// may overwrite it in place.
using EditCallback = std::function<void(int position, std::span<float> residual)>;

// Residual reading/replacement point: the residual stream after block `layer`
// (attention + MLP) and before block `layer + 1` runs.
struct ResidualTap {
    int layer = 0;
    TapMode mode = TapMode::Read;
    PositionSelector positions;
    EditCallback edit;
};

// Residuals seen at a tap, before any replacement, for the positions
// [first_position, first_position + rows) processed in one pass.
struct TapCapture {
    int layer = 0;
    int first_position = 0;
    int rows = 0;
    int width = 0;
    std::vector<float> values;

    std::span<const float> row(int absolute_position) const;
};

struct ForwardResult {
    int seq_len = 0;
    int vocab = 0;
    std::vector<float> logits; // [seq_len, vocab]
    std::vector<TapCapture> captures;

    std::span<const float> logits_row(int position) const;
    const TapCapture &capture(int layer) const;
};

enum class KernelBackend { Parallel, Reference };

struct SessionOptions {
    bool use_cache = true;
    KernelBackend backend = KernelBackend::Parallel;
};

// Checks tap layers, callbacks and duplicate layers against the model.
void validate_taps(const Model &model, std::span<const ResidualTap> taps);

ForwardResult forward(const Model &model, std::span<const int> tokens, std::span<const ResidualTap> taps = {},
                      KernelBackend backend = KernelBackend::Parallel);
ForwardResult forward_with_tap(const Model &model, std::span<const int> tokens, const ResidualTap &tap);

// Final LayerNorm + unembedding of a single residual row.
std::vector<float> final_logits(const Model &model, std::span<const float> residual);

// Incremental decoding state: KV cache plus installed taps. Each generation
// owns one; the model itself is never mutated. Replace-taps run on every
// position processed, so with the cache on, earlier positions keep the edits
// applied when they were first computed (identical to recomputation because
// the edit of a position depends only on that position's residual).
class InferenceSession {
public:
    InferenceSession(const Model &model, std::vector<ResidualTap> taps = {}, SessionOptions options = {});

    // Appends tokens and returns the logits of the last position.
    std::vector<float> append(std::span<const int> tokens);

    const std::vector<int> &tokens() const { return tokens_; }
    // Captures from the most recent append().
    const std::vector<TapCapture> &captures() const { return captures_; }

private:
    struct Pass {
        std::vector<float> last_logits;
        std::vector<float> all_logits;
    };
    Pass run(std::span<const int> new_tokens, int start, bool want_all_logits);
    friend ForwardResult forward(const Model &, std::span<const int>, std::span<const ResidualTap>, KernelBackend);

    const Model *model_;
    std::vector<ResidualTap> taps_;
    SessionOptions options_;
    std::vector<int> tokens_;
    std::vector<std::vector<float>> k_cache_, v_cache_; // per layer [positions, d]
    std::vector<TapCapture> captures_;
};

struct GenerationSettings {
    enum class Decoding { Greedy, Sample };
    int max_new_tokens = 30;
    Decoding decoding = Decoding::Greedy;
    double temperature = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
    static GenerationSettings greedy(int n) { return {n, Decoding::Greedy, 1.0, 0}; }
    static GenerationSettings sample(int n, double temperature, std::uint64_t seed) {
        return {n, Decoding::Sample, temperature, seed};
    }
};

struct GenerationResult {
    std::vector<int> tokens;                     // generated continuation only
    std::vector<std::vector<float>> step_logits; // distribution each token was drawn from
    std::vector<TapCapture> prompt_captures;     // tap residuals over the prompt
};

// Throws ContextOverflowError when prompt + max_new_tokens exceeds the context.
GenerationResult generate(const Model &model, std::span<const int> prompt, const GenerationSettings &settings,
                          std::span<const ResidualTap> taps = {}, SessionOptions options = {});

int argmax(std::span<const float> v);

} // namespace steerbench::runtime
