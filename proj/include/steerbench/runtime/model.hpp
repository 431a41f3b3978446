#pragma once

#include "steerbench/runtime/tokenizer.hpp"
#include "steerbench/tensor_archive.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace steerbench::runtime {

enum class NormStyle { Pre, Post };

struct ModelConfig {
    std::string model_id = "model";
    int n_layers = 0;
    int d_model = 0;
    int n_heads = 0;
    int d_ff = 0;
    int vocab_size = 0;
    int max_context = 0;
    NormStyle norm_style = NormStyle::Pre;
    bool tie_embeddings = false;
    float layer_norm_eps = 1e-5f;
    // Prompting baselines are refused for models without instruction tuning.
    bool instruction_tuned = false;

    void validate() const;
    int head_dim() const { return d_model / n_heads; }
};

// Reads our ModelConfig JSON, or a Hugging Face GPT-2 config.json
// ("model_type": "gpt2"). Throws LoadError.
ModelConfig load_model_config(const std::filesystem::path &path);
ModelConfig parse_model_config(const std::string &json_text);
std::string model_config_to_json(const ModelConfig &c);

// Weight matrices are row-major [out, in].
struct BlockWeights {
    std::vector<float> ln1_gain, ln1_bias;
    std::vector<float> qkv_w, qkv_b; // [3d, d], [3d]
    std::vector<float> out_w, out_b; // [d, d], [d]
    std::vector<float> ln2_gain, ln2_bias;
    std::vector<float> fc_w, fc_b;     // [d_ff, d], [d_ff]
    std::vector<float> proj_w, proj_b; // [d, d_ff], [d]
};

struct ModelWeights {
    std::vector<float> embed;     // [V, d]
    std::vector<float> pos_embed; // [ctx, d]
    std::vector<BlockWeights> blocks;
    std::vector<float> ln_final_gain, ln_final_bias;
    std::vector<float> unembed; // [V, d]; equals embed when tied
};

// Immutable once built; share freely across threads.
class Model {
public:
    Model(ModelConfig config, ModelWeights weights, std::optional<Tokenizer> tokenizer = std::nullopt);

    const ModelConfig &config() const { return config_; }
    const ModelWeights &weights() const { return weights_; }
    std::span<const float> unembed() const { return weights_.unembed; }

    bool has_tokenizer() const { return tokenizer_.has_value(); }
    const Tokenizer &tokenizer() const;
    void set_tokenizer(Tokenizer t) { tokenizer_ = std::move(t); }

    std::size_t parameter_count() const;

    // Neutral archive layout (see load_model for tensor names).
    TensorArchive to_archive() const;

private:
    ModelConfig config_;
    ModelWeights weights_;
    std::optional<Tokenizer> tokenizer_;
};

// Tensor names (neutral layout):
//   embed [V,d]  pos_embed [ctx,d]  ln_final.weight/bias [d]  unembed [V,d]
//   blocks.{i}.ln1.weight/bias  blocks.{i}.attn.qkv.weight [3d,d] / .bias
//   blocks.{i}.attn.out.weight [d,d] / .bias  blocks.{i}.ln2.weight/bias
//   blocks.{i}.mlp.fc.weight [d_ff,d] / .bias  blocks.{i}.mlp.proj.weight [d,d_ff] / .bias
// "unembed" may be omitted only when tie_embeddings is set. Hugging Face GPT-2
// archives (wte/wpe/h.{i}.* with Conv1D [in,out] weights) are also accepted.
// Tokenizer files are picked up from vocab.json/merges.txt next to the config
// when present. Errors name the offending tensor.
Model load_model(const std::filesystem::path &archive_path, const std::filesystem::path &config_path);
Model model_from_archive(const TensorArchive &archive, const ModelConfig &config);

// Deterministic 4-layer, d=64, 4-head, vocab-256 byte-level model.
// Parameters are drawn from Lcg64(seed) so they are identical on every
// platform with IEEE floats.
Model build_tiny_model(std::uint64_t seed);
ModelConfig tiny_model_config();

// 64-bit linear congruential generator (Knuth's MMIX constants):
//   state <- state * 6364136223846793005 + 1442695040888963407
// Uniform doubles use the top 53 bits of the state after each step.
class Lcg64 {
public:
    explicit Lcg64(std::uint64_t seed) : state_(seed ^ 0x9E3779B97F4A7C15ull) { next_u64(); }
    std::uint64_t next_u64() {
        state_ = state_ * 6364136223846793005ull + 1442695040888963407ull;
        return state_;
    }
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

private:
    std::uint64_t state_;
};

} // namespace steerbench::runtime
