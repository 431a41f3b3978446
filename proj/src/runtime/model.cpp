#include "steerbench/runtime/model.hpp"

#include "steerbench/errors.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace steerbench::runtime {

using json = nlohmann::json;

void ModelConfig::validate() const {
    if (n_layers <= 0) throw LoadError("config: n_layers must be positive");
    if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0)
        throw LoadError("config: d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                        std::to_string(n_heads) + ")");
    if (d_ff <= 0) throw LoadError("config: d_ff must be positive");
    if (vocab_size <= 0) throw LoadError("config: vocab_size must be positive");
    if (max_context < 64) throw LoadError("config: max_context must be at least 64");
}

ModelConfig parse_model_config(const std::string &json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception &e) {
        throw LoadError(std::string("malformed model config: ") + e.what());
    }
    ModelConfig c;
    try {
        if (j.value("model_type", "") == "gpt2") {
            c.model_id = j.value("_name_or_path", "gpt2");
            if (c.model_id.empty()) c.model_id = "gpt2";
            // Hub paths such as "openai-community/gpt2" map to the bare name.
            if (const auto slash = c.model_id.rfind('/'); slash != std::string::npos)
                c.model_id = c.model_id.substr(slash + 1);
            c.n_layers = j.at("n_layer").get<int>();
            c.d_model = j.at("n_embd").get<int>();
            c.n_heads = j.at("n_head").get<int>();
            c.d_ff = (j.contains("n_inner") && !j["n_inner"].is_null()) ? j["n_inner"].get<int>() : 4 * c.d_model;
            c.vocab_size = j.at("vocab_size").get<int>();
            c.max_context = j.at("n_positions").get<int>();
            c.norm_style = NormStyle::Pre;
            c.tie_embeddings = true;
            c.layer_norm_eps = j.value("layer_norm_epsilon", 1e-5f);
            c.instruction_tuned = false;
        } else {
            c.model_id = j.value("model_id", "model");
            c.n_layers = j.at("n_layers").get<int>();
            c.d_model = j.at("d_model").get<int>();
            c.n_heads = j.at("n_heads").get<int>();
            c.d_ff = j.at("d_ff").get<int>();
            c.vocab_size = j.at("vocab_size").get<int>();
            c.max_context = j.at("max_context").get<int>();
            const std::string style = j.value("norm_style", "pre");
            if (style == "pre")
                c.norm_style = NormStyle::Pre;
            else if (style == "post")
                c.norm_style = NormStyle::Post;
            else
                throw LoadError("config: unsupported norm_style '" + style + "'");
            c.tie_embeddings = j.value("tie_embeddings", false);
            c.layer_norm_eps = j.value("layer_norm_eps", 1e-5f);
            c.instruction_tuned = j.value("instruction_tuned", false);
        }
    } catch (const json::exception &e) {
        throw LoadError(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

ModelConfig load_model_config(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open model config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_model_config(ss.str());
}

std::string model_config_to_json(const ModelConfig &c) {
    json j = {{"model_id", c.model_id},
              {"n_layers", c.n_layers},
              {"d_model", c.d_model},
              {"n_heads", c.n_heads},
              {"d_ff", c.d_ff},
              {"vocab_size", c.vocab_size},
              {"max_context", c.max_context},
              {"norm_style", c.norm_style == NormStyle::Pre ? "pre" : "post"},
              {"tie_embeddings", c.tie_embeddings},
              {"layer_norm_eps", c.layer_norm_eps},
              {"instruction_tuned", c.instruction_tuned}};
    return j.dump(2);
}

// ---------------------------------------------------------------------------

namespace {

void check_len(const std::vector<float> &v, std::size_t n, const std::string &name) {
    if (v.size() != n)
        throw LoadError("tensor '" + name + "' has " + std::to_string(v.size()) + " values, expected " + std::to_string(n));
}

Tensor as_tensor(std::vector<float> data, std::vector<std::int64_t> shape) {
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::move(data);
    return t;
}

// Conv1D weights are stored [in, out]; we keep [out, in].
std::vector<float> transpose(const std::vector<float> &w, std::size_t rows, std::size_t cols) {
    std::vector<float> out(w.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = w[r * cols + c];
    return out;
}

ModelWeights weights_from_neutral(const TensorArchive &ar, const ModelConfig &c) {
    const std::int64_t d = c.d_model, v = c.vocab_size, f = c.d_ff, ctx = c.max_context;
    ModelWeights w;
    w.embed = ar.get("embed", {v, d}).data;
    w.pos_embed = ar.get("pos_embed", {ctx, d}).data;
    for (int i = 0; i < c.n_layers; ++i) {
        const std::string p = "blocks." + std::to_string(i) + ".";
        BlockWeights b;
        b.ln1_gain = ar.get(p + "ln1.weight", {d}).data;
        b.ln1_bias = ar.get(p + "ln1.bias", {d}).data;
        b.qkv_w = ar.get(p + "attn.qkv.weight", {3 * d, d}).data;
        b.qkv_b = ar.get(p + "attn.qkv.bias", {3 * d}).data;
        b.out_w = ar.get(p + "attn.out.weight", {d, d}).data;
        b.out_b = ar.get(p + "attn.out.bias", {d}).data;
        b.ln2_gain = ar.get(p + "ln2.weight", {d}).data;
        b.ln2_bias = ar.get(p + "ln2.bias", {d}).data;
        b.fc_w = ar.get(p + "mlp.fc.weight", {f, d}).data;
        b.fc_b = ar.get(p + "mlp.fc.bias", {f}).data;
        b.proj_w = ar.get(p + "mlp.proj.weight", {d, f}).data;
        b.proj_b = ar.get(p + "mlp.proj.bias", {d}).data;
        w.blocks.push_back(std::move(b));
    }
    w.ln_final_gain = ar.get("ln_final.weight", {d}).data;
    w.ln_final_bias = ar.get("ln_final.bias", {d}).data;
    if (ar.contains("unembed") || !c.tie_embeddings)
        w.unembed = ar.get("unembed", {v, d}).data;
    else
        w.unembed = w.embed;
    return w;
}

ModelWeights weights_from_hf_gpt2(const TensorArchive &ar, const ModelConfig &c, const std::string &prefix) {
    const std::int64_t d = c.d_model, v = c.vocab_size, f = c.d_ff, ctx = c.max_context;
    const auto D = static_cast<std::size_t>(d), F = static_cast<std::size_t>(f);
    ModelWeights w;
    w.embed = ar.get(prefix + "wte.weight", {v, d}).data;
    w.pos_embed = ar.get(prefix + "wpe.weight", {ctx, d}).data;
    for (int i = 0; i < c.n_layers; ++i) {
        const std::string p = prefix + "h." + std::to_string(i) + ".";
        BlockWeights b;
        b.ln1_gain = ar.get(p + "ln_1.weight", {d}).data;
        b.ln1_bias = ar.get(p + "ln_1.bias", {d}).data;
        b.qkv_w = transpose(ar.get(p + "attn.c_attn.weight", {d, 3 * d}).data, D, 3 * D);
        b.qkv_b = ar.get(p + "attn.c_attn.bias", {3 * d}).data;
        b.out_w = transpose(ar.get(p + "attn.c_proj.weight", {d, d}).data, D, D);
        b.out_b = ar.get(p + "attn.c_proj.bias", {d}).data;
        b.ln2_gain = ar.get(p + "ln_2.weight", {d}).data;
        b.ln2_bias = ar.get(p + "ln_2.bias", {d}).data;
        b.fc_w = transpose(ar.get(p + "mlp.c_fc.weight", {d, f}).data, D, F);
        b.fc_b = ar.get(p + "mlp.c_fc.bias", {f}).data;
        b.proj_w = transpose(ar.get(p + "mlp.c_proj.weight", {f, d}).data, F, D);
        b.proj_b = ar.get(p + "mlp.c_proj.bias", {d}).data;
        w.blocks.push_back(std::move(b));
    }
    w.ln_final_gain = ar.get(prefix + "ln_f.weight", {d}).data;
    w.ln_final_bias = ar.get(prefix + "ln_f.bias", {d}).data;
    w.unembed = ar.contains("lm_head.weight") ? ar.get("lm_head.weight", {v, d}).data : w.embed;
    return w;
}

} // namespace

Model::Model(ModelConfig config, ModelWeights weights, std::optional<Tokenizer> tokenizer)
    : config_(std::move(config)), weights_(std::move(weights)), tokenizer_(std::move(tokenizer)) {
    config_.validate();
    const auto d = static_cast<std::size_t>(config_.d_model), v = static_cast<std::size_t>(config_.vocab_size),
               f = static_cast<std::size_t>(config_.d_ff), ctx = static_cast<std::size_t>(config_.max_context);
    check_len(weights_.embed, v * d, "embed");
    check_len(weights_.pos_embed, ctx * d, "pos_embed");
    check_len(weights_.unembed, v * d, "unembed");
    check_len(weights_.ln_final_gain, d, "ln_final.weight");
    check_len(weights_.ln_final_bias, d, "ln_final.bias");
    if (weights_.blocks.size() != static_cast<std::size_t>(config_.n_layers))
        throw LoadError("model has " + std::to_string(weights_.blocks.size()) + " blocks, config says " +
                        std::to_string(config_.n_layers));
    for (std::size_t i = 0; i < weights_.blocks.size(); ++i) {
        const auto &b = weights_.blocks[i];
        const std::string p = "blocks." + std::to_string(i) + ".";
        check_len(b.ln1_gain, d, p + "ln1.weight");
        check_len(b.ln1_bias, d, p + "ln1.bias");
        check_len(b.qkv_w, 3 * d * d, p + "attn.qkv.weight");
        check_len(b.qkv_b, 3 * d, p + "attn.qkv.bias");
        check_len(b.out_w, d * d, p + "attn.out.weight");
        check_len(b.out_b, d, p + "attn.out.bias");
        check_len(b.ln2_gain, d, p + "ln2.weight");
        check_len(b.ln2_bias, d, p + "ln2.bias");
        check_len(b.fc_w, f * d, p + "mlp.fc.weight");
        check_len(b.fc_b, f, p + "mlp.fc.bias");
        check_len(b.proj_w, d * f, p + "mlp.proj.weight");
        check_len(b.proj_b, d, p + "mlp.proj.bias");
    }
    if (tokenizer_ && tokenizer_->vocab_size() > config_.vocab_size)
        throw LoadError("tokenizer vocabulary (" + std::to_string(tokenizer_->vocab_size()) +
                        ") exceeds model vocab_size (" + std::to_string(config_.vocab_size) + ")");
}

const Tokenizer &Model::tokenizer() const {
    if (!tokenizer_) throw ContractError("model " + config_.model_id + " has no tokenizer loaded");
    return *tokenizer_;
}

std::size_t Model::parameter_count() const {
    std::size_t n = weights_.embed.size() + weights_.pos_embed.size() + weights_.ln_final_gain.size() +
                    weights_.ln_final_bias.size();
    if (!config_.tie_embeddings) n += weights_.unembed.size();
    for (const auto &b : weights_.blocks)
        n += b.ln1_gain.size() + b.ln1_bias.size() + b.qkv_w.size() + b.qkv_b.size() + b.out_w.size() +
             b.out_b.size() + b.ln2_gain.size() + b.ln2_bias.size() + b.fc_w.size() + b.fc_b.size() +
             b.proj_w.size() + b.proj_b.size();
    return n;
}

TensorArchive Model::to_archive() const {
    const std::int64_t d = config_.d_model, v = config_.vocab_size, f = config_.d_ff, ctx = config_.max_context;
    TensorArchive ar;
    ar.put("embed", as_tensor(weights_.embed, {v, d}));
    ar.put("pos_embed", as_tensor(weights_.pos_embed, {ctx, d}));
    for (std::size_t i = 0; i < weights_.blocks.size(); ++i) {
        const auto &b = weights_.blocks[i];
        const std::string p = "blocks." + std::to_string(i) + ".";
        ar.put(p + "ln1.weight", as_tensor(b.ln1_gain, {d}));
        ar.put(p + "ln1.bias", as_tensor(b.ln1_bias, {d}));
        ar.put(p + "attn.qkv.weight", as_tensor(b.qkv_w, {3 * d, d}));
        ar.put(p + "attn.qkv.bias", as_tensor(b.qkv_b, {3 * d}));
        ar.put(p + "attn.out.weight", as_tensor(b.out_w, {d, d}));
        ar.put(p + "attn.out.bias", as_tensor(b.out_b, {d}));
        ar.put(p + "ln2.weight", as_tensor(b.ln2_gain, {d}));
        ar.put(p + "ln2.bias", as_tensor(b.ln2_bias, {d}));
        ar.put(p + "mlp.fc.weight", as_tensor(b.fc_w, {f, d}));
        ar.put(p + "mlp.fc.bias", as_tensor(b.fc_b, {f}));
        ar.put(p + "mlp.proj.weight", as_tensor(b.proj_w, {d, f}));
        ar.put(p + "mlp.proj.bias", as_tensor(b.proj_b, {d}));
    }
    ar.put("ln_final.weight", as_tensor(weights_.ln_final_gain, {d}));
    ar.put("ln_final.bias", as_tensor(weights_.ln_final_bias, {d}));
    if (!config_.tie_embeddings) ar.put("unembed", as_tensor(weights_.unembed, {v, d}));
    ar.metadata()["model_id"] = config_.model_id;
    return ar;
}

Model model_from_archive(const TensorArchive &archive, const ModelConfig &config) {
    ModelWeights w;
    if (archive.contains("wte.weight"))
        w = weights_from_hf_gpt2(archive, config, "");
    else if (archive.contains("transformer.wte.weight"))
        w = weights_from_hf_gpt2(archive, config, "transformer.");
    else
        w = weights_from_neutral(archive, config);
    return Model(config, std::move(w));
}

Model load_model(const std::filesystem::path &archive_path, const std::filesystem::path &config_path) {
    const ModelConfig config = load_model_config(config_path);
    const TensorArchive archive = TensorArchive::load(archive_path);
    Model m = model_from_archive(archive, config);
    const auto dir = config_path.parent_path();
    if (std::filesystem::exists(dir / "vocab.json") && std::filesystem::exists(dir / "merges.txt"))
        m.set_tokenizer(Tokenizer::load(dir / "vocab.json", dir / "merges.txt"));
    else if (config.vocab_size == 256)
        m.set_tokenizer(Tokenizer::bytes());
    return m;
}

// ---------------------------------------------------------------------------

ModelConfig tiny_model_config() {
    ModelConfig c;
    c.model_id = "tiny";
    c.n_layers = 4;
    c.d_model = 64;
    c.n_heads = 4;
    c.d_ff = 256;
    c.vocab_size = 256;
    c.max_context = 256;
    c.norm_style = NormStyle::Pre;
    c.tie_embeddings = false;
    c.layer_norm_eps = 1e-5f;
    return c;
}

Model build_tiny_model(std::uint64_t seed) {
    const ModelConfig c = tiny_model_config();
    const auto d = static_cast<std::size_t>(c.d_model), v = static_cast<std::size_t>(c.vocab_size),
               f = static_cast<std::size_t>(c.d_ff), ctx = static_cast<std::size_t>(c.max_context);
    Lcg64 rng(seed);
    auto uniform = [&](std::size_t n, double scale) {
        std::vector<float> out(n);
        for (auto &x : out) x = static_cast<float>(rng.uniform(-scale, scale));
        return out;
    };
    auto constant = [](std::size_t n, float value) { return std::vector<float>(n, value); };
    // 1/sqrt(fan_in) for projections; the unit-scale draws are exact binary
    // fractions of the PRNG output so no libm call is involved.
    const double in_d = 0.125;             // 1/sqrt(64)
    const double in_f = 0.0625;            // 1/sqrt(256)

    ModelWeights w;
    w.embed = uniform(v * d, 1.0);
    w.pos_embed = uniform(ctx * d, 0.25);
    for (int i = 0; i < c.n_layers; ++i) {
        BlockWeights b;
        b.ln1_gain = constant(d, 1.0f);
        b.ln1_bias = constant(d, 0.0f);
        b.qkv_w = uniform(3 * d * d, in_d);
        b.qkv_b = uniform(3 * d, 0.02);
        b.out_w = uniform(d * d, in_d);
        b.out_b = uniform(d, 0.02);
        b.ln2_gain = constant(d, 1.0f);
        b.ln2_bias = constant(d, 0.0f);
        b.fc_w = uniform(f * d, in_d);
        b.fc_b = uniform(f, 0.02);
        b.proj_w = uniform(d * f, in_f);
        b.proj_b = uniform(d, 0.02);
        w.blocks.push_back(std::move(b));
    }
    w.ln_final_gain = constant(d, 1.0f);
    w.ln_final_bias = constant(d, 0.0f);
    w.unembed = uniform(v * d, 1.0);
    return Model(c, std::move(w), Tokenizer::bytes());
}

} // namespace steerbench::runtime
