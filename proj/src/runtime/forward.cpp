#include "steerbench/runtime/forward.hpp"

#include "steerbench/errors.hpp"
#include "steerbench/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace steerbench::runtime {

bool PositionSelector::selects(int position, int seq_len) const {
    switch (kind) {
    case Kind::All: return true;
    case Kind::Last: return position == seq_len - 1;
    case Kind::Explicit: return std::find(positions.begin(), positions.end(), position) != positions.end();
    }
    return false;
}

std::span<const float> TapCapture::row(int absolute_position) const {
    const int r = absolute_position - first_position;
    if (r < 0 || r >= rows) throw ContractError("tap capture does not cover position " + std::to_string(absolute_position));
    return {values.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(width), static_cast<std::size_t>(width)};
}

std::span<const float> ForwardResult::logits_row(int position) const {
    if (position < 0 || position >= seq_len) throw ContractError("logits row out of range");
    return {logits.data() + static_cast<std::size_t>(position) * static_cast<std::size_t>(vocab), static_cast<std::size_t>(vocab)};
}

const TapCapture &ForwardResult::capture(int layer) const {
    for (const auto &c : captures)
        if (c.layer == layer) return c;
    throw ContractError("no tap capture at layer " + std::to_string(layer));
}

void validate_taps(const Model &model, std::span<const ResidualTap> taps) {
    std::set<int> layers;
    for (const auto &tap : taps) {
        if (tap.layer < 0 || tap.layer >= model.config().n_layers)
            throw ContractError("tap layer " + std::to_string(tap.layer) + " outside [0, " +
                                std::to_string(model.config().n_layers) + ")");
        if (tap.mode == TapMode::Replace && !tap.edit)
            throw ContractError("replace tap at layer " + std::to_string(tap.layer) + " has no edit callback");
        if (!layers.insert(tap.layer).second)
            throw ContractError("conflicting taps at layer " + std::to_string(tap.layer));
    }
}

int argmax(std::span<const float> v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

namespace {

void linear(KernelBackend backend, std::span<const float> x, std::size_t rows, std::size_t in,
            std::span<const float> w, std::span<const float> b, std::size_t out, std::span<float> y) {
    if (backend == KernelBackend::Parallel)
        kernels::parallel::linear(x, rows, in, w, b, out, y);
    else
        kernels::reference::linear(x, rows, in, w, b, out, y);
}

void attention(KernelBackend backend, std::span<const float> q, std::span<const float> k, std::span<const float> v,
               const kernels::AttentionShape &shape, std::span<float> out) {
    if (backend == KernelBackend::Parallel)
        kernels::parallel::causal_attention(q, k, v, shape, out);
    else
        kernels::reference::causal_attention(q, k, v, shape, out);
}

void layer_norm_rows(std::span<const float> x, std::size_t rows, std::size_t d, const std::vector<float> &gain,
                     const std::vector<float> &bias, float eps, std::span<float> out) {
    for (std::size_t r = 0; r < rows; ++r)
        kernels::layer_norm(x.subspan(r * d, d), gain, bias, eps, out.subspan(r * d, d));
}

} // namespace

std::vector<float> final_logits(const Model &model, std::span<const float> residual) {
    const auto &c = model.config();
    const auto d = static_cast<std::size_t>(c.d_model), v = static_cast<std::size_t>(c.vocab_size);
    require(residual.size() == d, "final_logits: residual length mismatch");
    std::vector<float> normed(d), logits(v);
    kernels::layer_norm(residual, model.weights().ln_final_gain, model.weights().ln_final_bias, c.layer_norm_eps, normed);
    kernels::parallel::linear(normed, 1, d, model.unembed(), {}, v, logits);
    return logits;
}

// ---------------------------------------------------------------------------

InferenceSession::InferenceSession(const Model &model, std::vector<ResidualTap> taps, SessionOptions options)
    : model_(&model), taps_(std::move(taps)), options_(options) {
    validate_taps(model, taps_);
    k_cache_.resize(static_cast<std::size_t>(model.config().n_layers));
    v_cache_.resize(static_cast<std::size_t>(model.config().n_layers));
}

InferenceSession::Pass InferenceSession::run(std::span<const int> new_tokens, int start, bool want_all_logits) {
    const auto &cfg = model_->config();
    const auto &W = model_->weights();
    const std::size_t d = static_cast<std::size_t>(cfg.d_model), f = static_cast<std::size_t>(cfg.d_ff),
                      vocab = static_cast<std::size_t>(cfg.vocab_size);
    const std::size_t m = new_tokens.size();
    const std::size_t total = static_cast<std::size_t>(start) + m;
    const int seq_len = static_cast<int>(total);
    const auto backend = options_.backend;

    if (m == 0) throw ContractError("forward: empty token sequence");
    if (total > static_cast<std::size_t>(cfg.max_context))
        throw ContextOverflowError("sequence of " + std::to_string(total) + " tokens exceeds context " +
                                   std::to_string(cfg.max_context));

    std::vector<float> x(m * d);
    for (std::size_t r = 0; r < m; ++r) {
        const int tok = new_tokens[r];
        if (tok < 0 || tok >= cfg.vocab_size) throw ContractError("token id " + std::to_string(tok) + " out of vocabulary");
        const float *e = W.embed.data() + static_cast<std::size_t>(tok) * d;
        const float *p = W.pos_embed.data() + (static_cast<std::size_t>(start) + r) * d;
        for (std::size_t i = 0; i < d; ++i) x[r * d + i] = e[i] + p[i];
    }

    std::vector<float> h(m * d), qkv(m * 3 * d), q(m * d), attn(m * d), proj(m * d), ff(m * f);
    captures_.clear();
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto &B = W.blocks[static_cast<std::size_t>(l)];
        auto &kc = k_cache_[static_cast<std::size_t>(l)];
        auto &vc = v_cache_[static_cast<std::size_t>(l)];
        kc.resize(total * d);
        vc.resize(total * d);

        // attention
        const bool pre = cfg.norm_style == NormStyle::Pre;
        if (pre)
            layer_norm_rows(x, m, d, B.ln1_gain, B.ln1_bias, cfg.layer_norm_eps, h);
        else
            h = x;
        linear(backend, h, m, d, B.qkv_w, B.qkv_b, 3 * d, qkv);
        for (std::size_t r = 0; r < m; ++r) {
            const float *row = qkv.data() + r * 3 * d;
            std::copy(row, row + d, q.data() + r * d);
            std::copy(row + d, row + 2 * d, kc.data() + (static_cast<std::size_t>(start) + r) * d);
            std::copy(row + 2 * d, row + 3 * d, vc.data() + (static_cast<std::size_t>(start) + r) * d);
        }
        kernels::AttentionShape shape{m, total, static_cast<std::size_t>(start), static_cast<std::size_t>(cfg.n_heads),
                                      static_cast<std::size_t>(cfg.head_dim())};
        attention(backend, q, kc, vc, shape, attn);
        linear(backend, attn, m, d, B.out_w, B.out_b, d, proj);
        for (std::size_t i = 0; i < m * d; ++i) x[i] += proj[i];
        if (!pre) layer_norm_rows(std::vector<float>(x), m, d, B.ln1_gain, B.ln1_bias, cfg.layer_norm_eps, x);

        // MLP
        if (pre)
            layer_norm_rows(x, m, d, B.ln2_gain, B.ln2_bias, cfg.layer_norm_eps, h);
        else
            h = x;
        linear(backend, h, m, d, B.fc_w, B.fc_b, f, ff);
        kernels::gelu_inplace(ff);
        linear(backend, ff, m, f, B.proj_w, B.proj_b, d, proj);
        for (std::size_t i = 0; i < m * d; ++i) x[i] += proj[i];
        if (!pre) layer_norm_rows(std::vector<float>(x), m, d, B.ln2_gain, B.ln2_bias, cfg.layer_norm_eps, x);

        for (const auto &tap : taps_) {
            if (tap.layer != l) continue;
            captures_.push_back({l, start, static_cast<int>(m), static_cast<int>(d), x});
            if (tap.mode != TapMode::Replace) continue;
            for (std::size_t r = 0; r < m; ++r) {
                const int pos = start + static_cast<int>(r);
                if (tap.positions.selects(pos, seq_len)) tap.edit(pos, std::span<float>(x.data() + r * d, d));
            }
        }
    }

    Pass pass;
    const std::size_t first = want_all_logits ? 0 : m - 1;
    const std::size_t rows = m - first;
    std::vector<float> normed(rows * d);
    layer_norm_rows(std::span<const float>(x).subspan(first * d), rows, d, W.ln_final_gain, W.ln_final_bias,
                    cfg.layer_norm_eps, normed);
    std::vector<float> logits(rows * vocab);
    linear(backend, normed, rows, d, W.unembed, {}, vocab, logits);
    pass.last_logits.assign(logits.end() - static_cast<std::ptrdiff_t>(vocab), logits.end());
    if (want_all_logits) pass.all_logits = std::move(logits);
    return pass;
}

std::vector<float> InferenceSession::append(std::span<const int> tokens) {
    if (options_.use_cache) {
        const int start = static_cast<int>(tokens_.size());
        auto pass = run(tokens, start, false);
        tokens_.insert(tokens_.end(), tokens.begin(), tokens.end());
        return std::move(pass.last_logits);
    }
    std::vector<int> all = tokens_;
    all.insert(all.end(), tokens.begin(), tokens.end());
    for (auto &k : k_cache_) k.clear();
    for (auto &v : v_cache_) v.clear();
    auto pass = run(all, 0, false);
    tokens_ = std::move(all);
    return std::move(pass.last_logits);
}

ForwardResult forward(const Model &model, std::span<const int> tokens, std::span<const ResidualTap> taps,
                      KernelBackend backend) {
    InferenceSession session(model, std::vector<ResidualTap>(taps.begin(), taps.end()), {false, backend});
    auto pass = session.run(tokens, 0, true);
    ForwardResult out;
    out.seq_len = static_cast<int>(tokens.size());
    out.vocab = model.config().vocab_size;
    out.logits = std::move(pass.all_logits);
    out.captures = std::move(session.captures_);
    return out;
}

ForwardResult forward_with_tap(const Model &model, std::span<const int> tokens, const ResidualTap &tap) {
    return forward(model, tokens, std::span<const ResidualTap>(&tap, 1));
}

// ---------------------------------------------------------------------------

void GenerationSettings::validate() const {
    if (max_new_tokens < 1) throw ContractError("max_new_tokens must be at least 1");
    if (decoding == Decoding::Sample && !(temperature > 0.0)) throw ContractError("sampling temperature must be positive");
}

namespace {

int sample_token(std::span<const float> logits, double temperature, Lcg64 &rng) {
    double maxv = -INFINITY;
    for (float v : logits) maxv = std::max(maxv, static_cast<double>(v));
    std::vector<double> p(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp((static_cast<double>(logits[i]) - maxv) / temperature);
        total += p[i];
    }
    const double u = rng.uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(p.size() - 1);
}

} // namespace

GenerationResult generate(const Model &model, std::span<const int> prompt, const GenerationSettings &settings,
                          std::span<const ResidualTap> taps, SessionOptions options) {
    settings.validate();
    if (prompt.empty()) throw ContractError("generate: empty prompt");
    const std::size_t needed = prompt.size() + static_cast<std::size_t>(settings.max_new_tokens);
    if (needed > static_cast<std::size_t>(model.config().max_context))
        throw ContextOverflowError("prompt of " + std::to_string(prompt.size()) + " tokens plus " +
                                   std::to_string(settings.max_new_tokens) + " new tokens exceeds context " +
                                   std::to_string(model.config().max_context));

    InferenceSession session(model, std::vector<ResidualTap>(taps.begin(), taps.end()), options);
    Lcg64 rng(settings.seed);
    GenerationResult result;
    std::vector<float> logits = session.append(prompt);
    result.prompt_captures = session.captures();
    for (int step = 0; step < settings.max_new_tokens; ++step) {
        const int next = settings.decoding == GenerationSettings::Decoding::Greedy
                             ? argmax(logits)
                             : sample_token(logits, settings.temperature, rng);
        result.tokens.push_back(next);
        result.step_logits.push_back(std::move(logits));
        if (step + 1 == settings.max_new_tokens) break;
        const int tok[1] = {next};
        logits = session.append(tok);
    }
    return result;
}

} // namespace steerbench::runtime
