#include "steerbench/bench/config.hpp"

#include "steerbench/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace steerbench::bench {

using nlohmann::json;

namespace {

std::string read_file(const std::filesystem::path &path, const char *what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError(std::string("cannot open ") + what + " " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

void PromptDataset::validate() const {
    if (prompts.empty()) throw LoadError("prompt dataset is empty");
    std::set<std::string> ids;
    for (const auto &p : prompts) {
        if (p.id.empty()) throw LoadError("prompt without id");
        if (!ids.insert(p.id).second) throw LoadError("duplicate prompt id '" + p.id + "'");
        if (p.text.empty()) throw LoadError("prompt '" + p.id + "' has empty text");
        if (std::find(kPromptCategories.begin(), kPromptCategories.end(), p.category) == kPromptCategories.end())
            throw LoadError("prompt '" + p.id + "' has unknown category '" + p.category + "'");
    }
}

void PromptDataset::validate_default() const {
    validate();
    if (prompts.size() != 210)
        throw LoadError("default prompt set must hold 210 prompts, found " + std::to_string(prompts.size()));
    for (const auto &c : kPromptCategories)
        if (std::none_of(prompts.begin(), prompts.end(), [&](const Prompt &p) { return p.category == c; }))
            throw LoadError("prompt category '" + c + "' is empty");
}

PromptDataset load_prompts(const std::filesystem::path &path) {
    PromptDataset ds;
    try {
        const json j = json::parse(read_file(path, "prompt dataset"));
        for (const auto &p : j.at("prompts"))
            ds.prompts.push_back({p.at("id").get<std::string>(), p.at("text").get<std::string>(),
                                  p.at("category").get<std::string>()});
    } catch (const json::exception &e) {
        throw LoadError("prompt dataset " + path.string() + ": " + e.what());
    }
    ds.validate();
    return ds;
}

void SweepConfig::validate(int n_layers, bool require_alphas) const {
    require(!layers.empty(), "sweep config lists no layers");
    for (int l : layers)
        require(l >= 0 && l < n_layers,
                "layer " + std::to_string(l) + " invalid for a model with " + std::to_string(n_layers) + " layers");
    require(!methods.empty(), "sweep config lists no methods");
    require(!topics.empty(), "sweep config lists no topics");
    static const std::set<std::string> known = {kLogitLens, kTunedLens, kSae, kProbe, kSteering, kControl};
    std::set<std::string> seen;
    for (const auto &m : methods) {
        require(known.count(m.name), "unknown method '" + m.name + "'");
        require(seen.insert(m.name).second, "method '" + m.name + "' listed twice");
        require(!require_alphas || !m.alphas.empty(), "alpha grid for '" + m.name + "' is empty");
        for (double a : m.alphas) require(std::isfinite(a), "alpha grid for '" + m.name + "' has a non-finite value");
        if (m.name == kTunedLens) require(!m.archive.empty(), "tuned_lens needs a translator archive");
        if (m.name == kSae) require(!m.archive.empty() && !m.metadata.empty(), "sae needs archive and metadata");
    }
    require(prompt_limit >= 0 && prompt_offset >= 0, "prompt limit/offset must be non-negative");
    require(workers >= 1, "workers must be at least 1");
    require(judge == "stub" || judge == "remote" || judge == "none", "judge must be stub, remote or none");
    generation.validate();
}

std::filesystem::path SweepConfig::resolve(const std::string &p) const {
    const std::filesystem::path path(p);
    if (path.is_absolute() || base_dir.empty()) return path;
    return std::filesystem::path(base_dir) / path;
}

SweepConfig parse_sweep_config(const std::string &json_text, const std::filesystem::path &base_dir) {
    SweepConfig c;
    c.base_dir = base_dir.string();
    try {
        const json j = json::parse(json_text);
        c.model = j.value("model", c.model);
        c.model_config = j.value("model_config", "");
        c.model_id = j.value("model_id", "");
        if (j.contains("layer")) c.layers = {j["layer"].get<int>()};
        if (j.contains("layers")) c.layers = j["layers"].get<std::vector<int>>();
        c.topics = j.at("topics").get<std::vector<std::string>>();
        c.prompts = j.value("prompts", c.prompts);
        c.prompt_limit = j.value("prompt_limit", 0);
        c.prompt_offset = j.value("prompt_offset", 0);
        c.output_dir = j.value("output_dir", c.output_dir);
        c.seed = j.value("seed", std::uint64_t{0});
        c.workers = j.value("workers", 1);
        c.judge = j.value("judge", c.judge);
        c.perplexity = j.value("perplexity", false);
        c.grammar = j.value("grammar", false);
        c.store_directions = j.value("store_directions", true);
        if (j.contains("generation")) {
            const auto &g = j["generation"];
            c.generation.max_new_tokens = g.value("max_new_tokens", c.generation.max_new_tokens);
            const std::string dec = g.value("decoding", "greedy");
            if (dec == "greedy") c.generation.decoding = runtime::GenerationSettings::Decoding::Greedy;
            else if (dec == "sample") c.generation.decoding = runtime::GenerationSettings::Decoding::Sample;
            else throw LoadError("unknown decoding '" + dec + "'");
            c.generation.temperature = g.value("temperature", 1.0);
        }
        c.generation.seed = c.seed;
        for (const auto &m : j.at("methods")) {
            MethodConfig mc;
            mc.name = m.at("name").get<std::string>();
            if (m.contains("alphas")) mc.alphas = m["alphas"].get<std::vector<double>>();
            mc.archive = m.value("archive", "");
            mc.metadata = m.value("metadata", "");
            mc.prefix = m.value("prefix", "");
            mc.final_norm = m.value("final_norm", false);
            c.methods.push_back(std::move(mc));
        }
    } catch (const json::exception &e) {
        throw LoadError(std::string("sweep config: ") + e.what());
    }
    return c;
}

SweepConfig load_sweep_config(const std::filesystem::path &path) {
    return parse_sweep_config(read_file(path, "sweep config"), path.parent_path());
}

std::vector<double> default_alphas(const std::string &model_id, const std::string &method) {
    static const std::map<std::string, std::map<std::string, std::vector<double>>> table = {
        {"gpt2",
         {{kLogitLens, {50, 70, 90, 110, 130}},
          {kTunedLens, {20, 25, 30, 35, 40}},
          {kSae, {3, 4, 5, 6}},
          {kProbe, {150, 200, 250, 300, 350}},
          {kSteering, {2, 4, 6, 8, 10}}}},
        {"gemma-2-2b",
         {{kLogitLens, {100, 130, 160, 200, 230}},
          {kSae, {1, 2, 3, 4, 5}},
          {kProbe, {200, 250, 300, 350}},
          {kSteering, {3, 4, 5, 6}}}},
        {"llama-2-7b",
         {{kLogitLens, {0.5, 3, 7, 11, 15, 19}},
          {kTunedLens, {1, 7, 11, 15, 19, 23}},
          {kProbe, {10, 90, 110, 130, 150}},
          {kSteering, {0.5, 3, 4, 5, 6}}}},
    };
    const auto it = table.find(model_id);
    if (it == table.end()) return {};
    const auto jt = it->second.find(method);
    return jt == it->second.end() ? std::vector<double>{} : jt->second;
}

std::vector<double> propose_alphas(double noop_alpha, int count) {
    require(std::isfinite(noop_alpha) && noop_alpha > 0.0, "propose_alphas: no-op alpha must be positive");
    require(count >= 1, "propose_alphas: count must be positive");
    std::vector<double> out;
    for (int i = 0; i < count; ++i) out.push_back(noop_alpha * std::ldexp(1.0, i));
    return out;
}

} // namespace steerbench::bench
