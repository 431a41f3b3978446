#pragma once

#include "steerbench/runtime/forward.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace steerbench::bench {

struct Prompt {
    std::string id;
    std::string text;
    std::string category;
};

inline const std::vector<std::string> kPromptCategories = {"poetry",  "travel", "nature", "journaling",
                                                           "science", "arts",   "misc"};

struct PromptDataset {
    std::vector<Prompt> prompts;

    // Unique ids, known categories, non-empty text.
    void validate() const;
    // Checks for the shipped default: 210 prompts, every category used.
    void validate_default() const;
};

// {"prompts": [{"id", "text", "category"}, ...]}
PromptDataset load_prompts(const std::filesystem::path &path);

// Method names used in configs and records.
inline constexpr const char *kLogitLens = "logit_lens";
inline constexpr const char *kTunedLens = "tuned_lens";
inline constexpr const char *kSae = "sae";
inline constexpr const char *kProbe = "probe";
inline constexpr const char *kSteering = "steering";
inline constexpr const char *kControl = "control";
inline constexpr const char *kPrompting = "prompting";

struct MethodConfig {
    std::string name;
    std::vector<double> alphas;
    std::string archive;      // tuned_lens translator / sae weights
    std::string metadata;     // sae metadata JSON
    std::string prefix;       // tuned_lens tensor prefix; "{layer}" is substituted
    bool final_norm = false;  // lenses: fold the final LayerNorm into encode
    bool alphas_proposed = false; // grid was auto-proposed, not taken from a table
};

struct SweepConfig {
    // Either "tiny:<seed>" or an archive path with a config next to it.
    std::string model = "tiny:0";
    std::string model_config; // defaults to <archive dir>/config.json
    std::string model_id;     // defaults to the config's model_id
    std::vector<int> layers;
    std::vector<MethodConfig> methods;
    std::vector<std::string> topics; // topic spec paths
    std::string prompts = "data/prompts.json";
    int prompt_limit = 0;      // 0: all
    int prompt_offset = 0;
    runtime::GenerationSettings generation = runtime::GenerationSettings::greedy(30);
    std::string output_dir = "runs/default";
    std::uint64_t seed = 0;
    int workers = 1;
    std::string judge = "stub"; // "stub" | "remote" | "none"
    bool perplexity = false;
    bool grammar = false;
    bool store_directions = true;
    std::string base_dir; // for resolving relative paths; set by load_sweep_config

    void validate(int n_layers, bool require_alphas = true) const;
    std::filesystem::path resolve(const std::string &p) const;
};

SweepConfig parse_sweep_config(const std::string &json_text, const std::filesystem::path &base_dir = {});
SweepConfig load_sweep_config(const std::filesystem::path &path);

// Tabulated alpha grids (gpt2 L9, gemma-2-2b L20, llama-2-7b L18); empty if unknown.
std::vector<double> default_alphas(const std::string &model_id, const std::string &method);
// Geometric grid for models without tabulated values: noop_alpha * {1, 2, 4, 8, 16}.
std::vector<double> propose_alphas(double noop_alpha, int count = 5);

} // namespace steerbench::bench
