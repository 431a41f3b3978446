#pragma once

#include "steerbench/bench/config.hpp"
#include "steerbench/bench/records.hpp"
#include "steerbench/metrics.hpp"
#include "steerbench/runtime/model.hpp"
#include "steerbench/topic.hpp"

#include <functional>
#include <memory>

namespace steerbench::bench {

struct SweepOptions {
    bool resume = true;
    // Stop after this many newly completed cells (0: no limit). Used to
    // simulate interruption.
    int max_new_cells = 0;
    std::function<void(const std::string &)> progress;
};

struct SweepSummary {
    std::vector<RunRecord> records; // sorted by cell order
    int clean_generations = 0;      // computed in this invocation
    int intervened_generations = 0; // computed in this invocation
    int resumed_cells = 0;          // taken from the journal
    int failed_cells = 0;
    int total_cells = 0;
    std::vector<std::string> errors;
    std::vector<std::string> notes;

    bool complete() const { return failed_cells == 0 && static_cast<int>(records.size()) == total_cells; }
};

// Everything a sweep needs, loaded up front so that load failures abort
// before any generation.
struct SweepContext {
    std::shared_ptr<const runtime::Model> model;
    std::string model_id;
    PromptDataset prompts;
    std::vector<TopicSpec> topics;
    std::unique_ptr<metrics::Judge> judge;
    std::shared_ptr<metrics::GrammarChecker> grammar;
};

std::shared_ptr<const runtime::Model> load_sweep_model(const SweepConfig &config);
SweepContext prepare_sweep(const SweepConfig &config);

// Writes <output_dir>/journal.jsonl (append-only), clean.jsonl and the final
// records.jsonl sorted by cell order.
SweepSummary run_sweep(const SweepConfig &config, const SweepOptions &options = {});
SweepSummary run_sweep(const SweepConfig &config, SweepContext &context, const SweepOptions &options = {});

struct LayerRow {
    int layer = 0;
    std::string method;
    int runs = 0;
    double success_rate = 0.0;
    double clean_success_rate = 0.0;
    double mean_edit_distance = 0.0;
    std::optional<double> mean_coherence;
};

// Same alpha per method at every layer; one row per (layer, method).
std::vector<LayerRow> layer_sweep(const SweepConfig &config, SweepSummary *summary = nullptr,
                                  const SweepOptions &options = {});
std::vector<LayerRow> summarize_layers(const std::vector<RunRecord> &records);

std::string prompting_text(const std::string &topic, const std::string &prompt);

// Refused (ContractError) unless the model config is flagged instruction-tuned.
std::vector<RunRecord> prompting_baseline(const runtime::Model &model, const std::string &model_id,
                                          const std::vector<Prompt> &prompts, const std::vector<TopicSpec> &topics,
                                          const runtime::GenerationSettings &generation,
                                          metrics::Judge *judge = nullptr);

// Token ids whose probability is tracked: leading token of each lens word,
// falling back to the keywords.
std::vector<int> topic_token_ids(const TopicSpec &topic, const runtime::Tokenizer &tokenizer);

} // namespace steerbench::bench
