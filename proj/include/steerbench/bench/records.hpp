#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace steerbench::bench {

// One (prompt, topic, method, alpha, layer) cell of a sweep.
struct RunRecord {
    std::string run_id;
    std::string model_id;
    std::string prompt_id;
    std::string prompt;
    std::string topic;
    std::string method;
    int layer = 0;
    double alpha = 0.0;
    double edit_distance = 0.0;
    std::vector<float> edit_direction; // optional; stored as base64 float32 LE
    std::string clean_text;
    std::string intervened_text;
    bool success = false;
    bool clean_success = false;
    std::optional<double> token_probability;
    std::optional<double> coherence;
    std::optional<double> clean_coherence;
    std::optional<double> perplexity;
    std::optional<int> grammar_errors;
    std::vector<std::string> flags;
};

std::string record_to_json_line(const RunRecord &r);
RunRecord record_from_json_line(const std::string &line);

// Reads a JSONL file; a truncated final line (interrupted write) is skipped.
std::vector<RunRecord> read_records(const std::filesystem::path &path);
void write_records(const std::filesystem::path &path, const std::vector<RunRecord> &records);

std::string base64_encode_floats(const std::vector<float> &v);
std::vector<float> base64_decode_floats(const std::string &s);

// Stable run id, e.g. "L9|logit_lens|coffee|a=50|p017".
std::string make_run_id(int layer, const std::string &method, const std::string &topic, double alpha,
                        const std::string &prompt_id);

} // namespace steerbench::bench
