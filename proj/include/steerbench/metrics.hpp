#pragma once

#include "steerbench/codec.hpp"
#include "steerbench/runtime/model.hpp"
#include "steerbench/topic.hpp"

#include <chrono>
#include <map>
#include <memory>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace steerbench::metrics {

using codec::Matrix;
using codec::Vector;

// Pluggable language identification for language-kind detectors.
class LanguageDetector {
public:
    virtual ~LanguageDetector() = default;
    // Language code of one segment, or "und" when undecided.
    virtual std::string detect(std::string_view segment) const = 0;
    virtual bool supports(std::string_view code) const = 0;
};

// Stopword voting over en/fr/de/es. Good enough to tell a French continuation
// from an English one; not a general-purpose identifier.
class StopwordLanguageDetector final : public LanguageDetector {
public:
    std::string detect(std::string_view segment) const override;
    bool supports(std::string_view code) const override;
};

// Process-wide default; nullptr until set. success() on a language detector
// with no backend throws BackendUnavailableError.
void set_language_detector(std::shared_ptr<const LanguageDetector> detector);
std::shared_ptr<const LanguageDetector> language_detector();

bool keyword_match(std::string_view text, std::string_view keyword, bool case_fold, bool word_boundary);
bool success(std::string_view output_text, const TopicDetector &detector);
bool success(std::string_view output_text, const TopicDetector &detector, const LanguageDetector *backend);
double success_rate(std::span<const std::string> outputs, const TopicDetector &detector);

// Mean over steps of the summed softmax probability on `topic_token_ids`.
double intervened_token_probability(std::span<const std::vector<float>> step_logits,
                                    std::span<const int> topic_token_ids);

struct JudgeVerdict {
    std::optional<double> score; // empty: judge failed after retries
    std::string rater_id;
    std::string raw_response;

    bool missing() const { return !score.has_value(); }
};

class Judge {
public:
    virtual ~Judge() = default;
    virtual JudgeVerdict rate(std::string_view prompt, std::string_view output) = 0;
    virtual std::string id() const = 0;
};

extern const char *const kJudgeInstruction;
std::string judge_message(std::string_view prompt, std::string_view output);
// First integer in a judge reply, if it lies in [1, 10].
std::optional<double> parse_judge_score(std::string_view reply);

struct StubFeatures {
    double diversity = 0.0; // min of word-share and distinct-trigram terms, in [0, 1]
    double validity = 0.0;  // share of words that look like real words
    double relevance = 0.0; // prompt content words reused, saturating at 2
    int words = 0;
};

StubFeatures stub_features(std::string_view prompt, std::string_view output);
// score = 1 + 9 * diversity * (0.8 * validity + 0.2 * relevance)
double stub_score(const StubFeatures &f);

// Deterministic offline judge.
class HeuristicJudge final : public Judge {
public:
    JudgeVerdict rate(std::string_view prompt, std::string_view output) override;
    std::string id() const override { return "heuristic-stub-v1"; }
};

struct RemoteJudgeOptions {
    std::string url;   // chat-completion endpoint, e.g. https://host/v1/chat/completions
    std::string api_key;
    std::string model;
    int retries = 3;
    std::chrono::milliseconds timeout{30000};
    std::chrono::milliseconds backoff{500};

    // STEERBENCH_JUDGE_URL, STEERBENCH_JUDGE_KEY, STEERBENCH_JUDGE_MODEL.
    static std::optional<RemoteJudgeOptions> from_env();
};

class RemoteJudge final : public Judge {
public:
    explicit RemoteJudge(RemoteJudgeOptions options);
    JudgeVerdict rate(std::string_view prompt, std::string_view output) override;
    std::string id() const override { return "remote:" + options_.model; }

private:
    RemoteJudgeOptions options_;
    std::counting_semaphore<64> in_flight_{8};
};

JudgeVerdict coherence(std::string_view prompt, std::string_view output, Judge &judge);

// exp(mean NLL) of realized[i] under step_logits[i].
double perplexity_from_logits(std::span<const std::vector<float>> step_logits, std::span<const int> realized);
// Output tokens scored by `model` conditioned on `prompt`.
double perplexity(const runtime::Model &model, std::span<const int> prompt, std::span<const int> output);

struct GrammarResult {
    bool available = false;
    int errors = 0;
};

class GrammarChecker {
public:
    // Empty url disables the checker.
    explicit GrammarChecker(std::string url = {}, std::string language = "en-US",
                            std::chrono::milliseconds timeout = std::chrono::milliseconds(10000));
    static GrammarChecker from_env(); // STEERBENCH_GRAMMAR_URL
    bool enabled() const { return !url_.empty(); }
    GrammarResult check(std::string_view text) const;

private:
    std::string url_;
    std::string language_;
    std::chrono::milliseconds timeout_;
};

GrammarResult grammar_errors(std::string_view output, const GrammarChecker &checker);

struct Correlation {
    double r = 0.0;
    double r2 = 0.0;
};

Correlation pearson(std::span<const double> a, std::span<const double> b);
double spearman(std::span<const double> a, std::span<const double> b);

double cosine(const Vector &a, const Vector &b);

// directions[method][topic] -> symmetric matrix over `methods`, each entry the
// mean cosine across topics both methods share.
Matrix direction_similarity(const std::map<std::string, std::map<std::string, Vector>> &directions,
                            const std::vector<std::string> &methods);

struct Url {
    std::string scheme_host_port;
    std::string path;
};
Url split_url(const std::string &url);

} // namespace steerbench::metrics
