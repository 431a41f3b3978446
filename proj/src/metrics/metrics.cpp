#include "steerbench/metrics.hpp"

#include "steerbench/errors.hpp"
#include "steerbench/runtime/forward.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <mutex>
#include <numeric>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace steerbench::metrics {

namespace {

bool is_word_byte(unsigned char c) { return std::isalnum(c) || c == '_' || c >= 0x80; }

std::string fold(std::string_view s) {
    std::string out(s);
    for (auto &c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

// Collapses whitespace runs to single spaces so multi-word keywords match
// across line breaks.
std::string squash_space(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool in_space = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            in_space = true;
            continue;
        }
        if (in_space && !out.empty()) out.push_back(' ');
        in_space = false;
        out.push_back(c);
    }
    return out;
}

std::vector<std::string> words_of(std::string_view text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || c == '\'' || c >= 0x80) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

std::mutex g_detector_mutex;
std::shared_ptr<const LanguageDetector> g_detector;

} // namespace

// ---- language detection ----------------------------------------------------

namespace {

const std::map<std::string, std::unordered_set<std::string>> &stopwords() {
    static const std::map<std::string, std::unordered_set<std::string>> table = {
        {"en", {"the", "and", "is", "are", "was", "of", "to", "in", "that", "it", "with", "for", "on", "this",
                "have", "be", "you", "i", "my", "we", "they", "not", "but", "what", "at", "by", "from", "your"}},
        {"fr", {"le", "la", "les", "et", "est", "sont", "de", "des", "du", "un", "une", "que", "qui", "dans",
                "pour", "pas", "avec", "sur", "je", "nous", "vous", "il", "elle", "ce", "mon", "ma", "au", "aux"}},
        {"de", {"der", "die", "das", "und", "ist", "sind", "nicht", "mit", "ich", "ein", "eine", "zu", "auf",
                "für", "den", "dem", "von", "wir", "sie", "es", "auch", "mein", "aber"}},
        {"es", {"el", "los", "las", "y", "es", "son", "que", "en", "un", "una", "por", "para", "con", "no",
                "mi", "su", "lo", "como", "pero", "del", "al", "yo", "muy"}},
    };
    return table;
}

std::vector<std::string_view> sentences(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= text.size(); ++i) {
        if (i == text.size() || text[i] == '.' || text[i] == '!' || text[i] == '?' || text[i] == '\n') {
            if (i > start) out.push_back(text.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

} // namespace

std::string StopwordLanguageDetector::detect(std::string_view segment) const {
    const auto words = words_of(segment);
    std::string best = "und";
    int best_hits = 0;
    bool tie = false;
    for (const auto &[code, list] : stopwords()) {
        int hits = 0;
        for (const auto &w : words) hits += list.count(w) ? 1 : 0;
        if (hits > best_hits) {
            best = code;
            best_hits = hits;
            tie = false;
        } else if (hits == best_hits && hits > 0) {
            tie = true;
        }
    }
    return tie ? "und" : best;
}

bool StopwordLanguageDetector::supports(std::string_view code) const { return stopwords().count(std::string(code)); }

void set_language_detector(std::shared_ptr<const LanguageDetector> detector) {
    std::lock_guard lock(g_detector_mutex);
    g_detector = std::move(detector);
}

std::shared_ptr<const LanguageDetector> language_detector() {
    std::lock_guard lock(g_detector_mutex);
    return g_detector;
}

// ---- success ---------------------------------------------------------------

bool keyword_match(std::string_view text, std::string_view keyword, bool case_fold, bool word_boundary) {
    std::string hay = squash_space(text);
    std::string needle = squash_space(keyword);
    if (needle.empty()) return false;
    if (case_fold) {
        hay = fold(hay);
        needle = fold(needle);
    }
    for (std::size_t pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) {
        if (!word_boundary) return true;
        const std::size_t end = pos + needle.size();
        const bool left_ok = pos == 0 || !is_word_byte(static_cast<unsigned char>(hay[pos - 1])) ||
                             !is_word_byte(static_cast<unsigned char>(needle.front()));
        const bool right_ok = end == hay.size() || !is_word_byte(static_cast<unsigned char>(hay[end])) ||
                              !is_word_byte(static_cast<unsigned char>(needle.back()));
        if (left_ok && right_ok) return true;
    }
    return false;
}

bool success(std::string_view output_text, const TopicDetector &detector, const LanguageDetector *backend) {
    detector.validate();
    if (detector.kind == TopicDetector::Kind::Keyword) {
        for (const auto &k : detector.keywords)
            if (keyword_match(output_text, k, detector.case_fold, detector.word_boundary)) return true;
        return false;
    }
    if (backend == nullptr) throw BackendUnavailableError("no language detector backend configured");
    if (!backend->supports(detector.language))
        throw BackendUnavailableError("language detector cannot identify '" + detector.language + "'");
    // Majority by word count over sentence-level labels.
    std::size_t target = 0, total = 0;
    for (auto s : sentences(output_text)) {
        const std::size_t n = words_of(s).size();
        total += n;
        if (backend->detect(s) == detector.language) target += n;
    }
    return total > 0 && 2 * target > total;
}

bool success(std::string_view output_text, const TopicDetector &detector) {
    if (detector.kind == TopicDetector::Kind::Keyword) return success(output_text, detector, nullptr);
    const auto backend = language_detector();
    return success(output_text, detector, backend.get());
}

double success_rate(std::span<const std::string> outputs, const TopicDetector &detector) {
    require(!outputs.empty(), "success_rate: no records");
    std::size_t passed = 0;
    for (const auto &o : outputs) passed += success(o, detector) ? 1 : 0;
    return static_cast<double>(passed) / static_cast<double>(outputs.size());
}

// ---- token probability -----------------------------------------------------

double intervened_token_probability(std::span<const std::vector<float>> step_logits,
                                    std::span<const int> topic_token_ids) {
    require(!step_logits.empty(), "intervened_token_probability: no generated steps");
    require(!topic_token_ids.empty(), "intervened_token_probability: empty topic token set");
    const std::set<int> ids(topic_token_ids.begin(), topic_token_ids.end());
    double total = 0.0;
    for (const auto &logits : step_logits) {
        require(!logits.empty(), "intervened_token_probability: empty logits row");
        for (int id : ids)
            require(id >= 0 && static_cast<std::size_t>(id) < logits.size(),
                    "intervened_token_probability: token id " + std::to_string(id) + " out of range");
        const double m = *std::max_element(logits.begin(), logits.end());
        double z = 0.0, hit = 0.0;
        for (std::size_t i = 0; i < logits.size(); ++i) z += std::exp(static_cast<double>(logits[i]) - m);
        for (int id : ids) hit += std::exp(static_cast<double>(logits[static_cast<std::size_t>(id)]) - m);
        total += hit / z;
    }
    return total / static_cast<double>(step_logits.size());
}

// ---- coherence -------------------------------------------------------------

const char *const kJudgeInstruction =
    "Rate the following response for grammatical correctness, consistency, and relevance to the prompt on a "
    "scale of 1 to 10. Respond with a single integer.";

std::string judge_message(std::string_view prompt, std::string_view output) {
    std::string m = kJudgeInstruction;
    m += "\n\nPrompt: ";
    m += prompt;
    m += "\nResponse: ";
    m += output;
    return m;
}

std::optional<double> parse_judge_score(std::string_view reply) {
    for (std::size_t i = 0; i < reply.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(reply[i]))) continue;
        std::size_t j = i;
        while (j < reply.size() && std::isdigit(static_cast<unsigned char>(reply[j]))) ++j;
        if (j - i > 3) return std::nullopt;
        const int v = std::stoi(std::string(reply.substr(i, j - i)));
        if (v < 1 || v > 10) return std::nullopt;
        return static_cast<double>(v);
    }
    return std::nullopt;
}

namespace {

const std::unordered_set<std::string> &function_words() {
    static const std::unordered_set<std::string> s = {
        "a",    "an",   "the",  "and",  "or",   "but",  "of",   "to",   "in",   "on",   "at",   "for",  "with",
        "is",   "are",  "was",  "were", "be",   "been", "have", "has",  "had",  "do",   "does", "did",  "i",
        "you",  "he",   "she",  "it",   "we",   "they", "me",   "my",   "your", "our",  "their", "this", "that",
        "what", "which", "who", "how",  "why",  "when", "where", "will", "would", "can", "could", "should",
        "from", "by",   "as",   "so",   "if",   "not",  "no",   "yes",  "out",  "up",   "about", "into", "some"};
    return s;
}

// Length of the well-formed UTF-8 multibyte sequence starting at s[i], or 0.
std::size_t utf8_sequence(std::string_view s, std::size_t i) {
    const auto c = static_cast<unsigned char>(s[i]);
    const std::size_t len = c >= 0xF0 && c <= 0xF4 ? 4 : c >= 0xE0 ? 3 : c >= 0xC2 && c <= 0xDF ? 2 : 0;
    if (len == 0 || i + len > s.size()) return 0;
    for (std::size_t k = 1; k < len; ++k)
        if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) return 0;
    return len;
}

// Share of bytes that are printable ASCII, ordinary whitespace, or part of a
// well-formed UTF-8 sequence.
double clean_byte_ratio(std::string_view s) {
    if (s.empty()) return 1.0;
    std::size_t clean = 0;
    for (std::size_t i = 0; i < s.size();) {
        const auto c = static_cast<unsigned char>(s[i]);
        if ((c >= 0x20 && c < 0x7F) || c == '\n' || c == '\t' || c == '\r') {
            ++clean;
            ++i;
        } else if (const std::size_t len = c >= 0x80 ? utf8_sequence(s, i) : 0; len > 0) {
            clean += len;
            i += len;
        } else {
            ++i;
        }
    }
    return static_cast<double>(clean) / static_cast<double>(s.size());
}

bool looks_like_word(const std::string &w) {
    if (w.size() > 20) return false;
    bool has_alpha = false, has_vowel = false, has_digit = false;
    int run = 1;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const auto c = static_cast<unsigned char>(w[i]);
        if (c >= 0x80) {
            // Non-ASCII letters are accepted when well-formed.
            const std::size_t len = utf8_sequence(w, i);
            if (len == 0) return false;
            has_alpha = has_vowel = true;
            i += len - 1;
            run = 1;
            continue;
        }
        if (std::isalpha(c)) {
            has_alpha = true;
            if (std::strchr("aeiouy", c)) has_vowel = true;
        }
        if (std::isdigit(c)) has_digit = true;
        run = i > 0 && w[i] == w[i - 1] ? run + 1 : 1;
        if (run > 2 && std::isalpha(c)) return false;
    }
    if (has_digit && !has_alpha) return true; // numbers are fine
    return has_alpha && (has_vowel || w.size() <= 2) && !(has_digit && has_alpha);
}

std::string stem(const std::string &w) { return w.substr(0, std::min<std::size_t>(w.size(), 5)); }

} // namespace

StubFeatures stub_features(std::string_view prompt, std::string_view output) {
    StubFeatures f;
    const auto words = words_of(output);
    f.words = static_cast<int>(words.size());
    if (words.empty()) return f;

    std::unordered_map<std::string, int> counts;
    int max_count = 0;
    for (const auto &w : words) max_count = std::max(max_count, ++counts[w]);
    const double max_share = static_cast<double>(max_count) / static_cast<double>(words.size());
    const double word_term = std::clamp((0.5 - max_share) / 0.3, 0.0, 1.0);
    double trigram_term = 1.0;
    if (words.size() >= 6) {
        std::set<std::string> distinct;
        const std::size_t n = words.size() - 2;
        for (std::size_t i = 0; i < n; ++i) distinct.insert(words[i] + ' ' + words[i + 1] + ' ' + words[i + 2]);
        const double ratio = static_cast<double>(distinct.size()) / static_cast<double>(n);
        trigram_term = std::clamp((ratio - 0.3) / 0.5, 0.0, 1.0);
    }
    // Very short outputs cannot be judged fluent.
    const double length_term = std::min(1.0, static_cast<double>(words.size()) / 5.0);
    f.diversity = std::min(word_term, trigram_term) * length_term;

    int valid = 0;
    for (const auto &w : words) valid += looks_like_word(w) ? 1 : 0;
    f.validity = static_cast<double>(valid) / static_cast<double>(words.size()) * clean_byte_ratio(output);

    std::set<std::string> prompt_stems, shared;
    for (const auto &w : words_of(prompt))
        if (w.size() >= 4 && !function_words().count(w)) prompt_stems.insert(stem(w));
    for (const auto &w : words)
        if (w.size() >= 4 && prompt_stems.count(stem(w))) shared.insert(stem(w));
    f.relevance = std::min(1.0, static_cast<double>(shared.size()) / 2.0);
    return f;
}

double stub_score(const StubFeatures &f) { return 1.0 + 9.0 * f.diversity * (0.8 * f.validity + 0.2 * f.relevance); }

JudgeVerdict HeuristicJudge::rate(std::string_view prompt, std::string_view output) {
    const StubFeatures f = stub_features(prompt, output);
    const double s = stub_score(f);
    char raw[160];
    std::snprintf(raw, sizeof raw, "diversity=%.4f validity=%.4f relevance=%.4f words=%d", f.diversity, f.validity,
                  f.relevance, f.words);
    return {s, id(), raw};
}

JudgeVerdict coherence(std::string_view prompt, std::string_view output, Judge &judge) {
    JudgeVerdict v = judge.rate(prompt, output);
    if (v.score && (*v.score < 1.0 || *v.score > 10.0)) v.score.reset();
    return v;
}

// ---- perplexity ------------------------------------------------------------

double perplexity_from_logits(std::span<const std::vector<float>> step_logits, std::span<const int> realized) {
    require(!realized.empty(), "perplexity: empty output");
    require(step_logits.size() == realized.size(), "perplexity: one logits row per realized token required");
    double nll = 0.0;
    for (std::size_t t = 0; t < realized.size(); ++t) {
        const auto &row = step_logits[t];
        const int id = realized[t];
        require(id >= 0 && static_cast<std::size_t>(id) < row.size(), "perplexity: token id out of range");
        const double m = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (float l : row) z += std::exp(static_cast<double>(l) - m);
        nll += -(static_cast<double>(row[static_cast<std::size_t>(id)]) - m - std::log(z));
    }
    return std::exp(nll / static_cast<double>(realized.size()));
}

double perplexity(const runtime::Model &model, std::span<const int> prompt, std::span<const int> output) {
    require(!prompt.empty(), "perplexity: the prompt must contain at least one token");
    require(!output.empty(), "perplexity: empty output");
    const std::size_t total = prompt.size() + output.size();
    if (total > static_cast<std::size_t>(model.config().max_context))
        throw ContextOverflowError("perplexity: " + std::to_string(total) + " tokens exceed the context of " +
                                   std::to_string(model.config().max_context));
    std::vector<int> seq(prompt.begin(), prompt.end());
    seq.insert(seq.end(), output.begin(), output.end());
    const runtime::ForwardResult fr = runtime::forward(model, seq);
    std::vector<std::vector<float>> rows;
    rows.reserve(output.size());
    for (std::size_t t = 0; t < output.size(); ++t) {
        const auto row = fr.logits_row(static_cast<int>(prompt.size() + t) - 1);
        rows.emplace_back(row.begin(), row.end());
    }
    return perplexity_from_logits(rows, output);
}

GrammarResult grammar_errors(std::string_view output, const GrammarChecker &checker) {
    if (!checker.enabled()) return {false, 0};
    if (output.empty()) return {true, 0};
    return checker.check(output);
}

// ---- correlation and similarity --------------------------------------------

Correlation pearson(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), "pearson: length mismatch");
    require(a.size() >= 2, "pearson: need at least two points");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (!(saa > 0.0) || !(sbb > 0.0)) throw DegenerateInputError("pearson: zero variance");
    double r = sab / std::sqrt(saa * sbb);
    r = std::clamp(r, -1.0, 1.0);
    return {r, r * r};
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
        i = j + 1;
    }
    return r;
}

} // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
    const auto ra = ranks(a), rb = ranks(b);
    return pearson(ra, rb).r;
}

double cosine(const Vector &a, const Vector &b) {
    require(a.size() == b.size(), "cosine: length mismatch");
    const double na = a.norm(), nb = b.norm();
    if (!(na > 0.0) || !(nb > 0.0)) throw DegenerateInputError("cosine: zero vector");
    return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

Matrix direction_similarity(const std::map<std::string, std::map<std::string, Vector>> &directions,
                            const std::vector<std::string> &methods) {
    require(!methods.empty(), "direction_similarity: no methods");
    Eigen::Index d = -1;
    for (const auto &m : methods) {
        const auto it = directions.find(m);
        require(it != directions.end() && !it->second.empty(), "direction_similarity: no directions for '" + m + "'");
        for (const auto &[topic, v] : it->second) {
            if (d < 0) d = v.size();
            require(v.size() == d, "direction_similarity: inconsistent vector lengths");
            if (!(v.norm() > 0.0)) throw DegenerateInputError("direction_similarity: zero vector for " + m + "/" + topic);
        }
    }
    const auto n = static_cast<Eigen::Index>(methods.size());
    Matrix out = Matrix::Identity(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const auto &a = directions.at(methods[static_cast<std::size_t>(i)]);
            const auto &b = directions.at(methods[static_cast<std::size_t>(j)]);
            double sum = 0.0;
            int count = 0;
            for (const auto &[topic, va] : a) {
                const auto it = b.find(topic);
                if (it == b.end()) continue;
                sum += cosine(va, it->second);
                ++count;
            }
            const double v = count > 0 ? sum / count : std::numeric_limits<double>::quiet_NaN();
            out(i, j) = out(j, i) = v;
        }
    }
    return out;
}

} // namespace steerbench::metrics
