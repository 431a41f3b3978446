#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace steerbench {

// How an output is judged to mention a topic.
struct TopicDetector {
    enum class Kind { Keyword, Language };
    Kind kind = Kind::Keyword;
    std::vector<std::string> keywords; // keyword kind: phrases and their variants
    std::string language;              // language kind: ISO code, e.g. "fr"
    bool case_fold = true;
    bool word_boundary = true;

    void validate() const;
};

// Topic spec file:
// {"name", "keywords": [...], "lens_tokens": [...], "sae_feature": {model_id: index},
//  "detector": {"kind": "keyword"|"language", "code", "case_fold", "word_boundary"}}
struct TopicSpec {
    std::string name;
    std::vector<std::string> keywords;
    std::vector<std::string> lens_tokens;
    std::map<std::string, long> sae_feature;
    TopicDetector detector;
    // Pair file for steering vectors / probes, relative to the topic file.
    std::string pairs_path;
};

TopicSpec load_topic(const std::filesystem::path &path);
TopicSpec parse_topic(const std::string &json_text, const std::filesystem::path &base_dir = {});

} // namespace steerbench
