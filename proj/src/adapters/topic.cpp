#include "steerbench/topic.hpp"

#include "steerbench/errors.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

namespace steerbench {

void TopicDetector::validate() const {
    if (kind == Kind::Keyword && keywords.empty()) throw ContractError("keyword detector needs at least one keyword");
    if (kind == Kind::Language && language.empty()) throw ContractError("language detector needs a language code");
}

TopicSpec parse_topic(const std::string &json_text, const std::filesystem::path &base_dir) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception &e) {
        throw LoadError(std::string("malformed topic spec: ") + e.what());
    }
    TopicSpec t;
    try {
        t.name = j.at("name").get<std::string>();
        t.keywords = j.value("keywords", std::vector<std::string>{});
        t.lens_tokens = j.value("lens_tokens", std::vector<std::string>{});
        if (j.contains("sae_feature"))
            for (auto it = j["sae_feature"].begin(); it != j["sae_feature"].end(); ++it)
                t.sae_feature[it.key()] = it.value().get<long>();
        if (j.contains("pairs")) {
            const std::filesystem::path p = j["pairs"].get<std::string>();
            t.pairs_path = (p.is_absolute() || base_dir.empty() ? p : base_dir / p).string();
        }
        const auto det = j.value("detector", nlohmann::json::object());
        const std::string kind = det.value("kind", "keyword");
        if (kind == "keyword") {
            t.detector.kind = TopicDetector::Kind::Keyword;
            t.detector.keywords = det.value("keywords", t.keywords);
        } else if (kind == "language") {
            t.detector.kind = TopicDetector::Kind::Language;
            t.detector.language = det.at("code").get<std::string>();
        } else {
            throw LoadError("topic '" + t.name + "': unknown detector kind '" + kind + "'");
        }
        t.detector.case_fold = det.value("case_fold", true);
        t.detector.word_boundary = det.value("word_boundary", true);
    } catch (const nlohmann::json::exception &e) {
        throw LoadError(std::string("topic spec: ") + e.what());
    }
    try {
        t.detector.validate();
    } catch (const ContractError &e) {
        throw LoadError("topic '" + t.name + "': " + e.what());
    }
    return t;
}

TopicSpec load_topic(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open topic spec " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_topic(ss.str(), path.parent_path());
}

} // namespace steerbench
