#include "steerbench/bench/records.hpp"

#include "steerbench/errors.hpp"

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <cstring>
#include <fstream>
#include <sstream>

namespace steerbench::bench {

using nlohmann::json;

std::string base64_encode_floats(const std::vector<float> &v) {
    if (v.empty()) return {};
    std::vector<unsigned char> bytes(v.size() * 4);
    std::memcpy(bytes.data(), v.data(), bytes.size()); // host is little-endian (checked by the archive reader)
    std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char *>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::vector<float> base64_decode_floats(const std::string &s) {
    if (s.empty()) return {};
    if (s.size() % 4 != 0) throw LoadError("edit_direction: base64 length is not a multiple of 4");
    std::vector<unsigned char> bytes(s.size() / 4 * 3);
    const int n = EVP_DecodeBlock(bytes.data(), reinterpret_cast<const unsigned char *>(s.data()),
                                  static_cast<int>(s.size()));
    if (n < 0) throw LoadError("edit_direction: invalid base64");
    std::size_t len = static_cast<std::size_t>(n);
    // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
    for (std::size_t i = s.size(); i > 0 && s[i - 1] == '='; --i) --len;
    if (len % 4 != 0) throw LoadError("edit_direction: byte length is not a multiple of 4");
    std::vector<float> v(len / 4);
    std::memcpy(v.data(), bytes.data(), len);
    return v;
}

std::string make_run_id(int layer, const std::string &method, const std::string &topic, double alpha,
                        const std::string &prompt_id) {
    std::ostringstream os;
    os << 'L' << layer << '|' << method << '|' << topic << "|a=" << alpha << '|' << prompt_id;
    return os.str();
}

namespace {

template <class T> void put_opt(json &j, const char *key, const std::optional<T> &v) {
    j[key] = v ? json(*v) : json(nullptr);
}

template <class T> std::optional<T> get_opt(const json &j, const char *key) {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<T>();
}

} // namespace

std::string record_to_json_line(const RunRecord &r) {
    json j;
    j["run_id"] = r.run_id;
    j["model_id"] = r.model_id;
    j["prompt_id"] = r.prompt_id;
    j["prompt"] = r.prompt;
    j["topic"] = r.topic;
    j["method"] = r.method;
    j["layer"] = r.layer;
    j["alpha"] = r.alpha;
    j["edit_distance"] = r.edit_distance;
    if (!r.edit_direction.empty()) j["edit_direction"] = base64_encode_floats(r.edit_direction);
    j["clean_text"] = r.clean_text;
    j["intervened_text"] = r.intervened_text;
    j["success"] = r.success;
    j["clean_success"] = r.clean_success;
    put_opt(j, "token_probability", r.token_probability);
    put_opt(j, "coherence", r.coherence);
    put_opt(j, "clean_coherence", r.clean_coherence);
    put_opt(j, "perplexity", r.perplexity);
    put_opt(j, "grammar_errors", r.grammar_errors);
    j["flags"] = r.flags;
    // Byte-level models can emit invalid UTF-8; keep the line serializable.
    return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

RunRecord record_from_json_line(const std::string &line) {
    try {
        const json j = json::parse(line);
        RunRecord r;
        r.run_id = j.at("run_id").get<std::string>();
        r.model_id = j.value("model_id", "");
        r.prompt_id = j.at("prompt_id").get<std::string>();
        r.prompt = j.value("prompt", "");
        r.topic = j.at("topic").get<std::string>();
        r.method = j.at("method").get<std::string>();
        r.layer = j.at("layer").get<int>();
        r.alpha = j.at("alpha").get<double>();
        r.edit_distance = j.at("edit_distance").get<double>();
        if (j.contains("edit_direction")) r.edit_direction = base64_decode_floats(j["edit_direction"].get<std::string>());
        r.clean_text = j.value("clean_text", "");
        r.intervened_text = j.value("intervened_text", "");
        r.success = j.value("success", false);
        r.clean_success = j.value("clean_success", false);
        r.token_probability = get_opt<double>(j, "token_probability");
        r.coherence = get_opt<double>(j, "coherence");
        r.clean_coherence = get_opt<double>(j, "clean_coherence");
        r.perplexity = get_opt<double>(j, "perplexity");
        r.grammar_errors = get_opt<int>(j, "grammar_errors");
        r.flags = j.value("flags", std::vector<std::string>{});
        return r;
    } catch (const json::exception &e) {
        throw LoadError(std::string("malformed run record: ") + e.what());
    }
}

std::vector<RunRecord> read_records(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open records " + path.string());
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) lines.push_back(std::move(line));
    std::vector<RunRecord> out;
    out.reserve(lines.size());
    for (std::size_t i = 0; i < lines.size(); ++i) {
        try {
            out.push_back(record_from_json_line(lines[i]));
        } catch (const LoadError &) {
            if (i + 1 == lines.size()) break;
            throw;
        }
    }
    return out;
}

void write_records(const std::filesystem::path &path, const std::vector<RunRecord> &records) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw LoadError("cannot write " + tmp);
        for (const auto &r : records) out << record_to_json_line(r) << '\n';
    }
    std::filesystem::rename(tmp, path);
}

} // namespace steerbench::bench
