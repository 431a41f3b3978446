// Eigen first: <resolv.h>, pulled in by httplib, defines a `_res` macro that
// collides with Eigen parameter names.
#include "steerbench/errors.hpp"
#include "steerbench/metrics.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <thread>

namespace steerbench::metrics {

namespace {

using nlohmann::json;

std::string env_or_empty(const char *name) {
    const char *v = std::getenv(name);
    return v ? std::string(v) : std::string();
}

httplib::Client make_client(const Url &u, std::chrono::milliseconds timeout) {
    httplib::Client cli(u.scheme_host_port);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
    cli.set_connection_timeout(secs.count(), usecs.count());
    cli.set_read_timeout(secs.count(), usecs.count());
    cli.set_write_timeout(secs.count(), usecs.count());
    return cli;
}

} // namespace

Url split_url(const std::string &url) {
    const auto scheme_end = url.find("://");
    require(scheme_end != std::string::npos, "url '" + url + "' has no scheme");
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

std::optional<RemoteJudgeOptions> RemoteJudgeOptions::from_env() {
    RemoteJudgeOptions o;
    o.url = env_or_empty("STEERBENCH_JUDGE_URL");
    if (o.url.empty()) return std::nullopt;
    o.api_key = env_or_empty("STEERBENCH_JUDGE_KEY");
    o.model = env_or_empty("STEERBENCH_JUDGE_MODEL");
    if (o.model.empty()) o.model = "default";
    return o;
}

RemoteJudge::RemoteJudge(RemoteJudgeOptions options) : options_(std::move(options)) {
    require(!options_.url.empty(), "remote judge needs an endpoint url");
    require(options_.retries >= 0, "remote judge retries must be non-negative");
    split_url(options_.url);
}

JudgeVerdict RemoteJudge::rate(std::string_view prompt, std::string_view output) {
    const Url u = split_url(options_.url);
    const json body = {{"model", options_.model},
                       {"temperature", 0},
                       {"messages", json::array({{{"role", "user"}, {"content", judge_message(prompt, output)}}})}};
    const std::string payload = body.dump(-1, ' ', false, json::error_handler_t::replace);
    httplib::Headers headers;
    if (!options_.api_key.empty()) headers.emplace("Authorization", "Bearer " + options_.api_key);

    JudgeVerdict verdict{std::nullopt, id(), ""};
    for (int attempt = 0; attempt <= options_.retries; ++attempt) {
        if (attempt > 0) std::this_thread::sleep_for(options_.backoff * attempt);
        in_flight_.acquire();
        httplib::Result res = [&] {
            auto cli = make_client(u, options_.timeout);
            return cli.Post(u.path, headers, payload, "application/json");
        }();
        in_flight_.release();
        if (!res) {
            verdict.raw_response = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        verdict.raw_response = res->body;
        if (res->status != 200) continue;
        try {
            const json reply = json::parse(res->body);
            const std::string content = reply.at("choices").at(0).at("message").at("content").get<std::string>();
            verdict.raw_response = content;
            verdict.score = parse_judge_score(content);
            return verdict; // an unparseable reply is a final answer, not a transport failure
        } catch (const json::exception &) {
            continue;
        }
    }
    return verdict;
}

GrammarChecker::GrammarChecker(std::string url, std::string language, std::chrono::milliseconds timeout)
    : url_(std::move(url)), language_(std::move(language)), timeout_(timeout) {
    if (!url_.empty()) split_url(url_);
}

GrammarChecker GrammarChecker::from_env() { return GrammarChecker(env_or_empty("STEERBENCH_GRAMMAR_URL")); }

GrammarResult GrammarChecker::check(std::string_view text) const {
    if (!enabled()) return {false, 0};
    if (text.empty()) return {true, 0};
    const Url u = split_url(url_);
    auto cli = make_client(u, timeout_);
    httplib::Params params{{"text", std::string(text)}, {"language", language_}};
    auto res = cli.Post(u.path, params);
    if (!res || res->status != 200) return {false, 0};
    try {
        const json reply = json::parse(res->body);
        return {true, static_cast<int>(reply.at("matches").size())};
    } catch (const json::exception &) {
        return {false, 0};
    }
}

} // namespace steerbench::metrics
