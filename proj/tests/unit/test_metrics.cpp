// steerbench headers (Eigen) before httplib: <resolv.h> defines `_res`.
#include "steerbench/errors.hpp"
#include "steerbench/metrics.hpp"
#include "steerbench/runtime/forward.hpp"
#include "test_support.hpp"

#include <doctest.h>
// must match the library build, or httplib classes differ in layout
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <cmath>
#include <thread>

using namespace steerbench;
using namespace steerbench::metrics;
using json = nlohmann::json;

namespace {

TopicDetector keyword_detector(std::vector<std::string> kws) {
    TopicDetector d;
    d.kind = TopicDetector::Kind::Keyword;
    d.keywords = std::move(kws);
    return d;
}

TopicDetector language_kind(const std::string &code) {
    TopicDetector d;
    d.kind = TopicDetector::Kind::Language;
    d.language = code;
    return d;
}

// Local HTTP server on an ephemeral port for the duration of a test.
class LocalServer {
public:
    explicit LocalServer(const std::function<void(httplib::Server &)> &setup) {
        setup(server_);
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~LocalServer() {
        server_.stop();
        thread_.join();
    }
    std::string url(const std::string &path) const { return "http://127.0.0.1:" + std::to_string(port_) + path; }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

std::string chat_reply(const std::string &content) {
    return json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump();
}

} // namespace

TEST_CASE("keyword success detection") {
    const auto coffee = keyword_detector({"coffee"});
    CHECK(success("I drank some coffee today.", coffee));
    CHECK(success("COFFEE!", coffee));
    CHECK_FALSE(success("covfefe is not a word", coffee));
    CHECK_FALSE(success("coffeehouse", coffee)); // word boundary
    CHECK_FALSE(success("", coffee));
    const auto sf = keyword_detector({"San Francisco"});
    CHECK(success("San Francisco's fog rolled in", sf));
    CHECK(success("san   francisco\nis hilly", sf)); // whitespace squashed
    CHECK_FALSE(success("SanFrancisco", sf));
    CHECK(keyword_match("xcoffeex", "coffee", true, false));
    CHECK_FALSE(keyword_match("Coffee", "coffee", false, true));
    CHECK(keyword_match("café au lait", "café", true, true));
    CHECK_FALSE(keyword_match("cafés", "café", true, true));
    const std::vector<std::string> outs{"coffee time", "tea time", "no", "Coffee"};
    CHECK(success_rate(outs, coffee) == 0.5);
}

TEST_CASE("language success detection") {
    const StopwordLanguageDetector det;
    CHECK(det.supports("fr"));
    CHECK_FALSE(det.supports("ja"));
    CHECK(det.detect("Je pense que le chat est sur la table et il dort.") == "fr");
    CHECK(det.detect("I think that the cat is on the table and it is asleep.") == "en");
    CHECK(det.detect("xyzzy") == "und");
    const auto fr = language_kind("fr");
    CHECK(success("Le chat est sur la table. Il fait beau et nous sommes dans le jardin.", fr, &det));
    CHECK_FALSE(success("The cat is on the table. It is sunny and we are in the garden.", fr, &det));
    CHECK_THROWS_AS(success("Le chat", fr, nullptr), BackendUnavailableError);
    CHECK_THROWS_AS(success("Le chat", language_kind("ja"), &det), BackendUnavailableError);
    set_language_detector(nullptr);
    CHECK_THROWS_AS(success("Le chat", fr), BackendUnavailableError);
    set_language_detector(std::make_shared<StopwordLanguageDetector>());
    CHECK(success("Le chat est sur la table et il dort dans la maison.", fr));
}

TEST_CASE("intervened token probability against a softmax oracle") {
    const std::vector<std::vector<float>> logits{{0.0f, 1.0f, 2.0f}, {3.0f, 3.0f, 3.0f}};
    const std::vector<int> ids{2, 0};
    const double z0 = 1.0 + std::exp(1.0) + std::exp(2.0);
    const double expected = 0.5 * ((std::exp(2.0) + 1.0) / z0 + 2.0 / 3.0);
    CHECK(intervened_token_probability(logits, ids) == doctest::Approx(expected).epsilon(1e-7));
    const std::vector<std::vector<float>> big{{1000.0f, 0.0f}};
    CHECK(intervened_token_probability(big, std::vector<int>{0}) == doctest::Approx(1.0));
    CHECK_THROWS_AS(intervened_token_probability(logits, std::vector<int>{3}), ContractError);
    CHECK_THROWS_AS(intervened_token_probability({}, ids), ContractError);
    CHECK_THROWS_AS(intervened_token_probability(logits, std::vector<int>{}), ContractError);
}

TEST_CASE("perplexity oracles") {
    SUBCASE("uniform distribution gives the vocabulary size") {
        const auto &tiny = test_support::tiny_model();
        auto w = tiny.weights();
        std::fill(w.unembed.begin(), w.unembed.end(), 0.0f);
        const runtime::Model flat(tiny.config(), w, runtime::Tokenizer::bytes());
        const std::vector<int> prompt{72, 105}, out{33, 33, 10};
        CHECK(perplexity(flat, prompt, out) == doctest::Approx(256.0).epsilon(1e-9));
    }
    SUBCASE("certain predictions give one") {
        const std::vector<std::vector<float>> rows{{200.0f, 0.0f}, {0.0f, 200.0f}};
        CHECK(perplexity_from_logits(rows, std::vector<int>{0, 1}) == doctest::Approx(1.0));
    }
    SUBCASE("matches a naive NLL over a full forward") {
        const auto &m = test_support::tiny_model();
        const std::vector<int> prompt{84, 104, 101}, out{32, 99, 97, 116};
        std::vector<int> seq = prompt;
        seq.insert(seq.end(), out.begin(), out.end());
        const auto fwd = runtime::forward(m, seq);
        double nll = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) {
            const auto row = fwd.logits_row(static_cast<int>(prompt.size() + i) - 1);
            double z = 0.0;
            for (float v : row) z += std::exp(static_cast<double>(v));
            nll -= std::log(std::exp(static_cast<double>(row[static_cast<std::size_t>(out[i])])) / z);
        }
        CHECK(perplexity(m, prompt, out) == doctest::Approx(std::exp(nll / 4.0)).epsilon(1e-6));
    }
    SUBCASE("errors") {
        const auto &m = test_support::tiny_model();
        CHECK_THROWS_AS(perplexity(m, std::vector<int>{}, std::vector<int>{1}), ContractError);
        CHECK_THROWS_AS(perplexity(m, std::vector<int>(200, 65), std::vector<int>(100, 65)), ContextOverflowError);
        CHECK_THROWS_AS(perplexity_from_logits({}, std::vector<int>{}), ContractError);
    }
}

TEST_CASE("correlation and cosine") {
    const std::vector<double> a{1, 2, 3, 4, 5}, b{2, 4.1, 5.9, 8.2, 9.8};
    // two-pass oracle
    double ma = 3.0, mb = 0.0;
    for (double v : b) mb += v / 5.0;
    double sab = 0, saa = 0, sbb = 0;
    for (int i = 0; i < 5; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    const auto c = pearson(a, b);
    CHECK(c.r == doctest::Approx(sab / std::sqrt(saa * sbb)).epsilon(1e-12));
    CHECK(c.r2 == doctest::Approx(c.r * c.r).epsilon(1e-12));
    std::vector<double> b2;
    for (double v : b) b2.push_back(-3.0 * v + 7.0);
    CHECK(std::abs(pearson(a, b2).r + c.r) < 1e-12);
    const std::vector<double> flat{2, 2, 2, 2, 2};
    CHECK_THROWS_AS(pearson(a, flat), DegenerateInputError);
    CHECK_THROWS_AS(pearson(a, std::vector<double>{1, 2}), ContractError);
    const std::vector<double> mono{1, 8, 27, 64, 125};
    CHECK(spearman(a, mono) == doctest::Approx(1.0));
    const std::vector<double> ties{1, 1, 2, 2, 3};
    CHECK(spearman(a, ties) == doctest::Approx(pearson(a, std::vector<double>{1.5, 1.5, 3.5, 3.5, 5}).r));

    Vector x(2), y(2);
    x << 1, 0;
    y << 1, 1;
    CHECK(cosine(x, y) == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK_THROWS_AS(cosine(x, Vector::Zero(2)), DegenerateInputError);

    std::map<std::string, std::map<std::string, Vector>> dirs;
    dirs["a"]["coffee"] = x;
    dirs["a"]["dogs"] = y;
    dirs["b"]["coffee"] = y;
    dirs["b"]["dogs"] = y;
    dirs["c"]["snow"] = x;
    const Matrix s = direction_similarity(dirs, {"a", "b", "c"});
    CHECK(s(0, 0) == 1.0);
    CHECK(s(0, 1) == doctest::Approx(0.5 * (1.0 / std::sqrt(2.0) + 1.0)));
    CHECK(s(1, 0) == s(0, 1));
    CHECK(std::isnan(s(0, 2))); // no shared topics
}

TEST_CASE("stub judge fixtures") {
    HeuristicJudge judge;
    const std::string prompt = "Describe your perfect morning routine with coffee.";
    std::string repeated;
    for (int i = 0; i < 30; ++i) repeated += "coffee ";
    const auto low = coherence(prompt, repeated, judge);
    REQUIRE(low.score);
    CHECK(*low.score <= 2.0);
    const auto high = coherence(prompt,
                                "My perfect morning starts early with a warm cup of coffee, a short walk "
                                "around the park, and a quiet breakfast while I read the news.",
                                judge);
    REQUIRE(high.score);
    CHECK(*high.score >= 8.0);
    CHECK(*coherence(prompt, repeated, judge).score == *low.score);
    CHECK(low.rater_id == "heuristic-stub-v1");
    std::string garbage;
    for (int i = 0; i < 40; ++i) garbage += static_cast<char>(0x80 + (i * 37) % 64);
    CHECK(*coherence(prompt, garbage, judge).score <= 2.0);
    const auto empty = coherence(prompt, "", judge);
    CHECK(*empty.score == 1.0);
    StubFeatures f;
    f.diversity = 1.0;
    f.validity = 1.0;
    f.relevance = 1.0;
    CHECK(stub_score(f) == 10.0);
}

TEST_CASE("judge prompt and reply parsing") {
    const auto msg = judge_message("P?", "R.");
    CHECK(msg.rfind(kJudgeInstruction, 0) == 0);
    CHECK(msg.find("\n\nPrompt: P?\nResponse: R.") != std::string::npos);
    CHECK(parse_judge_score("7") == 7.0);
    CHECK(parse_judge_score("Score: 10/10") == 10.0);
    CHECK_FALSE(parse_judge_score("0").has_value());
    CHECK_FALSE(parse_judge_score("11").has_value());
    CHECK_FALSE(parse_judge_score("no number").has_value());
}

TEST_CASE("remote judge against a local endpoint") {
    std::atomic<int> calls{0};
    json last_request;
    LocalServer server([&](httplib::Server &s) {
        s.Post("/v1/chat/completions", [&](const httplib::Request &req, httplib::Response &res) {
            ++calls;
            last_request = json::parse(req.body);
            res.set_content(chat_reply("8"), "application/json");
        });
        s.Post("/flaky", [&](const httplib::Request &, httplib::Response &res) {
            if (++calls % 2 == 1) {
                res.status = 503;
                return;
            }
            res.set_content(chat_reply("I'd say 6."), "application/json");
        });
        s.Post("/down", [](const httplib::Request &, httplib::Response &res) { res.status = 500; });
        s.Post("/junk", [](const httplib::Request &, httplib::Response &res) {
            res.set_content(chat_reply("great answer"), "application/json");
        });
    });
    RemoteJudgeOptions o;
    o.url = server.url("/v1/chat/completions");
    o.model = "judge-x";
    o.api_key = "k";
    o.backoff = std::chrono::milliseconds(1);
    RemoteJudge judge(o);
    CHECK(judge.id() == "remote:judge-x");
    const auto v = coherence("Prompt", "Output", judge);
    CHECK(v.score == 8.0);
    CHECK(last_request["temperature"] == 0);
    CHECK(last_request["model"] == "judge-x");
    CHECK(last_request["messages"][0]["content"] == judge_message("Prompt", "Output"));

    calls = 0;
    o.url = server.url("/flaky");
    RemoteJudge flaky(o);
    CHECK(flaky.rate("p", "o").score == 6.0);
    CHECK(calls == 2);

    o.url = server.url("/down");
    o.retries = 2;
    RemoteJudge down(o);
    const auto miss = down.rate("p", "o");
    CHECK(miss.missing());

    o.url = server.url("/junk");
    CHECK(RemoteJudge(o).rate("p", "o").missing());
    CHECK_THROWS_AS(RemoteJudge(RemoteJudgeOptions{}), ContractError);
}

TEST_CASE("grammar checker") {
    LocalServer server([](httplib::Server &s) {
        s.Post("/v2/check", [](const httplib::Request &req, httplib::Response &res) {
            const std::string text = req.get_param_value("text");
            json matches = json::array();
            if (text.find("is are") != std::string::npos) matches.push_back({{"message", "agreement"}});
            if (req.get_param_value("language") != "en-US") matches.push_back({{"message", "language"}});
            res.set_content(json{{"matches", matches}}.dump(), "application/json");
        });
    });
    const GrammarChecker checker(server.url("/v2/check"));
    CHECK(checker.enabled());
    const auto ok = grammar_errors("This sentence is fine.", checker);
    CHECK(ok.available);
    CHECK(ok.errors == 0);
    CHECK(grammar_errors("They is are here.", checker).errors == 1);
    const GrammarChecker off;
    CHECK_FALSE(off.enabled());
    CHECK_FALSE(grammar_errors("text", off).available);
    const GrammarChecker unreachable("http://127.0.0.1:1/v2/check", "en-US", std::chrono::milliseconds(200));
    CHECK_FALSE(grammar_errors("text", unreachable).available);
}

TEST_CASE("url splitting") {
    const auto u = split_url("https://api.example.com:8443/v1/chat/completions");
    CHECK(u.scheme_host_port == "https://api.example.com:8443");
    CHECK(u.path == "/v1/chat/completions");
    CHECK(split_url("http://h").path == "/");
    CHECK_THROWS_AS(split_url("no-scheme"), ContractError);
}
