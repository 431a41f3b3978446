#include <doctest.h>

#include "steerbench/errors.hpp"
#include "steerbench/runtime/tokenizer.hpp"
#include "test_support.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <random>

using namespace steerbench;
using namespace steerbench::runtime;
using json = nlohmann::json;

namespace {

const Tokenizer &gpt2() {
    static const Tokenizer t = Tokenizer::load(test_support::source_path("data/gpt2/vocab.json"),
                                               test_support::source_path("data/gpt2/merges.txt"));
    return t;
}

// Random well-formed UTF-8 drawn from ASCII, Latin-1, CJK and astral planes.
std::string random_utf8(std::mt19937_64 &rng) {
    std::uniform_int_distribution<int> len(0, 40), kind(0, 5);
    std::string s;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) {
        std::uint32_t cp = 0;
        switch (kind(rng)) {
        case 0: cp = std::uniform_int_distribution<std::uint32_t>(0x20, 0x7e)(rng); break;
        case 1: cp = std::uniform_int_distribution<std::uint32_t>(0, 0x1f)(rng); break;
        case 2: cp = std::uniform_int_distribution<std::uint32_t>(0xa0, 0x7ff)(rng); break;
        case 3: cp = std::uniform_int_distribution<std::uint32_t>(0x4e00, 0x9fff)(rng); break;
        case 4: cp = std::uniform_int_distribution<std::uint32_t>(0x1f600, 0x1f64f)(rng); break;
        default: cp = ' '; break;
        }
        if (cp < 0x80) {
            s += static_cast<char>(cp);
        } else if (cp < 0x800) {
            s += static_cast<char>(0xc0 | (cp >> 6));
            s += static_cast<char>(0x80 | (cp & 0x3f));
        } else if (cp < 0x10000) {
            s += static_cast<char>(0xe0 | (cp >> 12));
            s += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
            s += static_cast<char>(0x80 | (cp & 0x3f));
        } else {
            s += static_cast<char>(0xf0 | (cp >> 18));
            s += static_cast<char>(0x80 | ((cp >> 12) & 0x3f));
            s += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
            s += static_cast<char>(0x80 | (cp & 0x3f));
        }
    }
    return s;
}

} // namespace

TEST_CASE("GPT-2 tokenizer matches reference ids") {
    std::ifstream in(test_support::source_path("tests/fixtures/gpt2_tokenizer_cases.json"));
    REQUIRE(in);
    const json fx = json::parse(in);
    REQUIRE(fx["cases"].size() > 50);
    for (const auto &c : fx["cases"]) {
        const std::string text = c["text"];
        CAPTURE(text);
        const auto ids = gpt2().encode(text);
        CHECK(ids == c["ids"].get<std::vector<int>>());
        CHECK(gpt2().decode(ids) == text);
    }
    CHECK(gpt2().encode("Hello world") == std::vector<int>{15496, 995});
    CHECK(gpt2().vocab_size() == 50257);
}

TEST_CASE("round trip on random UTF-8 and raw bytes") {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 1000; ++i) {
        const std::string s = random_utf8(rng);
        REQUIRE(gpt2().decode(gpt2().encode(s)) == s);
    }
    std::string raw;
    for (int b = 0; b < 256; ++b) raw += static_cast<char>(b);
    CHECK(gpt2().decode(gpt2().encode(raw)) == raw);
    CHECK(Tokenizer::bytes().decode(Tokenizer::bytes().encode(raw)) == raw);
}

TEST_CASE("byte tokenizer maps ids to byte values") {
    const Tokenizer t = Tokenizer::bytes();
    CHECK(t.byte_level_only());
    CHECK(t.vocab_size() == 256);
    CHECK(t.encode("Az") == std::vector<int>{65, 122});
    CHECK(t.token_bytes(32) == " ");
    CHECK(t.token_id("a") == 97);
    CHECK_FALSE(t.token_id("ab").has_value());
    CHECK_THROWS_AS(t.token_bytes(256), ContractError);
    const std::vector<int> bad{-1};
    CHECK_THROWS_AS(t.decode(bad), ContractError);
}

TEST_CASE("token lookup by raw bytes") {
    CHECK(gpt2().token_id(" world") == 995);
    CHECK(gpt2().token_bytes(15496) == "Hello");
}

TEST_CASE("pretokenize splits like the GPT-2 regex") {
    auto split = [](std::string_view s) {
        std::vector<std::string> out;
        for (auto p : pretokenize(s)) out.emplace_back(p);
        return out;
    };
    CHECK(split("Hello world") == std::vector<std::string>{"Hello", " world"});
    CHECK(split("it's 42!!") == std::vector<std::string>{"it", "'s", " 42", "!!"});
    CHECK(split("a  b") == std::vector<std::string>{"a", " ", " b"});
    CHECK(split("x\n\n") == std::vector<std::string>{"x", "\n\n"});
    CHECK(split("").empty());
}

TEST_CASE("malformed tokenizer files raise LoadError") {
    CHECK_THROWS_AS(Tokenizer::load("/nonexistent/vocab.json", "/nonexistent/merges.txt"), LoadError);
    CHECK_THROWS_AS(Tokenizer::from_strings("not json", "#version: 0.2\n"), LoadError);
    CHECK_THROWS_AS(Tokenizer::from_strings("{}", "#version: 0.2\n"), LoadError);
    CHECK_THROWS_AS(Tokenizer::from_strings(R"({"a": 0})", "#version: 0.2\n"), LoadError);
}
