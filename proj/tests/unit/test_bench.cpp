#include <doctest.h>

#include "steerbench/bench/config.hpp"
#include "steerbench/bench/records.hpp"
#include "steerbench/bench/report.hpp"
#include "steerbench/bench/sweep.hpp"
#include "steerbench/errors.hpp"
#include "test_support.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <set>
#include <sstream>

using namespace steerbench;
using namespace steerbench::bench;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t count_lines(const fs::path &p) {
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);)
        if (!line.empty() && line[0] != '#') ++n;
    return n;
}

// Small sweep over the tiny model rooted in the source tree.
SweepConfig small_config(const fs::path &out, json methods, int prompts = 2) {
    const json j = {{"model", "tiny:0"},
                    {"layers", {2}},
                    {"methods", methods},
                    {"topics", {"data/topics/coffee.json"}},
                    {"prompts", "data/prompts.json"},
                    {"prompt_limit", prompts},
                    {"generation", {{"max_new_tokens", 8}}},
                    {"output_dir", out.string()},
                    {"seed", 3},
                    {"workers", 2}};
    return parse_sweep_config(j.dump(), test_support::source_path(""));
}

RunRecord sample_record(const std::string &prompt_id, const std::string &method, double alpha, bool ok,
                        double edit_distance, std::optional<double> coh, std::optional<double> clean_coh) {
    RunRecord r;
    r.prompt_id = prompt_id;
    r.prompt = "prompt " + prompt_id;
    r.topic = "coffee";
    r.method = method;
    r.layer = 2;
    r.alpha = alpha;
    r.model_id = "tiny";
    r.edit_distance = edit_distance;
    r.success = ok;
    r.coherence = coh;
    r.clean_coherence = clean_coh;
    r.run_id = make_run_id(2, method, "coffee", alpha, prompt_id);
    return r;
}

} // namespace

TEST_CASE("default prompt dataset") {
    const auto ds = load_prompts(test_support::source_path("data/prompts.json"));
    CHECK_NOTHROW(ds.validate_default());
    CHECK(ds.prompts.size() == 210);
    std::set<std::string> texts;
    for (const auto &p : ds.prompts) texts.insert(p.text);
    CHECK(texts.count("Check out this haiku I wrote:"));
    CHECK(texts.count("In ten years, I hope to have accomplished"));
    CHECK(texts.count("What is your favorite dad joke?"));
    for (const auto &cat : kPromptCategories) {
        int n = 0;
        for (const auto &p : ds.prompts) n += p.category == cat;
        CHECK(n == 30);
    }
    PromptDataset dup = ds;
    dup.prompts[1].id = dup.prompts[0].id;
    CHECK_THROWS_AS(dup.validate(), LoadError);
    PromptDataset small;
    small.prompts = {ds.prompts[0]};
    CHECK_NOTHROW(small.validate());
    CHECK_THROWS_AS(small.validate_default(), LoadError);
    CHECK_THROWS_AS(load_prompts("/nonexistent.json"), LoadError);
}

TEST_CASE("shipped topic files all load with their pair files") {
    for (const auto &e : fs::directory_iterator(test_support::source_path("data/topics"))) {
        CAPTURE(e.path().string());
        const auto t = load_topic(e.path());
        CHECK(fs::exists(t.pairs_path));
        if (t.detector.kind == TopicDetector::Kind::Language) {
            CHECK(t.lens_tokens.empty());
        } else {
            CHECK_FALSE(t.lens_tokens.empty());
        }
    }
}

TEST_CASE("sweep config parsing") {
    const auto c = small_config("/tmp/x", json::array({{{"name", "logit_lens"}, {"alphas", {0, 5}}}}));
    CHECK(c.layers == std::vector<int>{2});
    CHECK(c.methods.size() == 1);
    CHECK(c.methods[0].alphas == std::vector<double>{0, 5});
    CHECK(c.generation.max_new_tokens == 8);
    CHECK(c.workers == 2);
    CHECK(c.resolve("data/prompts.json") == test_support::source_path("data/prompts.json"));
    CHECK_NOTHROW(c.validate(4));
    CHECK_THROWS_AS(c.validate(2), ContractError); // layer out of range
    CHECK_THROWS_AS(parse_sweep_config(R"({"layers": [1], "topics": ["t.json"], "methods": [{"name": "warp"}]})").validate(4),
                    ContractError);
    CHECK_THROWS_AS(parse_sweep_config("not json"), LoadError);
    CHECK(default_alphas("gpt2", "logit_lens").size() > 0);
    CHECK(default_alphas("unknown-model", "logit_lens").empty());
    CHECK(propose_alphas(0.5) == std::vector<double>{0.5, 1, 2, 4, 8});
}

TEST_CASE("records: run ids, base64 and JSON lines round trip") {
    CHECK(make_run_id(9, "logit_lens", "coffee", 50.0, "p017") == "L9|logit_lens|coffee|a=50|p017");
    const std::vector<float> v{1.0f, -2.5f, 3.25e-8f, 0.0f};
    CHECK(base64_decode_floats(base64_encode_floats(v)) == v);
    CHECK(base64_encode_floats({}).empty());
    CHECK_THROWS_AS(base64_decode_floats("abc"), LoadError);
    RunRecord r = sample_record("p1", "steering", 2.0, true, 0.25, 7.0, std::nullopt);
    r.edit_direction = v;
    r.intervened_text = "bytes \xff\xfe and \"quotes\"\n";
    r.grammar_errors = 3;
    r.flags = {"judge_missing"};
    const RunRecord back = record_from_json_line(record_to_json_line(r));
    CHECK(back.run_id == r.run_id);
    CHECK(back.edit_direction == v);
    CHECK(back.coherence == 7.0);
    CHECK_FALSE(back.clean_coherence.has_value());
    CHECK(back.grammar_errors == 3);
    CHECK(back.flags == r.flags);
    CHECK_THROWS_AS(record_from_json_line("{"), LoadError);

    const auto dir = test_support::scratch_dir("records");
    write_records(dir / "r.jsonl", {r, r});
    {
        std::ofstream app(dir / "r.jsonl", std::ios::app);
        app << "{\"run_id\": \"trunc"; // interrupted write
    }
    CHECK(read_records(dir / "r.jsonl").size() == 2);
}

TEST_CASE("sweep counting, determinism and resume") {
    const auto dir = test_support::scratch_dir("sweep");
    const json methods = json::array({{{"name", "steering"}, {"alphas", {0, 4}}}});
    const auto cfg = small_config(dir / "a", methods);
    const auto s = run_sweep(cfg);
    REQUIRE(s.complete());
    CHECK(s.total_cells == 4);
    CHECK(s.intervened_generations == 4);
    CHECK(s.clean_generations == 2);
    CHECK(count_lines(dir / "a" / "records.jsonl") == 4);
    CHECK(count_lines(dir / "a" / "clean.jsonl") == 2);
    for (const auto &r : s.records) {
        if (r.alpha == 0.0) {
            CHECK(r.edit_distance == 0.0);
            CHECK(r.intervened_text == r.clean_text);
        } else {
            CHECK(r.edit_distance > 0.0);
        }
        CHECK(r.coherence.has_value());
    }

    // rerun from scratch elsewhere: byte-identical records
    const auto s2 = run_sweep(small_config(dir / "b", methods));
    REQUIRE(s2.complete());
    CHECK(slurp(dir / "a" / "records.jsonl") == slurp(dir / "b" / "records.jsonl"));

    // resume: a second invocation reuses every cell
    const auto again = run_sweep(cfg);
    CHECK(again.resumed_cells == 4);
    CHECK(again.intervened_generations == 0);
    CHECK(again.clean_generations == 0);

    // interrupted run completed by a resume equals the uninterrupted run
    SweepOptions partial;
    partial.max_new_cells = 1;
    const auto cut = run_sweep(small_config(dir / "c", methods), partial);
    CHECK_FALSE(cut.complete());
    const auto resumed = run_sweep(small_config(dir / "c", methods));
    CHECK(resumed.complete());
    CHECK(resumed.resumed_cells >= 1);
    CHECK(slurp(dir / "a" / "records.jsonl") == slurp(dir / "c" / "records.jsonl"));

    // workers do not change results
    auto serial = small_config(dir / "d", methods);
    serial.workers = 1;
    run_sweep(serial);
    CHECK(slurp(dir / "a" / "records.jsonl") == slurp(dir / "d" / "records.jsonl"));
}

TEST_CASE("control runs reproduce the clean generation") {
    const auto dir = test_support::scratch_dir("control");
    const auto s = run_sweep(small_config(dir, json::array({{{"name", "control"}}}), 3));
    REQUIRE(s.complete());
    CHECK(s.records.size() == 3);
    for (const auto &r : s.records) {
        CHECK(r.edit_distance == 0.0);
        CHECK(r.intervened_text == r.clean_text);
        CHECK(r.success == r.clean_success);
    }
}

TEST_CASE("lens cells are skipped for a topic without lens tokens") {
    const auto dir = test_support::scratch_dir("no_lens_tokens");
    json j = {{"model", "tiny:0"},
              {"layers", {2}},
              {"methods", json::array({{{"name", "logit_lens"}, {"alphas", {5}}}, {{"name", "steering"}, {"alphas", {2}}}})},
              {"topics", {"data/topics/coffee.json", "data/topics/french.json"}},
              {"prompts", "data/prompts.json"},
              {"prompt_limit", 1},
              {"generation", {{"max_new_tokens", 4}}},
              {"output_dir", dir.string()}};
    const auto s = run_sweep(parse_sweep_config(j.dump(), test_support::source_path("")));
    REQUIRE(s.complete());
    CHECK(s.records.size() == 3);
    for (const auto &r : s.records) CHECK_FALSE((r.method == "logit_lens" && r.topic == "French"));
    CHECK(std::any_of(s.notes.begin(), s.notes.end(),
                      [](const std::string &n) { return n.find("logit_lens skipped for French") == 0; }));
}

TEST_CASE("layer sweep gives one row per layer and method") {
    const auto dir = test_support::scratch_dir("layers");
    json j = {{"model", "tiny:0"},
              {"layers", {0, 1, 2, 3}},
              {"methods", json::array({{{"name", "steering"}, {"alphas", {4}}}, {{"name", "logit_lens"}, {"alphas", {10}}}})},
              {"topics", {"data/topics/coffee.json"}},
              {"prompt_limit", 1},
              {"generation", {{"max_new_tokens", 4}}},
              {"output_dir", dir.string()}};
    const auto cfg = parse_sweep_config(j.dump(), test_support::source_path(""));
    const auto rows = layer_sweep(cfg);
    CHECK(rows.size() == 8);
    for (const auto &r : rows) CHECK(r.runs == 1);
    j["methods"][0]["alphas"] = {1, 2};
    CHECK_THROWS_AS(layer_sweep(parse_sweep_config(j.dump(), test_support::source_path(""))), ContractError);
}

TEST_CASE("prompting baseline") {
    CHECK(prompting_text("coffee", "Write a poem.") == "Please mention coffee in your response. Write a poem.");
    const auto &m = test_support::tiny_model();
    const std::vector<Prompt> prompts{{"p1", "Hello", "misc"}};
    const std::vector<TopicSpec> topics{load_topic(test_support::source_path("data/topics/coffee.json"))};
    CHECK_THROWS_AS(prompting_baseline(m, "tiny", prompts, topics, runtime::GenerationSettings::greedy(4)),
                    ContractError);
    auto cfg = m.config();
    cfg.instruction_tuned = true;
    const runtime::Model tuned(cfg, m.weights(), runtime::Tokenizer::bytes());
    const auto recs = prompting_baseline(tuned, "tiny", prompts, topics, runtime::GenerationSettings::greedy(4));
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].method == "prompting");
    CHECK(recs[0].edit_distance == 0.0);
    CHECK(recs[0].layer == -1);
}

TEST_CASE("report tables and band") {
    std::vector<RunRecord> recs;
    // clean coherence per prompt: p1 -> 6, p2 -> 8, p3 -> 7 (repeated across rows)
    const std::map<std::string, double> clean{{"p1", 6.0}, {"p2", 8.0}, {"p3", 7.0}};
    for (const auto &[pid, cc] : clean)
        for (double a : {0.0, 2.0, 4.0}) recs.push_back(sample_record(pid, "steering", a, a > 1.0, 0.1 * a, 9.0 - a, cc));
    recs.push_back(sample_record("p1", "logit_lens", 5.0, true, 0.5, std::nullopt, 6.0));

    const auto band = clean_coherence_band(recs);
    REQUIRE(band);
    CHECK(band->n == 3);
    CHECK(band->mean == doctest::Approx(7.0));
    CHECK(band->sd == doctest::Approx(1.0)); // sqrt(((−1)^2 + 1^2 + 0) / 2)

    const auto means = alpha_means(recs, false);
    int steering_rows = 0;
    for (const auto &a : means)
        if (a.method == "steering") {
            ++steering_rows;
            CHECK(a.runs == 3);
            CHECK(a.success_rate == (a.alpha > 1.0 ? 1.0 : 0.0));
            CHECK(*a.mean_coherence == doctest::Approx(9.0 - a.alpha));
        }
    CHECK(steering_rows == 3);

    const auto curve = distance_curve(recs, "steering", 4);
    CHECK(curve.size() == 4);
    int total = 0;
    for (const auto &b : curve) total += b.runs;
    CHECK(total == 9);
    CHECK(curve.front().success_rate == 0.0);
    CHECK(curve.back().success_rate == 1.0);

    const auto dir = test_support::scratch_dir("report");
    const auto files = emit_report(recs, dir);
    CHECK(count_lines(dir / "records.csv") == recs.size() + 1);
    CHECK(fs::exists(dir / "pareto.svg"));
    CHECK(fs::exists(dir / "curves.svg"));
    const std::string pareto = slurp(dir / "pareto.svg");
    CHECK(pareto.find("class=\"clean-mean\"") != std::string::npos);
    CHECK(pareto.find("data-value=\"7") != std::string::npos);
    CHECK(slurp(dir / "pareto.csv").find("# clean_coherence mean=7") != std::string::npos);
    CHECK_THROWS_AS(emit_report({}, dir), ContractError);
    CHECK(csv_escape("a,b") == "\"a,b\"");
    CHECK(csv_escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
    CHECK(csv_escape("plain") == "plain");
}

TEST_CASE("direction similarity from stored edit directions") {
    std::vector<RunRecord> recs;
    auto with_dir = [](RunRecord r, std::vector<float> d) {
        r.edit_direction = std::move(d);
        return r;
    };
    recs.push_back(with_dir(sample_record("p1", "steering", 2, true, 0.1, {}, {}), {1, 0}));
    recs.push_back(with_dir(sample_record("p2", "steering", 2, true, 0.1, {}, {}), {1, 0}));
    recs.push_back(with_dir(sample_record("p1", "probe", 2, true, 0.1, {}, {}), {1, 1}));
    const auto t = similarity_from_records(recs);
    REQUIRE(t);
    REQUIRE(t->methods.size() == 2);
    CHECK(t->cosine(0, 1) == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(t->cosine(0, 0) == 1.0);
}
