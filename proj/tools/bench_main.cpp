#include "steerbench/bench/report.hpp"
#include "steerbench/bench/sweep.hpp"
#include "steerbench/errors.hpp"
#include "steerbench/kernels.hpp"
#include "steerbench/runtime/forward.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace sb = steerbench;
namespace fs = std::filesystem;

namespace {

void print_summary(const sb::bench::SweepSummary &s) {
    std::cout << "cells: " << s.records.size() << "/" << s.total_cells << " (resumed " << s.resumed_cells
              << ", new " << s.intervened_generations << ", failed " << s.failed_cells << ")\n"
              << "clean generations this run: " << s.clean_generations << "\n";
    for (const auto &n : s.notes) std::cout << "note: " << n << "\n";
    for (const auto &e : s.errors) std::cerr << "error: " << e << "\n";
}

std::vector<std::string> split_list(const std::string &s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');)
        if (!item.empty()) out.push_back(item);
    return out;
}

int cmd_run(const std::string &config_path, bool fresh, int workers, bool report) {
    auto config = sb::bench::load_sweep_config(config_path);
    if (workers > 0) config.workers = workers;
    sb::bench::SweepOptions opts;
    opts.resume = !fresh;
    opts.progress = [](const std::string &m) { std::cout << m << "\n" << std::flush; };
    const auto summary = sb::bench::run_sweep(config, opts);
    print_summary(summary);
    if (report && !summary.records.empty()) {
        const fs::path out = config.resolve(config.output_dir) / "report";
        const auto files = sb::bench::emit_report(summary.records, out);
        std::cout << "report: " << out.string() << " (" << files.written.size() << " files)\n";
    }
    return summary.complete() ? 0 : 1;
}

int cmd_layers(const std::string &config_path, bool fresh) {
    const auto config = sb::bench::load_sweep_config(config_path);
    sb::bench::SweepOptions opts;
    opts.resume = !fresh;
    sb::bench::SweepSummary summary;
    const auto rows = sb::bench::layer_sweep(config, &summary, opts);
    print_summary(summary);
    std::cout << std::left << std::setw(7) << "layer" << std::setw(12) << "method" << std::setw(9) << "success"
              << std::setw(9) << "clean" << std::setw(11) << "distance"
              << "coherence\n";
    for (const auto &r : rows)
        std::cout << std::setw(7) << r.layer << std::setw(12) << r.method << std::setw(9) << r.success_rate
                  << std::setw(9) << r.clean_success_rate << std::setw(11) << r.mean_edit_distance
                  << (r.mean_coherence ? std::to_string(*r.mean_coherence) : "-") << "\n";
    if (!summary.records.empty())
        sb::bench::emit_report(summary.records, config.resolve(config.output_dir) / "report");
    return summary.complete() ? 0 : 1;
}

int cmd_report(const std::string &in, const std::string &out) {
    const auto records = sb::bench::collect_records(in);
    const auto files = sb::bench::emit_report(records, out);
    for (const auto &f : files.written) std::cout << f.string() << "\n";
    for (const auto &n : files.notes) std::cout << "note: " << n << "\n";
    return 0;
}

int cmd_baseline(const std::string &model, const std::string &model_config, const std::string &topics,
                 const std::string &prompts, int limit, int max_new_tokens, const std::string &out) {
    sb::bench::SweepConfig c;
    c.model = model;
    c.model_config = model_config;
    const auto m = sb::bench::load_sweep_model(c);
    auto ds = sb::bench::load_prompts(prompts);
    if (limit > 0 && ds.prompts.size() > static_cast<std::size_t>(limit)) ds.prompts.resize(static_cast<std::size_t>(limit));
    std::vector<sb::TopicSpec> specs;
    for (const auto &t : split_list(topics)) specs.push_back(sb::load_topic(t));
    if (!sb::metrics::language_detector())
        sb::metrics::set_language_detector(std::make_shared<sb::metrics::StopwordLanguageDetector>());
    sb::metrics::HeuristicJudge judge;
    const auto records = sb::bench::prompting_baseline(*m, m->config().model_id, ds.prompts, specs,
                                                       sb::runtime::GenerationSettings::greedy(max_new_tokens), &judge);
    sb::bench::write_records(fs::path(out) / "records.jsonl", records);
    int passed = 0;
    for (const auto &r : records) passed += r.success ? 1 : 0;
    std::cout << "prompting baseline: " << passed << "/" << records.size() << " successful\n";
    return 0;
}

int cmd_make_tiny(std::uint64_t seed, const std::string &out) {
    const auto model = sb::runtime::build_tiny_model(seed);
    fs::create_directories(out);
    model.to_archive().save(fs::path(out) / "model.safetensors");
    std::ofstream(fs::path(out) / "config.json") << sb::runtime::model_config_to_json(model.config()) << "\n";
    std::cout << "tiny model (seed " << seed << ", " << model.parameter_count() << " parameters) -> " << out << "\n";
    return 0;
}

int cmd_generate(const std::string &model, const std::string &text, int n) {
    sb::bench::SweepConfig c;
    c.model = model;
    const auto m = sb::bench::load_sweep_model(c);
    const auto ids = m->tokenizer().encode(text);
    const auto gen = sb::runtime::generate(*m, ids, sb::runtime::GenerationSettings::greedy(n));
    std::cout << text << m->tokenizer().decode(gen.tokens) << "\n";
    return 0;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"steerbench: intervention benchmark for interpretability methods"};
    app.require_subcommand(1);

    std::string config, in, out = "report", model = "tiny:0", model_config, topics, prompts = "data/prompts.json",
                        text;
    bool fresh = false, no_report = false;
    int workers = 0, limit = 0, max_new = 30, n = 30;
    std::uint64_t seed = 0;

    auto *run = app.add_subcommand("run", "run a sweep");
    run->add_option("--config", config, "sweep config JSON")->required();
    run->add_flag("--fresh", fresh, "ignore and replace an existing journal");
    run->add_option("--workers", workers, "worker threads (overrides config)");
    run->add_flag("--no-report", no_report, "skip report emission");

    auto *layers = app.add_subcommand("layers", "layer sweep with a fixed alpha per method");
    layers->add_option("--config", config, "sweep config JSON")->required();
    layers->add_flag("--fresh", fresh, "ignore and replace an existing journal");

    auto *report = app.add_subcommand("report", "emit CSV tables and SVG plots");
    report->add_option("--in", in, "records.jsonl or a directory of runs")->required();
    report->add_option("--out", out, "output directory");

    auto *baseline = app.add_subcommand("baseline", "prompting baseline (instruction-tuned models only)");
    baseline->add_option("--model", model, "model archive or tiny:<seed>")->required();
    baseline->add_option("--model-config", model_config, "model config JSON");
    baseline->add_option("--topics", topics, "comma-separated topic spec paths")->required();
    baseline->add_option("--prompts", prompts, "prompt dataset");
    baseline->add_option("--limit", limit, "number of prompts (0: all)");
    baseline->add_option("--max-new-tokens", max_new, "tokens to generate");
    baseline->add_option("--out", out, "output directory");

    auto *tiny = app.add_subcommand("make-tiny", "write the deterministic tiny test model");
    tiny->add_option("--seed", seed, "initialization seed");
    tiny->add_option("--out", out, "output directory")->required();

    auto *gen = app.add_subcommand("generate", "greedy continuation of a text");
    gen->add_option("--model", model, "model archive or tiny:<seed>");
    gen->add_option("--text", text, "prompt")->required();
    gen->add_option("-n", n, "tokens to generate");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*run) return cmd_run(config, fresh, workers, !no_report);
        if (*layers) return cmd_layers(config, fresh);
        if (*report) return cmd_report(in, out);
        if (*baseline) return cmd_baseline(model, model_config, topics, prompts, limit, max_new, out);
        if (*tiny) return cmd_make_tiny(seed, out);
        if (*gen) return cmd_generate(model, text, n);
    } catch (const sb::ContractError &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
