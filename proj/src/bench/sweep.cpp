#include "steerbench/bench/sweep.hpp"

#include "steerbench/adapters.hpp"
#include "steerbench/errors.hpp"
#include "steerbench/intervene.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

namespace steerbench::bench {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::uint64_t fnv1a(std::uint64_t seed, const std::string &s) {
    std::uint64_t h = 1469598103934665603ULL ^ seed;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string substitute_layer(std::string s, int layer) {
    const std::string key = "{layer}";
    for (auto pos = s.find(key); pos != std::string::npos; pos = s.find(key))
        s.replace(pos, key.size(), std::to_string(layer));
    return s;
}

bool is_codec_method(const std::string &m) { return m == kLogitLens || m == kTunedLens || m == kSae; }

// Intervention template for one (layer, method, topic); alpha filled per cell.
struct Prepared {
    intervene::InterventionSpec spec;
    std::vector<std::string> flags;
};

struct CleanEntry {
    std::vector<int> tokens;
    std::string text;
    std::optional<double> coherence;
};

struct Cell {
    int layer;
    std::size_t method;
    std::size_t topic;
    double alpha;
    std::size_t prompt;
    std::string run_id;
};

std::shared_ptr<const codec::Codec> build_codec(const SweepConfig &config, const MethodConfig &m,
                                                const runtime::Model &model, int layer) {
    std::optional<codec::Codec> c;
    if (m.name == kLogitLens) {
        c = adapters::build_logit_lens(model, layer);
    } else if (m.name == kTunedLens) {
        const auto translator =
            adapters::load_translator(config.resolve(m.archive), substitute_layer(m.prefix, layer));
        c = adapters::build_tuned_lens(model, translator, layer);
    } else {
        c = adapters::load_sae(config.resolve(substitute_layer(m.archive, layer)),
                               config.resolve(substitute_layer(m.metadata, layer)));
        if (c->hidden_size() != model.config().d_model)
            throw LoadError("sae width " + std::to_string(c->hidden_size()) + " does not match the model");
    }
    if (m.final_norm && m.name != kSae) c = c->with_input_norm(adapters::final_norm(model));
    return std::make_shared<const codec::Codec>(std::move(*c));
}

// Mean over prompts of z_target / max(z) at the last prompt token: the alpha
// that leaves the target feature unchanged.
double noop_alpha(const runtime::Model &model, const codec::Codec &c, const std::vector<int> &targets, int layer,
                  const std::vector<Prompt> &prompts) {
    double sum = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < prompts.size() && i < 20; ++i) {
        const auto ids = model.tokenizer().encode(prompts[i].text);
        if (ids.empty()) continue;
        runtime::ResidualTap tap{layer, runtime::TapMode::Read, runtime::PositionSelector::last(), {}};
        const auto fr = runtime::forward_with_tap(model, ids, tap);
        const auto row = fr.capture(layer).row(static_cast<int>(ids.size()) - 1);
        codec::Vector x(static_cast<Eigen::Index>(row.size()));
        for (std::size_t k = 0; k < row.size(); ++k) x[static_cast<Eigen::Index>(k)] = row[k];
        const codec::Vector z = c.encode(x);
        const double mx = z.maxCoeff();
        if (!(mx > 0.0)) continue;
        sum += z[targets.front()] / mx;
        ++n;
    }
    if (n == 0 || !(sum > 0.0)) throw ContractError("cannot propose an alpha grid: no positive no-op alpha");
    return sum / n;
}

} // namespace

std::shared_ptr<const runtime::Model> load_sweep_model(const SweepConfig &config) {
    if (config.model.rfind("tiny:", 0) == 0) {
        const auto seed = std::stoull(config.model.substr(5));
        return std::make_shared<const runtime::Model>(runtime::build_tiny_model(seed));
    }
    const fs::path archive = config.resolve(config.model);
    const fs::path cfg = config.model_config.empty() ? archive.parent_path() / "config.json"
                                                     : config.resolve(config.model_config);
    return std::make_shared<const runtime::Model>(runtime::load_model(archive, cfg));
}

SweepContext prepare_sweep(const SweepConfig &config) {
    SweepContext ctx;
    ctx.model = load_sweep_model(config);
    if (!ctx.model->has_tokenizer()) throw LoadError("model has no tokenizer");
    ctx.model_id = config.model_id.empty() ? ctx.model->config().model_id : config.model_id;
    ctx.prompts = load_prompts(config.resolve(config.prompts));
    auto &ps = ctx.prompts.prompts;
    const auto off = std::min<std::size_t>(static_cast<std::size_t>(config.prompt_offset), ps.size());
    ps.erase(ps.begin(), ps.begin() + static_cast<std::ptrdiff_t>(off));
    if (config.prompt_limit > 0 && ps.size() > static_cast<std::size_t>(config.prompt_limit))
        ps.resize(static_cast<std::size_t>(config.prompt_limit));
    if (ps.empty()) throw LoadError("prompt selection is empty");
    for (const auto &t : config.topics) ctx.topics.push_back(load_topic(config.resolve(t)));
    if (config.judge == "stub") {
        ctx.judge = std::make_unique<metrics::HeuristicJudge>();
    } else if (config.judge == "remote") {
        auto opts = metrics::RemoteJudgeOptions::from_env();
        if (!opts) throw BackendUnavailableError("judge 'remote' needs STEERBENCH_JUDGE_URL");
        ctx.judge = std::make_unique<metrics::RemoteJudge>(*opts);
    }
    if (config.grammar) ctx.grammar = std::make_shared<metrics::GrammarChecker>(metrics::GrammarChecker::from_env());
    if (!metrics::language_detector())
        metrics::set_language_detector(std::make_shared<metrics::StopwordLanguageDetector>());
    return ctx;
}

std::vector<int> topic_token_ids(const TopicSpec &topic, const runtime::Tokenizer &tokenizer) {
    std::vector<int> ids;
    const auto &words = topic.lens_tokens.empty() ? topic.keywords : topic.lens_tokens;
    for (const auto &w : words) {
        const auto t = tokenizer.encode(w);
        if (!t.empty() && std::find(ids.begin(), ids.end(), t.front()) == ids.end()) ids.push_back(t.front());
    }
    return ids;
}

SweepSummary run_sweep(const SweepConfig &config, const SweepOptions &options) {
    SweepContext ctx = prepare_sweep(config);
    return run_sweep(config, ctx, options);
}

SweepSummary run_sweep(const SweepConfig &config_in, SweepContext &ctx, const SweepOptions &options) {
    const runtime::Model &model = *ctx.model;
    const auto &tok = model.tokenizer();
    const auto &prompts = ctx.prompts.prompts;
    const auto &topics = ctx.topics;
    SweepSummary summary;
    auto say = [&](const std::string &s) {
        if (options.progress) options.progress(s);
    };

    // Artifacts: everything is built before the first generation.
    SweepConfig config = config_in;
    for (auto &m : config.methods) {
        if (!m.alphas.empty()) continue;
        m.alphas = m.name == kControl ? std::vector<double>{0.0} : default_alphas(ctx.model_id, m.name);
    }
    config.validate(model.config().n_layers, /*require_alphas=*/false);
    std::map<std::tuple<int, std::size_t, std::size_t>, Prepared> prepared;
    for (int layer : config.layers) {
        for (std::size_t mi = 0; mi < config.methods.size(); ++mi) {
            auto &m = config.methods[mi];
            std::shared_ptr<const codec::Codec> codec;
            if (is_codec_method(m.name)) codec = build_codec(config, m, model, layer);
            for (std::size_t ti = 0; ti < topics.size(); ++ti) {
                const auto &topic = topics[ti];
                Prepared p;
                p.spec.layer = layer;
                p.spec.generation = config.generation;
                if (codec) {
                    adapters::FeatureSelection sel;
                    try {
                        sel = adapters::select_topic_feature(*codec, topic, tok, ctx.model_id);
                    } catch (const ContractError &e) {
                        // e.g. a language topic has no token to edit; its cells are left out
                        summary.notes.push_back(m.name + " skipped for " + topic.name + ": " + e.what());
                        continue;
                    }
                    p.spec.method = intervene::InterventionSpec::Method::Codec;
                    p.spec.codec = codec;
                    p.spec.targets = sel.indices;
                    if (sel.degraded) p.flags.push_back("feature_degraded");
                    if (m.alphas.empty()) {
                        m.alphas = propose_alphas(noop_alpha(model, *codec, sel.indices, layer, prompts));
                        m.alphas_proposed = true;
                        summary.notes.push_back(m.name + ": proposed alpha grid (not tabulated)");
                    }
                } else if (m.name == kControl) {
                    p.spec.method = intervene::InterventionSpec::Method::Control;
                } else {
                    if (topic.pairs_path.empty())
                        throw LoadError("topic '" + topic.name + "' has no contrastive pairs for " + m.name);
                    const auto pairs = adapters::load_pairs(topic.pairs_path);
                    p.spec.method = intervene::InterventionSpec::Method::Additive;
                    if (m.name == kSteering) {
                        p.spec.v = adapters::train_steering_vector(pairs, model, layer, topic.name).v;
                    } else {
                        const auto probe = adapters::train_probe(pairs, model, layer, {}, topic.name);
                        p.spec.v = probe.w;
                        for (const auto &w : probe.warnings) summary.notes.push_back(topic.name + " probe: " + w);
                    }
                }
                if (m.alphas_proposed) p.flags.push_back("alpha_proposed");
                prepared[{layer, mi, ti}] = std::move(p);
            }
            if (m.alphas.empty())
                throw ContractError("no alpha grid for '" + m.name + "' and none tabulated for " + ctx.model_id);
        }
    }
    config.validate(model.config().n_layers);

    std::vector<Cell> cells;
    for (int layer : config.layers)
        for (std::size_t mi = 0; mi < config.methods.size(); ++mi)
            for (std::size_t ti = 0; ti < topics.size(); ++ti) {
                if (!prepared.count({layer, mi, ti})) continue;
                for (double alpha : config.methods[mi].alphas)
                    for (std::size_t pi = 0; pi < prompts.size(); ++pi)
                        cells.push_back({layer, mi, ti, alpha, pi,
                                         make_run_id(layer, config.methods[mi].name, topics[ti].name, alpha,
                                                     prompts[pi].id)});
            }
    summary.total_cells = static_cast<int>(cells.size());

    const fs::path out_dir = config.resolve(config.output_dir);
    fs::create_directories(out_dir);
    const fs::path journal_path = out_dir / "journal.jsonl";
    const fs::path clean_path = out_dir / "clean.jsonl";

    std::map<std::string, RunRecord> done;
    std::map<std::string, CleanEntry> clean;
    if (options.resume) {
        if (fs::exists(journal_path))
            for (auto &r : read_records(journal_path)) done[r.run_id] = std::move(r);
        if (fs::exists(clean_path)) {
            std::ifstream in(clean_path);
            for (std::string line; std::getline(in, line);) {
                try {
                    const json j = json::parse(line);
                    CleanEntry e{j.at("tokens").get<std::vector<int>>(), "", std::nullopt};
                    e.text = tok.decode(e.tokens);
                    if (j.contains("coherence") && !j["coherence"].is_null()) e.coherence = j["coherence"].get<double>();
                    clean[j.at("prompt_id").get<std::string>()] = std::move(e);
                } catch (const json::exception &) {
                    // truncated trailing line from an interrupted run
                }
            }
        }
    } else {
        fs::remove(journal_path);
        fs::remove(clean_path);
    }

    std::vector<const Cell *> pending;
    for (const auto &c : cells) {
        if (done.count(c.run_id)) ++summary.resumed_cells;
        else pending.push_back(&c);
    }

    std::mutex io_mutex;
    auto run_pool = [&](std::size_t n, const std::function<void(std::size_t)> &work) {
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t i = next++; i < n; i = next++) work(i);
        };
        const int threads = std::max(1, std::min<int>(config.workers, static_cast<int>(n)));
        std::vector<std::thread> pool;
        for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
        worker();
        for (auto &th : pool) th.join();
    };

    auto prompt_tokens = [&](std::size_t pi) {
        auto ids = tok.encode(prompts[pi].text);
        if (ids.empty()) throw ContractError("prompt '" + prompts[pi].id + "' tokenizes to nothing");
        return ids;
    };

    // Clean generations, once per prompt.
    std::vector<std::size_t> need_clean;
    {
        std::set<std::size_t> s;
        for (const auto *c : pending)
            if (!clean.count(prompts[c->prompt].id)) s.insert(c->prompt);
        need_clean.assign(s.begin(), s.end());
    }
    {
        std::ofstream clean_out(clean_path, std::ios::app);
        run_pool(need_clean.size(), [&](std::size_t k) {
            const auto pi = need_clean[k];
            const auto &p = prompts[pi];
            try {
                const auto ids = prompt_tokens(pi);
                runtime::GenerationSettings s = config.generation;
                s.seed = fnv1a(config.seed, "clean|" + p.id);
                const auto gen = runtime::generate(model, ids, s);
                CleanEntry e{gen.tokens, tok.decode(gen.tokens), std::nullopt};
                if (ctx.judge) {
                    const auto v = metrics::coherence(p.text, e.text, *ctx.judge);
                    e.coherence = v.score;
                }
                json j = {{"prompt_id", p.id}, {"tokens", e.tokens}};
                j["coherence"] = e.coherence ? json(*e.coherence) : json(nullptr);
                std::lock_guard lock(io_mutex);
                clean_out << j.dump() << '\n' << std::flush;
                clean[p.id] = std::move(e);
                ++summary.clean_generations;
            } catch (const std::exception &ex) {
                std::lock_guard lock(io_mutex);
                summary.errors.push_back("clean " + p.id + ": " + ex.what());
            }
        });
    }
    say("clean generations: " + std::to_string(summary.clean_generations));

    std::map<std::size_t, std::vector<int>> topic_ids;
    for (std::size_t ti = 0; ti < topics.size(); ++ti) topic_ids[ti] = topic_token_ids(topics[ti], tok);

    std::atomic<int> started{0};
    std::ofstream journal(journal_path, std::ios::app);
    run_pool(pending.size(), [&](std::size_t k) {
        if (options.max_new_cells > 0 && started.fetch_add(1) >= options.max_new_cells) return;
        const Cell &c = *pending[k];
        const auto &p = prompts[c.prompt];
        const auto &topic = topics[c.topic];
        const auto &m = config.methods[c.method];
        try {
            const CleanEntry *ce = nullptr;
            {
                std::lock_guard lock(io_mutex);
                auto it = clean.find(p.id);
                if (it == clean.end()) throw std::runtime_error("clean generation unavailable");
                ce = &it->second;
            }
            const Prepared &prep = prepared.at({c.layer, c.method, c.topic});
            intervene::InterventionSpec spec = prep.spec;
            spec.alpha = c.alpha;
            spec.generation = config.generation;
            spec.generation.seed = fnv1a(config.seed, c.run_id);
            const auto ids = prompt_tokens(c.prompt);
            auto handle = intervene::install_intervention(model, spec);
            const std::vector<runtime::ResidualTap> taps{handle.tap};
            const auto gen = runtime::generate(model, ids, spec.generation, taps);

            RunRecord r;
            r.run_id = c.run_id;
            r.model_id = ctx.model_id;
            r.prompt_id = p.id;
            r.prompt = p.text;
            r.topic = topic.name;
            r.method = m.name;
            r.layer = c.layer;
            r.alpha = c.alpha;
            r.clean_text = ce->text;
            r.intervened_text = tok.decode(gen.tokens);
            r.flags = prep.flags;
            const int last = static_cast<int>(ids.size()) - 1;
            if (spec.method != intervene::InterventionSpec::Method::Control) {
                const auto &er = handle.log->by_position.at(last);
                r.edit_distance = er.edit_distance;
                if (er.degenerate) r.flags.push_back("degenerate_max");
                if (config.store_directions) {
                    r.edit_direction.resize(static_cast<std::size_t>(er.edit_direction.size()));
                    for (Eigen::Index i = 0; i < er.edit_direction.size(); ++i)
                        r.edit_direction[static_cast<std::size_t>(i)] = static_cast<float>(er.edit_direction[i]);
                }
            }
            try {
                r.success = metrics::success(r.intervened_text, topic.detector);
                r.clean_success = metrics::success(r.clean_text, topic.detector);
            } catch (const BackendUnavailableError &) {
                r.flags.push_back("detector_unavailable");
            }
            if (!topic_ids[c.topic].empty() && !gen.step_logits.empty())
                r.token_probability = metrics::intervened_token_probability(gen.step_logits, topic_ids[c.topic]);
            if (ctx.judge) {
                const auto v = metrics::coherence(p.text, r.intervened_text, *ctx.judge);
                r.coherence = v.score;
                if (v.missing()) r.flags.push_back("judge_missing");
            }
            r.clean_coherence = ce->coherence;
            if (config.perplexity && !gen.tokens.empty()) {
                try {
                    r.perplexity = metrics::perplexity(model, ids, gen.tokens);
                } catch (const std::exception &) {
                    r.flags.push_back("perplexity_failed");
                }
            }
            if (ctx.grammar) {
                const auto g = metrics::grammar_errors(r.intervened_text, *ctx.grammar);
                if (g.available) r.grammar_errors = g.errors;
                else r.flags.push_back("grammar_unavailable");
            }
            const std::string line = record_to_json_line(r);
            std::lock_guard lock(io_mutex);
            journal << line << '\n' << std::flush;
            done[r.run_id] = std::move(r);
            ++summary.intervened_generations;
        } catch (const std::exception &ex) {
            std::lock_guard lock(io_mutex);
            ++summary.failed_cells;
            summary.errors.push_back(c.run_id + ": " + ex.what());
        }
    });
    journal.close();

    for (const auto &c : cells) {
        auto it = done.find(c.run_id);
        if (it != done.end()) summary.records.push_back(it->second);
    }
    write_records(out_dir / "records.jsonl", summary.records);
    say("cells: " + std::to_string(summary.records.size()) + "/" + std::to_string(summary.total_cells));
    return summary;
}

std::vector<LayerRow> summarize_layers(const std::vector<RunRecord> &records) {
    std::map<std::pair<int, std::string>, std::vector<const RunRecord *>> groups;
    for (const auto &r : records) groups[{r.layer, r.method}].push_back(&r);
    std::vector<LayerRow> rows;
    for (const auto &[key, rs] : groups) {
        LayerRow row;
        row.layer = key.first;
        row.method = key.second;
        row.runs = static_cast<int>(rs.size());
        double coh = 0.0;
        int coh_n = 0;
        for (const auto *r : rs) {
            row.success_rate += r->success ? 1.0 : 0.0;
            row.clean_success_rate += r->clean_success ? 1.0 : 0.0;
            row.mean_edit_distance += r->edit_distance;
            if (r->coherence) {
                coh += *r->coherence;
                ++coh_n;
            }
        }
        row.success_rate /= row.runs;
        row.clean_success_rate /= row.runs;
        row.mean_edit_distance /= row.runs;
        if (coh_n > 0) row.mean_coherence = coh / coh_n;
        rows.push_back(row);
    }
    return rows;
}

std::vector<LayerRow> layer_sweep(const SweepConfig &config, SweepSummary *summary, const SweepOptions &options) {
    for (const auto &m : config.methods)
        require(m.alphas.size() == 1, "layer sweep needs exactly one alpha for '" + m.name + "'");
    SweepSummary s = run_sweep(config, options);
    auto rows = summarize_layers(s.records);
    if (summary) *summary = std::move(s);
    return rows;
}

std::string prompting_text(const std::string &topic, const std::string &prompt) {
    return "Please mention " + topic + " in your response. " + prompt;
}

std::vector<RunRecord> prompting_baseline(const runtime::Model &model, const std::string &model_id,
                                          const std::vector<Prompt> &prompts, const std::vector<TopicSpec> &topics,
                                          const runtime::GenerationSettings &generation, metrics::Judge *judge) {
    if (!model.config().instruction_tuned)
        throw ContractError("prompting baseline refused: '" + model_id + "' is not instruction-tuned");
    const auto &tok = model.tokenizer();
    std::vector<RunRecord> out;
    for (const auto &topic : topics) {
        const auto ids_topic = topic_token_ids(topic, tok);
        for (const auto &p : prompts) {
            const std::string text = prompting_text(topic.name, p.text);
            const auto ids = tok.encode(text);
            runtime::GenerationSettings s = generation;
            s.seed = fnv1a(generation.seed, "prompting|" + topic.name + "|" + p.id);
            const auto gen = runtime::generate(model, ids, s);
            const auto clean = runtime::generate(model, tok.encode(p.text), s);
            RunRecord r;
            r.run_id = make_run_id(-1, kPrompting, topic.name, 0.0, p.id);
            r.model_id = model_id;
            r.prompt_id = p.id;
            r.prompt = text;
            r.topic = topic.name;
            r.method = kPrompting;
            r.layer = -1;
            r.clean_text = tok.decode(clean.tokens);
            r.intervened_text = tok.decode(gen.tokens);
            r.success = metrics::success(r.intervened_text, topic.detector);
            r.clean_success = metrics::success(r.clean_text, topic.detector);
            if (!ids_topic.empty() && !gen.step_logits.empty())
                r.token_probability = metrics::intervened_token_probability(gen.step_logits, ids_topic);
            if (judge) r.coherence = metrics::coherence(p.text, r.intervened_text, *judge).score;
            out.push_back(std::move(r));
        }
    }
    return out;
}

} // namespace steerbench::bench
