#include "sksa/sksa.h"

#include <pthread.h>

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "sksa/catalog.hpp"
#include "sksa/eval.hpp"
#include "sksa/orchestrator.hpp"
#include "sksa/service.hpp"

using json = nlohmann::json;

struct sksa_index {
    std::shared_ptr<const sksa::EmbeddingIndex> index;
};

struct sksa_engine {
    sksa::BackendConfig backends;
    std::shared_ptr<sksa::Orchestrator> orch;
    std::unique_ptr<sksa::Service> service;
};

namespace {

thread_local std::string g_last_error;

sksa_status fail(sksa_status s, std::string msg) {
    g_last_error = std::move(msg);
    return s;
}

template <typename Fn>
sksa_status guarded(Fn&& fn) {
    g_last_error.clear();
    try {
        fn();
        return SKSA_OK;
    } catch (const sksa::Error& e) {
        return fail(static_cast<sksa_status>(e.code()), e.what());
    } catch (const json::exception& e) {
        return fail(SKSA_PARSE_ERROR, e.what());
    } catch (const std::exception& e) {
        return fail(SKSA_INTERNAL, e.what());
    }
}

json parse_config(const char* text) {
    json cfg;
    try {
        cfg = json::parse(text);
    } catch (const json::exception& e) {
        throw sksa::Error(sksa::ErrorCode::ParseError, std::string("config: ") + e.what());
    }
    if (!cfg.is_object()) throw sksa::Error(sksa::ErrorCode::InvalidArgument, "config must be a JSON object");
    return cfg;
}

std::string required_string(const json& cfg, const char* key) {
    if (!cfg.contains(key) || !cfg[key].is_string()) {
        throw sksa::Error(sksa::ErrorCode::MissingField, std::string("config: missing string '") + key + "'");
    }
    return cfg[key].get<std::string>();
}

char* dup(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

void put(char** out, const std::string& s) {
    if (out) *out = dup(s);
}

void require(const void* p, const char* what) {
    if (!p) throw sksa::Error(sksa::ErrorCode::InvalidArgument, std::string(what) + " is null");
}

sksa::BackendConfig backend_config(const json& cfg, std::uint32_t dim) {
    auto c = sksa::BackendConfig::from_env(cfg.value("backend", "mock"));
    if (cfg.contains("generate")) c.generate = cfg["generate"].get<std::string>();
    if (cfg.contains("chat_fixture")) c.chat_fixture = cfg["chat_fixture"].get<std::string>();
    else if (const char* f = std::getenv("SKSA_CHAT_FIXTURE"); f && *f) c.chat_fixture = f;
    c.dim = dim;
    return c;
}

std::shared_ptr<const sksa::PromptSet> prompts_for(const json& cfg) {
    if (cfg.contains("prompts_dir")) {
        return std::make_shared<const sksa::PromptSet>(sksa::PromptSet::load(cfg["prompts_dir"].get<std::string>()));
    }
    return std::make_shared<const sksa::PromptSet>(sksa::PromptSet::load_default());
}

sksa::OrchestratorConfig orchestrator_config(const json& cfg) {
    sksa::OrchestratorConfig oc;
    if (cfg.contains("k")) oc.default_k = cfg["k"].get<std::size_t>();
    if (cfg.contains("max_iterations")) oc.agent.max_iterations = cfg["max_iterations"].get<int>();
    return oc;
}

std::unique_ptr<sksa::Judge> make_judge(const std::string& spec, const sksa::ChatBackend& agent_chat,
                                        const std::shared_ptr<const sksa::PromptSet>& prompts) {
    std::unique_ptr<sksa::Judge> judge;
    if (spec.rfind("scripted:", 0) == 0) {
        judge = sksa::ScriptedJudge::from_file(spec.substr(9));
    } else if (spec == "tagmatch") {
        judge = std::make_unique<sksa::TagMatchJudge>();
    } else if (spec == "http") {
        auto chat = std::make_shared<sksa::HttpChat>(sksa::endpoint_from_env("JUDGE", std::chrono::milliseconds{60000}));
        judge = std::make_unique<sksa::ChatJudge>(chat, prompts);
    } else {
        throw sksa::Error(sksa::ErrorCode::InvalidArgument, "unknown judge '" + spec + "'");
    }
    sksa::check_judge_independence(agent_chat, *judge);
    return judge;
}

// Latency runs without a sample file cycle through synthetic sketches.
std::vector<sksa::EvalSample> synthetic_samples(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::vector<sksa::EvalSample> out;
    std::uint64_t state = 0x5eed;
    for (int i = 0; i < 20; ++i) {
        sksa::Bytes b(256);
        for (auto& x : b) x = static_cast<std::uint8_t>(sksa::splitmix64(state));
        const auto path = dir / ("sketch_" + std::to_string(i) + ".bin");
        std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(b.data()),
                                                    static_cast<std::streamsize>(b.size()));
        out.push_back({path, "product " + std::to_string(i), {}, {}});
    }
    return out;
}

json eval_run(const std::string& command, const json& cfg) {
    auto index = std::make_shared<const sksa::EmbeddingIndex>(sksa::EmbeddingIndex::load(required_string(cfg, "index")));
    const auto bc = backend_config(cfg, index->dim());
    const auto backends = sksa::make_backends(bc);
    const auto prompts = prompts_for(cfg);
    const auto oc = orchestrator_config(cfg);

    sksa::PipelineFactory factory = [&](sksa::Mode, std::shared_ptr<sksa::MemoryStore> memory) {
        sksa::AgentServices s{backends.chat, backends.generator, backends.embedder, index, std::move(memory), prompts};
        return std::make_shared<sksa::Orchestrator>(s, oc);
    };
    sksa::HarnessConfig hc;
    if (cfg.contains("parallelism")) hc.parallelism = cfg["parallelism"].get<unsigned>();
    if (cfg.contains("latency_runs")) hc.latency_runs = cfg["latency_runs"].get<std::size_t>();
    sksa::EvalHarness harness(factory, backends.embedder, hc);
    const sksa::Mode mode = sksa::parse_mode(cfg.value("mode", "full"));

    std::vector<sksa::EvalSample> samples;
    if (cfg.contains("samples")) {
        samples = sksa::load_samples(cfg["samples"].get<std::string>());
    } else if (command == "latency") {
        samples = synthetic_samples(std::filesystem::temp_directory_path() / "sksa_latency_sketches");
    } else {
        throw sksa::Error(sksa::ErrorCode::InvalidArgument, command + " needs samples");
    }

    json report;
    if (command == "latency") {
        const auto stats = harness.measure_latency(samples, cfg.value("n", std::size_t{400}), mode);
        report["text"] = stats.render_table();
        report["csv"] = stats.to_csv();
        report["failures"] = stats.failures;
        for (const auto& [stage, s] : stats.stages) report["stages"][stage] = {{"min", s.min}, {"max", s.max}, {"mean", s.mean}};
    } else if (command == "success") {
        auto judge = make_judge(cfg.value("judge", "tagmatch"), *backends.chat, prompts);
        const auto r = harness.eval_success_rate(samples, *judge, mode);
        std::string text = r.header + "\nsuccess rate " + std::to_string(r.summary.rate) + " over " +
                           std::to_string(r.summary.scored) + " scored, " + std::to_string(r.summary.abstentions) +
                           " abstained, " + std::to_string(r.failures) + " failed\n";
        std::string csv = "sample,score,error\n";
        for (std::size_t i = 0; i < r.samples.size(); ++i) {
            const auto& s = r.samples[i];
            csv += std::to_string(i) + "," + (s.score ? std::to_string(*s.score) : "") + "," + json(s.error).dump() + "\n";
        }
        report = {{"text", text}, {"csv", csv}, {"rate", r.summary.rate}, {"scored", r.summary.scored},
                  {"abstentions", r.summary.abstentions}, {"failures", r.failures}};
    } else if (command == "personalize") {
        auto judge = make_judge(cfg.value("judge", "tagmatch"), *backends.chat, prompts);
        const auto r = harness.eval_personalization(samples, *judge, mode);
        std::string text = "personalization mean " + std::to_string(r.summary.mean) + " over " +
                           std::to_string(r.summary.scored) + " scored, " + std::to_string(r.summary.abstentions) +
                           " abstained, " + std::to_string(r.failures) + " failed\n";
        json dist = json::object();
        for (const auto& [score, n] : r.summary.distribution) dist[std::to_string(score)] = n;
        std::string csv = "sample,score,error\n";
        for (std::size_t i = 0; i < r.samples.size(); ++i) {
            const auto& s = r.samples[i];
            csv += std::to_string(i) + "," + (s.score ? std::to_string(*s.score) : "") + "," + json(s.error).dump() + "\n";
        }
        report = {{"text", text}, {"csv", csv}, {"mean", r.summary.mean}, {"distribution", dist},
                  {"scored", r.summary.scored}, {"abstentions", r.summary.abstentions}, {"failures", r.failures}};
    } else if (command == "ablations") {
        auto sj = make_judge(cfg.value("judge", "tagmatch"), *backends.chat, prompts);
        auto lj = make_judge(cfg.value("likert_judge", cfg.value("judge", "tagmatch")), *backends.chat, prompts);
        const auto r = harness.run_ablation_suite(
            samples, {sksa::Mode::NoRefine, sksa::Mode::ToolsOnly, sksa::Mode::MemoryOnly, sksa::Mode::Full}, *sj, *lj);
        report["text"] = r.render_table();
        report["csv"] = r.to_csv();
    } else {
        throw sksa::Error(sksa::ErrorCode::InvalidArgument, "unknown eval command '" + command + "'");
    }
    return report;
}

}  // namespace

extern "C" {

const char* sksa_version(void) { return "0.1.0"; }

const char* sksa_status_name(sksa_status status) {
    if (status == SKSA_INTERNAL) return "Internal";
    static thread_local std::string name;
    name = std::string(sksa::error_name(static_cast<sksa::ErrorCode>(status)));
    return name.c_str();
}

const char* sksa_last_error(void) { return g_last_error.c_str(); }

void sksa_string_free(char* s) { std::free(s); }

sksa_status sksa_index_build(const char* catalog_path, const char* out_path, uint32_t dim, int strict_images,
                             const char* backend, char** report_json) {
    return guarded([&] {
        require(catalog_path, "catalog_path");
        require(out_path, "out_path");
        auto bc = sksa::BackendConfig::from_env(backend ? backend : "mock");
        bc.dim = dim;
        auto backends = sksa::make_backends(bc);
        const auto catalog = sksa::load_catalog(catalog_path);
        sksa::BuildOptions opts;
        opts.dim = dim;
        opts.strict_images = strict_images != 0;
        const auto index = sksa::build_index_file(catalog, *backends.embedder, out_path, opts);
        put(report_json, json{{"records", index.size()}, {"dim", index.dim()}, {"out", out_path}}.dump());
    });
}

sksa_status sksa_index_load(const char* path, sksa_index** out) {
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        *out = new sksa_index{std::make_shared<const sksa::EmbeddingIndex>(sksa::EmbeddingIndex::load(path))};
    });
}

void sksa_index_free(sksa_index* index) { delete index; }

size_t sksa_index_size(const sksa_index* index) { return index ? index->index->size() : 0; }

uint32_t sksa_index_dim(const sksa_index* index) { return index ? index->index->dim() : 0; }

sksa_status sksa_index_verify(const sksa_index* index, const char* catalog_path, int* passed, char** report_text) {
    return guarded([&] {
        require(index, "index");
        require(catalog_path, "catalog_path");
        const auto report = sksa::verify_index(*index->index, sksa::load_catalog(catalog_path));
        if (passed) *passed = report.ok() ? 1 : 0;
        put(report_text, report.render());
    });
}

sksa_status sksa_index_query_image(const sksa_index* index, const char* backend, const uint8_t* image, size_t image_len,
                                   size_t k, char** results_tsv) {
    return guarded([&] {
        require(index, "index");
        require(image, "image");
        auto bc = sksa::BackendConfig::from_env(backend ? backend : "mock");
        bc.dim = index->index->dim();
        const auto backends = sksa::make_backends(bc);
        const auto q = backends.embedder->embed_image({image, image_len});
        const auto ranked = index->index->top_k(q, k);
        std::string out;
        char score[32];
        for (const auto& e : ranked.entries) {
            std::snprintf(score, sizeof(score), "%.6f", e.score);
            out += e.product_id + "\t" + score + "\n";
        }
        put(results_tsv, out);
    });
}

sksa_status sksa_engine_create(const char* config_json, sksa_engine** out) {
    return guarded([&] {
        require(config_json, "config_json");
        require(out, "out");
        const json cfg = parse_config(config_json);
        auto index = std::make_shared<const sksa::EmbeddingIndex>(sksa::EmbeddingIndex::load(required_string(cfg, "index")));
        auto engine = std::make_unique<sksa_engine>();
        engine->backends = backend_config(cfg, index->dim());
        const auto backends = sksa::make_backends(engine->backends);
        std::shared_ptr<sksa::MemoryStore> memory;
        if (cfg.contains("memory")) memory = sksa::MemoryStore::open(backends.embedder, cfg["memory"].get<std::string>());
        else memory = std::make_shared<sksa::MemoryStore>(backends.embedder);
        sksa::AgentServices s{backends.chat, backends.generator, backends.embedder, index, memory, prompts_for(cfg)};
        engine->orch = std::make_shared<sksa::Orchestrator>(s, orchestrator_config(cfg));
        *out = engine.release();
    });
}

void sksa_engine_free(sksa_engine* engine) {
    if (!engine) return;
    if (engine->service) engine->service->stop();
    delete engine;
}

sksa_status sksa_engine_session_create(sksa_engine* engine, const char* mode, char** session_id) {
    return guarded([&] {
        require(engine, "engine");
        put(session_id, engine->orch->create_session(sksa::parse_mode(mode ? mode : "full")));
    });
}

sksa_status sksa_engine_step(sksa_engine* engine, const char* session_id, const char* query, const uint8_t* sketch,
                             size_t sketch_len, char** result_json) {
    return guarded([&] {
        require(engine, "engine");
        require(session_id, "session_id");
        std::optional<sksa::SketchInput> in;
        if (sketch && sketch_len > 0) in = sksa::SketchInput::from_bytes(sksa::Bytes(sketch, sketch + sketch_len));
        const auto r = engine->orch->interaction_step(session_id, query ? query : "", std::move(in));
        put(result_json, r.to_json(engine->orch->index()).dump());
    });
}

sksa_status sksa_engine_replay(sksa_engine* engine, const char* transcript_path, const char* mode, char** golden_json) {
    return guarded([&] {
        require(engine, "engine");
        require(transcript_path, "transcript_path");
        const auto results = sksa::replay(*engine->orch, transcript_path, sksa::parse_mode(mode ? mode : "full"));
        put(golden_json, sksa::golden_record(results).dump(2));
    });
}

sksa_status sksa_engine_serve_start(sksa_engine* engine, const char* host, int port, const char* cors_origin,
                                    int* bound_port) {
    return guarded([&] {
        require(engine, "engine");
        if (engine->service) throw sksa::Error(sksa::ErrorCode::Busy, "service already running");
        sksa::ServiceConfig sc;
        if (host) sc.host = host;
        sc.port = port;
        if (cors_origin) sc.cors_origin = cors_origin;
        sc.backend_chat = engine->backends.chat;
        sc.backend_generate = engine->backends.generate;
        sc.backend_embed = engine->backends.embed;
        engine->service = std::make_unique<sksa::Service>(engine->orch, sc);
        const int p = engine->service->start();
        if (bound_port) *bound_port = p;
    });
}

void sksa_engine_serve_stop(sksa_engine* engine) {
    if (engine && engine->service) {
        engine->service->stop();
        engine->service.reset();
    }
}

sksa_status sksa_engine_serve(sksa_engine* engine, const char* host, int port, const char* cors_origin) {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
    int bound = 0;
    const sksa_status s = sksa_engine_serve_start(engine, host, port, cors_origin, &bound);
    if (s != SKSA_OK) return s;
    std::fprintf(stderr, "listening on %s:%d\n", host ? host : "127.0.0.1", bound);
    int sig = 0;
    sigwait(&set, &sig);
    sksa_engine_serve_stop(engine);
    return SKSA_OK;
}

sksa_status sksa_eval_run(const char* command, const char* config_json, char** report_json) {
    return guarded([&] {
        require(command, "command");
        require(config_json, "config_json");
        put(report_json, eval_run(command, parse_config(config_json)).dump());
    });
}

}  // extern "C"
