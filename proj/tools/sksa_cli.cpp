// Command-line front end over the libsksa C API.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sksa/sksa.h"

namespace {

using json = nlohmann::json;

int report_failure(sksa_status s) {
    std::fprintf(stderr, "error: %s\n", sksa_last_error());
    return s == SKSA_INTERNAL ? 70 : static_cast<int>(s);
}

std::string take(char* s) {
    std::string out = s ? s : "";
    sksa_string_free(s);
    return out;
}

bool slurp(const std::string& path, std::vector<uint8_t>& out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    out.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return true;
}

void emit(const std::string& text, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream(out_path) << text;
}

struct EvalArgs {
    std::string index, samples, judge = "tagmatch", likert_judge, mode = "full", backend = "mock", generate, fixture,
                                    out, csv;
    std::size_t n = 400;
    unsigned parallelism = 4;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sketch-conditioned product search agent"};
    app.require_subcommand(1);
    int rc = 0;

    // index ---------------------------------------------------------------
    auto* index = app.add_subcommand("index", "Build, verify and query the product index");
    index->require_subcommand(1);

    std::string catalog, out, backend = "mock";
    uint32_t dim = 512;
    bool strict = false;
    auto* build = index->add_subcommand("build", "Embed a catalog into an index file");
    build->add_option("--catalog", catalog, "Catalog JSON lines")->required()->check(CLI::ExistingFile);
    build->add_option("--out", out, "Index file to write")->required();
    build->add_option("--dim", dim, "Embedding dimension")->check(CLI::PositiveNumber);
    build->add_flag("--strict-images", strict, "Require PNG signatures");
    build->add_option("--backend", backend, "mock|http")->check(CLI::IsMember({"mock", "http"}));
    build->callback([&] {
        char* report = nullptr;
        const auto s = sksa_index_build(catalog.c_str(), out.c_str(), dim, strict ? 1 : 0, backend.c_str(), &report);
        if (s != SKSA_OK) {
            rc = report_failure(s);
            return;
        }
        const auto j = json::parse(take(report));
        std::printf("indexed %zu records (dim %u) into %s\n", j["records"].get<std::size_t>(), j["dim"].get<unsigned>(),
                    out.c_str());
    });

    std::string index_path;
    auto* verify = index->add_subcommand("verify", "Check an index against its catalog");
    verify->add_option("--index", index_path)->required()->check(CLI::ExistingFile);
    verify->add_option("--catalog", catalog)->required()->check(CLI::ExistingFile);
    verify->callback([&] {
        sksa_index* idx = nullptr;
        auto s = sksa_index_load(index_path.c_str(), &idx);
        if (s != SKSA_OK) {
            rc = report_failure(s);
            return;
        }
        int passed = 0;
        char* text = nullptr;
        s = sksa_index_verify(idx, catalog.c_str(), &passed, &text);
        sksa_index_free(idx);
        if (s != SKSA_OK) {
            rc = report_failure(s);
            return;
        }
        std::cout << take(text);
        rc = passed ? 0 : 1;
    });

    std::string image;
    std::size_t k = 20;
    auto* query = index->add_subcommand("query", "Rank the index against an image");
    query->add_option("--index", index_path)->required()->check(CLI::ExistingFile);
    query->add_option("--image", image)->required()->check(CLI::ExistingFile);
    query->add_option("--k", k)->check(CLI::PositiveNumber);
    query->add_option("--backend", backend)->check(CLI::IsMember({"mock", "http"}));
    query->callback([&] {
        std::vector<uint8_t> bytes;
        if (!slurp(image, bytes)) {
            std::fprintf(stderr, "error: cannot read %s\n", image.c_str());
            rc = 1;
            return;
        }
        sksa_index* idx = nullptr;
        auto s = sksa_index_load(index_path.c_str(), &idx);
        if (s != SKSA_OK) {
            rc = report_failure(s);
            return;
        }
        char* tsv = nullptr;
        s = sksa_index_query_image(idx, backend.c_str(), bytes.data(), bytes.size(), k, &tsv);
        sksa_index_free(idx);
        if (s != SKSA_OK) {
            rc = report_failure(s);
            return;
        }
        std::cout << take(tsv);
    });

    // serve / replay ------------------------------------------------------
    std::string memory, host = "127.0.0.1", cors, fixture, generate, mode = "full", transcript;
    int port = 8080;
    auto engine_config = [&] {
        json cfg = {{"index", index_path}, {"backend", backend}};
        if (!memory.empty()) cfg["memory"] = memory;
        if (!fixture.empty()) cfg["chat_fixture"] = fixture;
        if (!generate.empty()) cfg["generate"] = generate;
        return cfg.dump();
    };

    auto* serve = app.add_subcommand("serve", "Run the session service over HTTP");
    serve->add_option("--index", index_path)->required()->check(CLI::ExistingFile);
    serve->add_option("--memory", memory, "Memory JSON lines file (created if absent)");
    serve->add_option("--port", port)->check(CLI::Range(0, 65535));
    serve->add_option("--host", host);
    serve->add_option("--cors-origin", cors);
    serve->add_option("--backend", backend)->check(CLI::IsMember({"mock", "http"}));
    serve->add_option("--chat-fixture", fixture);
    serve->callback([&] {
        sksa_engine* engine = nullptr;
        auto s = sksa_engine_create(engine_config().c_str(), &engine);
        if (s == SKSA_OK) s = sksa_engine_serve(engine, host.c_str(), port, cors.c_str());
        if (s != SKSA_OK) rc = report_failure(s);
        sksa_engine_free(engine);
    });

    auto* rep = app.add_subcommand("replay", "Replay a transcript and print its golden record");
    rep->add_option("--index", index_path)->required()->check(CLI::ExistingFile);
    rep->add_option("--transcript", transcript)->required()->check(CLI::ExistingFile);
    rep->add_option("--mode", mode);
    rep->add_option("--backend", backend)->check(CLI::IsMember({"mock", "http"}));
    rep->add_option("--chat-fixture", fixture);
    rep->add_option("--generate", generate, "mock|passthrough|http");
    rep->callback([&] {
        sksa_engine* engine = nullptr;
        char* golden = nullptr;
        auto s = sksa_engine_create(engine_config().c_str(), &engine);
        if (s == SKSA_OK) s = sksa_engine_replay(engine, transcript.c_str(), mode.c_str(), &golden);
        sksa_engine_free(engine);
        if (s != SKSA_OK) {
            rc = report_failure(s);
            return;
        }
        std::cout << take(golden) << "\n";
    });

    // eval ----------------------------------------------------------------
    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "Latency, success, personalization and ablation reports");
    eval->require_subcommand(1);
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--index", ea.index)->required()->check(CLI::ExistingFile);
        sub->add_option("--mode", ea.mode);
        sub->add_option("--backend", ea.backend)->check(CLI::IsMember({"mock", "http"}));
        sub->add_option("--generate", ea.generate, "mock|passthrough|http");
        sub->add_option("--chat-fixture", ea.fixture);
        sub->add_option("--parallelism", ea.parallelism)->check(CLI::PositiveNumber);
        sub->add_option("--out", ea.out, "Write the text report here");
        sub->add_option("--csv", ea.csv, "Write the CSV report here");
    };
    auto run_eval = [&](const char* command) {
        json cfg = {{"index", ea.index}, {"mode", ea.mode}, {"backend", ea.backend}, {"n", ea.n},
                    {"judge", ea.judge}, {"parallelism", ea.parallelism}};
        if (!ea.samples.empty()) cfg["samples"] = ea.samples;
        if (!ea.likert_judge.empty()) cfg["likert_judge"] = ea.likert_judge;
        if (!ea.generate.empty()) cfg["generate"] = ea.generate;
        if (!ea.fixture.empty()) cfg["chat_fixture"] = ea.fixture;
        char* report = nullptr;
        const auto s = sksa_eval_run(command, cfg.dump().c_str(), &report);
        if (s != SKSA_OK) {
            rc = report_failure(s);
            return;
        }
        const auto j = json::parse(take(report));
        emit(j["text"].get<std::string>(), ea.out);
        if (!ea.csv.empty()) std::ofstream(ea.csv) << j["csv"].get<std::string>();
        else if (!ea.out.empty()) std::cout << j["csv"].get<std::string>();
    };

    auto* latency = eval->add_subcommand("latency", "Per-stage latency over n search turns");
    add_common(latency);
    latency->add_option("--n", ea.n)->check(CLI::PositiveNumber);
    latency->add_option("--samples", ea.samples)->check(CLI::ExistingFile);
    latency->callback([&] { run_eval("latency"); });

    auto* success = eval->add_subcommand("success", "Judge-scored success rate");
    add_common(success);
    success->add_option("--samples", ea.samples)->required()->check(CLI::ExistingFile);
    success->add_option("--judge", ea.judge, "scripted:<file>|tagmatch|http");
    success->callback([&] { run_eval("success"); });

    auto* personalize = eval->add_subcommand("personalize", "Judge-scored personalization (1-5)");
    add_common(personalize);
    personalize->add_option("--samples", ea.samples)->required()->check(CLI::ExistingFile);
    personalize->add_option("--judge", ea.judge, "scripted:<file>|http")->required();
    personalize->callback([&] { run_eval("personalize"); });

    auto* ablations = eval->add_subcommand("ablations", "All four modes against every metric");
    add_common(ablations);
    ablations->add_option("--samples", ea.samples)->required()->check(CLI::ExistingFile);
    ablations->add_option("--judge", ea.judge, "success judge");
    ablations->add_option("--likert-judge", ea.likert_judge, "personalization judge");
    ablations->callback([&] { run_eval("ablations"); });

    CLI11_PARSE(app, argc, argv);
    return rc;
}
