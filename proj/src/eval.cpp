#include "sksa/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <regex>
#include <thread>

namespace sksa {

namespace {

using json = nlohmann::json;

std::string fmt(double v, int digits = 2) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

Bytes read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::FixtureMissing, "cannot read " + path.string());
    return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::vector<std::optional<int>> optional_ints(const json& j, const char* key) {
    std::vector<std::optional<int>> out;
    if (!j.contains(key)) return out;
    for (const auto& v : j.at(key)) out.push_back(v.is_null() ? std::nullopt : std::optional<int>(v.get<int>()));
    return out;
}

std::optional<int> lookup(const std::vector<std::optional<int>>& table, std::size_t i) {
    return i < table.size() ? table[i] : std::nullopt;
}

struct Reference {
    const char* stage;
    const char* label;
    double min, max, mean;
};

// Hosted-model reference figures (seconds) printed alongside local measurements.
constexpr Reference kReference[] = {
    {"generate", "Distilled & T2I Diffusion", 1.74, 2.32, 1.92},
    {"search", "Search", 0.18, 0.23, 0.21},
    {"chat", "MLLM", 0.92, 1.44, 1.11},
    {"total", "Total", 3.24, 4.45, 3.86},
};

std::string render_personalization_case(const EvalSample& s, const StepResult& r, const EmbeddingIndex& index) {
    std::string out = "User context: sketch attached; request \"" + s.text_condition + "\"\n";
    out += "Preferences:\n";
    for (const auto& p : s.preload_preferences) out += "- " + p + "\n";
    if (s.preload_preferences.empty()) out += "- (none)\n";
    out += "Use case: " + s.text_condition + "\n";
    if (r.generated_image) {
        out += "Generated image: " + hex64(r.generated_image->digest()) + " (condition: " +
               r.generated_image->condition_used + ")\n";
    } else {
        out += "Generated image: (none)\n";
    }
    out += "Search rankings:\n";
    if (r.ranked_list) out += render_ranked(*r.ranked_list, index, 10) + "\n";
    return out;
}

}  // namespace

std::vector<EvalSample> load_samples(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::FixtureMissing, "sample file not found: " + path.string());
    std::vector<EvalSample> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        EvalSample s;
        try {
            const auto j = json::parse(line);
            s.sketch_path = path.parent_path() / j.at("sketch_path").get<std::string>();
            s.text_condition = j.at("text_condition").get<std::string>();
            s.ground_truth_tags = j.value("ground_truth_tags", std::vector<std::string>{});
            s.preload_preferences = j.value("preload_preferences", std::vector<std::string>{});
        } catch (const json::exception& e) {
            throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (s.text_condition.empty()) {
            throw Error(ErrorCode::InvalidArgument, path.string() + ":" + std::to_string(line_no) + ": empty text_condition");
        }
        if (!std::filesystem::exists(s.sketch_path)) {
            throw Error(ErrorCode::FixtureMissing, "sketch file not found: " + s.sketch_path.string());
        }
        out.push_back(std::move(s));
    }
    return out;
}

StageStats summarize(std::span<const double> values) {
    if (values.empty()) throw Error(ErrorCode::InvalidArgument, "no values to summarize");
    StageStats s;
    s.n = values.size();
    s.min = *std::min_element(values.begin(), values.end());
    s.max = *std::max_element(values.begin(), values.end());
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    // Summation rounding can push the mean a hair outside [min, max].
    s.mean = std::clamp(s.mean, s.min, s.max);
    return s;
}

RateSummary success_rate(std::span<const std::optional<int>> labels) {
    RateSummary r;
    std::size_t correct = 0;
    for (const auto& l : labels) {
        if (!l) {
            ++r.abstentions;
            continue;
        }
        if (*l != 0 && *l != 1) throw Error(ErrorCode::InvalidArgument, "binary label must be 0 or 1");
        ++r.scored;
        correct += static_cast<std::size_t>(*l);
    }
    r.rate = r.scored == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(r.scored);
    return r;
}

LikertSummary likert_mean(std::span<const std::optional<int>> scores) {
    LikertSummary r;
    long long sum = 0;
    for (const auto& s : scores) {
        if (!s) {
            ++r.abstentions;
            continue;
        }
        if (*s < 1 || *s > 5) throw Error(ErrorCode::InvalidArgument, "likert score must be in 1..5");
        ++r.scored;
        sum += *s;
        ++r.distribution[*s];
    }
    r.mean = r.scored == 0 ? 0.0 : static_cast<double>(sum) / static_cast<double>(r.scored);
    return r;
}

std::string LatencyStats::render_table() const {
    std::string out = "Latency over " + std::to_string(runs) + " search turns (" + std::to_string(failures) +
                      " failed, excluded), seconds\n";
    char line[160];
    std::snprintf(line, sizeof(line), "%-28s %8s %8s %8s   %8s %8s %8s\n", "Stage", "Min", "Max", "Mean", "RefMin",
                  "RefMax", "RefMean");
    out += line;
    for (const auto& ref : kReference) {
        auto it = stages.find(ref.stage);
        if (it == stages.end()) continue;
        std::snprintf(line, sizeof(line), "%-28s %8.4f %8.4f %8.4f   %8.2f %8.2f %8.2f\n", ref.label, it->second.min,
                      it->second.max, it->second.mean, ref.min, ref.max, ref.mean);
        out += line;
    }
    std::snprintf(line, sizeof(line), "%-28s %26.4f\n", "Orchestration overhead", overhead_mean);
    out += line;
    out += "Reference columns are hosted-model figures and are reported only; the Search row covers embedding + ranking.\n";
    return out;
}

std::string LatencyStats::to_csv() const {
    std::string out = "stage,min_s,max_s,mean_s,n\n";
    for (const auto& ref : kReference) {
        auto it = stages.find(ref.stage);
        if (it == stages.end()) continue;
        out += std::string(ref.stage) + "," + fmt(it->second.min, 6) + "," + fmt(it->second.max, 6) + "," +
               fmt(it->second.mean, 6) + "," + std::to_string(it->second.n) + "\n";
    }
    out += "overhead,,," + fmt(overhead_mean, 6) + ",\n";
    return out;
}

// ---------------------------------------------------------------------------

std::unique_ptr<ScriptedJudge> ScriptedJudge::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::FixtureMissing, "judge fixture not found: " + path.string());
    try {
        const auto j = json::parse(in);
        return std::make_unique<ScriptedJudge>(optional_ints(j, "success"), optional_ints(j, "likert"));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, "bad judge fixture " + path.string() + ": " + e.what());
    }
}

std::optional<JudgeVerdict> ScriptedJudge::judge_success(const SuccessCase& c) {
    auto v = lookup(success_, c.sample_index);
    if (!v) return std::nullopt;
    return JudgeVerdict{v, std::nullopt, "scripted"};
}

std::optional<JudgeVerdict> ScriptedJudge::judge_personalization(const PersonalizationCase& c) {
    auto v = lookup(likert_, c.sample_index);
    if (!v) return std::nullopt;
    return JudgeVerdict{std::nullopt, v, "scripted"};
}

std::optional<JudgeVerdict> TagMatchJudge::judge_success(const SuccessCase& c) {
    std::vector<std::string> have;
    for (const auto& t : c.top_tags) have.push_back(lower(t));
    std::vector<std::string> missing;
    for (const auto& want : c.sample->ground_truth_tags) {
        if (std::find(have.begin(), have.end(), lower(want)) == have.end()) missing.push_back(want);
    }
    if (missing.empty()) return JudgeVerdict{1, std::nullopt, "all ground-truth tags present on " + c.top_id};
    return JudgeVerdict{0, std::nullopt, "missing tag '" + missing.front() + "' on " + c.top_id};
}

std::optional<JudgeVerdict> ChatJudge::ask(const std::string& rubric, const std::string& purpose, std::string body,
                                           std::vector<Attachment> attachments, int lo, int hi) {
    ChatRequest req;
    req.purpose = purpose;
    req.messages.push_back({Role::System, rubric, {}, {}});
    req.messages.push_back({Role::User, std::move(body), std::move(attachments), {}});
    ChatTurn turn;
    try {
        turn = backend_->chat(req);
    } catch (const Error&) {
        return std::nullopt;
    }
    if (!turn.text) return std::nullopt;
    static const std::regex score_re(R"(Score:\s*(-?\d+))");
    std::smatch m;
    if (!std::regex_search(*turn.text, m, score_re)) return std::nullopt;
    const int score = std::stoi(m[1].str());
    if (score < lo || score > hi) return std::nullopt;
    std::string rationale;
    if (auto pos = turn.text->find("Rationale:"); pos != std::string::npos) rationale = turn.text->substr(pos + 10);
    JudgeVerdict v;
    v.rationale = rationale;
    if (purpose == "judge_success") v.binary_correct = score;
    else v.likert = score;
    return v;
}

std::optional<JudgeVerdict> ChatJudge::judge_success(const SuccessCase& c) {
    std::string body = "Shopper's text condition: " + c.sample->text_condition + "\n";
    body += "Top-ranked product: " + c.top_id + "\nTags:";
    for (const auto& t : c.top_tags) body += " " + t + ";";
    body += "\nGenerated query image is attached after the sketch.";
    std::vector<Attachment> att;
    if (!c.sketch.empty()) att.push_back({"image/png", c.sketch});
    if (c.generated) att.push_back({c.generated->media_type, c.generated->bytes});
    return ask(prompts_->judge_success, "judge_success", std::move(body), std::move(att), 0, 1);
}

std::optional<JudgeVerdict> ChatJudge::judge_personalization(const PersonalizationCase& c) {
    std::vector<Attachment> att;
    if (c.generated) att.push_back({c.generated->media_type, c.generated->bytes});
    return ask(prompts_->judge_personalization, "judge_personalization", c.rendered, std::move(att), 1, 5);
}

void check_judge_independence(const ChatBackend& agent_backend, const Judge& judge) {
    const std::string a = agent_backend.identity();
    const std::string j = judge.identity();
    if (a.rfind("http", 0) == 0 && j.rfind("http", 0) == 0 && a == j) {
        throw Error(ErrorCode::JudgeConflict, "judge and agent use the same remote chat backend (" + a + ")");
    }
}

// ---------------------------------------------------------------------------

EvalHarness::EvalHarness(PipelineFactory factory, std::shared_ptr<Embedder> memory_embedder, HarnessConfig config)
    : factory_(std::move(factory)), memory_embedder_(std::move(memory_embedder)), config_(config) {
    if (!factory_ || !memory_embedder_) throw Error(ErrorCode::InvalidArgument, "harness needs a factory and an embedder");
}

template <typename Fn>
void EvalHarness::for_each_sample(std::size_t n, Fn&& fn) {
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) fn(i);
    };
    const unsigned workers = std::max(1U, std::min<unsigned>(config_.parallelism, static_cast<unsigned>(n)));
    if (workers <= 1) {
        work();
        return;
    }
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
}

LatencyStats EvalHarness::measure_latency(const std::vector<EvalSample>& samples, std::size_t n, Mode mode) {
    if (n == 0) throw Error(ErrorCode::InvalidArgument, "n must be >= 1");
    if (samples.empty()) throw Error(ErrorCode::InvalidArgument, "no samples");
    auto orch = factory_(mode, std::make_shared<MemoryStore>(memory_embedder_));
    std::vector<Bytes> sketches;
    for (const auto& s : samples) sketches.push_back(read_bytes(s.sketch_path));

    std::map<std::string, std::vector<double>> seconds;
    LatencyStats stats;
    // Sequential on purpose: concurrent runs would contend and inflate stage timings.
    for (std::size_t i = 0; i < n; ++i) {
        const auto& sample = samples[i % samples.size()];
        const std::string sid = orch->create_session(mode);
        try {
            const StepResult r =
                orch->interaction_step(sid, sample.text_condition, SketchInput::from_bytes(sketches[i % samples.size()]));
            if (!r.is_search()) {
                ++stats.failures;
            } else {
                auto at = [&](const char* k) {
                    auto it = r.stage_timings.find(k);
                    return it == r.stage_timings.end() ? 0.0 : it->second / 1000.0;
                };
                seconds["generate"].push_back(at("generate"));
                seconds["search"].push_back(at("embed") + at("search"));
                seconds["chat"].push_back(at("chat"));
                seconds["total"].push_back(at("total"));
            }
        } catch (const Error&) {
            ++stats.failures;
        }
        orch->remove_session(sid);
    }
    stats.runs = n;
    for (auto& [stage, values] : seconds) stats.stages[stage] = summarize(values);
    if (!seconds.empty()) {
        stats.overhead_mean = stats.stages["total"].mean -
                              (stats.stages["generate"].mean + stats.stages["search"].mean + stats.stages["chat"].mean);
    }
    return stats;
}

SuccessReport EvalHarness::eval_success_rate(const std::vector<EvalSample>& samples, Judge& judge, Mode mode) {
    if (samples.empty()) throw Error(ErrorCode::InvalidArgument, "no samples");
    SuccessReport report;
    report.samples.resize(samples.size());
    report.header = "success rate, mode " + std::string(mode_name(mode)) +
                    "; judge input: text condition, sketch, generated image, top result tags";
    std::mutex judge_mu;
    for_each_sample(samples.size(), [&](std::size_t i) {
        const auto& s = samples[i];
        auto& out = report.samples[i];
        try {
            // Fresh, empty memory: success runs never see preloaded preferences.
            auto orch = factory_(mode, std::make_shared<MemoryStore>(memory_embedder_));
            const std::string sid = orch->create_session(mode);
            const Bytes sketch = read_bytes(s.sketch_path);
            const StepResult r = orch->interaction_step(sid, s.text_condition, SketchInput::from_bytes(sketch));
            if (!r.ranked_list || r.ranked_list->empty()) {
                out.error = "turn did not produce a ranked list";
                return;
            }
            SuccessCase c;
            c.sample_index = i;
            c.sample = &s;
            c.top_id = r.ranked_list->entries.front().product_id;
            if (const auto* rec = orch->index().find(c.top_id)) c.top_tags = rec->tags;
            c.condition = std::get<RefinedSearch>(r.outcome).condition;
            c.generated = r.generated_image ? &*r.generated_image : nullptr;
            c.sketch = sketch;
            std::optional<JudgeVerdict> v;
            try {
                std::lock_guard lock(judge_mu);
                v = judge.judge_success(c);
            } catch (const std::exception&) {
                v.reset();
            }
            if (v && v->binary_correct) {
                out.score = v->binary_correct;
                out.rationale = v->rationale;
            }
        } catch (const std::exception& e) {
            out.error = e.what();
        }
    });
    std::vector<std::optional<int>> labels;
    for (const auto& o : report.samples) {
        if (!o.error.empty()) {
            ++report.failures;
            continue;
        }
        labels.push_back(o.score);
    }
    report.summary = success_rate(labels);
    return report;
}

PersonalizationReport EvalHarness::eval_personalization(const std::vector<EvalSample>& samples, Judge& judge, Mode mode) {
    if (samples.empty()) throw Error(ErrorCode::InvalidArgument, "no samples");
    PersonalizationReport report;
    report.samples.resize(samples.size());
    std::mutex judge_mu;
    for_each_sample(samples.size(), [&](std::size_t i) {
        const auto& s = samples[i];
        auto& out = report.samples[i];
        try {
            auto memory = std::make_shared<MemoryStore>(memory_embedder_);
            const std::string sid = "eval-" + std::to_string(i);
            memory->preload(sid, s.preload_preferences);
            auto orch = factory_(mode, memory);
            orch->create_session(mode, sid);
            const StepResult r =
                orch->interaction_step(sid, s.text_condition, SketchInput::from_bytes(read_bytes(s.sketch_path)));
            PersonalizationCase c;
            c.sample_index = i;
            c.sample = &s;
            c.rendered = render_personalization_case(s, r, orch->index());
            c.generated = r.generated_image ? &*r.generated_image : nullptr;
            std::optional<JudgeVerdict> v;
            try {
                std::lock_guard lock(judge_mu);
                v = judge.judge_personalization(c);
            } catch (const std::exception&) {
                v.reset();
            }
            if (v && v->likert) {
                out.score = v->likert;
                out.rationale = v->rationale;
            }
        } catch (const std::exception& e) {
            out.error = e.what();
        }
    });
    std::vector<std::optional<int>> scores;
    for (const auto& o : report.samples) {
        if (!o.error.empty()) {
            ++report.failures;
            continue;
        }
        scores.push_back(o.score);
    }
    report.summary = likert_mean(scores);
    return report;
}

AblationReport EvalHarness::run_ablation_suite(const std::vector<EvalSample>& samples, const std::vector<Mode>& modes,
                                               Judge& success_judge, Judge& personalization_judge) {
    AblationReport report;
    for (Mode mode : {Mode::NoRefine, Mode::ToolsOnly, Mode::MemoryOnly, Mode::Full}) {
        if (std::find(modes.begin(), modes.end(), mode) == modes.end()) continue;
        AblationRow row;
        row.mode = mode;
        try {
            const auto s = eval_success_rate(samples, success_judge, mode);
            if (s.summary.scored > 0) row.success = s.summary.rate;
            else row.errors.push_back("success: no scored samples");
        } catch (const std::exception& e) {
            row.errors.push_back(std::string("success: ") + e.what());
        }
        try {
            const auto p = eval_personalization(samples, personalization_judge, mode);
            if (p.summary.scored > 0) row.personalization = p.summary.mean;
            else row.errors.push_back("personalization: no scored samples");
        } catch (const std::exception& e) {
            row.errors.push_back(std::string("personalization: ") + e.what());
        }
        try {
            const auto l = measure_latency(samples, std::max<std::size_t>(1, config_.latency_runs), mode);
            if (auto it = l.stages.find("total"); it != l.stages.end()) row.latency_mean = it->second.mean;
            else row.errors.push_back("latency: every run failed");
        } catch (const std::exception& e) {
            row.errors.push_back(std::string("latency: ") + e.what());
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

std::string AblationReport::to_csv() const {
    auto cell = [](const std::optional<double>& v, int digits) { return v ? fmt(*v, digits) : std::string(); };
    std::string out = "mode,success_rate,personalization_mean,latency_mean_s\n";
    for (const auto& r : rows) {
        out += std::string(mode_name(r.mode)) + "," + cell(r.success, 4) + "," + cell(r.personalization, 4) + "," +
               cell(r.latency_mean, 6) + "\n";
    }
    return out;
}

std::string AblationReport::render_table() const {
    auto cell = [](const std::optional<double>& v, int digits) { return v ? fmt(*v, digits) : std::string("n/a"); };
    std::string out;
    char line[160];
    std::snprintf(line, sizeof(line), "%-12s %12s %16s %14s\n", "Mode", "Success", "Personalization", "Latency (s)");
    out += line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof(line), "%-12s %12s %16s %14s\n", std::string(mode_name(r.mode)).c_str(),
                      cell(r.success, 4).c_str(), cell(r.personalization, 2).c_str(), cell(r.latency_mean, 4).c_str());
        out += line;
        for (const auto& e : r.errors) out += "  ! " + e + "\n";
    }
    out += "note: the full pipeline is expected to score at least as high as its ablations on success; "
           "this is not checked for mock backends.\n";
    return out;
}

}  // namespace sksa
