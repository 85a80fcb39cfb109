#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sksa/orchestrator.hpp"

namespace sksa {

struct EvalSample {
    std::filesystem::path sketch_path;
    std::string text_condition;
    std::vector<std::string> ground_truth_tags;
    std::vector<std::string> preload_preferences;
};

/// JSON lines; sketch_path resolves relative to the sample file.
std::vector<EvalSample> load_samples(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Arithmetic.

struct StageStats {
    double min = 0.0;
    double max = 0.0;
    double mean = 0.0;
    std::size_t n = 0;
};

/// Requires at least one value.
StageStats summarize(std::span<const double> values);

struct LatencyStats {
    /// "generate", "search" (embed + rank), "chat", "total"; seconds.
    std::map<std::string, StageStats> stages;
    /// mean(total) - (mean(generate) + mean(search) + mean(chat)).
    double overhead_mean = 0.0;
    std::size_t runs = 0;
    std::size_t failures = 0;

    std::string render_table() const;
    std::string to_csv() const;
};

struct RateSummary {
    double rate = 0.0;
    std::size_t scored = 0;
    std::size_t abstentions = 0;
};

/// Mean of 0/1 labels; nullopt entries are abstentions, excluded from the denominator.
RateSummary success_rate(std::span<const std::optional<int>> labels);

struct LikertSummary {
    double mean = 0.0;
    std::map<int, std::size_t> distribution;
    std::size_t scored = 0;
    std::size_t abstentions = 0;
};

LikertSummary likert_mean(std::span<const std::optional<int>> scores);

// ---------------------------------------------------------------------------
// Judges.

struct JudgeVerdict {
    std::optional<int> binary_correct;
    std::optional<int> likert;
    std::string rationale;
};

struct SuccessCase {
    std::size_t sample_index = 0;
    const EvalSample* sample = nullptr;
    std::string top_id;
    std::vector<std::string> top_tags;
    std::string condition;
    const GeneratedImage* generated = nullptr;
    Bytes sketch;
};

struct PersonalizationCase {
    std::size_t sample_index = 0;
    const EvalSample* sample = nullptr;
    /// Context, preferences, use case, generated image and rankings, fixed layout.
    std::string rendered;
    const GeneratedImage* generated = nullptr;
};

/// A judge returns nullopt (or throws) to abstain.
class Judge {
public:
    virtual ~Judge() = default;
    virtual std::optional<JudgeVerdict> judge_success(const SuccessCase& c) = 0;
    virtual std::optional<JudgeVerdict> judge_personalization(const PersonalizationCase& c) = 0;
    virtual std::string identity() const = 0;
};

/// Verdicts looked up by sample index from {"success": [...], "likert": [...]};
/// null entries and indices past the end abstain.
class ScriptedJudge final : public Judge {
public:
    ScriptedJudge(std::vector<std::optional<int>> success, std::vector<std::optional<int>> likert)
        : success_(std::move(success)), likert_(std::move(likert)) {}
    static std::unique_ptr<ScriptedJudge> from_file(const std::filesystem::path& path);

    std::optional<JudgeVerdict> judge_success(const SuccessCase& c) override;
    std::optional<JudgeVerdict> judge_personalization(const PersonalizationCase& c) override;
    std::string identity() const override { return "scripted"; }

private:
    std::vector<std::optional<int>> success_;
    std::vector<std::optional<int>> likert_;
};

/// 1 when every ground-truth tag appears among the top result's tags (case-insensitive).
class TagMatchJudge final : public Judge {
public:
    std::optional<JudgeVerdict> judge_success(const SuccessCase& c) override;
    std::optional<JudgeVerdict> judge_personalization(const PersonalizationCase&) override { return std::nullopt; }
    std::string identity() const override { return "tagmatch"; }
};

/// Rubric prompts sent to a chat backend; expects a "Score: N" line.
class ChatJudge final : public Judge {
public:
    ChatJudge(std::shared_ptr<ChatBackend> backend, std::shared_ptr<const PromptSet> prompts)
        : backend_(std::move(backend)), prompts_(std::move(prompts)) {}

    std::optional<JudgeVerdict> judge_success(const SuccessCase& c) override;
    std::optional<JudgeVerdict> judge_personalization(const PersonalizationCase& c) override;
    std::string identity() const override { return backend_->identity(); }

private:
    std::optional<JudgeVerdict> ask(const std::string& rubric, const std::string& purpose, std::string body,
                                     std::vector<Attachment> attachments, int lo, int hi);

    std::shared_ptr<ChatBackend> backend_;
    std::shared_ptr<const PromptSet> prompts_;
};

/// Throws JudgeConflict when both are remote and share an identity.
void check_judge_independence(const ChatBackend& agent_backend, const Judge& judge);

// ---------------------------------------------------------------------------
// Harness.

/// Builds an isolated pipeline for one mode around the given memory store.
using PipelineFactory = std::function<std::shared_ptr<Orchestrator>(Mode, std::shared_ptr<MemoryStore>)>;

struct SampleOutcome {
    std::optional<int> score;  // nullopt: abstained or failed
    std::string error;          // pipeline failure text, empty otherwise
    std::string rationale;
};

struct SuccessReport {
    RateSummary summary;
    std::vector<SampleOutcome> samples;
    std::size_t failures = 0;
    std::string header;
};

struct PersonalizationReport {
    LikertSummary summary;
    std::vector<SampleOutcome> samples;
    std::size_t failures = 0;
};

struct AblationRow {
    Mode mode = Mode::Full;
    std::optional<double> success;
    std::optional<double> personalization;
    std::optional<double> latency_mean;
    std::vector<std::string> errors;
};

struct AblationReport {
    std::vector<AblationRow> rows;
    std::string to_csv() const;
    std::string render_table() const;
};

struct HarnessConfig {
    unsigned parallelism = 4;
    std::size_t latency_runs = 20;
};

class EvalHarness {
public:
    EvalHarness(PipelineFactory factory, std::shared_ptr<Embedder> memory_embedder, HarnessConfig config = {});

    LatencyStats measure_latency(const std::vector<EvalSample>& samples, std::size_t n, Mode mode = Mode::Full);
    SuccessReport eval_success_rate(const std::vector<EvalSample>& samples, Judge& judge, Mode mode = Mode::Full);
    PersonalizationReport eval_personalization(const std::vector<EvalSample>& samples, Judge& judge,
                                               Mode mode = Mode::Full);
    AblationReport run_ablation_suite(const std::vector<EvalSample>& samples, const std::vector<Mode>& modes,
                                      Judge& success_judge, Judge& personalization_judge);

private:
    template <typename Fn>
    void for_each_sample(std::size_t n, Fn&& fn);

    PipelineFactory factory_;
    std::shared_ptr<Embedder> memory_embedder_;
    HarnessConfig config_;
};

}  // namespace sksa
