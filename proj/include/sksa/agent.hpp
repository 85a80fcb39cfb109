#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "sksa/error.hpp"
#include "sksa/gateway.hpp"
#include "sksa/index.hpp"
#include "sksa/memory.hpp"

namespace sksa {

enum class Mode { Full, NoRefine, ToolsOnly, MemoryOnly };

std::string_view mode_name(Mode mode) noexcept;
/// Accepts full | no_refine | tools_only | memory_only; throws UnknownMode.
Mode parse_mode(std::string_view name);
inline bool mode_uses_memory(Mode mode) noexcept { return mode != Mode::ToolsOnly; }

// ---------------------------------------------------------------------------
// Prompt templates, loaded from prompts/*.txt. A first line starting with
// "# version:" is metadata and is not sent to the model.

struct PromptSet {
    std::string agent_system;
    std::string refine;
    std::string refine_examples;
    std::string judge_success;
    std::string judge_personalization;

    static PromptSet load(const std::filesystem::path& dir);
    /// $SKSA_PROMPTS_DIR, else the directory baked in at build time.
    static PromptSet load_default();
};

/// Replaces every "{{name}}" with vars[name]; unknown placeholders are left as-is.
std::string render_template(const std::string& tpl, const std::map<std::string, std::string>& vars);

// ---------------------------------------------------------------------------
// Tools.

/// The full registry in canonical order.
const std::vector<ToolSchema>& tool_registry();
std::vector<ToolSchema> tools_for_mode(Mode mode);
std::string render_tool_list(const std::vector<ToolSchema>& tools);

// ---------------------------------------------------------------------------
// ReACT turn grammar:
//   Thought: <text>
//   Action: <tool name>
//   Action Input: <single-line JSON object>
// or
//   Thought: <text>
//   Final Answer: <text>

struct ParsedTurn {
    std::string thought;
    std::optional<ToolCall> action;
    std::optional<std::string> final_answer;
};

/// Throws ParseFailure when neither an action nor a final answer is present.
ParsedTurn parse_turn(std::string_view raw);

// ---------------------------------------------------------------------------
// Trace and outcome.

struct TraceStep {
    std::string thought;
    std::string tool;
    nlohmann::json arguments = nlohmann::json::object();
    std::string observation;
};

struct AgentTrace {
    std::vector<TraceStep> steps;
    /// Out-of-band notes such as parse retries.
    std::vector<std::string> events;
    std::string final_text;
    std::string outcome;  // "immediate_response" | "refined_search" | "" while running
    std::size_t model_calls = 0;
    bool max_iterations_exceeded = false;

    std::string render() const;
    nlohmann::json to_json() const;
};

struct ImmediateResponse {
    std::string text;
};

struct RefinedSearch {
    std::string condition;
    RankedList ranked;
    GeneratedImage image;
    /// The agent's closing text (suggestions, product additions).
    std::string note;
};

using AgentOutcome = std::variant<ImmediateResponse, RefinedSearch>;

using StageTimings = std::map<std::string, double>;  // stage -> milliseconds

/// Agent failure that still carries the partial trace.
class StepError : public Error {
public:
    StepError(ErrorCode code, const std::string& message, AgentTrace trace)
        : Error(code, message), trace_(std::move(trace)) {}
    const AgentTrace& trace() const noexcept { return trace_; }

private:
    AgentTrace trace_;
};

struct AgentConfig {
    std::size_t max_iterations = 8;
    std::size_t observation_limit = 2000;
    std::size_t memory_query_default = 3;
    GenerationParams generation;
};

struct AgentServices {
    std::shared_ptr<ChatBackend> chat;
    std::shared_ptr<ImageGenerator> generator;
    std::shared_ptr<Embedder> embedder;
    std::shared_ptr<const EmbeddingIndex> index;
    /// Null disables memory tools regardless of mode.
    std::shared_ptr<MemoryStore> memory;
    std::shared_ptr<const PromptSet> prompts;
};

struct TurnContext {
    std::string session_id;
    int turn = 1;
    Mode mode = Mode::Full;
    std::string query;
    /// The sketch in effect for this turn (new or carried forward).
    std::optional<SketchInput> sketch;
    std::size_t k = 20;
    const GeneratedImage* prior_image = nullptr;
    const RankedList* prior_ranked = nullptr;
    std::vector<std::string> memory_snippets;
    StageTimings* timings = nullptr;
};

struct StepOutput {
    AgentOutcome outcome;
    AgentTrace trace;
};

/// Per-turn artifacts produced by tools.
struct ToolState {
    std::optional<std::string> condition;
    std::optional<GeneratedImage> image;
    std::optional<RankedList> ranked;
    std::optional<std::string> responded;
    std::vector<Attachment> attachments;
};

class Agent {
public:
    Agent(AgentServices services, AgentConfig config = {});

    StepOutput run_step(const TurnContext& ctx);

    /// One chat call with the refinement template. Never returns an empty string.
    std::string refine_condition(const std::string& query, const std::vector<std::string>& memory_snippets,
                                 StageTimings* timings = nullptr);

    /// Runs one tool. UnknownTool/BadArguments and tool-local failures come back
    /// as "Error: ..." observations; backend failures and MissingSketch throw.
    std::string execute_tool(const ToolCall& call, const TurnContext& ctx, ToolState& state);

    std::string system_prompt(const TurnContext& ctx) const;
    const AgentConfig& config() const noexcept { return config_; }

private:
    RankedList search(const GeneratedImage& image, std::size_t k, StageTimings* timings);
    std::string bounded(std::string text) const;

    AgentServices svc_;
    AgentConfig config_;
};

/// "rank. id — title (score)" lines.
std::string render_ranked(const RankedList& ranked, const EmbeddingIndex& index, std::size_t limit);

}  // namespace sksa
