#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sksa/agent.hpp"

namespace sksa {

struct SessionState {
    std::string session_id;
    int turn = 1;
    Mode mode = Mode::Full;
    std::size_t k = 20;
    std::optional<SketchInput> last_sketch;
    std::optional<RankedList> last_ranked;
    std::optional<GeneratedImage> last_generated;
    /// (turn, ranked list) awaiting the next turn's feedback.
    std::optional<std::pair<int, RankedList>> pending_feedback_anchor;
};

struct StepResult {
    int turn = 0;
    AgentOutcome outcome;
    AgentTrace trace;
    std::optional<GeneratedImage> generated_image;
    std::optional<RankedList> ranked_list;
    StageTimings stage_timings;
    bool sketch_carried_forward = false;
    std::optional<std::uint64_t> sketch_digest;

    bool is_search() const noexcept { return std::holds_alternative<RefinedSearch>(outcome); }
    /// Wire form used by the HTTP service; product metadata comes from `index`.
    nlohmann::json to_json(const EmbeddingIndex& index) const;
};

struct OrchestratorConfig {
    AgentConfig agent;
    std::size_t default_k = 20;
    /// Memories pulled into the prompt at the start of each turn.
    std::size_t memory_snippets = 3;
};

/// Runs interaction steps for a table of sessions. Sessions are independent;
/// a session accepts one step at a time and rejects overlap with Busy.
class Orchestrator {
public:
    Orchestrator(AgentServices services, OrchestratorConfig config = {});

    std::string create_session(Mode mode, std::optional<std::string> session_id = std::nullopt,
                               std::optional<std::size_t> k = std::nullopt);

    StepResult interaction_step(const std::string& session_id, const std::string& query,
                                std::optional<SketchInput> sketch = std::nullopt);

    bool has_session(const std::string& session_id) const;
    SessionState session(const std::string& session_id) const;
    void remove_session(const std::string& session_id);
    /// Drops sessions idle for longer than `ttl` that are not mid-step. Returns how many.
    std::size_t expire_idle(std::chrono::steady_clock::duration ttl);
    std::size_t session_count() const;

    const EmbeddingIndex& index() const noexcept { return *services_.index; }
    const std::shared_ptr<MemoryStore>& memory() const noexcept { return services_.memory; }
    const AgentServices& services() const noexcept { return services_; }
    Agent& agent() noexcept { return agent_; }

private:
    struct Slot {
        std::mutex busy;
        SessionState state;
        std::chrono::steady_clock::time_point last_activity;
    };
    std::shared_ptr<Slot> slot(const std::string& session_id) const;

    AgentServices services_;
    OrchestratorConfig config_;
    Agent agent_;
    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<Slot>> sessions_;
};

// ---------------------------------------------------------------------------
// Transcript replay. A transcript is JSON lines of {"query": ..., "sketch_path": ...};
// sketch paths are relative to the transcript's directory.

struct TranscriptTurn {
    std::string query;
    std::optional<std::filesystem::path> sketch_path;
};

/// Throws FixtureMissing for a missing transcript or sketch file.
std::vector<TranscriptTurn> load_transcript(const std::filesystem::path& path);

std::vector<StepResult> replay(Orchestrator& orchestrator, const std::filesystem::path& transcript, Mode mode);

/// Timing-free record of a replay: outcome, condition, ranked ids/scores and trace text per turn.
nlohmann::json golden_record(const std::vector<StepResult>& results);

}  // namespace sksa
