#include "sksa/orchestrator.hpp"

#include <fstream>
#include <iterator>
#include <random>

namespace sksa {

namespace {

using json = nlohmann::json;

double elapsed_ms(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

std::string random_session_id() {
    thread_local std::mt19937_64 rng{std::random_device{}()};
    return hex64(rng()) + hex64(rng());
}

Bytes read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::FixtureMissing, "cannot read " + path.string());
    return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

json ranked_to_json(const RankedList& ranked, const EmbeddingIndex& index) {
    json out = json::array();
    for (std::size_t i = 0; i < ranked.entries.size(); ++i) {
        const auto& e = ranked.entries[i];
        json row = {{"rank", i + 1}, {"product_id", e.product_id}, {"score", e.score}};
        if (const ProductRecord* r = index.find(e.product_id)) {
            row["title"] = r->title;
            row["tags"] = r->tags;
            row["image_ref"] = r->image_ref;
        }
        out.push_back(std::move(row));
    }
    return out;
}

}  // namespace

json StepResult::to_json(const EmbeddingIndex& index) const {
    json j;
    j["turn"] = turn;
    if (const auto* ir = std::get_if<ImmediateResponse>(&outcome)) {
        j["outcome"] = {{"kind", "immediate_response"}, {"text", ir->text}};
    } else {
        const auto& rs = std::get<RefinedSearch>(outcome);
        j["outcome"] = {{"kind", "refined_search"}, {"condition", rs.condition}, {"text", rs.note}};
    }
    j["trace"] = trace.to_json();
    j["trace_text"] = trace.render();
    if (ranked_list) {
        j["ranked_list"] = ranked_to_json(*ranked_list, index);
        j["query_embedding_digest"] = hex64(ranked_list->query_digest);
    } else {
        j["ranked_list"] = nullptr;
    }
    if (generated_image) {
        const std::string digest = hex64(generated_image->digest());
        j["generated_image"] = {{"digest", digest},
                                {"media_type", generated_image->media_type},
                                {"condition_used", generated_image->condition_used},
                                {"source_sketch_digest", hex64(generated_image->source_sketch_digest)},
                                {"url", "/api/images/" + digest}};
    } else {
        j["generated_image"] = nullptr;
    }
    j["stage_timings"] = stage_timings;
    j["sketch_carried_forward"] = sketch_carried_forward;
    j["sketch_digest"] = sketch_digest ? json(hex64(*sketch_digest)) : json(nullptr);
    return j;
}

Orchestrator::Orchestrator(AgentServices services, OrchestratorConfig config)
    : services_(services), config_(std::move(config)), agent_(std::move(services), config_.agent) {
    if (config_.default_k == 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
}

std::string Orchestrator::create_session(Mode mode, std::optional<std::string> session_id, std::optional<std::size_t> k) {
    auto s = std::make_shared<Slot>();
    s->state.mode = mode;
    s->state.k = k.value_or(config_.default_k);
    if (s->state.k == 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
    s->last_activity = std::chrono::steady_clock::now();
    std::lock_guard lock(mu_);
    std::string id = session_id.value_or("");
    if (id.empty()) {
        do id = random_session_id();
        while (sessions_.contains(id));
    } else if (sessions_.contains(id)) {
        throw Error(ErrorCode::DuplicateId, "session '" + id + "' already exists");
    }
    s->state.session_id = id;
    sessions_.emplace(id, std::move(s));
    return id;
}

std::shared_ptr<Orchestrator::Slot> Orchestrator::slot(const std::string& session_id) const {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) throw Error(ErrorCode::UnknownSession, "no session '" + session_id + "'");
    return it->second;
}

bool Orchestrator::has_session(const std::string& session_id) const {
    std::lock_guard lock(mu_);
    return sessions_.contains(session_id);
}

SessionState Orchestrator::session(const std::string& session_id) const {
    auto s = slot(session_id);
    std::lock_guard busy(s->busy);
    return s->state;
}

void Orchestrator::remove_session(const std::string& session_id) {
    std::lock_guard lock(mu_);
    sessions_.erase(session_id);
}

std::size_t Orchestrator::expire_idle(std::chrono::steady_clock::duration ttl) {
    const auto now = std::chrono::steady_clock::now();
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    for (auto it = sessions_.begin(); it != sessions_.end();) {
        std::unique_lock busy(it->second->busy, std::try_to_lock);
        if (busy.owns_lock() && now - it->second->last_activity > ttl) {
            busy.unlock();
            it = sessions_.erase(it);
            ++n;
        } else {
            ++it;
        }
    }
    return n;
}

std::size_t Orchestrator::session_count() const {
    std::lock_guard lock(mu_);
    return sessions_.size();
}

StepResult Orchestrator::interaction_step(const std::string& session_id, const std::string& query,
                                          std::optional<SketchInput> sketch) {
    auto s = slot(session_id);
    std::unique_lock busy(s->busy, std::try_to_lock);
    if (!busy.owns_lock()) throw Error(ErrorCode::Busy, "session '" + session_id + "' is already processing a message");
    if (query.find_first_not_of(" \t\r\n") == std::string::npos) {
        throw Error(ErrorCode::InvalidArgument, "query must be non-empty");
    }
    s->last_activity = std::chrono::steady_clock::now();
    SessionState& st = s->state;
    const auto started = std::chrono::steady_clock::now();

    StepResult result;
    result.turn = st.turn;
    const bool carried = !sketch && st.last_sketch.has_value();
    std::optional<SketchInput> in_effect = sketch ? sketch : st.last_sketch;
    result.sketch_carried_forward = carried;
    if (in_effect) result.sketch_digest = in_effect->digest;

    const bool use_memory = mode_uses_memory(st.mode) && services_.memory != nullptr;
    if (st.pending_feedback_anchor) {
        if (use_memory) {
            const auto t0 = std::chrono::steady_clock::now();
            const auto& [anchor_turn, anchor_ranked] = *st.pending_feedback_anchor;
            services_.memory->update(st.session_id, anchor_turn, query, anchor_ranked,
                                     [this](const std::string& id) { return services_.index->find(id); });
            result.stage_timings["memory"] += elapsed_ms(t0);
        }
        st.pending_feedback_anchor.reset();
    }

    TurnContext ctx;
    ctx.session_id = st.session_id;
    ctx.turn = st.turn;
    ctx.mode = st.mode;
    ctx.query = query;
    ctx.sketch = in_effect;
    ctx.k = st.k;
    ctx.prior_image = st.last_generated ? &*st.last_generated : nullptr;
    ctx.prior_ranked = st.last_ranked ? &*st.last_ranked : nullptr;
    ctx.timings = &result.stage_timings;
    if (use_memory) {
        const auto t0 = std::chrono::steady_clock::now();
        for (const auto& hit : services_.memory->query(query, config_.memory_snippets)) {
            ctx.memory_snippets.push_back(hit.entry.document);
        }
        result.stage_timings["memory"] += elapsed_ms(t0);
    }

    StepOutput out = agent_.run_step(ctx);

    if (sketch) st.last_sketch = std::move(sketch);
    if (auto* rs = std::get_if<RefinedSearch>(&out.outcome)) {
        for (const char* stage : {"chat", "generate", "embed", "search"}) result.stage_timings.try_emplace(stage, 0.0);
        result.ranked_list = rs->ranked;
        result.generated_image = rs->image;
        st.last_ranked = rs->ranked;
        st.last_generated = rs->image;
        st.pending_feedback_anchor = std::make_pair(st.turn, rs->ranked);
    }
    result.outcome = std::move(out.outcome);
    result.trace = std::move(out.trace);
    ++st.turn;
    s->last_activity = std::chrono::steady_clock::now();
    result.stage_timings["total"] = elapsed_ms(started);
    return result;
}

// ---------------------------------------------------------------------------

std::vector<TranscriptTurn> load_transcript(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::FixtureMissing, "transcript not found: " + path.string());
    std::vector<TranscriptTurn> turns;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        TranscriptTurn t;
        try {
            const auto j = json::parse(line);
            t.query = j.at("query").get<std::string>();
            if (j.contains("sketch_path") && !j["sketch_path"].is_null()) {
                t.sketch_path = path.parent_path() / j["sketch_path"].get<std::string>();
            }
        } catch (const json::exception& e) {
            throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (t.sketch_path && !std::filesystem::exists(*t.sketch_path)) {
            throw Error(ErrorCode::FixtureMissing, "sketch file not found: " + t.sketch_path->string());
        }
        turns.push_back(std::move(t));
    }
    return turns;
}

std::vector<StepResult> replay(Orchestrator& orchestrator, const std::filesystem::path& transcript, Mode mode) {
    const auto turns = load_transcript(transcript);
    std::vector<StepResult> results;
    if (turns.empty()) return results;
    const std::string sid = orchestrator.create_session(mode);
    for (const auto& t : turns) {
        std::optional<SketchInput> sketch;
        if (t.sketch_path) sketch = SketchInput::from_bytes(read_file(*t.sketch_path));
        results.push_back(orchestrator.interaction_step(sid, t.query, std::move(sketch)));
    }
    orchestrator.remove_session(sid);
    return results;
}

json golden_record(const std::vector<StepResult>& results) {
    json out = json::array();
    for (const auto& r : results) {
        json turn = {{"turn", r.turn}, {"trace", r.trace.render()}};
        if (const auto* rs = std::get_if<RefinedSearch>(&r.outcome)) {
            turn["outcome"] = "refined_search";
            turn["condition"] = rs->condition;
            json ranked = json::array();
            for (const auto& e : rs->ranked.entries) ranked.push_back({e.product_id, e.score});
            turn["ranked"] = ranked;
            turn["image_digest"] = hex64(rs->image.digest());
        } else {
            turn["outcome"] = "immediate_response";
            turn["text"] = std::get<ImmediateResponse>(r.outcome).text;
        }
        out.push_back(std::move(turn));
    }
    return out;
}

}  // namespace sksa
