#include "sksa/agent.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace sksa {

namespace {

using json = nlohmann::json;

constexpr std::string_view kTruncMarker = "…[truncated]";

template <typename F>
auto timed(StageTimings* timings, const char* stage, F&& fn) {
    const auto start = std::chrono::steady_clock::now();
    struct Record {
        StageTimings* t;
        const char* s;
        std::chrono::steady_clock::time_point start;
        ~Record() {
            if (t) {
                (*t)[s] += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
            }
        }
    } record{timings, stage, start};
    return fn();
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

bool is_backend_failure(ErrorCode c) {
    return c == ErrorCode::BackendTimeout || c == ErrorCode::BackendError || c == ErrorCode::BackendRefusal ||
           c == ErrorCode::MalformedResponse;
}

std::string read_prompt(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::FixtureMissing, "prompt template not found: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    if (text.rfind("# version:", 0) == 0) {
        const auto nl = text.find('\n');
        text = nl == std::string::npos ? std::string() : text.substr(nl + 1);
    }
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
    return text;
}

std::string format_score(double s) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", s);
    return buf;
}

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

/// Type-checks `args` against the schema; returns an error message or "".
std::string check_arguments(const ToolSchema& schema, const json& args) {
    if (!args.is_object()) return "arguments must be a JSON object";
    for (const auto& spec : schema.args) {
        if (!args.contains(spec.name)) {
            if (spec.required) return "missing required argument '" + spec.name + "'";
            continue;
        }
        const auto& v = args.at(spec.name);
        bool ok = true;
        if (spec.type == "string") ok = v.is_string();
        else if (spec.type == "integer") ok = v.is_number_integer();
        else if (spec.type == "number") ok = v.is_number();
        else if (spec.type == "boolean") ok = v.is_boolean();
        if (!ok) return "argument '" + spec.name + "' must be " + spec.type;
    }
    for (auto it = args.begin(); it != args.end(); ++it) {
        const bool known = std::any_of(schema.args.begin(), schema.args.end(),
                                       [&](const ToolArgSpec& s) { return s.name == it.key(); });
        if (!known) return "unexpected argument '" + it.key() + "'";
    }
    return {};
}

}  // namespace

std::string_view mode_name(Mode mode) noexcept {
    switch (mode) {
    case Mode::Full: return "full";
    case Mode::NoRefine: return "no_refine";
    case Mode::ToolsOnly: return "tools_only";
    case Mode::MemoryOnly: return "memory_only";
    }
    return "full";
}

Mode parse_mode(std::string_view name) {
    if (name == "full") return Mode::Full;
    if (name == "no_refine") return Mode::NoRefine;
    if (name == "tools_only") return Mode::ToolsOnly;
    if (name == "memory_only") return Mode::MemoryOnly;
    throw Error(ErrorCode::UnknownMode, "unknown mode '" + std::string(name) + "'");
}

PromptSet PromptSet::load(const std::filesystem::path& dir) {
    PromptSet p;
    p.agent_system = read_prompt(dir / "agent_system.txt");
    p.refine = read_prompt(dir / "refine.txt");
    p.refine_examples = read_prompt(dir / "refine_examples.txt");
    p.judge_success = read_prompt(dir / "judge_success.txt");
    p.judge_personalization = read_prompt(dir / "judge_personalization.txt");
    return p;
}

PromptSet PromptSet::load_default() {
    if (const char* env = std::getenv("SKSA_PROMPTS_DIR"); env && *env) return load(env);
#ifdef SKSA_PROMPTS_DIR
    return load(SKSA_PROMPTS_DIR);
#else
    return load("prompts");
#endif
}

std::string render_template(const std::string& tpl, const std::map<std::string, std::string>& vars) {
    std::string out;
    out.reserve(tpl.size());
    std::size_t pos = 0;
    while (pos < tpl.size()) {
        const auto open = tpl.find("{{", pos);
        if (open == std::string::npos) {
            out.append(tpl, pos);
            break;
        }
        const auto close = tpl.find("}}", open + 2);
        if (close == std::string::npos) {
            out.append(tpl, pos);
            break;
        }
        out.append(tpl, pos, open - pos);
        const std::string key = tpl.substr(open + 2, close - open - 2);
        if (auto it = vars.find(key); it != vars.end()) out += it->second;
        else out.append(tpl, open, close + 2 - open);
        pos = close + 2;
    }
    return out;
}

// ---------------------------------------------------------------------------

const std::vector<ToolSchema>& tool_registry() {
    static const std::vector<ToolSchema> registry = {
        {"refine_and_generate",
         "Rewrite the request into a concise image condition and generate a query image from the current sketch.",
         {{"condition", "string", false, "draft condition; defaults to the user's message"}}},
        {"search_products",
         "Embed the generated image and rank the product catalog by similarity.",
         {{"k", "integer", false, "number of results"}}},
        {"get_results", "Return the most recent ranked product list.", {{"limit", "integer", false, "maximum rows"}}},
        {"get_generated_image", "Return the most recently generated query image.", {}},
        {"memory_query",
         "Look up stored user preferences and past feedback.",
         {{"text", "string", true, "what to look for"}, {"m", "integer", false, "number of memories"}}},
        {"memory_write", "Store a note about the user's preferences.", {{"note", "string", true, "the note"}}},
        {"respond", "Reply to the user directly without searching.", {{"text", "string", true, "the reply"}}},
    };
    return registry;
}

std::vector<ToolSchema> tools_for_mode(Mode mode) {
    std::vector<ToolSchema> out;
    for (const auto& t : tool_registry()) {
        switch (mode) {
        case Mode::Full:
        case Mode::NoRefine: out.push_back(t); break;
        case Mode::ToolsOnly:
            if (t.name != "memory_query" && t.name != "memory_write") out.push_back(t);
            break;
        case Mode::MemoryOnly:
            if (t.name == "refine_and_generate" || t.name == "search_products") out.push_back(t);
            break;
        }
    }
    return out;
}

std::string render_tool_list(const std::vector<ToolSchema>& tools) {
    std::string out;
    for (const auto& t : tools) {
        out += "- " + t.name + ": " + t.description;
        if (!t.args.empty()) {
            out += " Arguments:";
            for (std::size_t i = 0; i < t.args.size(); ++i) {
                const auto& a = t.args[i];
                out += (i == 0 ? " " : ", ") + a.name + " (" + a.type + (a.required ? ", required" : ", optional") + ")";
            }
        }
        out += '\n';
    }
    if (!out.empty()) out.pop_back();
    return out;
}

// ---------------------------------------------------------------------------

ParsedTurn parse_turn(std::string_view raw) {
    std::vector<std::string> lines;
    {
        std::string text = trim(raw);
        std::size_t start = 0;
        while (start <= text.size()) {
            const auto nl = text.find('\n', start);
            lines.push_back(text.substr(start, nl == std::string::npos ? std::string::npos : nl - start));
            if (nl == std::string::npos) break;
            start = nl + 1;
        }
    }

    ParsedTurn turn;
    std::optional<std::string> action;
    std::optional<std::string> action_input;
    std::optional<std::string> final_answer;
    std::string* open_block = nullptr;  // multi-line continuation target
    std::string thought;
    bool has_thought = false;

    for (const auto& raw_line : lines) {
        const std::string line = trim(raw_line);
        auto starts = [&](std::string_view p) { return line.rfind(p, 0) == 0; };
        if (starts("Thought:")) {
            thought = trim(std::string_view(line).substr(8));
            has_thought = true;
            open_block = &thought;
        } else if (starts("Action Input:")) {
            action_input = trim(std::string_view(line).substr(13));
            open_block = nullptr;
        } else if (starts("Action:")) {
            action = trim(std::string_view(line).substr(7));
            open_block = nullptr;
        } else if (starts("Final Answer:")) {
            final_answer = trim(std::string_view(line).substr(13));
            open_block = &*final_answer;
        } else if (open_block) {
            *open_block += '\n';
            *open_block += raw_line;
        }
    }
    if (final_answer) *final_answer = trim(*final_answer);
    turn.thought = has_thought ? trim(thought) : std::string();

    if (action && final_answer) throw Error(ErrorCode::ParseFailure, "turn has both an Action and a Final Answer");
    if (final_answer) {
        turn.final_answer = std::move(final_answer);
        return turn;
    }
    if (action) {
        if (action->empty()) throw Error(ErrorCode::ParseFailure, "Action line names no tool");
        ToolCall call;
        call.name = *action;
        if (action_input && !action_input->empty()) {
            try {
                call.arguments = json::parse(*action_input);
            } catch (const json::exception&) {
                throw Error(ErrorCode::ParseFailure, "Action Input is not valid single-line JSON");
            }
            if (!call.arguments.is_object()) throw Error(ErrorCode::ParseFailure, "Action Input must be a JSON object");
        }
        turn.action = std::move(call);
        return turn;
    }
    throw Error(ErrorCode::ParseFailure, "no Action or Final Answer found");
}

// ---------------------------------------------------------------------------

std::string AgentTrace::render() const {
    std::string out;
    for (const auto& s : steps) {
        if (!s.thought.empty()) out += "Thought: " + s.thought + "\n";
        out += "Action: " + s.tool + "\n";
        out += "Action Input: " + s.arguments.dump() + "\n";
        out += "Observation: " + s.observation + "\n";
    }
    for (const auto& e : events) out += "Event: " + e + "\n";
    if (max_iterations_exceeded) out += "Flag: max_iterations_exceeded\n";
    out += "Final Answer: " + final_text + "\n";
    out += "Outcome: " + outcome + "\n";
    return out;
}

json AgentTrace::to_json() const {
    json j = {{"steps", json::array()},
              {"events", events},
              {"final_text", final_text},
              {"outcome", outcome},
              {"model_calls", model_calls},
              {"max_iterations_exceeded", max_iterations_exceeded}};
    for (const auto& s : steps) {
        j["steps"].push_back(
            {{"thought", s.thought}, {"action", s.tool}, {"arguments", s.arguments}, {"observation", s.observation}});
    }
    return j;
}

std::string render_ranked(const RankedList& ranked, const EmbeddingIndex& index, std::size_t limit) {
    std::string out;
    const std::size_t n = std::min(limit, ranked.entries.size());
    for (std::size_t i = 0; i < n; ++i) {
        const auto& e = ranked.entries[i];
        const ProductRecord* rec = index.find(e.product_id);
        out += std::to_string(i + 1) + ". " + e.product_id + " — " + (rec ? rec->title : std::string()) + " (" +
               format_score(e.score) + ")";
        if (i + 1 < n) out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------

Agent::Agent(AgentServices services, AgentConfig config) : svc_(std::move(services)), config_(std::move(config)) {
    if (!svc_.chat || !svc_.generator || !svc_.embedder || !svc_.index || !svc_.prompts) {
        throw Error(ErrorCode::InvalidArgument, "agent requires chat, generator, embedder, index and prompts");
    }
    if (config_.max_iterations == 0) throw Error(ErrorCode::InvalidArgument, "max_iterations must be >= 1");
}

std::string Agent::bounded(std::string text) const {
    const std::size_t limit = config_.observation_limit;
    if (text.size() <= limit) return text;
    std::size_t cut = limit > kTruncMarker.size() ? limit - kTruncMarker.size() : 0;
    // Back up to a UTF-8 lead byte so no code point is split.
    while (cut > 0 && (static_cast<unsigned char>(text[cut]) & 0xC0U) == 0x80U) --cut;
    text.resize(cut);
    text += kTruncMarker;
    return text;
}

std::string Agent::system_prompt(const TurnContext& ctx) const {
    std::string memory = "(no stored preferences)";
    if (mode_uses_memory(ctx.mode) && !ctx.memory_snippets.empty()) {
        memory.clear();
        for (const auto& s : ctx.memory_snippets) memory += "- " + one_line(s) + "\n";
        memory.pop_back();
    }
    return render_template(svc_.prompts->agent_system,
                           {{"tools", render_tool_list(tools_for_mode(ctx.mode))},
                            {"memory", memory},
                            {"sketch", ctx.sketch ? "attached" : "none"}});
}

std::string Agent::refine_condition(const std::string& query, const std::vector<std::string>& memory_snippets,
                                    StageTimings* timings) {
    if (trim(query).empty()) throw Error(ErrorCode::InvalidArgument, "cannot refine an empty query");
    std::string memory = "(no stored preferences)";
    if (!memory_snippets.empty()) {
        memory.clear();
        for (const auto& s : memory_snippets) memory += "- " + one_line(s) + "\n";
        memory.pop_back();
    }
    ChatRequest req;
    req.purpose = "refine";
    req.messages.push_back(
        {Role::System,
         render_template(svc_.prompts->refine, {{"examples", svc_.prompts->refine_examples}, {"memory", memory}}),
         {},
         {}});
    req.messages.push_back({Role::User, query, {}, {}});
    const ChatTurn reply = timed(timings, "chat", [&] { return svc_.chat->chat(req); });
    if (!reply.text) throw Error(ErrorCode::MalformedResponse, "refinement returned a tool call instead of text");
    std::string cond = trim(*reply.text);
    if (cond.rfind("Condition:", 0) == 0) cond = trim(std::string_view(cond).substr(10));
    if (const auto nl = cond.find('\n'); nl != std::string::npos) cond = trim(std::string_view(cond).substr(0, nl));
    return cond.empty() ? trim(query) : cond;
}

RankedList Agent::search(const GeneratedImage& image, std::size_t k, StageTimings* timings) {
    const Vector e = timed(timings, "embed", [&] { return svc_.embedder->embed_image(image.bytes); });
    return timed(timings, "search", [&] { return svc_.index->top_k(e, k); });
}

std::string Agent::execute_tool(const ToolCall& call, const TurnContext& ctx, ToolState& state) {
    const auto& registry = tool_registry();
    const auto in_registry = std::find_if(registry.begin(), registry.end(),
                                          [&](const ToolSchema& t) { return t.name == call.name; });
    const auto allowed = tools_for_mode(ctx.mode);
    const bool available = std::any_of(allowed.begin(), allowed.end(), [&](const ToolSchema& t) { return t.name == call.name; });
    if (in_registry == registry.end()) return "Error: UnknownTool: '" + call.name + "' is not a registered tool";
    if (!available) {
        return "Error: UnknownTool: '" + call.name + "' is not available in " + std::string(mode_name(ctx.mode)) + " mode";
    }
    if (const std::string problem = check_arguments(*in_registry, call.arguments); !problem.empty()) {
        return "Error: BadArguments: " + problem;
    }
    const json& args = call.arguments;

    try {
        if (call.name == "refine_and_generate") {
            if (!ctx.sketch) throw Error(ErrorCode::MissingSketch, "no sketch has been provided in this session");
            std::string condition;
            if (ctx.mode == Mode::NoRefine) {
                condition = ctx.query;
            } else {
                const std::string draft = args.value("condition", std::string());
                condition = refine_condition(trim(draft).empty() ? ctx.query : draft,
                                             mode_uses_memory(ctx.mode) ? ctx.memory_snippets : std::vector<std::string>{},
                                             ctx.timings);
            }
            GeneratedImage img = timed(ctx.timings, "generate", [&] {
                return svc_.generator->generate(*ctx.sketch, condition, config_.generation);
            });
            state.condition = condition;
            state.image = std::move(img);
            state.ranked.reset();
            return "generated image " + hex64(state.image->digest()) + " from condition: " + condition;
        }
        if (call.name == "search_products") {
            const GeneratedImage* img = state.image ? &*state.image : ctx.prior_image;
            if (!img) return "Error: no generated image yet; call refine_and_generate first";
            if (!state.image) {
                state.image = *img;
                state.condition = img->condition_used;
            }
            const std::int64_t k = args.value("k", static_cast<std::int64_t>(ctx.k));
            if (k < 1) return "Error: BadArguments: k must be >= 1";
            state.ranked = search(*state.image, static_cast<std::size_t>(k), ctx.timings);
            return "top " + std::to_string(state.ranked->entries.size()) + " of " + std::to_string(svc_.index->size()) +
                   " products:\n" + render_ranked(*state.ranked, *svc_.index, state.ranked->entries.size());
        }
        if (call.name == "get_results") {
            const RankedList* r = state.ranked ? &*state.ranked : ctx.prior_ranked;
            if (!r) return "no results yet";
            const std::int64_t limit = args.value("limit", static_cast<std::int64_t>(r->entries.size()));
            if (limit < 1) return "Error: BadArguments: limit must be >= 1";
            return render_ranked(*r, *svc_.index, static_cast<std::size_t>(limit));
        }
        if (call.name == "get_generated_image") {
            const GeneratedImage* img = state.image ? &*state.image : ctx.prior_image;
            if (!img) return "no generated image yet";
            state.attachments.push_back({img->media_type, img->bytes});
            return "image " + hex64(img->digest()) + " (" + img->media_type + ", " + std::to_string(img->bytes.size()) +
                   " bytes) generated from condition: " + img->condition_used;
        }
        if (call.name == "memory_query") {
            if (!svc_.memory) return "Error: memory is not configured";
            const std::int64_t m = args.value("m", static_cast<std::int64_t>(config_.memory_query_default));
            if (m < 1) return "Error: BadArguments: m must be >= 1";
            const auto hits = svc_.memory->query(args.at("text").get<std::string>(), static_cast<std::size_t>(m));
            if (hits.empty()) return "no stored memories";
            std::string out;
            for (std::size_t i = 0; i < hits.size(); ++i) {
                const auto& h = hits[i];
                out += std::to_string(i + 1) + ". [entry " + std::to_string(h.entry.entry_id) + ", turn " +
                       std::to_string(h.entry.turn) + ", score " + format_score(h.score) + "] " + one_line(h.entry.document);
                if (i + 1 < hits.size()) out += '\n';
            }
            return out;
        }
        if (call.name == "memory_write") {
            if (!svc_.memory) return "Error: memory is not configured";
            const std::string note = trim(args.at("note").get<std::string>());
            if (note.empty()) return "Error: BadArguments: note is empty";
            svc_.memory->append(ctx.session_id, ctx.turn, note);
            return "stored";
        }
        if (call.name == "respond") {
            state.responded = args.at("text").get<std::string>();
            return "responded";
        }
    } catch (const Error& e) {
        if (e.code() == ErrorCode::MissingSketch || is_backend_failure(e.code())) throw;
        return std::string("Error: ") + e.what();
    }
    return "Error: UnknownTool: '" + call.name + "'";
}

StepOutput Agent::run_step(const TurnContext& ctx) {
    AgentTrace trace;
    ToolState state;

    ChatRequest req;
    req.purpose = "agent";
    req.tools = tools_for_mode(ctx.mode);
    req.messages.push_back({Role::System, system_prompt(ctx), {}, {}});
    ChatMessage user{Role::User, ctx.query, {}, {}};
    if (ctx.sketch) user.attachments.push_back({ctx.sketch->media_type, ctx.sketch->bytes});
    req.messages.push_back(std::move(user));

    bool last_was_parse_failure = false;
    std::optional<std::string> final_text;

    auto fail = [&](const Error& e) -> StepError {
        trace.outcome = "error";
        return StepError(e.code(), e.detail(), trace);
    };

    while (trace.model_calls < config_.max_iterations) {
        ChatTurn reply;
        try {
            reply = timed(ctx.timings, "chat", [&] { return svc_.chat->chat(req); });
        } catch (const Error& e) {
            ++trace.model_calls;
            throw fail(e);
        }
        ++trace.model_calls;

        ParsedTurn parsed;
        std::string assistant_text;
        if (reply.tool_call) {
            parsed.action = *reply.tool_call;
            assistant_text = "Action: " + reply.tool_call->name + "\nAction Input: " + reply.tool_call->arguments.dump();
        } else {
            assistant_text = reply.text.value_or("");
            try {
                parsed = parse_turn(assistant_text);
            } catch (const Error& e) {
                if (last_was_parse_failure) throw fail(e);
                last_was_parse_failure = true;
                trace.events.push_back("parse failure on model call " + std::to_string(trace.model_calls) +
                                       "; corrective retry issued");
                req.messages.push_back({Role::Assistant, assistant_text, {}, {}});
                req.messages.push_back({Role::User,
                                        "Observation: Your reply did not follow the required format. Answer with "
                                        "\"Thought:\" followed by either \"Action:\" and \"Action Input:\" (a "
                                        "single-line JSON object) or \"Final Answer:\".",
                                        {},
                                        {}});
                continue;
            }
        }
        last_was_parse_failure = false;

        if (parsed.final_answer) {
            final_text = *parsed.final_answer;
            break;
        }

        ToolCall call = *parsed.action;
        if (call.id.empty()) call.id = "call-" + std::to_string(trace.steps.size() + 1);
        std::string observation;
        try {
            observation = bounded(execute_tool(call, ctx, state));
        } catch (const Error& e) {
            trace.steps.push_back({parsed.thought, call.name, call.arguments, std::string("Error: ") + e.what()});
            throw fail(e);
        }
        trace.steps.push_back({parsed.thought, call.name, call.arguments, observation});
        req.messages.push_back({Role::Assistant, assistant_text, {}, {}});
        ChatMessage tool_msg{Role::Tool, "Observation: " + observation, std::move(state.attachments), call.id};
        state.attachments.clear();
        req.messages.push_back(std::move(tool_msg));

        if (state.responded) {
            final_text = *state.responded;
            break;
        }
    }

    if (!final_text) {
        trace.max_iterations_exceeded = true;
        trace.events.push_back("stopped after " + std::to_string(config_.max_iterations) + " model calls");
        trace.final_text = "Sorry, I could not finish this request. Please try rephrasing it.";
        trace.outcome = "immediate_response";
        return {ImmediateResponse{trace.final_text}, std::move(trace)};
    }

    trace.final_text = *final_text;
    if (state.image && !state.ranked) {
        // A generated image is always followed by embedding and ranking.
        try {
            state.ranked = search(*state.image, ctx.k, ctx.timings);
        } catch (const Error& e) {
            throw fail(e);
        }
        trace.events.push_back("search_products run automatically after generation");
    }
    if (state.ranked) {
        trace.outcome = "refined_search";
        RefinedSearch rs{state.condition.value_or(state.image->condition_used), std::move(*state.ranked),
                         std::move(*state.image), *final_text};
        return {std::move(rs), std::move(trace)};
    }
    trace.outcome = "immediate_response";
    return {ImmediateResponse{*final_text}, std::move(trace)};
}

}  // namespace sksa
