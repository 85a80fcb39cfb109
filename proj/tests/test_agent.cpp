#include <gtest/gtest.h>

#include "sksa/agent.hpp"
#include "sksa/error.hpp"
#include "sksa/memory.hpp"
#include "pipeline.hpp"

using namespace sksa;
using json = nlohmann::json;
using testing_support::FnChat;
using testing_support::SpyChat;

namespace {

std::shared_ptr<ScriptedChat> rules(std::vector<json> entries) { return ScriptedChat::from_json(json(entries)); }

json rule(const std::string& query, int step, const std::string& reply, const std::string& purpose = "agent") {
    return {{"when", {{"purpose", purpose}, {"query", query}, {"step", step}}}, {"reply", reply}};
}

TurnContext ctx(const std::string& query, bool with_sketch = true, Mode mode = Mode::Full) {
    TurnContext c;
    c.session_id = "s1";
    c.query = query;
    c.mode = mode;
    if (with_sketch) c.sketch = testing_support::fixture_sketch();
    return c;
}

bool valid_utf8(const std::string& s) {
    std::size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        std::size_t n = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 0;
        if (n == 0 || i + n > s.size()) return false;
        for (std::size_t k = 1; k < n; ++k) {
            if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) return false;
        }
        i += n;
    }
    return true;
}

}  // namespace

TEST(ParseTurn, Grammar) {
    const auto a = parse_turn(
        "Thought: need image\nAction: refine_and_generate\nAction Input: {\"condition\": \"white lace wedding dress\"}");
    ASSERT_TRUE(a.action);
    EXPECT_EQ(a.thought, "need image");
    EXPECT_EQ(a.action->name, "refine_and_generate");
    EXPECT_EQ(a.action->arguments.size(), 1u);
    EXPECT_EQ(a.action->arguments["condition"], "white lace wedding dress");

    const auto f = parse_turn("Final Answer: Here are three options…");
    ASSERT_TRUE(f.final_answer);
    EXPECT_EQ(*f.final_answer, "Here are three options…");
    EXPECT_FALSE(f.action);

    const auto padded = parse_turn("\n  Thought: x  \n  Action: get_results  \n");
    ASSERT_TRUE(padded.action);
    EXPECT_EQ(padded.action->name, "get_results");
    EXPECT_TRUE(padded.action->arguments.empty());
}

TEST(ParseTurn, Failures) {
    for (const char* bad : {"I think maybe", "Thought: only a thought", "Action: x\nAction Input: {not json}",
                            "Action: x\nAction Input: [1,2]",
                            "Thought: t\nAction: search_products\nAction Input: {}\nFinal Answer: both"}) {
        try {
            parse_turn(bad);
            ADD_FAILURE() << bad;
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::ParseFailure) << bad;
        }
    }
}

TEST(Tools, RegistryAndModes) {
    std::vector<std::string> names;
    for (const auto& t : tool_registry()) names.push_back(t.name);
    EXPECT_EQ(names, (std::vector<std::string>{"refine_and_generate", "search_products", "get_results", "get_generated_image",
                                               "memory_query", "memory_write", "respond"}));
    EXPECT_EQ(tools_for_mode(Mode::Full).size(), 7u);
    EXPECT_EQ(tools_for_mode(Mode::NoRefine).size(), 7u);
    EXPECT_EQ(tools_for_mode(Mode::ToolsOnly).size(), 5u);
    const auto mem = tools_for_mode(Mode::MemoryOnly);
    ASSERT_EQ(mem.size(), 2u);
    EXPECT_EQ(mem[0].name, "refine_and_generate");
    EXPECT_EQ(mem[1].name, "search_products");
    EXPECT_EQ(parse_mode("tools_only"), Mode::ToolsOnly);
    EXPECT_THROW(parse_mode("turbo"), Error);
    EXPECT_FALSE(mode_uses_memory(Mode::ToolsOnly));
    EXPECT_TRUE(mode_uses_memory(Mode::NoRefine));
}

TEST(Tools, SystemPromptListsModeTools) {
    Agent agent(testing_support::services(ScriptedChat::auto_search()));
    const auto prompt = agent.system_prompt(ctx("q", true, Mode::MemoryOnly));
    std::size_t listed = 0;
    for (const auto& t : tool_registry()) {
        if (prompt.find("- " + t.name + ":") != std::string::npos) ++listed;
    }
    EXPECT_EQ(listed, 2u);
    EXPECT_NE(prompt.find("Sketch for this turn: attached"), std::string::npos);
    EXPECT_EQ(prompt.find("{{"), std::string::npos);
    EXPECT_EQ(prompt.find("# version"), std::string::npos);
}

TEST(RunStep, ImmediateResponseWithoutTools) {
    auto chat = rules({rule("what did I search before?", 0, "Thought: memory says vases\nFinal Answer: You looked at vases.")});
    Agent agent(testing_support::services(chat));
    const auto out = agent.run_step(ctx("what did I search before?", false));
    ASSERT_TRUE(std::holds_alternative<ImmediateResponse>(out.outcome));
    EXPECT_EQ(std::get<ImmediateResponse>(out.outcome).text, "You looked at vases.");
    EXPECT_TRUE(out.trace.steps.empty());
    EXPECT_EQ(out.trace.model_calls, 1u);
    EXPECT_EQ(out.trace.outcome, "immediate_response");
}

TEST(RunStep, RefineGenerateSearch) {
    auto chat = ScriptedChat::auto_search();
    auto svc = testing_support::services(chat);
    Agent agent(svc);
    auto c = ctx("red ceramic vase");
    const auto out = agent.run_step(c);
    ASSERT_TRUE(std::holds_alternative<RefinedSearch>(out.outcome));
    const auto& rs = std::get<RefinedSearch>(out.outcome);
    EXPECT_EQ(rs.condition, "red ceramic vase, product photo");
    ASSERT_EQ(out.trace.steps.size(), 2u);
    EXPECT_EQ(out.trace.steps[0].tool, "refine_and_generate");
    EXPECT_EQ(out.trace.steps[1].tool, "search_products");
    for (const auto& s : out.trace.steps) EXPECT_FALSE(s.observation.empty());

    // Direct module chain.
    const auto img = ConcatGenerator().generate(*c.sketch, rs.condition, {});
    EXPECT_EQ(rs.image.bytes, img.bytes);
    const auto want = svc.index->top_k(HashEmbedder(512).embed_image(img.bytes), 20);
    EXPECT_EQ(rs.ranked, want);
    EXPECT_NE(out.trace.steps[1].observation.find("1. " + want.entries[0].product_id + " — "), std::string::npos);
    EXPECT_EQ(chat->calls_for("agent"), 3u);
    EXPECT_EQ(chat->calls_for("refine"), 1u);
}

TEST(RunStep, InfiniteLoopHitsCap) {
    auto chat = rules({json{{"when", {{"query", "*"}}},
                             {"reply", "Thought: again\nAction: get_results\nAction Input: {}"}}});
    Agent agent(testing_support::services(chat));
    const auto out = agent.run_step(ctx("loop"));
    EXPECT_TRUE(out.trace.max_iterations_exceeded);
    EXPECT_EQ(out.trace.model_calls, 8u);
    EXPECT_EQ(out.trace.steps.size(), 8u);
    EXPECT_EQ(chat->calls(), 8u);
    ASSERT_TRUE(std::holds_alternative<ImmediateResponse>(out.outcome));
    EXPECT_NE(std::get<ImmediateResponse>(out.outcome).text.find("Sorry"), std::string::npos);
}

TEST(RunStep, ParseRetryOnce) {
    auto chat = rules({rule("q", 0, "I think maybe"), rule("q", 1, "Thought: ok\nFinal Answer: fine")});
    Agent agent(testing_support::services(chat));
    const auto out = agent.run_step(ctx("q"));
    EXPECT_EQ(std::get<ImmediateResponse>(out.outcome).text, "fine");
    EXPECT_EQ(out.trace.events.size(), 1u);
    EXPECT_EQ(out.trace.model_calls, 2u);
}

TEST(RunStep, SecondConsecutiveParseFailureFails) {
    auto chat = rules({rule("q", 0, "nonsense"), rule("q", 1, "still nonsense")});
    Agent agent(testing_support::services(chat));
    try {
        agent.run_step(ctx("q"));
        FAIL();
    } catch (const StepError& e) {
        EXPECT_EQ(e.code(), ErrorCode::ParseFailure);
        EXPECT_EQ(e.trace().model_calls, 2u);
        EXPECT_EQ(e.trace().events.size(), 1u);
    }
}

TEST(RunStep, UnknownToolAndBadArgumentsContinue) {
    auto chat = rules({rule("q", 0, "Thought: hmm\nAction: frobnicate\nAction Input: {}"),
                       rule("q", 1, "Thought: hmm\nAction: memory_query\nAction Input: {\"m\": 2}"),
                       rule("q", 2, "Thought: done\nFinal Answer: ok")});
    Agent agent(testing_support::services(chat));
    const auto out = agent.run_step(ctx("q"));
    ASSERT_EQ(out.trace.steps.size(), 2u);
    EXPECT_EQ(out.trace.steps[0].observation.rfind("Error: UnknownTool", 0), 0u);
    EXPECT_EQ(out.trace.steps[1].observation.rfind("Error: BadArguments", 0), 0u);
    EXPECT_EQ(std::get<ImmediateResponse>(out.outcome).text, "ok");
}

TEST(RunStep, MemoryWriteAndRespond) {
    auto chat = rules({rule("q", 0, "Thought: note\nAction: memory_write\nAction Input: {\"note\": \"prefers gold accents\"}"),
                       rule("q", 1, "Thought: reply\nAction: respond\nAction Input: {\"text\": \"Noted.\"}")});
    auto svc = testing_support::services(chat);
    Agent agent(svc);
    const auto out = agent.run_step(ctx("q"));
    EXPECT_EQ(svc.memory->size(), 1u);
    EXPECT_EQ(out.trace.steps[0].observation, "stored");
    EXPECT_EQ(std::get<ImmediateResponse>(out.outcome).text, "Noted.");
    EXPECT_EQ(out.trace.model_calls, 2u);
}

TEST(RunStep, GenerationWithoutSearchIsCompleted) {
    auto chat = rules({rule("q", 0, "Thought: gen\nAction: refine_and_generate\nAction Input: {\"condition\": \"oak chair\"}"),
                       rule("oak chair", 0, "oak chair", "refine"), rule("q", 1, "Thought: done\nFinal Answer: here")});
    auto svc = testing_support::services(chat);
    Agent agent(svc);
    const auto out = agent.run_step(ctx("q"));
    ASSERT_TRUE(std::holds_alternative<RefinedSearch>(out.outcome));
    EXPECT_EQ(std::get<RefinedSearch>(out.outcome).ranked.entries.size(), 20u);
    EXPECT_EQ(out.trace.events.size(), 1u);
}

TEST(RunStep, MissingSketchPropagates) {
    Agent agent(testing_support::services(ScriptedChat::auto_search()));
    try {
        agent.run_step(ctx("q", false));
        FAIL();
    } catch (const StepError& e) {
        EXPECT_EQ(e.code(), ErrorCode::MissingSketch);
        EXPECT_EQ(e.trace().steps.size(), 1u);
    }
}

TEST(RunStep, BackendErrorsPropagateWithTrace) {
    auto chat = std::make_shared<FnChat>([](const ChatRequest&) -> ChatTurn {
        throw Error(ErrorCode::BackendTimeout, "deadline");
    });
    Agent agent(testing_support::services(chat));
    try {
        agent.run_step(ctx("q"));
        FAIL();
    } catch (const StepError& e) {
        EXPECT_EQ(e.code(), ErrorCode::BackendTimeout);
        EXPECT_EQ(e.trace().model_calls, 1u);
        EXPECT_EQ(e.trace().outcome, "error");
    }
}

TEST(RunStep, ToolsOnlyCannotTouchMemory) {
    auto chat = rules({rule("q", 0, "Thought: m\nAction: memory_query\nAction Input: {\"text\": \"x\"}"),
                       rule("q", 1, "Thought: done\nFinal Answer: ok")});
    auto svc = testing_support::services(chat);
    Agent agent(svc);
    const auto out = agent.run_step(ctx("q", true, Mode::ToolsOnly));
    EXPECT_NE(out.trace.steps[0].observation.find("not available in tools_only"), std::string::npos);
    EXPECT_EQ(svc.memory->reads(), 0u);
    EXPECT_EQ(svc.memory->writes(), 0u);
}

TEST(Refine, WeddingExample) {
    auto chat = rules({json{{"when", {{"purpose", "refine"}, {"query", "I want something for an upcoming wedding—preferably white"}}},
                             {"reply", "Condition: white formal wedding dress, elegant, product photo"}}});
    Agent agent(testing_support::services(chat));
    EXPECT_EQ(agent.refine_condition("I want something for an upcoming wedding—preferably white", {}),
              "white formal wedding dress, elegant, product photo");
}

TEST(Refine, PromptCarriesExamplesAndPlaceholder) {
    auto spy = std::make_shared<SpyChat>(ScriptedChat::auto_search());
    Agent agent(testing_support::services(spy));
    EXPECT_EQ(agent.refine_condition("blue mug", {}), "blue mug, product photo");
    ASSERT_EQ(spy->requests.size(), 1u);
    const auto& system = spy->requests[0].messages[0].content;
    EXPECT_NE(system.find("(no stored preferences)"), std::string::npos);
    EXPECT_NE(system.find("white formal wedding dress"), std::string::npos);
    agent.refine_condition("blue mug", {"likes matte finishes"});
    EXPECT_NE(spy->requests[1].messages[0].content.find("- likes matte finishes"), std::string::npos);
    EXPECT_THROW(agent.refine_condition("   ", {}), Error);
}

TEST(Refine, EmptyReplyFallsBackToQuery) {
    auto chat = rules({json{{"when", {{"purpose", "refine"}}}, {"reply", "   "}}});
    Agent agent(testing_support::services(chat));
    EXPECT_EQ(agent.refine_condition("green chair", {}), "green chair");
}

TEST(NoRefine, ConditionIsQueryVerbatim) {
    auto spy = std::make_shared<SpyChat>(ScriptedChat::auto_search());
    Agent agent(testing_support::services(spy));
    const auto out = agent.run_step(ctx("shiny blue mug please!!", true, Mode::NoRefine));
    const auto& rs = std::get<RefinedSearch>(out.outcome);
    EXPECT_EQ(rs.image.condition_used, "shiny blue mug please!!");
    for (const auto& r : spy->requests) EXPECT_NE(r.purpose, "refine");
}

TEST(Observation, TruncatedOnCodePointBoundary) {
    EmbeddingIndex idx(8);
    HashEmbedder e(8);
    for (int i = 0; i < 40; ++i) {
        const std::string id = "p" + std::to_string(i);
        idx.insert(id, e.embed_text(id), {id, "Ünïcödé ✓ title " + std::to_string(i), {}, "x"});
    }
    auto svc = testing_support::services(ScriptedChat::auto_search());
    svc.index = std::make_shared<const EmbeddingIndex>(std::move(idx));
    svc.embedder = std::make_shared<HashEmbedder>(8);
    for (std::size_t limit : {100u, 101u, 102u, 103u, 2000u}) {
        AgentConfig cfg;
        cfg.observation_limit = limit;
        Agent agent(svc, cfg);
        auto c = ctx("q");
        c.k = 40;
        const auto out = agent.run_step(c);
        const auto& obs = out.trace.steps[1].observation;
        EXPECT_LE(obs.size(), limit);
        EXPECT_TRUE(valid_utf8(obs));
        if (limit < 2000) {
            const std::string marker = "…[truncated]";
            EXPECT_EQ(obs.substr(obs.size() - marker.size()), marker);
        }
    }
}

TEST(Trace, RenderAndJson) {
    Agent agent(testing_support::services(ScriptedChat::auto_search()));
    const auto out = agent.run_step(ctx("lamp"));
    const auto text = out.trace.render();
    EXPECT_NE(text.find("Action: refine_and_generate\nAction Input: {}\nObservation: generated image"), std::string::npos);
    EXPECT_NE(text.find("Outcome: refined_search"), std::string::npos);
    const auto j = out.trace.to_json();
    EXPECT_EQ(j["steps"].size(), 2u);
    EXPECT_EQ(j["model_calls"], 3);
}
