#include <cmath>
#include <fstream>

#include "sksa/error.hpp"
#include "sksa/gateway.hpp"

namespace sksa {

std::string_view role_name(Role role) noexcept {
    switch (role) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
    case Role::Tool: return "tool";
    }
    return "user";
}

std::uint64_t transcript_digest(const std::vector<ChatMessage>& messages) {
    // role '\n' content '\n' { media_type ':' hex(fnv(bytes)) '\n' } '\x1e' per message.
    std::string canon;
    for (const auto& m : messages) {
        if (m.role == Role::System) continue;
        canon += role_name(m.role);
        canon += '\n';
        canon += m.content;
        canon += '\n';
        for (const auto& a : m.attachments) {
            canon += a.media_type;
            canon += ':';
            canon += hex64(fnv1a64(a.bytes));
            canon += '\n';
        }
        canon += '\x1e';
    }
    return fnv1a64(canon);
}

SketchInput SketchInput::from_bytes(Bytes bytes, std::string media_type) {
    if (bytes.empty()) throw Error(ErrorCode::InvalidArgument, "sketch payload is empty");
    SketchInput s;
    s.digest = fnv1a64(bytes);
    s.bytes = std::move(bytes);
    s.media_type = std::move(media_type);
    return s;
}

Vector HashEmbedder::embed_bytes(std::span<const std::uint8_t> bytes, std::uint32_t dim) {
    if (bytes.empty()) throw Error(ErrorCode::InvalidArgument, "cannot embed empty input");
    std::uint64_t state = fnv1a64(bytes);
    std::vector<double> raw(dim);
    double sum = 0.0;
    for (auto& x : raw) {
        const double unit = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
        x = 2.0 * unit - 1.0;
        sum += x * x;
    }
    const double norm = std::sqrt(sum);
    if (norm < 1e-12) throw Error(ErrorCode::ZeroVector, "hash embedding degenerated to zero");
    Vector out(dim);
    for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(raw[i] / norm);
    return out;
}

Vector HashEmbedder::embed_image(std::span<const std::uint8_t> image) { return embed_bytes(image, dim_); }

Vector HashEmbedder::embed_text(std::string_view text) {
    return embed_bytes(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()), dim_);
}

GeneratedImage ConcatGenerator::generate(const SketchInput& sketch, const std::string& condition,
                                         const GenerationParams& params) {
    if (condition.empty()) throw Error(ErrorCode::InvalidArgument, "generation condition is empty");
    if (sketch.bytes.empty()) throw Error(ErrorCode::InvalidArgument, "sketch payload is empty");
    if (params.inference_steps < 1) throw Error(ErrorCode::InvalidArgument, "inference_steps must be >= 1");
    GeneratedImage img;
    img.bytes.reserve(sketch.bytes.size() + 1 + condition.size());
    img.bytes = sketch.bytes;
    img.bytes.push_back(0x00);
    img.bytes.insert(img.bytes.end(), condition.begin(), condition.end());
    img.media_type = sketch.media_type;
    img.condition_used = condition;
    img.source_sketch_digest = sketch.digest;
    return img;
}

GeneratedImage PassThroughGenerator::generate(const SketchInput& sketch, const std::string& condition,
                                              const GenerationParams& params) {
    if (condition.empty()) throw Error(ErrorCode::InvalidArgument, "generation condition is empty");
    if (params.inference_steps < 1) throw Error(ErrorCode::InvalidArgument, "inference_steps must be >= 1");
    GeneratedImage img;
    img.bytes = sketch.bytes;
    img.media_type = sketch.media_type;
    img.condition_used = condition;
    img.source_sketch_digest = sketch.digest;
    return img;
}

// ---------------------------------------------------------------------------

std::vector<ScriptedChat::Rule> ScriptedChat::parse_rules(const nlohmann::json& fixture) {
    std::vector<Rule> rules;
    const auto& entries = fixture.is_array() ? fixture : fixture.at("entries");
    for (const auto& e : entries) {
        Rule r;
        r.reply = e.at("reply").get<std::string>();
        if (e.contains("digest")) r.digest = parse_hex64(e.at("digest").get<std::string>());
        if (e.contains("when")) {
            const auto& w = e.at("when");
            r.purpose = w.value("purpose", "agent");
            r.query = w.value("query", "*");
            if (w.contains("step")) r.step = w.at("step").get<int>();
        }
        rules.push_back(std::move(r));
    }
    return rules;
}

std::shared_ptr<ScriptedChat> ScriptedChat::from_json(const nlohmann::json& fixture) {
    return std::make_shared<ScriptedChat>(parse_rules(fixture));
}

std::shared_ptr<ScriptedChat> ScriptedChat::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::FixtureMissing, "chat fixture not found: " + path.string());
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, "bad chat fixture " + path.string() + ": " + e.what());
    }
}

std::vector<ScriptedChat::Rule> ScriptedChat::auto_search_rules() {
    std::vector<Rule> rules;
    rules.push_back({std::nullopt, "agent", "*", 0,
                     "Thought: The user wants a product that matches the sketch.\n"
                     "Action: refine_and_generate\n"
                     "Action Input: {}"});
    rules.push_back({std::nullopt, "agent", "*", 1,
                     "Thought: Search the catalog with the generated image.\n"
                     "Action: search_products\n"
                     "Action Input: {}"});
    rules.push_back({std::nullopt, "agent", "*", 2, "Thought: Results are ready.\nFinal Answer: Here are the closest matches."});
    rules.push_back({std::nullopt, "refine", "*", std::nullopt, "{input}, product photo"});
    return rules;
}

std::shared_ptr<ScriptedChat> ScriptedChat::auto_search() { return std::make_shared<ScriptedChat>(auto_search_rules()); }

void ScriptedChat::add(Rule rule) {
    std::lock_guard lock(mu_);
    rules_.push_back(std::move(rule));
}

std::size_t ScriptedChat::calls_for(const std::string& purpose) const {
    std::lock_guard lock(mu_);
    auto it = per_purpose_.find(purpose);
    return it == per_purpose_.end() ? 0 : it->second;
}

void ScriptedChat::reset_counters() {
    std::lock_guard lock(mu_);
    calls_ = 0;
    per_purpose_.clear();
}

ChatTurn ScriptedChat::chat(const ChatRequest& request) {
    if (request.messages.empty()) throw Error(ErrorCode::InvalidArgument, "chat request has no messages");
    if (request.messages.front().role != Role::System) {
        throw Error(ErrorCode::InvalidArgument, "first chat message must be the system prompt");
    }
    std::string input;
    int step = 0;
    bool seen_user = false;
    for (const auto& m : request.messages) {
        if (m.role == Role::User && !seen_user) {
            input = m.content;
            seen_user = true;
        }
        if (m.role == Role::Assistant) ++step;
    }
    const std::uint64_t digest = transcript_digest(request.messages);

    std::lock_guard lock(mu_);
    ++calls_;
    ++per_purpose_[request.purpose];

    const Rule* hit = nullptr;
    for (const auto& r : rules_) {
        if (r.digest && *r.digest == digest) {
            hit = &r;
            break;
        }
    }
    if (!hit) {
        for (const auto& r : rules_) {
            if (r.digest) continue;
            if (r.purpose != request.purpose) continue;
            if (r.query != "*" && r.query != input) continue;
            if (r.step && *r.step != step) continue;
            hit = &r;
            break;
        }
    }
    if (!hit) {
        throw Error(ErrorCode::MalformedResponse, "scripted-miss: no fixture for purpose '" + request.purpose +
                                                      "', step " + std::to_string(step) + ", digest " +
                                                      hex64(digest) + ", query '" + input + "'");
    }
    std::string reply = hit->reply;
    for (std::size_t pos = reply.find("{input}"); pos != std::string::npos; pos = reply.find("{input}", pos)) {
        reply.replace(pos, 7, input);
        pos += input.size();
    }
    return ChatTurn{std::move(reply), std::nullopt};
}

}  // namespace sksa
