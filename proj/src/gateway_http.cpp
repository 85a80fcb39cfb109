#include <openssl/evp.h>

#include <cstdlib>

#include <httplib.h>

#include "sksa/error.hpp"
#include "sksa/gateway.hpp"

namespace sksa {

namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

struct SplitUrl {
    std::string origin;  // scheme://host:port
    std::string prefix;  // path prefix without trailing slash
};

SplitUrl split_url(const std::string& base) {
    if (base.empty()) throw Error(ErrorCode::InvalidArgument, "remote backend has no base URL configured");
    const auto scheme_end = base.find("://");
    const auto path_start = base.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    SplitUrl out;
    out.origin = base.substr(0, path_start);
    if (path_start != std::string::npos) {
        out.prefix = base.substr(path_start);
        while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
    }
    return out;
}

/// POSTs a JSON body with the endpoint's deadline applied to every socket phase.
json post_json(const RemoteEndpoint& ep, const std::string& path, const json& body) {
    const SplitUrl url = split_url(ep.base_url);
    httplib::Client client(url.origin);
    const auto deadline = ep.deadline;
    const auto sec = std::chrono::duration_cast<std::chrono::seconds>(deadline);
    const auto usec = std::chrono::duration_cast<std::chrono::microseconds>(deadline - sec);
    client.set_connection_timeout(sec.count(), usec.count());
    client.set_read_timeout(sec.count(), usec.count());
    client.set_write_timeout(sec.count(), usec.count());
    httplib::Headers headers;
    if (!ep.token.empty()) headers.emplace("Authorization", "Bearer " + ep.token);

    const auto started = Clock::now();
    auto res = client.Post(url.prefix + path, headers, body.dump(), "application/json");
    const auto elapsed = Clock::now() - started;
    if (!res) {
        const auto err = res.error();
        const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                               ((err == httplib::Error::Read || err == httplib::Error::Write) && elapsed >= deadline);
        if (timed_out) {
            throw Error(ErrorCode::BackendTimeout,
                        ep.base_url + path + " exceeded " + std::to_string(deadline.count()) + " ms");
        }
        throw Error(ErrorCode::BackendError, ep.base_url + path + ": " + httplib::to_string(err));
    }
    if (res->status < 200 || res->status >= 300) {
        throw Error(ErrorCode::BackendError,
                    ep.base_url + path + " returned HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    }
    try {
        return json::parse(res->body);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedResponse, ep.base_url + path + " returned non-JSON: " + e.what());
    }
}

json tool_to_openai(const ToolSchema& t) {
    json props = json::object();
    json required = json::array();
    for (const auto& a : t.args) {
        props[a.name] = {{"type", a.type}, {"description", a.description}};
        if (a.required) required.push_back(a.name);
    }
    return {{"type", "function"},
            {"function",
             {{"name", t.name},
              {"description", t.description},
              {"parameters", {{"type", "object"}, {"properties", props}, {"required", required}}}}}};
}

json message_to_openai(const ChatMessage& m) {
    json out = {{"role", std::string(role_name(m.role))}};
    if (m.attachments.empty()) {
        out["content"] = m.content;
    } else {
        json parts = json::array();
        parts.push_back({{"type", "text"}, {"text", m.content}});
        for (const auto& a : m.attachments) {
            parts.push_back({{"type", "image_url"},
                             {"image_url", {{"url", "data:" + a.media_type + ";base64," + base64_encode(a.bytes)}}}});
        }
        out["content"] = parts;
    }
    if (m.role == Role::Tool) out["tool_call_id"] = m.tool_call_id;
    return out;
}

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

Bytes base64_decode(std::string_view text) {
    if (text.size() % 4 != 0) throw Error(ErrorCode::MalformedResponse, "base64 length not a multiple of 4");
    Bytes out(3 * text.size() / 4);
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
    if (n < 0) throw Error(ErrorCode::MalformedResponse, "invalid base64 payload");
    std::size_t len = static_cast<std::size_t>(n);
    // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
    for (auto it = text.rbegin(); it != text.rend() && *it == '='; ++it) --len;
    out.resize(len);
    return out;
}

ChatTurn HttpChat::chat(const ChatRequest& request) {
    if (request.messages.empty()) throw Error(ErrorCode::InvalidArgument, "chat request has no messages");
    json body = {{"model", ep_.model}, {"messages", json::array()}};
    for (const auto& m : request.messages) body["messages"].push_back(message_to_openai(m));
    if (!request.tools.empty()) {
        body["tools"] = json::array();
        for (const auto& t : request.tools) body["tools"].push_back(tool_to_openai(t));
    }
    const json res = post_json(ep_, "/v1/chat/completions", body);
    try {
        const auto& msg = res.at("choices").at(0).at("message");
        if (msg.contains("refusal") && msg["refusal"].is_string()) {
            throw Error(ErrorCode::BackendRefusal, msg["refusal"].get<std::string>());
        }
        if (msg.contains("tool_calls") && msg["tool_calls"].is_array() && !msg["tool_calls"].empty()) {
            const auto& tc = msg["tool_calls"].at(0);
            ToolCall call;
            call.id = tc.value("id", "");
            call.name = tc.at("function").at("name").get<std::string>();
            const auto& args = tc.at("function").at("arguments");
            call.arguments = args.is_string() ? json::parse(args.get<std::string>()) : args;
            if (!call.arguments.is_object()) throw Error(ErrorCode::MalformedResponse, "tool arguments are not an object");
            return ChatTurn{std::nullopt, std::move(call)};
        }
        if (msg.contains("content") && msg["content"].is_string()) {
            return ChatTurn{msg["content"].get<std::string>(), std::nullopt};
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedResponse, std::string("unparseable chat completion: ") + e.what());
    }
    throw Error(ErrorCode::MalformedResponse, "chat completion carried neither text nor a tool call");
}

GeneratedImage HttpGenerator::generate(const SketchInput& sketch, const std::string& condition,
                                       const GenerationParams& params) {
    if (condition.empty()) throw Error(ErrorCode::InvalidArgument, "generation condition is empty");
    if (params.inference_steps < 1) throw Error(ErrorCode::InvalidArgument, "inference_steps must be >= 1");
    json body = {{"model", ep_.model},
                 {"sketch", base64_encode(sketch.bytes)},
                 {"media_type", sketch.media_type},
                 {"condition", condition},
                 {"inference_steps", params.inference_steps},
                 {"params", params.guidance}};
    const json res = post_json(ep_, "/v1/generate", body);
    GeneratedImage img;
    try {
        img.bytes = base64_decode(res.at("image").get<std::string>());
        img.media_type = res.value("media_type", "image/png");
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedResponse, std::string("unparseable generation response: ") + e.what());
    }
    if (img.bytes.empty()) throw Error(ErrorCode::BackendError, "generator returned an empty image");
    img.condition_used = condition;
    img.source_sketch_digest = sketch.digest;
    return img;
}

Vector HttpEmbedder::finish(const json& values) {
    Vector v;
    try {
        v = values.get<Vector>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedResponse, std::string("embedding is not a number array: ") + e.what());
    }
    if (v.size() != dim_) {
        throw Error(ErrorCode::DimensionMismatch,
                    "remote embedder returned d=" + std::to_string(v.size()) + ", expected " + std::to_string(dim_));
    }
    return normalize(v);
}

Vector HttpEmbedder::embed_image(std::span<const std::uint8_t> image) {
    if (image.empty()) throw Error(ErrorCode::InvalidArgument, "cannot embed empty input");
    const json res = post_json(ep_, "/v1/image-embeddings",
                               {{"model", ep_.model}, {"image", base64_encode(image)}, {"media_type", "image/png"}});
    try {
        return finish(res.at("embedding"));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedResponse, std::string("unparseable image embedding: ") + e.what());
    }
}

Vector HttpEmbedder::embed_text(std::string_view text) {
    if (text.empty()) throw Error(ErrorCode::InvalidArgument, "cannot embed empty input");
    const json res = post_json(ep_, "/v1/embeddings", {{"model", ep_.model}, {"input", std::string(text)}});
    try {
        return finish(res.at("data").at(0).at("embedding"));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedResponse, std::string("unparseable text embedding: ") + e.what());
    }
}

// ---------------------------------------------------------------------------

namespace {

std::string env_or(const char* name, const std::string& fallback) {
    const char* v = std::getenv(name);
    return v && *v ? std::string(v) : fallback;
}

}  // namespace

RemoteEndpoint endpoint_from_env(const std::string& role, std::chrono::milliseconds default_deadline) {
    RemoteEndpoint ep;
    const std::string p = "SKSA_" + role + "_";
    ep.base_url = env_or((p + "URL").c_str(), "");
    ep.token = env_or((p + "TOKEN").c_str(), "");
    ep.model = env_or((p + "MODEL").c_str(), "");
    const std::string deadline = env_or((p + "DEADLINE_MS").c_str(), "");
    ep.deadline = deadline.empty() ? default_deadline : std::chrono::milliseconds(std::stoll(deadline));
    return ep;
}

BackendConfig BackendConfig::from_env(const std::string& backend) {
    if (backend != "mock" && backend != "http") {
        throw Error(ErrorCode::InvalidArgument, "backend must be mock or http, got '" + backend + "'");
    }
    BackendConfig c;
    c.chat = env_or("SKSA_CHAT_BACKEND", backend);
    c.generate = env_or("SKSA_GEN_BACKEND", backend);
    c.embed = env_or("SKSA_EMBED_BACKEND", backend);
    c.chat_endpoint = endpoint_from_env("CHAT", std::chrono::milliseconds{30000});
    c.generate_endpoint = endpoint_from_env("GEN", std::chrono::milliseconds{30000});
    c.embed_endpoint = endpoint_from_env("EMBED", std::chrono::milliseconds{10000});
    const std::string fixture = env_or("SKSA_CHAT_FIXTURE", "");
    if (!fixture.empty()) c.chat_fixture = fixture;
    return c;
}

Backends make_backends(const BackendConfig& config) {
    Backends b;
    if (config.chat == "mock") {
        b.chat = config.chat_fixture ? ScriptedChat::from_file(*config.chat_fixture) : ScriptedChat::auto_search();
    } else if (config.chat == "http") {
        b.chat = std::make_shared<HttpChat>(config.chat_endpoint);
    } else {
        throw Error(ErrorCode::InvalidArgument, "unknown chat backend '" + config.chat + "'");
    }
    if (config.generate == "mock") {
        b.generator = std::make_shared<ConcatGenerator>();
    } else if (config.generate == "passthrough") {
        b.generator = std::make_shared<PassThroughGenerator>();
    } else if (config.generate == "http") {
        b.generator = std::make_shared<HttpGenerator>(config.generate_endpoint);
    } else {
        throw Error(ErrorCode::InvalidArgument, "unknown generate backend '" + config.generate + "'");
    }
    if (config.embed == "mock") {
        b.embedder = std::make_shared<HashEmbedder>(config.dim);
    } else if (config.embed == "http") {
        b.embedder = std::make_shared<HttpEmbedder>(config.embed_endpoint, config.dim);
    } else {
        throw Error(ErrorCode::InvalidArgument, "unknown embed backend '" + config.embed + "'");
    }
    return b;
}

}  // namespace sksa
