#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sksa/vector.hpp"

namespace sksa {

enum class Role { System, User, Assistant, Tool };

std::string_view role_name(Role role) noexcept;

struct Attachment {
    std::string media_type;
    Bytes bytes;
};

struct ChatMessage {
    Role role = Role::User;
    std::string content;
    std::vector<Attachment> attachments;
    /// Set on Role::Tool messages; correlates with the originating call.
    std::string tool_call_id;
};

struct ToolArgSpec {
    std::string name;
    std::string type;  // "string" | "integer" | "number" | "boolean"
    bool required = false;
    std::string description;
};

struct ToolSchema {
    std::string name;
    std::string description;
    std::vector<ToolArgSpec> args;
};

struct ToolCall {
    std::string name;
    nlohmann::json arguments = nlohmann::json::object();
    std::string id;
};

/// Exactly one of `text` or `tool_call` is set.
struct ChatTurn {
    std::optional<std::string> text;
    std::optional<ToolCall> tool_call;
};

struct ChatRequest {
    std::vector<ChatMessage> messages;
    std::vector<ToolSchema> tools;
    /// Which prompt family issued the call ("agent", "refine", "judge_success", ...).
    /// Mocks key fixtures on it; remote adapters ignore it.
    std::string purpose;
};

/// FNV-1a digest of the non-system messages, used as a fixture key.
std::uint64_t transcript_digest(const std::vector<ChatMessage>& messages);

struct SketchInput {
    Bytes bytes;
    std::string media_type = "image/png";
    std::uint64_t digest = 0;

    static SketchInput from_bytes(Bytes bytes, std::string media_type = "image/png");
};

struct GeneratedImage {
    Bytes bytes;
    std::string media_type;
    std::string condition_used;
    std::uint64_t source_sketch_digest = 0;

    std::uint64_t digest() const noexcept { return fnv1a64(bytes); }
};

struct GenerationParams {
    unsigned inference_steps = 2;
    std::map<std::string, std::string> guidance;
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual ChatTurn chat(const ChatRequest& request) = 0;
    virtual std::string kind() const = 0;
    /// Identity used to keep judge and agent backends apart.
    virtual std::string identity() const { return kind(); }
};

class ImageGenerator {
public:
    virtual ~ImageGenerator() = default;
    virtual GeneratedImage generate(const SketchInput& sketch, const std::string& condition,
                                    const GenerationParams& params) = 0;
    virtual std::string kind() const = 0;
};

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual Vector embed_image(std::span<const std::uint8_t> image) = 0;
    virtual Vector embed_text(std::string_view text) = 0;
    virtual std::uint32_t dim() const = 0;
    virtual std::string kind() const = 0;
};

// ---------------------------------------------------------------------------
// Mock backends. Their outputs are pure functions of their inputs.

/// seed = FNV-1a(input); d draws of splitmix64 mapped to [-1, 1); normalized.
class HashEmbedder final : public Embedder {
public:
    explicit HashEmbedder(std::uint32_t dim = kDefaultDim) : dim_(dim) {}

    Vector embed_image(std::span<const std::uint8_t> image) override;
    Vector embed_text(std::string_view text) override;
    std::uint32_t dim() const override { return dim_; }
    std::string kind() const override { return "mock"; }

    static Vector embed_bytes(std::span<const std::uint8_t> bytes, std::uint32_t dim);

private:
    std::uint32_t dim_;
};

/// Output bytes = sketch || 0x00 || UTF-8(condition).
class ConcatGenerator final : public ImageGenerator {
public:
    GeneratedImage generate(const SketchInput& sketch, const std::string& condition,
                            const GenerationParams& params) override;
    std::string kind() const override { return "mock"; }
};

/// Returns the sketch bytes unchanged; used for closed-loop retrieval checks.
class PassThroughGenerator final : public ImageGenerator {
public:
    GeneratedImage generate(const SketchInput& sketch, const std::string& condition,
                            const GenerationParams& params) override;
    std::string kind() const override { return "passthrough"; }
};

/// Fixture-driven chat backend.
///
/// Lookup order for a request:
///   1. an entry whose "digest" equals transcript_digest(messages);
///   2. the first "when" rule matching purpose, query and step, where
///      query is the first user message and step counts assistant turns
///      already in the transcript ("*" matches any query, absent step any step).
/// Replies may contain "{input}", replaced by the first user message.
/// A miss raises MalformedResponse ("scripted-miss").
class ScriptedChat final : public ChatBackend {
public:
    struct Rule {
        std::optional<std::uint64_t> digest;
        std::string purpose = "agent";
        std::string query = "*";
        std::optional<int> step;
        std::string reply;
    };

    ScriptedChat() = default;
    explicit ScriptedChat(std::vector<Rule> rules) : rules_(std::move(rules)) {}

    static std::vector<Rule> parse_rules(const nlohmann::json& fixture);
    static std::shared_ptr<ScriptedChat> from_json(const nlohmann::json& fixture);
    static std::shared_ptr<ScriptedChat> from_file(const std::filesystem::path& path);

    /// Any query: refine_and_generate, search_products, then a final answer.
    /// Refinement echoes the input with a product-photo suffix.
    static std::vector<Rule> auto_search_rules();
    static std::shared_ptr<ScriptedChat> auto_search();

    void add(Rule rule);
    ChatTurn chat(const ChatRequest& request) override;
    std::string kind() const override { return "mock"; }

    std::size_t calls() const noexcept { return calls_.load(); }
    std::size_t calls_for(const std::string& purpose) const;
    void reset_counters();

private:
    std::vector<Rule> rules_;
    std::atomic<std::size_t> calls_{0};
    mutable std::mutex mu_;
    std::map<std::string, std::size_t> per_purpose_;
};

// ---------------------------------------------------------------------------
// Remote backends (HTTP + JSON). Wire schemas are documented in
// docs/backends.md.

struct RemoteEndpoint {
    std::string base_url;  // e.g. http://127.0.0.1:8080
    std::string token;
    std::string model;
    std::chrono::milliseconds deadline{30000};
};

class HttpChat final : public ChatBackend {
public:
    explicit HttpChat(RemoteEndpoint endpoint) : ep_(std::move(endpoint)) {}
    ChatTurn chat(const ChatRequest& request) override;
    std::string kind() const override { return "http"; }
    std::string identity() const override { return "http:" + ep_.base_url + "#" + ep_.model; }

private:
    RemoteEndpoint ep_;
};

class HttpGenerator final : public ImageGenerator {
public:
    explicit HttpGenerator(RemoteEndpoint endpoint) : ep_(std::move(endpoint)) {}
    GeneratedImage generate(const SketchInput& sketch, const std::string& condition,
                            const GenerationParams& params) override;
    std::string kind() const override { return "http"; }

private:
    RemoteEndpoint ep_;
};

class HttpEmbedder final : public Embedder {
public:
    HttpEmbedder(RemoteEndpoint endpoint, std::uint32_t dim) : ep_(std::move(endpoint)), dim_(dim) {}
    Vector embed_image(std::span<const std::uint8_t> image) override;
    Vector embed_text(std::string_view text) override;
    std::uint32_t dim() const override { return dim_; }
    std::string kind() const override { return "http"; }

private:
    Vector finish(const nlohmann::json& values);

    RemoteEndpoint ep_;
    std::uint32_t dim_;
};

/// Reads SKSA_<role>_{URL,TOKEN,MODEL,DEADLINE_MS}.
RemoteEndpoint endpoint_from_env(const std::string& role, std::chrono::milliseconds default_deadline);

std::string base64_encode(std::span<const std::uint8_t> bytes);
Bytes base64_decode(std::string_view text);

// ---------------------------------------------------------------------------
// Configuration.

struct BackendConfig {
    std::string chat = "mock";      // mock | http
    std::string generate = "mock";  // mock | http | passthrough
    std::string embed = "mock";     // mock | http
    RemoteEndpoint chat_endpoint{"", "", "", std::chrono::milliseconds{30000}};
    RemoteEndpoint generate_endpoint{"", "", "", std::chrono::milliseconds{30000}};
    RemoteEndpoint embed_endpoint{"", "", "", std::chrono::milliseconds{10000}};
    std::uint32_t dim = kDefaultDim;
    std::optional<std::filesystem::path> chat_fixture;

    /// Reads SKSA_{CHAT,GEN,EMBED}_{URL,TOKEN,MODEL,DEADLINE_MS}.
    static BackendConfig from_env(const std::string& backend);
};

struct Backends {
    std::shared_ptr<ChatBackend> chat;
    std::shared_ptr<ImageGenerator> generator;
    std::shared_ptr<Embedder> embedder;
};

Backends make_backends(const BackendConfig& config);

}  // namespace sksa
