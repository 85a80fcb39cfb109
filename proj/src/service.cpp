#include "sksa/service.hpp"

#include <map>
#include <mutex>
#include <thread>

#include <httplib.h>

namespace sksa {

namespace {

using json = nlohmann::json;

int status_for(ErrorCode code) {
    switch (code) {
    case ErrorCode::UnknownSession:
    case ErrorCode::NotFound: return 404;
    case ErrorCode::Busy: return 409;
    case ErrorCode::MissingSketch: return 422;
    case ErrorCode::UnknownMode:
    case ErrorCode::InvalidArgument:
    case ErrorCode::ParseError: return 400;
    case ErrorCode::BackendTimeout:
    case ErrorCode::BackendError:
    case ErrorCode::BackendRefusal:
    case ErrorCode::MalformedResponse: return 502;
    default: return 500;
    }
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json; charset=utf-8");
}

void send_error(httplib::Response& res, const Error& e, const AgentTrace* trace = nullptr) {
    json body = {{"error", std::string(error_name(e.code()))}, {"message", e.what()}};
    if (trace) body["trace"] = trace->to_json();
    send_json(res, status_for(e.code()), body);
}

}  // namespace

struct Service::Impl {
    std::shared_ptr<Orchestrator> orch;
    ServiceConfig cfg;
    httplib::Server server;
    std::thread thread;
    int bound_port = 0;

    std::mutex images_mu;
    std::map<std::uint64_t, std::pair<std::string, Bytes>> images;

    void remember_image(const GeneratedImage& img) {
        std::lock_guard lock(images_mu);
        images.try_emplace(img.digest(), img.media_type, img.bytes);
    }

    void routes();
    void create_session(const httplib::Request& req, httplib::Response& res);
    void message(const httplib::Request& req, httplib::Response& res);
    void results(const httplib::Request& req, httplib::Response& res);
    void image(const httplib::Request& req, httplib::Response& res);
    void health(httplib::Response& res);
};

void Service::Impl::routes() {
    server.set_pre_routing_handler([this](const httplib::Request&, httplib::Response& res) {
        if (!cfg.cors_origin.empty()) {
            res.set_header("Access-Control-Allow-Origin", cfg.cors_origin);
            res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
            res.set_header("Access-Control-Allow-Headers", "Content-Type");
        }
        orch->expire_idle(cfg.session_ttl);
        return httplib::Server::HandlerResponse::Unhandled;
    });
    server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    server.Post("/api/sessions", [this](const auto& req, auto& res) { create_session(req, res); });
    server.Post("/api/sessions/:id/message", [this](const auto& req, auto& res) { message(req, res); });
    server.Get("/api/sessions/:id/results", [this](const auto& req, auto& res) { results(req, res); });
    server.Get("/api/images/:digest", [this](const auto& req, auto& res) { image(req, res); });
    server.Get("/healthz", [this](const auto&, auto& res) { health(res); });
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        try {
            std::rethrow_exception(ep);
        } catch (const Error& e) {
            send_error(res, e);
        } catch (const std::exception& e) {
            send_json(res, 500, {{"error", "Internal"}, {"message", e.what()}});
        }
    });
}

void Service::Impl::create_session(const httplib::Request& req, httplib::Response& res) {
    json body = json::object();
    if (!req.body.empty()) {
        try {
            body = json::parse(req.body);
        } catch (const json::exception& e) {
            send_json(res, 400, {{"error", "InvalidArgument"}, {"message", std::string("bad JSON: ") + e.what()}});
            return;
        }
    }
    if (!body.is_object()) {
        send_json(res, 400, {{"error", "InvalidArgument"}, {"message", "body must be a JSON object"}});
        return;
    }
    Mode mode = Mode::Full;
    if (body.contains("mode")) {
        if (!body["mode"].is_string()) {
            send_json(res, 400, {{"error", "UnknownMode"}, {"message", "mode must be a string"}});
            return;
        }
        mode = parse_mode(body["mode"].get<std::string>());
    }
    std::optional<std::size_t> k;
    if (body.contains("k")) {
        if (!body["k"].is_number_unsigned() || body["k"].get<std::size_t>() == 0) {
            send_json(res, 400, {{"error", "InvalidArgument"}, {"message", "k must be a positive integer"}});
            return;
        }
        k = body["k"].get<std::size_t>();
    }
    const std::string id = orch->create_session(mode, std::nullopt, k);
    send_json(res, 201, {{"session_id", id}, {"mode", std::string(mode_name(mode))}});
}

void Service::Impl::message(const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.path_params.at("id");
    if (!orch->has_session(id)) {
        send_error(res, Error(ErrorCode::UnknownSession, "no session '" + id + "'"));
        return;
    }
    std::string query;
    std::optional<SketchInput> sketch;
    if (req.is_multipart_form_data()) {
        if (req.has_file("query")) query = req.get_file_value("query").content;
        if (req.has_file("sketch")) {
            const auto& f = req.get_file_value("sketch");
            if (!f.content.empty()) {
                sketch = SketchInput::from_bytes(Bytes(f.content.begin(), f.content.end()),
                                                 f.content_type.empty() ? "image/png" : f.content_type);
            }
        }
    } else if (req.has_param("query")) {
        query = req.get_param_value("query");
    } else if (!req.body.empty()) {
        try {
            const auto body = json::parse(req.body);
            query = body.value("query", "");
            if (body.contains("sketch_base64")) {
                sketch = SketchInput::from_bytes(base64_decode(body["sketch_base64"].get<std::string>()));
            }
        } catch (const json::exception& e) {
            send_json(res, 400, {{"error", "InvalidArgument"}, {"message", std::string("bad JSON: ") + e.what()}});
            return;
        }
    }

    try {
        const StepResult result = orch->interaction_step(id, query, std::move(sketch));
        if (result.generated_image) remember_image(*result.generated_image);
        send_json(res, 200, result.to_json(orch->index()));
    } catch (const StepError& e) {
        send_error(res, e, &e.trace());
    } catch (const Error& e) {
        send_error(res, e);
    }
}

void Service::Impl::results(const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.path_params.at("id");
    SessionState st;
    try {
        st = orch->session(id);
    } catch (const Error& e) {
        send_error(res, e);
        return;
    }
    if (!st.last_ranked) {
        send_error(res, Error(ErrorCode::NotFound, "session has no results yet"));
        return;
    }
    StepResult view;
    view.turn = st.turn - 1;
    view.ranked_list = st.last_ranked;
    view.generated_image = st.last_generated;
    json full = view.to_json(orch->index());
    send_json(res, 200,
              {{"session_id", id},
               {"ranked_list", full["ranked_list"]},
               {"query_embedding_digest", full["query_embedding_digest"]},
               {"generated_image", full["generated_image"]}});
}

void Service::Impl::image(const httplib::Request& req, httplib::Response& res) {
    std::uint64_t digest = 0;
    try {
        digest = parse_hex64(req.path_params.at("digest"));
    } catch (const Error&) {
        send_error(res, Error(ErrorCode::NotFound, "no such image"));
        return;
    }
    std::lock_guard lock(images_mu);
    auto it = images.find(digest);
    if (it == images.end()) {
        send_error(res, Error(ErrorCode::NotFound, "no such image"));
        return;
    }
    res.status = 200;
    res.set_content(std::string(it->second.second.begin(), it->second.second.end()), it->second.first);
}

void Service::Impl::health(httplib::Response& res) {
    send_json(res, 200,
              {{"status", "ok"},
               {"backend_modes", {{"chat", cfg.backend_chat}, {"generate", cfg.backend_generate}, {"embed", cfg.backend_embed}}},
               {"index_size", orch->index().size()},
               {"sessions", orch->session_count()}});
}

Service::Service(std::shared_ptr<Orchestrator> orchestrator, ServiceConfig config) : impl_(std::make_unique<Impl>()) {
    if (!orchestrator) throw Error(ErrorCode::InvalidArgument, "service needs an orchestrator");
    impl_->orch = std::move(orchestrator);
    impl_->cfg = std::move(config);
    impl_->routes();
}

Service::~Service() { stop(); }

int Service::start() {
    auto& s = impl_->server;
    if (impl_->cfg.port == 0) {
        impl_->bound_port = s.bind_to_any_port(impl_->cfg.host);
    } else {
        impl_->bound_port = s.bind_to_port(impl_->cfg.host, impl_->cfg.port) ? impl_->cfg.port : -1;
    }
    if (impl_->bound_port <= 0) {
        throw Error(ErrorCode::IoFailure, "cannot bind " + impl_->cfg.host + ":" + std::to_string(impl_->cfg.port));
    }
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return impl_->bound_port;
}

void Service::run() {
    start();
    if (impl_->thread.joinable()) impl_->thread.join();
}

void Service::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable() && impl_->thread.get_id() != std::this_thread::get_id()) impl_->thread.join();
}

int Service::port() const noexcept { return impl_->bound_port; }

}  // namespace sksa
