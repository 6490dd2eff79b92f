#include <charconv>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "askdesk/gateway.hpp"

namespace askdesk::gateway {
namespace {

struct Url {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

Url split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw Error("endpoint must be an absolute URL: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return Url{url, "/"};
    return Url{url.substr(0, path_start), url.substr(path_start)};
}

httplib::Client make_client(const Url& url, const std::string& api_key, double timeout_seconds) {
    httplib::Client client(url.origin);
    const auto seconds = static_cast<time_t>(timeout_seconds);
    const auto micros = static_cast<time_t>((timeout_seconds - static_cast<double>(seconds)) * 1e6);
    client.set_connection_timeout(seconds, micros);
    client.set_read_timeout(seconds, micros);
    client.set_write_timeout(seconds, micros);
    if (!api_key.empty()) client.set_bearer_token_auth(api_key);
    return client;
}

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message,
                const nlohmann::json& detail = nlohmann::json::object()) {
    nlohmann::json body = detail.is_object() ? detail : nlohmann::json::object();
    body["error"] = message;
    send_json(res, status, body);
}

nlohmann::json parse_body(const httplib::Request& req) {
    try {
        auto j = nlohmann::json::parse(req.body);
        if (!j.is_object()) throw RequestError(400, "request body must be a JSON object");
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw RequestError(400, std::string("invalid JSON body: ") + e.what());
    }
}

std::string string_field(const nlohmann::json& body, const char* name) {
    if (!body.contains(name) || !body.at(name).is_string())
        throw RequestError(400, std::string("field \"") + name + "\" must be a string");
    return body.at(name).get<std::string>();
}

std::string role_of(const httplib::Request& req, const Service& service) {
    const auto& header = service.config().role_header;
    if (!req.has_header(header)) return service.resolve_role(nullptr);
    const auto value = req.get_header_value(header);
    return service.resolve_role(&value);
}

// Runs a handler and maps exceptions to HTTP statuses.
template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
        try {
            fn(req, res);
        } catch (const RequestError& e) {
            send_error(res, e.status(), e.what(), e.detail());
        } catch (const std::exception& e) {
            spdlog::error("{} {} failed: {}", req.method, req.path, e.what());
            send_error(res, 500, e.what());
        }
    };
}

}  // namespace

// ---------------------------------------------------------------------------
// HTTP backends

HttpEmbeddingProvider::HttpEmbeddingProvider(std::string endpoint, std::string model, std::size_t dimension,
                                             std::string api_key)
    : endpoint_(std::move(endpoint)), model_(std::move(model)), dimension_(dimension), api_key_(std::move(api_key)) {
    split_url(endpoint_);
}

std::vector<float> HttpEmbeddingProvider::embed(std::string_view text) const {
    const auto url = split_url(endpoint_);
    auto client = make_client(url, api_key_, 30.0);
    const nlohmann::json request{{"model", model_}, {"input", text}};
    auto res = client.Post(url.path, request.dump(), "application/json");
    if (!res) throw Error("embedding endpoint unreachable: " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300)
        throw Error("embedding endpoint returned HTTP " + std::to_string(res->status));
    const auto body = nlohmann::json::parse(res->body);
    auto vector = body.at("data").at(0).at("embedding").get<std::vector<float>>();
    if (vector.size() != dimension_)
        throw Error("embedding has " + std::to_string(vector.size()) + " dimensions, expected " +
                    std::to_string(dimension_));
    return vector;
}

HttpReaderClient::HttpReaderClient(std::string endpoint, std::string model, std::string api_key, double timeout_seconds)
    : endpoint_(std::move(endpoint)), model_(std::move(model)), api_key_(std::move(api_key)),
      timeout_seconds_(timeout_seconds) {
    split_url(endpoint_);
}

std::string HttpReaderClient::complete(const answer::PromptBundle& prompt) const {
    const auto url = split_url(endpoint_);
    auto client = make_client(url, api_key_, timeout_seconds_);
    const nlohmann::json request{
        {"model", model_},
        {"temperature", 0},
        {"messages",
         {{{"role", "system"}, {"content", prompt.system_preamble}}, {{"role", "user"}, {"content", prompt.user_message()}}}}};
    auto res = client.Post(url.path, request.dump(), "application/json");
    if (!res) throw answer::ReaderUnavailable("reader unreachable: " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300)
        throw answer::ReaderUnavailable("reader returned HTTP " + std::to_string(res->status));
    try {
        const auto body = nlohmann::json::parse(res->body);
        return body.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw answer::ReaderUnavailable(std::string("malformed reader reply: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Routes

void register_routes(httplib::Server& server, Service& service) {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Headers", "Content-Type, " + service.config().role_header},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server.Get("/v1/healthz", guarded([&service](const httplib::Request&, httplib::Response& res) {
                   const auto snap = service.snapshot();
                   send_json(res, 200,
                             {{"status", "ok"}, {"snapshot_version", snap->version()}, {"chunks", snap->all().size()}});
               }));

    server.Post("/v1/ask", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                    const auto body = parse_body(req);
                    const auto question = string_field(body, "question");
                    const auto agent_id = string_field(body, "agent_id");
                    const auto role = role_of(req, service);
                    send_json(res, 200, service.ask(question, agent_id, role).to_json());
                }));

    server.Post("/v1/feedback", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                    const auto body = parse_body(req);
                    const auto event = service.feedback(string_field(body, "query_id"), string_field(body, "thumbs"));
                    send_json(res, 200,
                              {{"ok", true},
                               {"query_id", event.query_id},
                               {"thumbs", std::string(evalkit::to_string(event.thumbs))},
                               {"variant", event.variant}});
                }));

    server.Get("/v1/search", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                   if (!req.has_param("q")) throw RequestError(400, "missing q");
                   std::size_t k = 10;
                   if (req.has_param("k")) {
                       const auto raw = req.get_param_value("k");
                       auto [ptr, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), k);
                       if (ec != std::errc{} || ptr != raw.data() + raw.size())
                           throw RequestError(400, "k must be a non-negative integer");
                   }
                   const bool rerank = req.has_param("rerank") && req.get_param_value("rerank") == "true";
                   const auto results = service.search(req.get_param_value("q"), k, role_of(req, service), rerank);
                   auto hits = nlohmann::json::array();
                   for (const auto& r : results) {
                       hits.push_back({{"origin_id", r.hit.ref.origin_id},
                                       {"local_id", r.hit.ref.local_id},
                                       {"rank", r.hit.rank},
                                       {"score", r.hit.score},
                                       {"title", r.title},
                                       {"snippet", r.snippet},
                                       {"source_uri", r.source_uri}});
                   }
                   send_json(res, 200, {{"hits", hits}});
               }));

    server.Post("/v1/documents", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                    send_json(res, 200, service.ingest_jsonl(req.body).to_json());
                }));
}

HttpServer::HttpServer(Service& service) : server_(std::make_unique<httplib::Server>()) {
    register_routes(*server_, service);
}

HttpServer::~HttpServer() {
    stop();
}

int HttpServer::bind(const std::string& host, int port) {
    if (port == 0) {
        const int bound = server_->bind_to_any_port(host);
        if (bound < 0) throw Error("cannot bind to " + host);
        return bound;
    }
    if (!server_->bind_to_port(host, port)) throw Error("cannot bind to " + host + ":" + std::to_string(port));
    return port;
}

void HttpServer::listen() {
    server_->listen_after_bind();
}

void HttpServer::stop() {
    if (server_ && server_->is_running()) server_->stop();
}

}  // namespace askdesk::gateway
