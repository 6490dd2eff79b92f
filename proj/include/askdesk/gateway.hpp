#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "askdesk/abtest.hpp"
#include "askdesk/answer.hpp"
#include "askdesk/corpus.hpp"
#include "askdesk/evalkit.hpp"
#include "askdesk/index.hpp"
#include "askdesk/jsonl.hpp"
#include "askdesk/rerank.hpp"

namespace httplib {
class Server;
}

namespace askdesk::gateway {

struct EmbeddingSettings {
    std::string provider = "hashing";  // "hashing" or "http"
    std::string endpoint;
    std::string model;
    std::size_t dimension = 256;
    std::uint64_t seed = 0;
};

struct ReaderSettings {
    std::string provider = "mock";  // "mock" or "http"
    std::string endpoint;
    std::string model;
    double min_coverage = 0.0;  // mock only
    double timeout_seconds = 30.0;
};

/// Service configuration, loaded from a JSON file. Secrets are read from the
/// environment variable named by api_key_env, never from the file.
struct ServiceConfig {
    std::filesystem::path index_dir = "index";
    std::filesystem::path log_dir = "logs";
    EmbeddingSettings embedding;
    ReaderSettings reader;
    std::optional<std::filesystem::path> reranker_model;
    std::size_t top_k_retrieve = 20;
    std::size_t top_k_ground = 3;
    std::string experiment_salt = "askdesk";
    std::string role_header = "X-Askdesk-Role";
    // Used when a request carries no role header; empty makes the header mandatory.
    std::string default_role;
    std::string api_key_env = "ASKDESK_API_KEY";
    corpus::ChunkingConfig chunking;
    std::string host = "127.0.0.1";
    int port = 8080;

    void validate() const;
    nlohmann::json to_json() const;
    static ServiceConfig from_json(const nlohmann::json& j);
    static ServiceConfig load(const std::filesystem::path& path);
};

std::unique_ptr<index::EmbeddingProvider> make_embedding_provider(const EmbeddingSettings& settings,
                                                                  const std::string& api_key_env);
std::unique_ptr<answer::ReaderClient> make_reader(const ReaderSettings& settings, const std::string& api_key_env);

/// Embeddings from an HTTP endpoint taking {"model", "input"} and returning
/// {"data": [{"embedding": [...]}]}.
class HttpEmbeddingProvider final : public index::EmbeddingProvider {
public:
    HttpEmbeddingProvider(std::string endpoint, std::string model, std::size_t dimension, std::string api_key);

    std::string name() const override { return "http:" + model_; }
    std::size_t dimension() const override { return dimension_; }
    std::vector<float> embed(std::string_view text) const override;

private:
    std::string endpoint_;
    std::string model_;
    std::size_t dimension_;
    std::string api_key_;
};

/// Chat-completions reader: sends the preamble as the system message and the
/// documents plus question as the user message. Transport errors and non-2xx
/// replies raise answer::ReaderUnavailable.
class HttpReaderClient final : public answer::ReaderClient {
public:
    HttpReaderClient(std::string endpoint, std::string model, std::string api_key, double timeout_seconds = 30.0);

    std::string name() const override { return "http:" + model_; }
    std::string complete(const answer::PromptBundle& prompt) const override;

private:
    std::string endpoint_;
    std::string model_;
    std::string api_key_;
    double timeout_seconds_;
};

/// Request error carrying the HTTP status to report.
class RequestError : public Error {
public:
    RequestError(int status, const std::string& what, nlohmann::json detail = nlohmann::json::object())
        : Error(what), status_(status), detail_(std::move(detail)) {}
    int status() const noexcept { return status_; }
    const nlohmann::json& detail() const noexcept { return detail_; }

private:
    int status_;
    nlohmann::json detail_;
};

struct Citation {
    std::string origin_id;
    std::uint32_t local_id = 0;
    std::string title;
    std::string source_uri;
};

struct AskResponse {
    std::string answer_text;
    std::vector<Citation> citations;
    bool no_answer = true;
    std::string query_id;
    abtest::Variant variant = abtest::Variant::control;

    nlohmann::json to_json() const;
};

struct SearchResult {
    SearchHit hit;
    std::string title;
    std::string snippet;
    std::string source_uri;
};

struct IngestReport {
    std::size_t docs = 0;
    std::size_t chunks = 0;
    std::uint64_t version = 0;

    nlohmann::json to_json() const;
};

/// Everything behind the HTTP routes. Thread-safe: snapshots are immutable and
/// swapped under a mutex, logs serialize their writers, and reader calls run
/// without holding any lock.
class Service {
public:
    using DayProvider = std::function<Date()>;

    Service(ServiceConfig config, std::unique_ptr<index::EmbeddingProvider> provider,
            std::unique_ptr<answer::ReaderClient> reader, std::optional<rerank::StudentScorer> scorer,
            DayProvider today = &Date::today_utc);

    // Builds providers from the config and loads the current snapshot and reranker.
    static std::unique_ptr<Service> from_config(const ServiceConfig& config);

    AskResponse ask(std::string_view question, std::string_view agent_id, std::string_view role);
    evalkit::FeedbackEvent feedback(std::string_view query_id, std::string_view thumbs);
    std::vector<SearchResult> search(std::string_view query, std::size_t k, std::string_view role, bool rerank);
    // Upserts the documents by origin_id into a new snapshot, publishes it and
    // swaps it in. Any invalid document rejects the whole batch.
    IngestReport ingest(const std::vector<corpus::RawDocument>& docs);
    IngestReport ingest_jsonl(std::string_view body);

    std::shared_ptr<const index::IndexSnapshot> snapshot() const;
    void swap_snapshot(std::shared_ptr<const index::IndexSnapshot> next);

    const ServiceConfig& config() const noexcept { return config_; }
    std::filesystem::path trace_log_path() const;
    std::filesystem::path exposure_log_path() const;
    std::filesystem::path feedback_log_path() const;

    // Role from the header value, falling back to the configured default.
    std::string resolve_role(const std::string* header_value) const;

private:
    struct QueryInfo {
        std::string agent_id;
        Date day;
        abtest::Variant variant;
    };

    std::string next_query_id();
    void load_exposures();

    ServiceConfig config_;
    std::unique_ptr<index::EmbeddingProvider> provider_;
    std::unique_ptr<answer::ReaderClient> reader_;
    std::optional<rerank::StudentScorer> scorer_;
    DayProvider today_;

    jsonl::AppendLog trace_log_;
    jsonl::AppendLog exposure_log_;
    jsonl::AppendLog feedback_log_;
    std::unique_ptr<answer::AnswerPipeline> pipeline_;

    mutable std::mutex snapshot_mutex_;
    std::shared_ptr<const index::IndexSnapshot> snapshot_;
    std::mutex ingest_mutex_;

    std::mutex queries_mutex_;
    std::unordered_map<std::string, QueryInfo> queries_;

    std::string id_prefix_;
    std::atomic<std::uint64_t> id_counter_{0};
};

void register_routes(httplib::Server& server, Service& service);

/// Binds the routes and serves until stop() is called from another thread.
class HttpServer {
public:
    explicit HttpServer(Service& service);
    ~HttpServer();

    // Binds to host:port (port 0 picks a free one) and returns the bound port.
    int bind(const std::string& host, int port);
    void listen();  // blocks
    void stop();

private:
    std::unique_ptr<httplib::Server> server_;
};

// Reads an exposure or feedback log.
std::vector<abtest::Exposure> read_exposures(const std::filesystem::path& path);
std::vector<evalkit::FeedbackEvent> read_feedback(const std::filesystem::path& path);

}  // namespace askdesk::gateway
