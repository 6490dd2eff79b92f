#include "askdesk/gateway.hpp"

#include <cstdlib>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "askdesk/text.hpp"

namespace askdesk::gateway {
namespace {

constexpr std::size_t kSnippetBytes = 200;

std::string snippet_of(std::string_view text) {
    if (text.size() <= kSnippetBytes) return std::string(text);
    std::size_t cut = kSnippetBytes;
    while (cut > 0 && (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) --cut;
    return std::string(text.substr(0, cut)) + "...";
}

std::filesystem::path log_file(const std::filesystem::path& dir, const char* name) {
    std::filesystem::create_directories(dir);
    return dir / name;
}

std::string read_api_key(const std::string& env_name) {
    if (env_name.empty()) return {};
    const char* value = std::getenv(env_name.c_str());
    return value == nullptr ? std::string{} : std::string(value);
}

nlohmann::json chunking_to_json(const corpus::ChunkingConfig& c) {
    return {{"clean_empty_lines", c.clean_empty_lines},
            {"clean_whitespace", c.clean_whitespace},
            {"clean_header_footer", c.clean_header_footer},
            {"split_length", c.split_length},
            {"split_overlap", c.split_overlap},
            {"split_respect_sentence_boundary", c.split_respect_sentence_boundary},
            {"max_chars_check", c.max_chars_check}};
}

corpus::ChunkingConfig chunking_from_json(const nlohmann::json& j) {
    corpus::ChunkingConfig c;
    c.clean_empty_lines = j.value("clean_empty_lines", c.clean_empty_lines);
    c.clean_whitespace = j.value("clean_whitespace", c.clean_whitespace);
    c.clean_header_footer = j.value("clean_header_footer", c.clean_header_footer);
    c.split_length = j.value("split_length", c.split_length);
    c.split_overlap = j.value("split_overlap", c.split_overlap);
    c.split_respect_sentence_boundary = j.value("split_respect_sentence_boundary", c.split_respect_sentence_boundary);
    c.max_chars_check = j.value("max_chars_check", c.max_chars_check);
    return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// ServiceConfig

void ServiceConfig::validate() const {
    if (top_k_retrieve == 0 || top_k_ground == 0) throw Error("top_k_retrieve and top_k_ground must be positive");
    if (top_k_ground > top_k_retrieve) throw Error("top_k_ground must not exceed top_k_retrieve");
    if (role_header.empty()) throw Error("role_header must be set");
    if (embedding.provider != "hashing" && embedding.provider != "http")
        throw Error("unknown embedding provider: " + embedding.provider);
    if (embedding.dimension == 0) throw Error("embedding dimension must be positive");
    if (reader.provider != "mock" && reader.provider != "http") throw Error("unknown reader provider: " + reader.provider);
    if (embedding.provider == "http" && embedding.endpoint.empty()) throw Error("embedding endpoint required");
    if (reader.provider == "http" && reader.endpoint.empty()) throw Error("reader endpoint required");
    if (reranker_model) {
        std::ifstream probe(*reranker_model);
        if (!probe) throw Error("reranker model not readable: " + reranker_model->string());
    }
    chunking.validate();
}

nlohmann::json ServiceConfig::to_json() const {
    nlohmann::json j{{"index_dir", index_dir.string()},
                     {"log_dir", log_dir.string()},
                     {"embedding",
                      {{"provider", embedding.provider},
                       {"endpoint", embedding.endpoint},
                       {"model", embedding.model},
                       {"dimension", embedding.dimension},
                       {"seed", embedding.seed}}},
                     {"reader",
                      {{"provider", reader.provider},
                       {"endpoint", reader.endpoint},
                       {"model", reader.model},
                       {"min_coverage", reader.min_coverage},
                       {"timeout_seconds", reader.timeout_seconds}}},
                     {"top_k_retrieve", top_k_retrieve},
                     {"top_k_ground", top_k_ground},
                     {"experiment_salt", experiment_salt},
                     {"role_header", role_header},
                     {"default_role", default_role},
                     {"api_key_env", api_key_env},
                     {"chunking", chunking_to_json(chunking)},
                     {"host", host},
                     {"port", port}};
    j["reranker_model"] = reranker_model ? nlohmann::json(reranker_model->string()) : nlohmann::json(nullptr);
    return j;
}

ServiceConfig ServiceConfig::from_json(const nlohmann::json& j) {
    ServiceConfig c;
    c.index_dir = j.value("index_dir", c.index_dir.string());
    c.log_dir = j.value("log_dir", c.log_dir.string());
    if (j.contains("embedding")) {
        const auto& e = j.at("embedding");
        c.embedding.provider = e.value("provider", c.embedding.provider);
        c.embedding.endpoint = e.value("endpoint", c.embedding.endpoint);
        c.embedding.model = e.value("model", c.embedding.model);
        c.embedding.dimension = e.value("dimension", c.embedding.dimension);
        c.embedding.seed = e.value("seed", c.embedding.seed);
    }
    if (j.contains("reader")) {
        const auto& r = j.at("reader");
        c.reader.provider = r.value("provider", c.reader.provider);
        c.reader.endpoint = r.value("endpoint", c.reader.endpoint);
        c.reader.model = r.value("model", c.reader.model);
        c.reader.min_coverage = r.value("min_coverage", c.reader.min_coverage);
        c.reader.timeout_seconds = r.value("timeout_seconds", c.reader.timeout_seconds);
    }
    if (j.contains("reranker_model") && !j.at("reranker_model").is_null())
        c.reranker_model = j.at("reranker_model").get<std::string>();
    c.top_k_retrieve = j.value("top_k_retrieve", c.top_k_retrieve);
    c.top_k_ground = j.value("top_k_ground", c.top_k_ground);
    c.experiment_salt = j.value("experiment_salt", c.experiment_salt);
    c.role_header = j.value("role_header", c.role_header);
    c.default_role = j.value("default_role", c.default_role);
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    if (j.contains("chunking")) c.chunking = chunking_from_json(j.at("chunking"));
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    return c;
}

ServiceConfig ServiceConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error("invalid config " + path.string() + ": " + e.what());
    }
    auto config = from_json(j);
    const auto base = path.parent_path();
    if (config.index_dir.is_relative()) config.index_dir = base / config.index_dir;
    if (config.log_dir.is_relative()) config.log_dir = base / config.log_dir;
    if (config.reranker_model && config.reranker_model->is_relative())
        config.reranker_model = base / *config.reranker_model;
    return config;
}

std::unique_ptr<index::EmbeddingProvider> make_embedding_provider(const EmbeddingSettings& settings,
                                                                  const std::string& api_key_env) {
    if (settings.provider == "hashing")
        return std::make_unique<index::HashingEmbeddingProvider>(settings.dimension, settings.seed);
    if (settings.provider == "http")
        return std::make_unique<HttpEmbeddingProvider>(settings.endpoint, settings.model, settings.dimension,
                                                       read_api_key(api_key_env));
    throw Error("unknown embedding provider: " + settings.provider);
}

std::unique_ptr<answer::ReaderClient> make_reader(const ReaderSettings& settings, const std::string& api_key_env) {
    if (settings.provider == "mock") return std::make_unique<answer::MockReader>(settings.min_coverage);
    if (settings.provider == "http")
        return std::make_unique<HttpReaderClient>(settings.endpoint, settings.model, read_api_key(api_key_env),
                                                  settings.timeout_seconds);
    throw Error("unknown reader provider: " + settings.provider);
}

// ---------------------------------------------------------------------------
// Responses

nlohmann::json AskResponse::to_json() const {
    auto cites = nlohmann::json::array();
    for (const auto& c : citations) {
        cites.push_back(
            {{"origin_id", c.origin_id}, {"local_id", c.local_id}, {"title", c.title}, {"source_uri", c.source_uri}});
    }
    return {{"answer_text", answer_text},
            {"citations", cites},
            {"no_answer", no_answer},
            {"query_id", query_id},
            {"variant", std::string(abtest::to_string(variant))}};
}

nlohmann::json IngestReport::to_json() const {
    return {{"docs", docs}, {"chunks", chunks}, {"version", version}};
}

// ---------------------------------------------------------------------------
// Service

Service::Service(ServiceConfig config, std::unique_ptr<index::EmbeddingProvider> provider,
                 std::unique_ptr<answer::ReaderClient> reader, std::optional<rerank::StudentScorer> scorer,
                 DayProvider today)
    : config_(std::move(config)),
      provider_(std::move(provider)),
      reader_(std::move(reader)),
      scorer_(std::move(scorer)),
      today_(std::move(today)),
      trace_log_(log_file(config_.log_dir, "trace.jsonl")),
      exposure_log_(log_file(config_.log_dir, "exposures.jsonl")),
      feedback_log_(log_file(config_.log_dir, "feedback.jsonl")) {
    config_.validate();
    if (!provider_ || !reader_) throw Error("service needs an embedding provider and a reader");
    answer::PipelineConfig pipeline_config;
    pipeline_config.retrieve_k = config_.top_k_retrieve;
    pipeline_config.ground_k = config_.top_k_ground;
    pipeline_ = std::make_unique<answer::AnswerPipeline>(*provider_, *reader_, scorer_ ? &*scorer_ : nullptr,
                                                         pipeline_config, &trace_log_);

    if (index::has_current(config_.index_dir)) {
        auto loaded = index::load_current(config_.index_dir);
        if (loaded.dimension() != provider_->dimension())
            throw Error(fmt::format("index dimension {} does not match embedding dimension {}", loaded.dimension(),
                                    provider_->dimension()));
        if (loaded.provider_name() != provider_->name())
            spdlog::warn("index was built with provider {} but the service uses {}", loaded.provider_name(),
                         provider_->name());
        snapshot_ = std::make_shared<const index::IndexSnapshot>(std::move(loaded));
    } else {
        spdlog::warn("no index snapshot under {}; starting empty", config_.index_dir.string());
        snapshot_ = std::make_shared<const index::IndexSnapshot>(
            index::IndexSnapshot::from_records({}, {}, provider_->name(), provider_->dimension(), 0));
    }

    std::random_device rd;
    id_prefix_ = fmt::format("{:08x}", static_cast<std::uint32_t>(rd()));
    load_exposures();
}

std::unique_ptr<Service> Service::from_config(const ServiceConfig& config) {
    config.validate();
    std::optional<rerank::StudentScorer> scorer;
    if (config.reranker_model) scorer = rerank::StudentScorer::load(*config.reranker_model);
    return std::make_unique<Service>(config, make_embedding_provider(config.embedding, config.api_key_env),
                                     make_reader(config.reader, config.api_key_env), std::move(scorer));
}

std::filesystem::path Service::trace_log_path() const {
    return trace_log_.path();
}

std::filesystem::path Service::exposure_log_path() const {
    return exposure_log_.path();
}

std::filesystem::path Service::feedback_log_path() const {
    return feedback_log_.path();
}

void Service::load_exposures() {
    if (!std::filesystem::exists(exposure_log_.path())) return;
    for (const auto& e : read_exposures(exposure_log_.path())) {
        queries_[e.query_id] = QueryInfo{e.agent_id, e.day, e.variant};
    }
}

std::string Service::next_query_id() {
    return fmt::format("q-{}-{:06d}", id_prefix_, ++id_counter_);
}

std::string Service::resolve_role(const std::string* header_value) const {
    if (header_value != nullptr && !text::trim(*header_value).empty()) return std::string(text::trim(*header_value));
    if (!config_.default_role.empty()) return config_.default_role;
    throw RequestError(400, "missing role header " + config_.role_header);
}

std::shared_ptr<const index::IndexSnapshot> Service::snapshot() const {
    std::lock_guard lock(snapshot_mutex_);
    return snapshot_;
}

void Service::swap_snapshot(std::shared_ptr<const index::IndexSnapshot> next) {
    if (!next) throw Error("cannot swap in a null snapshot");
    std::lock_guard lock(snapshot_mutex_);
    snapshot_ = std::move(next);
}

AskResponse Service::ask(std::string_view question, std::string_view agent_id, std::string_view role) {
    if (text::trim(question).empty()) throw RequestError(400, "question must not be empty");
    if (text::trim(agent_id).empty()) throw RequestError(400, "agent_id must not be empty");

    const auto snap = snapshot();
    const Date day = today_();
    const auto variant = abtest::assign_variant(agent_id, day, config_.experiment_salt);
    const bool use_reranker = variant == abtest::Variant::treatment && scorer_.has_value();
    const std::string query_id = next_query_id();
    const nlohmann::json annotations{{"agent_id", agent_id},
                                     {"day", day.to_string()},
                                     {"variant", std::string(abtest::to_string(variant))},
                                     {"snapshot_version", snap->version()}};

    answer::AnswerResult result;
    try {
        result = pipeline_->answer_question(question, role, *snap, use_reranker, query_id, annotations);
    } catch (const answer::ReaderUnavailable& e) {
        throw RequestError(503, std::string("reader unavailable: ") + e.what());
    }

    abtest::Exposure exposure{query_id, std::string(agent_id), day, variant, result.envelope.no_answer};
    exposure_log_.append(exposure.to_json());
    {
        std::lock_guard lock(queries_mutex_);
        queries_[query_id] = QueryInfo{exposure.agent_id, day, variant};
    }

    AskResponse response;
    response.answer_text = result.envelope.answer_text;
    response.no_answer = result.envelope.no_answer;
    response.query_id = query_id;
    response.variant = variant;
    for (const auto& ref : result.envelope.citations) {
        Citation c{ref.origin_id, ref.local_id, {}, {}};
        if (const auto* chunk = snap->all().find(ref)) {
            c.title = chunk->title;
            c.source_uri = chunk->source_uri;
        }
        response.citations.push_back(std::move(c));
    }
    return response;
}

evalkit::FeedbackEvent Service::feedback(std::string_view query_id, std::string_view thumbs) {
    evalkit::Thumbs parsed;
    try {
        parsed = evalkit::parse_thumbs(thumbs);
    } catch (const Error& e) {
        throw RequestError(400, e.what());
    }
    QueryInfo info;
    {
        std::lock_guard lock(queries_mutex_);
        const auto it = queries_.find(std::string(query_id));
        if (it == queries_.end()) throw RequestError(404, "unknown query_id " + std::string(query_id));
        info = it->second;
    }
    evalkit::FeedbackEvent event{info.agent_id, info.day, std::string(abtest::to_string(info.variant)), parsed,
                                 std::string(query_id)};
    feedback_log_.append(event.to_json());
    return event;
}

std::vector<SearchResult> Service::search(std::string_view query, std::size_t k, std::string_view role, bool rerank) {
    if (text::trim(query).empty()) throw RequestError(400, "q must not be empty");
    if (k == 0) throw RequestError(400, "k must be at least 1");
    const auto snap = snapshot();
    const auto& view = snap->for_role(role);
    if (view.size() == 0) return {};

    const bool use_reranker = rerank && scorer_.has_value();
    const auto vector = provider_->embed(query);
    std::vector<SearchHit> hits;
    try {
        hits = view.dense().search(vector, use_reranker ? std::max(k, config_.top_k_retrieve) : k);
    } catch (const Error& e) {
        spdlog::debug("search for '{}' returned nothing: {}", query, e.what());
        return {};
    }
    if (use_reranker) {
        hits = rerank::rerank(query, hits, *scorer_, view);
        if (hits.size() > k) hits.resize(k);
    }
    std::vector<SearchResult> out;
    for (const auto& hit : hits) {
        const auto* chunk = view.find(hit.ref);
        out.push_back(SearchResult{hit, chunk->title, snippet_of(chunk->text), chunk->source_uri});
    }
    return out;
}

IngestReport Service::ingest(const std::vector<corpus::RawDocument>& docs) {
    std::set<std::string> incoming;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        if (docs[i].origin_id.empty()) throw RequestError(422, "document " + std::to_string(i + 1) + " has no origin_id");
        if (!incoming.insert(docs[i].origin_id).second)
            throw RequestError(422, "duplicate origin_id: " + docs[i].origin_id);
    }

    std::lock_guard lock(ingest_mutex_);
    const auto current = snapshot();
    const auto& old_chunks = current->all().chunks();
    const auto& old_records = current->all().dense().records();

    std::vector<corpus::Chunk> chunks;
    std::vector<index::VectorRecord> records;
    for (std::size_t i = 0; i < old_chunks.size(); ++i) {
        if (incoming.count(old_chunks[i].origin_id)) continue;
        chunks.push_back(old_chunks[i]);
        records.push_back(old_records[i]);
    }
    const auto fresh = corpus::chunk_documents(docs, config_.chunking);
    for (const auto& chunk : fresh) {
        try {
            records.push_back(index::embed_chunk(chunk, *provider_));
        } catch (const Error& e) {
            throw RequestError(422, "chunk " + to_string(chunk.ref()) + ": " + e.what());
        }
        chunks.push_back(chunk);
    }

    const std::uint64_t version = current->version() + 1;
    auto next = std::make_shared<const index::IndexSnapshot>(index::IndexSnapshot::from_records(
        std::move(chunks), std::move(records), provider_->name(), provider_->dimension(), version));
    index::publish_snapshot(config_.index_dir, *next);
    swap_snapshot(next);
    spdlog::info("ingested {} documents into snapshot v{}", docs.size(), version);
    return IngestReport{docs.size(), fresh.size(), version};
}

IngestReport Service::ingest_jsonl(std::string_view body) {
    std::istringstream in{std::string(body)};
    std::vector<corpus::RawDocument> docs;
    try {
        docs = corpus::parse_corpus(in);
    } catch (const jsonl::ParseError& e) {
        throw RequestError(422, e.what(), {{"line", e.line()}});
    }
    if (docs.empty()) throw RequestError(422, "no documents in request body");
    return ingest(docs);
}

std::vector<abtest::Exposure> read_exposures(const std::filesystem::path& path) {
    std::vector<abtest::Exposure> out;
    jsonl::for_each_record(path, [&](const nlohmann::json& j, std::size_t) { out.push_back(abtest::Exposure::from_json(j)); });
    return out;
}

std::vector<evalkit::FeedbackEvent> read_feedback(const std::filesystem::path& path) {
    std::vector<evalkit::FeedbackEvent> out;
    jsonl::for_each_record(path,
                           [&](const nlohmann::json& j, std::size_t) { out.push_back(evalkit::FeedbackEvent::from_json(j)); });
    return out;
}

}  // namespace askdesk::gateway
