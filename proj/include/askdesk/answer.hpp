#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "askdesk/index.hpp"
#include "askdesk/jsonl.hpp"
#include "askdesk/rerank.hpp"
#include "askdesk/types.hpp"

namespace askdesk::answer {

inline constexpr std::string_view kCitationInstruction =
    "Please include a single source at the end of your answer, i.e., [Document0] if Document0 is the source. "
    "If there is more than one source, use [Document0][Document1] if Document0 and Document1 are the sources.";

inline constexpr std::string_view kApology = "I'm sorry. I was unable to find the answer in the documents.";

/// Configurable prompt text. The citation instruction is always appended to
/// the guidelines in the system preamble.
struct PromptTemplate {
    std::string guidelines =
        "You are an assistant for customer service agents. Answer the agent's question using only the "
        "documents provided below. Keep the answer short and factual. If the documents do not contain "
        "the answer, say that you could not find it.";
    std::string citation_instruction = std::string(kCitationInstruction);
    std::string final_instruction = "Answer the question above using the search results.";
};

struct DocumentBlock {
    std::size_t doc_index = 0;
    std::string title;
    std::string content;
};

/// Reader input. document_blocks are in presentation order: the rank-1 hit
/// is Document0 and is presented last.
struct PromptBundle {
    std::string system_preamble;
    std::vector<DocumentBlock> document_blocks;
    std::string question;
    std::vector<ChunkRef> doc_index_map;  // doc_index -> chunk
    std::string final_instruction;

    std::string documents_xml() const;
    // Documents, question and final instruction; the part after the preamble.
    std::string user_message() const;
    std::string render() const;
};

/// Raised when there is nothing to put in the prompt.
class NothingToGround : public Error {
public:
    NothingToGround() : Error("nothing to ground on") {}
};

std::string xml_escape(std::string_view s);

PromptBundle assemble_prompt(std::string_view question, std::span<const SearchHit> hits,
                             const rerank::ChunkLookup& lookup, const PromptTemplate& prompt_template = {});

/// Reader LLM. complete() throws ReaderUnavailable on transport failure.
class ReaderClient {
public:
    virtual ~ReaderClient() = default;
    virtual std::string name() const = 0;
    virtual std::string complete(const PromptBundle& prompt) const = 0;
};

class ReaderUnavailable : public Error {
public:
    using Error::Error;
};

/// Deterministic stand-in reader. Picks the block whose title and content
/// share the most content tokens with the question (lowest doc index on
/// ties), answers with its best-matching sentence and cites it. Apologizes
/// without a citation when the best block covers no more than min_coverage
/// of the question's content tokens (zero overlap always apologizes).
class MockReader final : public ReaderClient {
public:
    explicit MockReader(double min_coverage = 0.0) : min_coverage_(min_coverage) {}

    std::string name() const override { return "mock"; }
    std::string complete(const PromptBundle& prompt) const override;

private:
    double min_coverage_;
};

struct AnswerEnvelope {
    std::string answer_text;
    std::vector<ChunkRef> citations;
    bool no_answer = true;
    std::string raw_reader_output;
};

struct ParsedCitations {
    std::vector<std::size_t> indices;  // first-occurrence order, deduplicated
    std::string stripped_text;
};

ParsedCitations parse_citations(std::string_view reader_output);

AnswerEnvelope apply_citation_rail(std::string_view reader_output, const PromptBundle& bundle);

AnswerEnvelope no_answer_envelope(std::string raw_output = {});

struct PipelineConfig {
    std::size_t retrieve_k = 20;
    std::size_t ground_k = 3;
    PromptTemplate prompt;

    void validate() const;
};

struct TraceRecord {
    std::string query_id;
    std::string question;
    std::string role;
    bool reranked = false;
    std::vector<SearchHit> hits;
    std::string prompt;
    std::string raw_output;
    std::vector<ChunkRef> citations;
    bool no_answer = true;
    double latency_ms = 0.0;

    nlohmann::json to_json() const;
};

struct AnswerResult {
    AnswerEnvelope envelope;
    TraceRecord trace;
};

/// Role filter, dense retrieval, optional rerank, top-k grounding, reader and
/// citation rail. Reentrant; the optional trace log is append-only.
class AnswerPipeline {
public:
    AnswerPipeline(const index::EmbeddingProvider& provider, const ReaderClient& reader,
                   const rerank::StudentScorer* scorer, PipelineConfig config = {},
                   jsonl::AppendLog* trace_log = nullptr);

    // Dense top retrieve_k over the role's view, reranked when requested and
    // a scorer is configured. Empty when the role sees nothing or the query
    // embeds to a zero vector.
    std::vector<SearchHit> retrieve(std::string_view question, const index::SearchIndex& view, bool use_reranker) const;

    // Throws ReaderUnavailable when the reader cannot be reached.
    AnswerResult answer_question(std::string_view question, std::string_view role,
                                 const index::IndexSnapshot& snapshot, bool use_reranker,
                                 std::string query_id = {}, const nlohmann::json& annotations = {}) const;

    const PipelineConfig& config() const noexcept { return config_; }
    bool has_reranker() const noexcept { return scorer_ != nullptr; }

private:
    const index::EmbeddingProvider& provider_;
    const ReaderClient& reader_;
    const rerank::StudentScorer* scorer_;
    PipelineConfig config_;
    jsonl::AppendLog* trace_log_;
};

}  // namespace askdesk::answer
