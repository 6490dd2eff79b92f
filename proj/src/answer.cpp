#include "askdesk/answer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <limits>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "askdesk/text.hpp"

namespace askdesk::answer {
namespace {

constexpr std::string_view kCitationPrefix = "[Document";

bool is_horizontal_space(char c) {
    return c == ' ' || c == '\t';
}

bool is_closing_punctuation(char c) {
    return c == '.' || c == ',' || c == ';' || c == ':' || c == '!' || c == '?' || c == ')';
}

// Joins two pieces of text that were separated by a removed citation token.
void join_at_removal(std::string& left, std::string_view right) {
    while (!left.empty() && is_horizontal_space(left.back())) left.pop_back();
    while (!right.empty() && is_horizontal_space(right.front())) right.remove_prefix(1);
    const bool direct = left.empty() || left.back() == '\n' || right.empty() || right.front() == '\n' ||
                        is_closing_punctuation(right.front());
    if (!direct) left.push_back(' ');
    left.append(right);
}

// One pass: removes every "[Document..." fragment, collecting well-formed
// indices. Returns false when the input held no fragment.
bool strip_pass(std::string_view input, std::vector<std::size_t>& indices, std::string& output) {
    std::vector<std::string_view> segments;
    std::size_t start = 0;
    bool found = false;
    while (true) {
        const auto pos = input.find(kCitationPrefix, start);
        if (pos == std::string_view::npos) break;
        found = true;
        segments.push_back(input.substr(start, pos - start));
        std::size_t cursor = pos + kCitationPrefix.size();
        const std::size_t digits_begin = cursor;
        while (cursor < input.size() && input[cursor] >= '0' && input[cursor] <= '9') ++cursor;
        const bool has_digits = cursor > digits_begin;
        const bool closed = cursor < input.size() && input[cursor] == ']';
        if (has_digits && closed) {
            std::size_t value = 0;
            auto [ptr, ec] = std::from_chars(input.data() + digits_begin, input.data() + cursor, value);
            (void)ptr;
            if (ec != std::errc{}) value = std::numeric_limits<std::size_t>::max();
            indices.push_back(value);
        }
        if (closed) ++cursor;
        start = cursor;
    }
    if (!found) return false;
    segments.push_back(input.substr(start));
    output.assign(segments.front());
    for (std::size_t i = 1; i < segments.size(); ++i) join_at_removal(output, segments[i]);
    return true;
}

std::vector<std::string> split_sentences(std::string_view content) {
    std::vector<std::string> sentences;
    std::size_t start = 0;
    for (std::size_t i = 0; i < content.size(); ++i) {
        const char c = content[i];
        const bool terminal = c == '.' || c == '!' || c == '?';
        if (c == '\n' || (terminal && (i + 1 == content.size() || text::is_space(content[i + 1])))) {
            auto s = text::trim(content.substr(start, i + 1 - start));
            if (!s.empty()) sentences.emplace_back(s);
            start = i + 1;
        }
    }
    auto tail = text::trim(content.substr(std::min(start, content.size())));
    if (!tail.empty()) sentences.emplace_back(tail);
    return sentences;
}

std::size_t count_overlap(const std::vector<std::string>& query, std::string_view passage) {
    const auto tokens = text::token_set(passage);
    std::size_t n = 0;
    for (const auto& t : query) n += tokens.count(t);
    return n;
}

nlohmann::json hits_to_json(const std::vector<SearchHit>& hits) {
    auto out = nlohmann::json::array();
    for (const auto& h : hits) {
        out.push_back({{"origin_id", h.ref.origin_id}, {"local_id", h.ref.local_id}, {"score", h.score}, {"rank", h.rank}});
    }
    return out;
}

}  // namespace

std::string xml_escape(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&apos;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

std::string PromptBundle::documents_xml() const {
    std::string out = "<documents>\n";
    for (const auto& block : document_blocks) {
        const std::string tag = "Document" + std::to_string(block.doc_index);
        out += "<" + tag + ">\n";
        out += "<title>" + xml_escape(block.title) + "</title>\n";
        out += "<content>" + xml_escape(block.content) + "</content>\n";
        out += "</" + tag + ">\n";
    }
    out += "</documents>";
    return out;
}

std::string PromptBundle::user_message() const {
    return documents_xml() + "\n\nQuestion: " + question + "\n\n" + final_instruction;
}

std::string PromptBundle::render() const {
    return system_preamble + "\n\n" + user_message();
}

PromptBundle assemble_prompt(std::string_view question, std::span<const SearchHit> hits,
                             const rerank::ChunkLookup& lookup, const PromptTemplate& prompt_template) {
    if (hits.empty()) throw NothingToGround();
    std::vector<SearchHit> ordered(hits.begin(), hits.end());
    std::stable_sort(ordered.begin(), ordered.end(), [](const SearchHit& a, const SearchHit& b) { return a.rank < b.rank; });

    PromptBundle bundle;
    bundle.system_preamble = prompt_template.guidelines + "\n\n" + prompt_template.citation_instruction;
    bundle.question = std::string(question);
    bundle.final_instruction = prompt_template.final_instruction;
    for (const auto& hit : ordered) bundle.doc_index_map.push_back(hit.ref);
    for (std::size_t i = ordered.size(); i-- > 0;) {
        const corpus::Chunk* chunk = lookup(ordered[i].ref);
        if (chunk == nullptr) throw Error("unknown chunk " + to_string(ordered[i].ref));
        bundle.document_blocks.push_back(DocumentBlock{i, chunk->title, chunk->text});
    }
    return bundle;
}

std::string MockReader::complete(const PromptBundle& prompt) const {
    const auto query = text::content_tokens(prompt.question);
    const DocumentBlock* best = nullptr;
    std::size_t best_overlap = 0;
    for (const auto& block : prompt.document_blocks) {
        const std::size_t overlap = count_overlap(query, block.title + "\n" + block.content);
        if (overlap > best_overlap || (overlap == best_overlap && overlap > 0 && best && block.doc_index < best->doc_index)) {
            best = &block;
            best_overlap = overlap;
        }
    }
    const double coverage =
        query.empty() ? 0.0 : static_cast<double>(best_overlap) / static_cast<double>(query.size());
    if (best == nullptr || best_overlap == 0 || coverage <= min_coverage_) return std::string(kApology);

    std::string sentence;
    std::size_t sentence_overlap = 0;
    for (const auto& s : split_sentences(best->content)) {
        const std::size_t overlap = count_overlap(query, s);
        if (sentence.empty() || overlap > sentence_overlap) {
            sentence = s;
            sentence_overlap = overlap;
        }
    }
    if (sentence.empty()) sentence = best->title;
    return sentence + " [Document" + std::to_string(best->doc_index) + "]";
}

ParsedCitations parse_citations(std::string_view reader_output) {
    ParsedCitations parsed;
    std::vector<std::size_t> found;
    std::string current(reader_output);
    std::string next;
    while (strip_pass(current, found, next)) current.swap(next);
    std::unordered_set<std::size_t> seen;
    for (std::size_t i : found) {
        if (seen.insert(i).second) parsed.indices.push_back(i);
    }
    parsed.stripped_text = std::string(text::trim(current));
    return parsed;
}

AnswerEnvelope no_answer_envelope(std::string raw_output) {
    AnswerEnvelope envelope;
    envelope.no_answer = true;
    envelope.raw_reader_output = std::move(raw_output);
    return envelope;
}

AnswerEnvelope apply_citation_rail(std::string_view reader_output, const PromptBundle& bundle) {
    auto parsed = parse_citations(reader_output);
    AnswerEnvelope envelope;
    envelope.raw_reader_output = std::string(reader_output);
    for (std::size_t index : parsed.indices) {
        if (index >= bundle.doc_index_map.size()) {
            spdlog::warn("reader cited Document{} but only {} documents were provided; citation dropped",
                         index == std::numeric_limits<std::size_t>::max() ? std::string("<overflow>") : std::to_string(index),
                         bundle.doc_index_map.size());
            continue;
        }
        const auto& ref = bundle.doc_index_map[index];
        if (std::find(envelope.citations.begin(), envelope.citations.end(), ref) == envelope.citations.end())
            envelope.citations.push_back(ref);
    }
    envelope.no_answer = envelope.citations.empty();
    if (!envelope.no_answer) envelope.answer_text = std::move(parsed.stripped_text);
    return envelope;
}

void PipelineConfig::validate() const {
    if (retrieve_k == 0 || ground_k == 0) throw Error("retrieve_k and ground_k must be positive");
    if (ground_k > retrieve_k) throw Error("ground_k must not exceed retrieve_k");
}

nlohmann::json TraceRecord::to_json() const {
    auto cites = nlohmann::json::array();
    for (const auto& c : citations) cites.push_back(jsonl::ref_to_json(c));
    return {{"query_id", query_id},   {"question", question}, {"role", role},
            {"reranked", reranked},   {"hits", hits_to_json(hits)},
            {"prompt", prompt},       {"raw_output", raw_output},
            {"citations", cites},     {"no_answer", no_answer},
            {"latency_ms", latency_ms}};
}

AnswerPipeline::AnswerPipeline(const index::EmbeddingProvider& provider, const ReaderClient& reader,
                               const rerank::StudentScorer* scorer, PipelineConfig config,
                               jsonl::AppendLog* trace_log)
    : provider_(provider), reader_(reader), scorer_(scorer), config_(std::move(config)), trace_log_(trace_log) {
    config_.validate();
}

std::vector<SearchHit> AnswerPipeline::retrieve(std::string_view question, const index::SearchIndex& view,
                                                bool use_reranker) const {
    if (view.size() == 0) return {};
    const auto query = provider_.embed(question);
    std::vector<SearchHit> hits;
    try {
        hits = view.dense().search(query, config_.retrieve_k);
    } catch (const Error& e) {
        spdlog::debug("retrieval returned nothing for '{}': {}", question, e.what());
        return {};
    }
    if (use_reranker && scorer_ != nullptr) hits = rerank::rerank(question, hits, *scorer_, view);
    return hits;
}

AnswerResult AnswerPipeline::answer_question(std::string_view question, std::string_view role,
                                             const index::IndexSnapshot& snapshot, bool use_reranker,
                                             std::string query_id, const nlohmann::json& annotations) const {
    const auto started = std::chrono::steady_clock::now();
    const auto& view = snapshot.for_role(role);

    AnswerResult result;
    result.trace.query_id = std::move(query_id);
    result.trace.question = std::string(question);
    result.trace.role = std::string(role);
    result.trace.reranked = use_reranker && scorer_ != nullptr;
    result.trace.hits = retrieve(question, view, use_reranker);

    std::vector<SearchHit> grounding(result.trace.hits.begin(),
                                     result.trace.hits.begin() +
                                         static_cast<std::ptrdiff_t>(std::min(config_.ground_k, result.trace.hits.size())));
    if (grounding.empty()) {
        result.envelope = no_answer_envelope();
    } else {
        const auto bundle = assemble_prompt(question, grounding, [&](const ChunkRef& r) { return view.find(r); },
                                            config_.prompt);
        result.trace.prompt = bundle.render();
        const std::string raw = reader_.complete(bundle);
        result.envelope = apply_citation_rail(raw, bundle);
    }
    result.trace.raw_output = result.envelope.raw_reader_output;
    result.trace.citations = result.envelope.citations;
    result.trace.no_answer = result.envelope.no_answer;
    result.trace.latency_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();

    if (trace_log_ != nullptr) {
        auto record = result.trace.to_json();
        if (annotations.is_object()) record.update(annotations);
        trace_log_->append(record);
    }
    return result;
}

}  // namespace askdesk::answer
