#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "askdesk/answer.hpp"
#include "askdesk/date.hpp"
#include "askdesk/types.hpp"

namespace askdesk::evalkit {

/// Relevance judgments for one query: either a single gold chunk (binary) or
/// a map of chunk grades in {0, 1, 2}. Unlisted chunks have grade 0.
class Qrel {
public:
    static Qrel binary(std::string query_id, ChunkRef relevant);
    static Qrel graded(std::string query_id, std::map<ChunkRef, int> grades);

    const std::string& query_id() const noexcept { return query_id_; }
    bool is_graded() const noexcept { return !relevant_.has_value(); }
    const std::optional<ChunkRef>& relevant_ref() const noexcept { return relevant_; }
    const std::map<ChunkRef, int>& grades() const noexcept { return grades_; }

    // Binary: 1 for the gold chunk. Graded: the stored grade.
    int grade(const ChunkRef& ref) const;
    // Binary: the gold chunk. Graded: grade 2.
    bool is_relevant(const ChunkRef& ref) const;

private:
    std::string query_id_;
    std::optional<ChunkRef> relevant_;
    std::map<ChunkRef, int> grades_;
};

using QrelSet = std::map<std::string, Qrel, std::less<>>;

// Hits are taken in vector order; position i has rank i + 1.
double reciprocal_rank(std::span<const SearchHit> hits, const Qrel& qrel);
double recall_at_k(std::span<const SearchHit> hits, const Qrel& qrel, std::size_t k = 3);
/// Gain 2^grade - 1, discount log2(rank + 1); 0 when the ideal DCG is 0.
double ndcg(std::span<const SearchHit> hits, const Qrel& qrel, std::size_t k = 10);

enum class CitationGranularity { document, chunk };

// True when any citation is a relevant chunk (chunk level) or shares a
// document with one (document level).
bool citation_matches(const answer::AnswerEnvelope& envelope, const Qrel& qrel,
                      CitationGranularity granularity = CitationGranularity::document);

double citation_match_rate(std::span<const answer::AnswerEnvelope> envelopes, std::span<const Qrel> qrels,
                           CitationGranularity granularity = CitationGranularity::document);

/// Grades a system answer against a reference answer on {0, 1, 2}. May throw.
class JudgeClient {
public:
    virtual ~JudgeClient() = default;
    virtual std::string name() const = 0;
    virtual int judge(std::string_view question, std::string_view system_answer,
                      std::string_view reference_answer) const = 0;
};

/// 2 when the answer contains every content token of the reference, 0 when
/// it contains none, 1 otherwise.
class MockJudge final : public JudgeClient {
public:
    std::string name() const override { return "mock"; }
    int judge(std::string_view question, std::string_view system_answer,
              std::string_view reference_answer) const override;
};

struct AnswerQuality {
    std::optional<double> mean;      // absent when every query failed
    std::vector<std::optional<int>> grades;  // per query; absent on judge failure
    std::size_t judge_failures = 0;
};

// No-answer envelopes get grade 0 without calling the judge.
AnswerQuality answer_quality(std::span<const answer::AnswerEnvelope> envelopes,
                             std::span<const std::string> questions, std::span<const std::string> references,
                             const JudgeClient& judge);

std::optional<double> no_answer_rate(std::span<const answer::AnswerEnvelope> envelopes);

enum class Thumbs { up, down };

Thumbs parse_thumbs(std::string_view text);
std::string_view to_string(Thumbs thumbs);

struct FeedbackEvent {
    std::string agent_id;
    Date day;
    std::string variant;
    Thumbs thumbs = Thumbs::up;
    std::string query_id;

    nlohmann::json to_json() const;
    static FeedbackEvent from_json(const nlohmann::json& j);
};

// Keeps the last event per query_id, in order of first appearance.
std::vector<FeedbackEvent> effective_feedback(std::span<const FeedbackEvent> events);

// Thumbs-up share over queries with feedback (last write wins per query).
std::optional<double> positive_feedback_rate(std::span<const FeedbackEvent> events);

// Queries starting with a WH-word or ending with '?'.
std::vector<std::string> mine_questions(std::span<const std::string> query_log);

// ---------------------------------------------------------------------------
// Files

// One record per line: {"query_id", "origin_id", "local_id", "grade"}. Lines
// without a grade are binary; a binary query must have exactly one line.
QrelSet read_qrels(std::istream& in);
QrelSet read_qrels(const std::filesystem::path& path);
void write_qrels(std::ostream& out, const QrelSet& qrels);

struct EvalQuery {
    std::string query_id;
    std::string question;
    std::string reference_answer;
};

// One record per line: {"query_id", "question", "reference_answer"?}.
std::vector<EvalQuery> read_queries(std::istream& in);
std::vector<EvalQuery> read_queries(const std::filesystem::path& path);
void write_queries(std::ostream& out, std::span<const EvalQuery> queries);

// ---------------------------------------------------------------------------
// Reports

struct QueryRow {
    std::string query_id;
    double reciprocal_rank = 0.0;
    double recall_at_k = 0.0;
    double ndcg = 0.0;
    std::optional<double> answer_grade;
    std::optional<double> citation_match;
    std::optional<double> citation_match_chunk;
    std::optional<double> no_answer;

    nlohmann::json to_json() const;
};

struct EvalReport {
    std::size_t recall_k = 3;
    std::size_t ndcg_k = 10;
    std::size_t n_queries = 0;
    double mrr = 0.0;
    double recall_at_3 = 0.0;
    double ndcg = 0.0;
    std::optional<double> answer_quality;
    std::optional<double> citation_match_rate;
    std::optional<double> citation_match_rate_chunk;
    std::optional<double> no_answer_rate;
    std::size_t judge_failures = 0;
    std::vector<QueryRow> rows;

    nlohmann::json summary_json() const;
    // Per-query rows followed by one summary record.
    void write(std::ostream& out) const;
};

// Aggregates are means of the rows; optional columns average only rows that have them.
EvalReport summarize(std::vector<QueryRow> rows, std::size_t recall_k = 3, std::size_t ndcg_k = 10,
                     std::size_t judge_failures = 0);

struct QueryOutcome {
    std::vector<SearchHit> hits;
    std::optional<answer::AnswerEnvelope> envelope;
};

using QueryRunner = std::function<QueryOutcome(const EvalQuery&)>;

struct EvalConfig {
    std::size_t recall_k = 3;
    std::size_t ndcg_k = 10;
};

/// Runs every query and scores it against its qrel. Answer quality needs a
/// judge and a reference answer; citation columns need a binary qrel.
/// Throws when a query has no qrel.
EvalReport evaluate(std::span<const EvalQuery> queries, const QrelSet& qrels, const QueryRunner& runner,
                    const JudgeClient* judge = nullptr, const EvalConfig& config = {});

struct MetricComparison {
    std::string metric;
    double baseline = 0.0;
    double variant = 0.0;
    std::optional<double> relative_percent;  // absent for a zero baseline
};

std::vector<MetricComparison> compare(const EvalReport& baseline, const EvalReport& variant);

// "+13.2%", "-5.7%", "0.0%".
std::string format_relative(double percent, int decimals = 1);

}  // namespace askdesk::evalkit
