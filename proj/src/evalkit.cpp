#include "askdesk/evalkit.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <unordered_map>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "askdesk/index.hpp"
#include "askdesk/jsonl.hpp"
#include "askdesk/text.hpp"

namespace askdesk::evalkit {
namespace {

double gain(int grade) {
    return std::exp2(static_cast<double>(grade)) - 1.0;
}

double discount(std::size_t rank) {
    return std::log2(static_cast<double>(rank) + 1.0);
}

void check_grade(int grade) {
    if (grade < 0 || grade > 2) throw Error("grade must be 0, 1 or 2, got " + std::to_string(grade));
}

template <typename T>
std::optional<double> mean_of(const std::vector<QueryRow>& rows, T QueryRow::*field) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& row : rows) {
        if constexpr (std::is_same_v<T, double>) {
            sum += row.*field;
            ++n;
        } else if ((row.*field).has_value()) {
            sum += *(row.*field);
            ++n;
        }
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
}

nlohmann::json optional_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

Qrel Qrel::binary(std::string query_id, ChunkRef relevant) {
    Qrel q;
    q.query_id_ = std::move(query_id);
    q.relevant_ = std::move(relevant);
    return q;
}

Qrel Qrel::graded(std::string query_id, std::map<ChunkRef, int> grades) {
    for (const auto& [ref, grade] : grades) check_grade(grade);
    Qrel q;
    q.query_id_ = std::move(query_id);
    q.grades_ = std::move(grades);
    return q;
}

int Qrel::grade(const ChunkRef& ref) const {
    if (relevant_) return *relevant_ == ref ? 1 : 0;
    const auto it = grades_.find(ref);
    return it == grades_.end() ? 0 : it->second;
}

bool Qrel::is_relevant(const ChunkRef& ref) const {
    if (relevant_) return *relevant_ == ref;
    return grade(ref) == 2;
}

double reciprocal_rank(std::span<const SearchHit> hits, const Qrel& qrel) {
    for (std::size_t i = 0; i < hits.size(); ++i) {
        if (qrel.is_relevant(hits[i].ref)) return 1.0 / static_cast<double>(i + 1);
    }
    return 0.0;
}

double recall_at_k(std::span<const SearchHit> hits, const Qrel& qrel, std::size_t k) {
    if (k < 1) throw Error("recall_at_k needs k >= 1");
    const std::size_t n = std::min(k, hits.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (qrel.is_relevant(hits[i].ref)) return 1.0;
    }
    return 0.0;
}

double ndcg(std::span<const SearchHit> hits, const Qrel& qrel, std::size_t k) {
    if (k < 1) throw Error("ndcg needs k >= 1");
    double dcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, hits.size()); ++i) dcg += gain(qrel.grade(hits[i].ref)) / discount(i + 1);

    std::vector<int> pool;
    if (qrel.is_graded()) {
        for (const auto& [ref, grade] : qrel.grades()) pool.push_back(grade);
    } else {
        pool.push_back(1);
    }
    std::sort(pool.begin(), pool.end(), std::greater<>());
    double ideal = 0.0;
    for (std::size_t i = 0; i < std::min(k, pool.size()); ++i) ideal += gain(pool[i]) / discount(i + 1);
    return ideal > 0.0 ? dcg / ideal : 0.0;
}

bool citation_matches(const answer::AnswerEnvelope& envelope, const Qrel& qrel, CitationGranularity granularity) {
    std::vector<ChunkRef> gold;
    if (qrel.relevant_ref()) {
        gold.push_back(*qrel.relevant_ref());
    } else {
        for (const auto& [ref, grade] : qrel.grades())
            if (qrel.is_relevant(ref)) gold.push_back(ref);
    }
    if (gold.empty()) throw Error("no relevant chunk for " + qrel.query_id());
    return std::any_of(envelope.citations.begin(), envelope.citations.end(), [&](const ChunkRef& c) {
        return std::any_of(gold.begin(), gold.end(), [&](const ChunkRef& g) {
            return granularity == CitationGranularity::document ? c.origin_id == g.origin_id : c == g;
        });
    });
}

double citation_match_rate(std::span<const answer::AnswerEnvelope> envelopes, std::span<const Qrel> qrels,
                           CitationGranularity granularity) {
    if (envelopes.size() != qrels.size()) throw Error("envelopes and qrels differ in length");
    if (envelopes.empty()) return 0.0;
    std::size_t matched = 0;
    for (std::size_t i = 0; i < envelopes.size(); ++i) matched += citation_matches(envelopes[i], qrels[i], granularity);
    return static_cast<double>(matched) / static_cast<double>(envelopes.size());
}

int MockJudge::judge(std::string_view, std::string_view system_answer, std::string_view reference_answer) const {
    const auto keys = text::content_tokens(reference_answer);
    if (keys.empty()) throw Error("reference answer has no content tokens");
    const auto answer_tokens = text::token_set(system_answer);
    const auto present = std::count_if(keys.begin(), keys.end(), [&](const std::string& t) { return answer_tokens.count(t) > 0; });
    if (static_cast<std::size_t>(present) == keys.size()) return 2;
    return present == 0 ? 0 : 1;
}

AnswerQuality answer_quality(std::span<const answer::AnswerEnvelope> envelopes, std::span<const std::string> questions,
                             std::span<const std::string> references, const JudgeClient& judge) {
    if (envelopes.size() != references.size() || envelopes.size() != questions.size())
        throw Error("envelopes, questions and references differ in length");
    AnswerQuality result;
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < envelopes.size(); ++i) {
        if (envelopes[i].no_answer) {
            result.grades.emplace_back(0);
            ++n;
            continue;
        }
        try {
            const int grade = judge.judge(questions[i], envelopes[i].answer_text, references[i]);
            check_grade(grade);
            result.grades.emplace_back(grade);
            sum += grade;
            ++n;
        } catch (const std::exception& e) {
            spdlog::warn("judge {} failed on query {}: {}", judge.name(), i, e.what());
            result.grades.emplace_back(std::nullopt);
            ++result.judge_failures;
        }
    }
    if (n > 0) result.mean = sum / static_cast<double>(n);
    return result;
}

std::optional<double> no_answer_rate(std::span<const answer::AnswerEnvelope> envelopes) {
    if (envelopes.empty()) return std::nullopt;
    const auto none = std::count_if(envelopes.begin(), envelopes.end(), [](const auto& e) { return e.no_answer; });
    return static_cast<double>(none) / static_cast<double>(envelopes.size());
}

Thumbs parse_thumbs(std::string_view text) {
    if (text == "up") return Thumbs::up;
    if (text == "down") return Thumbs::down;
    throw Error("thumbs must be \"up\" or \"down\", got \"" + std::string(text) + "\"");
}

std::string_view to_string(Thumbs thumbs) {
    return thumbs == Thumbs::up ? "up" : "down";
}

nlohmann::json FeedbackEvent::to_json() const {
    return {{"agent_id", agent_id},
            {"day", day.to_string()},
            {"variant", variant},
            {"thumbs", std::string(evalkit::to_string(thumbs))},
            {"query_id", query_id}};
}

FeedbackEvent FeedbackEvent::from_json(const nlohmann::json& j) {
    FeedbackEvent e;
    e.agent_id = j.at("agent_id").get<std::string>();
    e.day = Date::parse(j.at("day").get<std::string>());
    e.variant = j.at("variant").get<std::string>();
    e.thumbs = parse_thumbs(j.at("thumbs").get<std::string>());
    e.query_id = j.at("query_id").get<std::string>();
    return e;
}

std::vector<FeedbackEvent> effective_feedback(std::span<const FeedbackEvent> events) {
    std::vector<FeedbackEvent> out;
    std::unordered_map<std::string, std::size_t> slot;
    for (const auto& e : events) {
        auto [it, inserted] = slot.try_emplace(e.query_id, out.size());
        if (inserted) {
            out.push_back(e);
        } else {
            out[it->second] = e;
        }
    }
    return out;
}

std::optional<double> positive_feedback_rate(std::span<const FeedbackEvent> events) {
    const auto effective = effective_feedback(events);
    if (effective.empty()) return std::nullopt;
    const auto up = std::count_if(effective.begin(), effective.end(), [](const auto& e) { return e.thumbs == Thumbs::up; });
    return static_cast<double>(up) / static_cast<double>(effective.size());
}

std::vector<std::string> mine_questions(std::span<const std::string> query_log) {
    static const std::array<std::string_view, 7> wh = {"who", "what", "when", "where", "why", "which", "how"};
    std::vector<std::string> kept;
    for (const auto& q : query_log) {
        const auto trimmed = text::trim(q);
        if (trimmed.empty()) continue;
        bool keep = trimmed.back() == '?';
        if (!keep) {
            const auto words = text::split_words(trimmed);
            const auto tokens = text::tokenize(words.front());
            keep = !tokens.empty() && std::find(wh.begin(), wh.end(), tokens.front()) != wh.end();
        }
        if (keep) kept.push_back(q);
    }
    return kept;
}

QrelSet read_qrels(std::istream& in) {
    struct Pending {
        std::vector<std::pair<ChunkRef, std::optional<int>>> lines;
    };
    std::map<std::string, Pending, std::less<>> pending;
    jsonl::for_each_record(in, [&](const nlohmann::json& j, std::size_t) {
        const auto qid = j.at("query_id").get<std::string>();
        std::optional<int> grade;
        if (j.contains("grade") && !j.at("grade").is_null()) {
            grade = j.at("grade").get<int>();
            check_grade(*grade);
        }
        auto& p = pending[qid];
        if (!p.lines.empty() && p.lines.front().second.has_value() != grade.has_value())
            throw Error("query " + qid + " mixes graded and binary lines");
        if (!grade && !p.lines.empty()) throw Error("binary query " + qid + " has more than one relevant chunk");
        p.lines.emplace_back(jsonl::ref_from_json(j), grade);
    });
    QrelSet out;
    for (auto& [qid, p] : pending) {
        if (!p.lines.front().second) {
            out.emplace(qid, Qrel::binary(qid, p.lines.front().first));
            continue;
        }
        std::map<ChunkRef, int> grades;
        for (auto& [ref, grade] : p.lines) {
            if (!grades.emplace(ref, *grade).second) throw Error("query " + qid + " grades " + to_string(ref) + " twice");
        }
        out.emplace(qid, Qrel::graded(qid, std::move(grades)));
    }
    return out;
}

QrelSet read_qrels(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    return read_qrels(in);
}

void write_qrels(std::ostream& out, const QrelSet& qrels) {
    for (const auto& [qid, qrel] : qrels) {
        if (!qrel.is_graded()) {
            auto j = jsonl::ref_to_json(*qrel.relevant_ref());
            j["query_id"] = qid;
            jsonl::write_record(out, j);
            continue;
        }
        for (const auto& [ref, grade] : qrel.grades()) {
            auto j = jsonl::ref_to_json(ref);
            j["query_id"] = qid;
            j["grade"] = grade;
            jsonl::write_record(out, j);
        }
    }
}

std::vector<EvalQuery> read_queries(std::istream& in) {
    std::vector<EvalQuery> out;
    jsonl::for_each_record(in, [&](const nlohmann::json& j, std::size_t) {
        EvalQuery q;
        q.query_id = j.at("query_id").get<std::string>();
        q.question = j.at("question").get<std::string>();
        q.reference_answer = j.value("reference_answer", std::string{});
        out.push_back(std::move(q));
    });
    return out;
}

std::vector<EvalQuery> read_queries(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    return read_queries(in);
}

void write_queries(std::ostream& out, std::span<const EvalQuery> queries) {
    for (const auto& q : queries) {
        nlohmann::json j{{"query_id", q.query_id}, {"question", q.question}};
        if (!q.reference_answer.empty()) j["reference_answer"] = q.reference_answer;
        jsonl::write_record(out, j);
    }
}

nlohmann::json QueryRow::to_json() const {
    return {{"query_id", query_id},
            {"reciprocal_rank", reciprocal_rank},
            {"recall_at_k", recall_at_k},
            {"ndcg", ndcg},
            {"answer_grade", optional_json(answer_grade)},
            {"citation_match", optional_json(citation_match)},
            {"citation_match_chunk", optional_json(citation_match_chunk)},
            {"no_answer", optional_json(no_answer)}};
}

nlohmann::json EvalReport::summary_json() const {
    return {{"summary", true},
            {"n_queries", n_queries},
            {"recall_k", recall_k},
            {"ndcg_k", ndcg_k},
            {"mrr", mrr},
            {"recall_at_3", recall_at_3},
            {"ndcg", ndcg},
            {"answer_quality", optional_json(answer_quality)},
            {"citation_match_rate", optional_json(citation_match_rate)},
            {"citation_match_rate_chunk", optional_json(citation_match_rate_chunk)},
            {"no_answer_rate", optional_json(no_answer_rate)},
            {"judge_failures", judge_failures}};
}

void EvalReport::write(std::ostream& out) const {
    for (const auto& row : rows) jsonl::write_record(out, row.to_json());
    jsonl::write_record(out, summary_json());
}

EvalReport summarize(std::vector<QueryRow> rows, std::size_t recall_k, std::size_t ndcg_k, std::size_t judge_failures) {
    EvalReport report;
    report.recall_k = recall_k;
    report.ndcg_k = ndcg_k;
    report.n_queries = rows.size();
    report.judge_failures = judge_failures;
    report.mrr = mean_of(rows, &QueryRow::reciprocal_rank).value_or(0.0);
    report.recall_at_3 = mean_of(rows, &QueryRow::recall_at_k).value_or(0.0);
    report.ndcg = mean_of(rows, &QueryRow::ndcg).value_or(0.0);
    report.answer_quality = mean_of(rows, &QueryRow::answer_grade);
    report.citation_match_rate = mean_of(rows, &QueryRow::citation_match);
    report.citation_match_rate_chunk = mean_of(rows, &QueryRow::citation_match_chunk);
    report.no_answer_rate = mean_of(rows, &QueryRow::no_answer);
    report.rows = std::move(rows);
    return report;
}

EvalReport evaluate(std::span<const EvalQuery> queries, const QrelSet& qrels, const QueryRunner& runner,
                    const JudgeClient* judge, const EvalConfig& config) {
    std::vector<QueryRow> rows;
    rows.reserve(queries.size());
    std::size_t failures = 0;
    for (const auto& query : queries) {
        const auto it = qrels.find(query.query_id);
        if (it == qrels.end()) throw Error("no qrel for query " + query.query_id);
        const Qrel& qrel = it->second;
        const auto outcome = runner(query);

        QueryRow row;
        row.query_id = query.query_id;
        row.reciprocal_rank = reciprocal_rank(outcome.hits, qrel);
        row.recall_at_k = recall_at_k(outcome.hits, qrel, config.recall_k);
        row.ndcg = ndcg(outcome.hits, qrel, config.ndcg_k);
        if (outcome.envelope) {
            const auto& envelope = *outcome.envelope;
            row.no_answer = envelope.no_answer ? 1.0 : 0.0;
            row.citation_match = citation_matches(envelope, qrel, CitationGranularity::document) ? 1.0 : 0.0;
            row.citation_match_chunk = citation_matches(envelope, qrel, CitationGranularity::chunk) ? 1.0 : 0.0;
            if (judge != nullptr && !query.reference_answer.empty()) {
                const std::string references[] = {query.reference_answer};
                const std::string questions[] = {query.question};
                const auto quality = answer_quality(std::span(&envelope, 1), questions, references, *judge);
                failures += quality.judge_failures;
                if (quality.grades.front()) row.answer_grade = static_cast<double>(*quality.grades.front());
            }
        }
        rows.push_back(std::move(row));
    }
    return summarize(std::move(rows), config.recall_k, config.ndcg_k, failures);
}

std::vector<MetricComparison> compare(const EvalReport& baseline, const EvalReport& variant) {
    std::vector<MetricComparison> out;
    auto add = [&](std::string name, std::optional<double> b, std::optional<double> v) {
        if (!b || !v) return;
        MetricComparison m{std::move(name), *b, *v, std::nullopt};
        if (*b != 0.0) m.relative_percent = index::relative_difference(*b, *v);
        out.push_back(std::move(m));
    };
    add("Answer Quality", baseline.answer_quality, variant.answer_quality);
    add("Citation Match Rate", baseline.citation_match_rate, variant.citation_match_rate);
    add("MRR", baseline.mrr, variant.mrr);
    add("Recall@3", baseline.recall_at_3, variant.recall_at_3);
    add("NDCG", baseline.ndcg, variant.ndcg);
    add("No Answer Rate", baseline.no_answer_rate, variant.no_answer_rate);
    return out;
}

std::string format_relative(double percent, int decimals) {
    const double scale = std::pow(10.0, decimals);
    const double rounded = std::round(percent * scale) / scale;
    if (rounded == 0.0) return fmt::format("{:.{}f}%", 0.0, decimals);
    return fmt::format("{:+.{}f}%", rounded, decimals);
}

}  // namespace askdesk::evalkit
