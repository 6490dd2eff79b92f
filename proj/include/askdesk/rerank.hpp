#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "askdesk/corpus.hpp"
#include "askdesk/index.hpp"
#include "askdesk/types.hpp"

namespace askdesk::rerank {

struct SyntheticQuestion {
    std::string text;
    ChunkRef source_ref;
    std::string generator_name;
};

/// Text-to-text question writer. May throw; callers skip the chunk.
class QuestionGenerator {
public:
    virtual ~QuestionGenerator() = default;
    virtual std::string name() const = 0;
    virtual std::string generate(const corpus::Chunk& chunk) const = 0;
};

/// "how do I <title>?", optionally followed by keywords drawn from the text
/// ("how do I <title> <kw1> <kw2>?"). Keywords are content words of at least
/// four characters that do not occur in the title, picked by a seeded shuffle.
class TemplateQuestionGenerator final : public QuestionGenerator {
public:
    explicit TemplateQuestionGenerator(std::size_t keywords = 0, std::uint64_t seed = 0);

    std::string name() const override { return "template"; }
    std::string generate(const corpus::Chunk& chunk) const override;

private:
    std::size_t keywords_;
    std::uint64_t seed_;
};

std::vector<SyntheticQuestion> generate_questions(const std::vector<corpus::Chunk>& chunks,
                                                  const QuestionGenerator& generator);

enum class RecallDecision { keep, drop };

RecallDecision filter_by_recall(const SyntheticQuestion& question, std::span<const SearchHit> hits);

/// Relevance oracle used to order candidates. May throw.
class TeacherScorer {
public:
    virtual ~TeacherScorer() = default;
    virtual std::string name() const = 0;
    virtual double score(std::string_view question, const corpus::Chunk& chunk) const = 0;
};

/// Fraction of the question's content tokens found in the chunk's title and
/// text, plus optional seeded jitter in [0, jitter).
class LexicalOverlapTeacher final : public TeacherScorer {
public:
    explicit LexicalOverlapTeacher(std::uint64_t seed = 0, double jitter = 0.0);

    std::string name() const override { return "lexical-overlap"; }
    double score(std::string_view question, const corpus::Chunk& chunk) const override;

private:
    std::uint64_t seed_;
    double jitter_;
};

using FeatureVector = std::vector<double>;

struct RankingExample {
    SyntheticQuestion question;
    std::vector<ChunkRef> candidates;      // retrieval order
    std::vector<double> teacher_scores;    // aligned with candidates
    std::vector<ChunkRef> target_order;    // source first, then teacher order
    std::vector<FeatureVector> features;   // aligned with candidates, filled by attach_features
};

using ChunkLookup = std::function<const corpus::Chunk*(const ChunkRef&)>;

// Returns nullopt (and logs) when the source is missing from the hits or the
// teacher fails on any candidate.
std::optional<RankingExample> build_teacher_ranking(const SyntheticQuestion& question,
                                                    std::span<const SearchHit> hits,
                                                    const TeacherScorer& teacher, const ChunkLookup& lookup);

struct TrainPair {
    std::string question;
    ChunkRef preferred;
    ChunkRef other;
};

std::vector<TrainPair> build_pairs(const RankingExample& example);

/// ln(1 + exp(-(preferred - other))), evaluated without overflow.
double ranknet_loss(double s_preferred, double s_other);
/// d loss / d s_preferred = -1 / (1 + exp(s_preferred - s_other)).
double ranknet_gradient(double s_preferred, double s_other);

// ---------------------------------------------------------------------------
// Student features

inline constexpr std::array<std::string_view, 7> kFeatureNames = {
    "bm25", "retrieval_score", "title_overlap", "text_overlap", "length_ratio", "query_length", "reciprocal_rank",
};

/// Per-candidate signals that do not come from the (query, chunk) text alone.
struct CandidateContext {
    double bm25 = 0.0;
    double retrieval_score = 0.0;
    int rank = 1;
    // Mean text token count over the candidate set.
    double mean_length = 0.0;
};

FeatureVector extract_features(std::string_view query, const corpus::Chunk& chunk, const CandidateContext& context);

// Features for every hit, with BM25 computed against the given index.
std::vector<FeatureVector> candidate_features(std::string_view query, std::span<const SearchHit> hits,
                                              const index::SearchIndex& index,
                                              const index::Bm25Params& params = {});

void attach_features(RankingExample& example, const index::SearchIndex& index,
                     std::span<const SearchHit> hits);

struct DatasetStats {
    std::size_t questions = 0;
    std::size_t kept = 0;
    std::size_t dropped_by_recall = 0;
    std::size_t dropped_by_teacher = 0;
};

struct DistillationData {
    std::vector<RankingExample> examples;
    DatasetStats stats;
};

/// Dense top-k per question, recall filter, teacher ranking and features.
DistillationData build_distillation_dataset(const std::vector<SyntheticQuestion>& questions,
                                            const index::SearchIndex& index,
                                            const index::EmbeddingProvider& provider, const TeacherScorer& teacher,
                                            std::size_t k = 20);

// ---------------------------------------------------------------------------
// Student scorer

/// Linear scorer over standardized features with an optional tanh hidden
/// layer added on top of the linear term.
class StudentScorer {
public:
    static StudentScorer linear(std::vector<std::string> feature_names);
    static StudentScorer with_hidden_layer(std::vector<std::string> feature_names, std::size_t hidden,
                                           std::uint64_t seed);

    double score(std::span<const double> features) const;
    double score(std::string_view query, const corpus::Chunk& chunk, const CandidateContext& context) const;

    const std::vector<std::string>& feature_names() const noexcept { return feature_names_; }
    std::size_t hidden_units() const noexcept { return hidden_bias_.size(); }

    std::vector<double>& offsets() noexcept { return offsets_; }
    std::vector<double>& scales() noexcept { return scales_; }
    std::vector<double>& weights() noexcept { return weights_; }
    const std::vector<double>& weights() const noexcept { return weights_; }
    double& bias() noexcept { return bias_; }

    void save(std::ostream& out) const;
    static StudentScorer load(std::istream& in);
    void save(const std::filesystem::path& path) const;
    static StudentScorer load(const std::filesystem::path& path);

    bool operator==(const StudentScorer&) const = default;

private:
    friend class Trainer;

    std::vector<double> standardize(std::span<const double> features) const;

    std::vector<std::string> feature_names_;
    std::vector<double> offsets_;
    std::vector<double> scales_;
    std::vector<double> weights_;
    double bias_ = 0.0;
    std::vector<double> hidden_weights_;  // hidden x features, row-major
    std::vector<double> hidden_bias_;
    std::vector<double> output_weights_;
};

struct TrainConfig {
    // Learning rate for the bundled feature-based student.
    static constexpr double kStudentLearningRate = 1e-2;
    // Learning rate for a fine-tuned transformer encoder student.
    static constexpr double kEncoderLearningRate = 5e-6;

    double learning_rate = kStudentLearningRate;
    std::size_t batch_size = 8;
    std::size_t warmup_steps = 4000;
    double weight_decay = 0.001;
    std::size_t epochs = 1;
    std::uint64_t seed = 0;
    std::size_t hidden_units = 0;
    double validation_fraction = 0.005;

    // Warmup-constant: base * min(step / warmup_steps, 1), steps counted from 1.
    double learning_rate_at(std::size_t step) const;
    void validate() const;
};

struct TrainReport {
    std::vector<double> step_loss;
    std::vector<double> step_learning_rate;
    std::size_t steps = 0;
    std::size_t train_examples = 0;
    std::size_t validation_examples = 0;
    std::size_t train_pairs = 0;
    std::optional<double> validation_accuracy;
};

struct TrainResult {
    StudentScorer scorer;
    TrainReport report;
};

/// Mini-batch gradient descent on mean RankNet loss over all target-order
/// pairs. Holds out validation_fraction of the examples (at least one when
/// there are two or more). Throws on an empty dataset or a non-finite loss.
TrainResult train(const std::vector<RankingExample>& dataset, const TrainConfig& config);

/// Fraction of target-order pairs the scorer orders correctly (ties count half).
double pairwise_accuracy(const StudentScorer& scorer, std::span<const RankingExample> examples);

void write_report(std::ostream& out, const TrainReport& report);

void write_examples(std::ostream& out, const std::vector<RankingExample>& examples);
std::vector<RankingExample> read_examples(std::istream& in);

// ---------------------------------------------------------------------------
// Reranking

/// Rescores hits with the student and reorders them; ties keep prior rank.
std::vector<SearchHit> rerank(std::span<const SearchHit> hits, std::span<const FeatureVector> features,
                              const StudentScorer& scorer);

std::vector<SearchHit> rerank(std::string_view query, std::span<const SearchHit> hits, const StudentScorer& scorer,
                              const index::SearchIndex& index);

}  // namespace askdesk::rerank
