#include "askdesk/rerank.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "askdesk/jsonl.hpp"
#include "askdesk/text.hpp"

namespace askdesk::rerank {
namespace {

constexpr std::string_view kModelMagic = "askdesk-student";
constexpr int kModelVersion = 1;

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t hash_text(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

double overlap_ratio(const std::vector<std::string>& query_tokens, const std::unordered_set<std::string>& doc) {
    if (query_tokens.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& t : query_tokens) hits += doc.count(t);
    return static_cast<double>(hits) / static_cast<double>(query_tokens.size());
}

std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw Error("cannot format value");
    return std::string(buf, end);
}

double parse_double(const std::string& token) {
    double v = 0.0;
    auto [end, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc{} || end != token.data() + token.size()) throw Error("bad number in model file: " + token);
    return v;
}

void write_row(std::ostream& out, std::string_view key, const std::vector<double>& values) {
    out << key << ' ' << values.size();
    for (double v : values) out << ' ' << format_double(v);
    out << '\n';
}

std::vector<double> read_row(std::istream& in, std::string_view key) {
    std::string line;
    if (!std::getline(in, line)) throw Error("model file truncated before " + std::string(key));
    std::istringstream row(line);
    std::string name;
    std::size_t count = 0;
    row >> name >> count;
    if (name != key) throw Error("expected '" + std::string(key) + "' in model file, found '" + name + "'");
    std::vector<double> values(count);
    for (auto& v : values) {
        std::string token;
        if (!(row >> token)) throw Error("model row '" + name + "' is short");
        v = parse_double(token);
    }
    return values;
}

jsonl::json question_to_json(const SyntheticQuestion& q) {
    return {{"text", q.text}, {"source", jsonl::ref_to_json(q.source_ref)}, {"generator", q.generator_name}};
}

jsonl::json refs_to_json(const std::vector<ChunkRef>& refs) {
    auto out = jsonl::json::array();
    for (const auto& r : refs) out.push_back(jsonl::ref_to_json(r));
    return out;
}

std::vector<ChunkRef> refs_from_json(const jsonl::json& j) {
    std::vector<ChunkRef> refs;
    for (const auto& r : j) refs.push_back(jsonl::ref_from_json(r));
    return refs;
}

// Candidate positions of each target-order pair.
struct PairIndex {
    std::size_t example;
    std::size_t preferred;
    std::size_t other;
};

std::vector<PairIndex> index_pairs(const RankingExample& example, std::size_t example_id) {
    std::vector<std::size_t> positions;
    positions.reserve(example.target_order.size());
    for (const auto& ref : example.target_order) {
        auto it = std::find(example.candidates.begin(), example.candidates.end(), ref);
        if (it == example.candidates.end()) throw Error("target order names a ref that is not a candidate");
        positions.push_back(static_cast<std::size_t>(it - example.candidates.begin()));
    }
    std::vector<PairIndex> pairs;
    for (std::size_t i = 0; i < positions.size(); ++i)
        for (std::size_t j = i + 1; j < positions.size(); ++j) pairs.push_back({example_id, positions[i], positions[j]});
    return pairs;
}

}  // namespace

// ---------------------------------------------------------------------------
// Synthetic data construction

TemplateQuestionGenerator::TemplateQuestionGenerator(std::size_t keywords, std::uint64_t seed)
    : keywords_(keywords), seed_(seed) {}

std::string TemplateQuestionGenerator::generate(const corpus::Chunk& chunk) const {
    const std::string title = text::to_lower(text::trim(chunk.title));
    std::vector<std::string> picked;
    if (keywords_ > 0) {
        const auto title_tokens = text::token_set(chunk.title);
        std::vector<std::string> pool;
        for (auto& t : text::content_tokens(chunk.text)) {
            if (t.size() >= 4 && !title_tokens.count(t)) pool.push_back(std::move(t));
        }
        std::mt19937_64 rng(mix(seed_ ^ hash_text(chunk.origin_id) ^ mix(chunk.local_id)));
        const std::size_t n = std::min(keywords_, pool.size());
        for (std::size_t i = 0; i < n; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
            std::swap(pool[i], pool[pick(rng)]);
            picked.push_back(pool[i]);
        }
    }
    std::string subject = title;
    for (const auto& kw : picked) {
        if (!subject.empty()) subject.push_back(' ');
        subject += kw;
    }
    if (subject.empty()) return {};
    return "how do I " + subject + "?";
}

std::vector<SyntheticQuestion> generate_questions(const std::vector<corpus::Chunk>& chunks,
                                                  const QuestionGenerator& generator) {
    std::vector<SyntheticQuestion> questions;
    for (const auto& chunk : chunks) {
        std::string text;
        try {
            text = generator.generate(chunk);
        } catch (const std::exception& e) {
            spdlog::warn("question generator '{}' failed on {}: {}", generator.name(), to_string(chunk.ref()), e.what());
            continue;
        }
        if (text::trim(text).empty()) continue;
        questions.push_back(SyntheticQuestion{std::move(text), chunk.ref(), generator.name()});
    }
    return questions;
}

RecallDecision filter_by_recall(const SyntheticQuestion& question, std::span<const SearchHit> hits) {
    for (const auto& hit : hits) {
        if (hit.ref == question.source_ref) return RecallDecision::keep;
    }
    return RecallDecision::drop;
}

LexicalOverlapTeacher::LexicalOverlapTeacher(std::uint64_t seed, double jitter) : seed_(seed), jitter_(jitter) {}

double LexicalOverlapTeacher::score(std::string_view question, const corpus::Chunk& chunk) const {
    const auto q = text::content_tokens(question);
    const auto doc = text::token_set(chunk.title + "\n" + chunk.text);
    double s = overlap_ratio(q, doc);
    if (jitter_ > 0.0) {
        const std::uint64_t h = mix(seed_ ^ hash_text(question) ^ mix(hash_text(chunk.origin_id) + chunk.local_id));
        s += jitter_ * static_cast<double>(h >> 11) * 0x1.0p-53;
    }
    return s;
}

std::optional<RankingExample> build_teacher_ranking(const SyntheticQuestion& question,
                                                    std::span<const SearchHit> hits,
                                                    const TeacherScorer& teacher, const ChunkLookup& lookup) {
    std::vector<SearchHit> ordered(hits.begin(), hits.end());
    std::stable_sort(ordered.begin(), ordered.end(), [](const SearchHit& a, const SearchHit& b) { return a.rank < b.rank; });

    RankingExample example;
    example.question = question;
    bool has_source = false;
    for (const auto& hit : ordered) {
        example.candidates.push_back(hit.ref);
        has_source = has_source || hit.ref == question.source_ref;
    }
    if (!has_source) {
        spdlog::warn("source {} not among candidates for '{}'; example discarded", to_string(question.source_ref),
                     question.text);
        return std::nullopt;
    }
    try {
        for (const auto& ref : example.candidates) {
            const corpus::Chunk* chunk = lookup(ref);
            if (chunk == nullptr) throw Error("unknown chunk " + to_string(ref));
            const double s = teacher.score(question.text, *chunk);
            if (!std::isfinite(s)) throw Error("non-finite teacher score");
            example.teacher_scores.push_back(s);
        }
    } catch (const std::exception& e) {
        spdlog::warn("teacher '{}' failed for '{}': {}; example discarded", teacher.name(), question.text, e.what());
        return std::nullopt;
    }

    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < example.candidates.size(); ++i) {
        if (example.candidates[i] != question.source_ref) rest.push_back(i);
    }
    std::stable_sort(rest.begin(), rest.end(), [&](std::size_t a, std::size_t b) {
        return example.teacher_scores[a] > example.teacher_scores[b];
    });
    example.target_order.push_back(question.source_ref);
    for (std::size_t i : rest) example.target_order.push_back(example.candidates[i]);
    return example;
}

std::vector<TrainPair> build_pairs(const RankingExample& example) {
    std::vector<TrainPair> pairs;
    const auto& order = example.target_order;
    pairs.reserve(order.size() * (order.size() > 0 ? order.size() - 1 : 0) / 2);
    for (std::size_t i = 0; i < order.size(); ++i)
        for (std::size_t j = i + 1; j < order.size(); ++j) pairs.push_back({example.question.text, order[i], order[j]});
    return pairs;
}

double ranknet_loss(double s_preferred, double s_other) {
    const double diff = s_preferred - s_other;
    // log(1 + e^-d) = max(-d, 0) + log1p(e^-|d|)
    return std::max(-diff, 0.0) + std::log1p(std::exp(-std::abs(diff)));
}

double ranknet_gradient(double s_preferred, double s_other) {
    const double diff = s_preferred - s_other;
    if (diff >= 0.0) {
        const double e = std::exp(-diff);
        return -e / (1.0 + e);
    }
    return -1.0 / (1.0 + std::exp(diff));
}

// ---------------------------------------------------------------------------
// Features

FeatureVector extract_features(std::string_view query, const corpus::Chunk& chunk, const CandidateContext& context) {
    const auto q = index::query_terms(query);
    const auto title = text::token_set(chunk.title);
    const auto body_tokens = text::tokenize(chunk.text);
    const std::unordered_set<std::string> body(body_tokens.begin(), body_tokens.end());
    const double length_ratio =
        context.mean_length > 0.0 ? static_cast<double>(body_tokens.size()) / context.mean_length : 0.0;
    return {
        context.bm25,
        context.retrieval_score,
        overlap_ratio(q, title),
        overlap_ratio(q, body),
        length_ratio,
        static_cast<double>(q.size()),
        context.rank > 0 ? 1.0 / static_cast<double>(context.rank) : 0.0,
    };
}

std::vector<FeatureVector> candidate_features(std::string_view query, std::span<const SearchHit> hits,
                                              const index::SearchIndex& index, const index::Bm25Params& params) {
    const auto terms = index::query_terms(query);
    std::vector<const corpus::Chunk*> chunks;
    std::vector<double> bm25;
    double total_length = 0.0;
    for (const auto& hit : hits) {
        auto pos = index.position(hit.ref);
        if (!pos) throw Error("hit " + to_string(hit.ref) + " is not in the index");
        chunks.push_back(&index.chunks()[*pos]);
        bm25.push_back(terms.empty() ? 0.0 : index.bm25().score(terms, *pos, params));
        total_length += static_cast<double>(text::tokenize(chunks.back()->text).size());
    }
    const double mean_length = hits.empty() ? 0.0 : total_length / static_cast<double>(hits.size());
    std::vector<FeatureVector> out;
    out.reserve(hits.size());
    for (std::size_t i = 0; i < hits.size(); ++i) {
        CandidateContext context{bm25[i], hits[i].score, hits[i].rank, mean_length};
        out.push_back(extract_features(query, *chunks[i], context));
    }
    return out;
}

void attach_features(RankingExample& example, const index::SearchIndex& index, std::span<const SearchHit> hits) {
    std::vector<SearchHit> ordered;
    for (const auto& ref : example.candidates) {
        auto it = std::find_if(hits.begin(), hits.end(), [&](const SearchHit& h) { return h.ref == ref; });
        if (it == hits.end()) throw Error("candidate " + to_string(ref) + " missing from hits");
        ordered.push_back(*it);
    }
    example.features = candidate_features(example.question.text, ordered, index);
}

DistillationData build_distillation_dataset(const std::vector<SyntheticQuestion>& questions,
                                            const index::SearchIndex& index,
                                            const index::EmbeddingProvider& provider, const TeacherScorer& teacher,
                                            std::size_t k) {
    DistillationData data;
    data.stats.questions = questions.size();
    const ChunkLookup lookup = [&index](const ChunkRef& ref) { return index.find(ref); };
    for (const auto& question : questions) {
        const auto hits = index::dense_search(question.text, index.dense(), k, provider);
        if (filter_by_recall(question, hits) == RecallDecision::drop) {
            ++data.stats.dropped_by_recall;
            continue;
        }
        auto example = build_teacher_ranking(question, hits, teacher, lookup);
        if (!example) {
            ++data.stats.dropped_by_teacher;
            continue;
        }
        attach_features(*example, index, hits);
        data.examples.push_back(std::move(*example));
    }
    data.stats.kept = data.examples.size();
    return data;
}

// ---------------------------------------------------------------------------
// Student scorer

StudentScorer StudentScorer::linear(std::vector<std::string> feature_names) {
    StudentScorer s;
    const std::size_t f = feature_names.size();
    s.feature_names_ = std::move(feature_names);
    s.offsets_.assign(f, 0.0);
    s.scales_.assign(f, 1.0);
    s.weights_.assign(f, 0.0);
    return s;
}

StudentScorer StudentScorer::with_hidden_layer(std::vector<std::string> feature_names, std::size_t hidden,
                                               std::uint64_t seed) {
    StudentScorer s = linear(std::move(feature_names));
    const std::size_t f = s.feature_names_.size();
    std::mt19937_64 rng(seed);
    const double bound = f > 0 ? 1.0 / std::sqrt(static_cast<double>(f)) : 0.0;
    std::uniform_real_distribution<double> init(-bound, bound);
    s.hidden_weights_.resize(hidden * f);
    for (auto& w : s.hidden_weights_) w = init(rng);
    s.hidden_bias_.assign(hidden, 0.0);
    s.output_weights_.assign(hidden, 0.0);
    return s;
}

std::vector<double> StudentScorer::standardize(std::span<const double> features) const {
    if (features.size() != feature_names_.size()) throw Error("feature vector has the wrong length");
    std::vector<double> x(features.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = (features[i] - offsets_[i]) / scales_[i];
    return x;
}

double StudentScorer::score(std::span<const double> features) const {
    const auto x = standardize(features);
    double s = bias_;
    for (std::size_t i = 0; i < x.size(); ++i) s += weights_[i] * x[i];
    const std::size_t f = x.size();
    for (std::size_t h = 0; h < hidden_bias_.size(); ++h) {
        double z = hidden_bias_[h];
        for (std::size_t i = 0; i < f; ++i) z += hidden_weights_[h * f + i] * x[i];
        s += output_weights_[h] * std::tanh(z);
    }
    return s;
}

double StudentScorer::score(std::string_view query, const corpus::Chunk& chunk, const CandidateContext& context) const {
    return score(extract_features(query, chunk, context));
}

void StudentScorer::save(std::ostream& out) const {
    out << kModelMagic << ' ' << kModelVersion << '\n';
    out << "features " << feature_names_.size();
    for (const auto& name : feature_names_) out << ' ' << name;
    out << '\n';
    out << "hidden " << hidden_bias_.size() << '\n';
    write_row(out, "offsets", offsets_);
    write_row(out, "scales", scales_);
    write_row(out, "weights", weights_);
    write_row(out, "bias", {bias_});
    write_row(out, "hidden_weights", hidden_weights_);
    write_row(out, "hidden_bias", hidden_bias_);
    write_row(out, "output_weights", output_weights_);
}

StudentScorer StudentScorer::load(std::istream& in) {
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != kModelMagic) throw Error("not a student model file");
    if (version != kModelVersion) throw Error("unsupported student model version " + std::to_string(version));
    std::string key;
    std::size_t f = 0;
    in >> key >> f;
    if (key != "features") throw Error("model file missing feature header");
    std::vector<std::string> names(f);
    for (auto& n : names) in >> n;
    std::size_t hidden = 0;
    in >> key >> hidden;
    if (key != "hidden") throw Error("model file missing hidden size");
    in.ignore(std::numeric_limits<std::streamsize>::max(), '\n');

    StudentScorer s;
    s.feature_names_ = std::move(names);
    s.offsets_ = read_row(in, "offsets");
    s.scales_ = read_row(in, "scales");
    s.weights_ = read_row(in, "weights");
    auto bias = read_row(in, "bias");
    s.hidden_weights_ = read_row(in, "hidden_weights");
    s.hidden_bias_ = read_row(in, "hidden_bias");
    s.output_weights_ = read_row(in, "output_weights");
    if (s.offsets_.size() != f || s.scales_.size() != f || s.weights_.size() != f || bias.size() != 1 ||
        s.hidden_weights_.size() != hidden * f || s.hidden_bias_.size() != hidden || s.output_weights_.size() != hidden)
        throw Error("model file dimensions are inconsistent");
    s.bias_ = bias[0];
    return s;
}

void StudentScorer::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write model " + path.string());
    save(out);
}

StudentScorer StudentScorer::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read model " + path.string());
    return load(in);
}

// ---------------------------------------------------------------------------
// Training

double TrainConfig::learning_rate_at(std::size_t step) const {
    if (warmup_steps == 0) return learning_rate;
    const double ramp = static_cast<double>(step) / static_cast<double>(warmup_steps);
    return learning_rate * std::min(ramp, 1.0);
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw Error("learning_rate must be positive");
    if (batch_size == 0) throw Error("batch_size must be positive");
    if (!(weight_decay >= 0.0)) throw Error("weight_decay must be non-negative");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) throw Error("validation_fraction must lie in [0, 1)");
}

class Trainer {
public:
    Trainer(const std::vector<RankingExample>& dataset, const TrainConfig& config)
        : dataset_(dataset), config_(config) {}

    TrainResult run() {
        config_.validate();
        if (dataset_.empty()) throw Error("cannot train on an empty dataset");
        const std::size_t f = kFeatureNames.size();
        for (const auto& ex : dataset_) {
            if (ex.features.size() != ex.candidates.size()) throw Error("ranking example has no features attached");
            for (const auto& fv : ex.features)
                if (fv.size() != f) throw Error("feature vector has the wrong length");
        }

        std::mt19937_64 rng(config_.seed);
        std::vector<std::size_t> order(dataset_.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        std::size_t n_val = 0;
        if (dataset_.size() >= 2 && config_.validation_fraction > 0.0) {
            n_val = static_cast<std::size_t>(std::ceil(config_.validation_fraction * static_cast<double>(dataset_.size())));
            n_val = std::clamp<std::size_t>(n_val, 1, dataset_.size() - 1);
        }
        std::vector<std::size_t> val_ids(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
        std::vector<std::size_t> train_ids(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
        std::sort(train_ids.begin(), train_ids.end());

        std::vector<std::string> names(kFeatureNames.begin(), kFeatureNames.end());
        StudentScorer scorer = config_.hidden_units > 0
                                   ? StudentScorer::with_hidden_layer(names, config_.hidden_units, config_.seed)
                                   : StudentScorer::linear(names);
        fit_scaling(scorer, train_ids);

        // Standardized features, indexed [example][candidate].
        std::vector<std::vector<std::vector<double>>> x(dataset_.size());
        std::vector<PairIndex> pairs;
        for (std::size_t id : train_ids) {
            for (const auto& fv : dataset_[id].features) x[id].push_back(scorer.standardize(fv));
            auto p = index_pairs(dataset_[id], id);
            pairs.insert(pairs.end(), p.begin(), p.end());
        }

        TrainReport report;
        report.train_examples = train_ids.size();
        report.validation_examples = n_val;
        report.train_pairs = pairs.size();

        std::size_t step = 0;
        for (std::size_t epoch = 0; epoch < config_.epochs; ++epoch) {
            std::shuffle(pairs.begin(), pairs.end(), rng);
            for (std::size_t begin = 0; begin < pairs.size(); begin += config_.batch_size) {
                const std::size_t end = std::min(begin + config_.batch_size, pairs.size());
                ++step;
                const double lr = config_.learning_rate_at(step);
                const double loss = sgd_step(scorer, x, std::span(pairs).subspan(begin, end - begin), lr);
                if (!std::isfinite(loss)) {
                    throw Error("non-finite loss at step " + std::to_string(step) + " (epoch " +
                                std::to_string(epoch) + ", lr " + format_double(lr) + ")");
                }
                report.step_loss.push_back(loss);
                report.step_learning_rate.push_back(lr);
            }
        }
        report.steps = step;
        if (n_val > 0) {
            std::vector<RankingExample> held_out;
            for (std::size_t id : val_ids) held_out.push_back(dataset_[id]);
            report.validation_accuracy = pairwise_accuracy(scorer, held_out);
        }
        return TrainResult{std::move(scorer), std::move(report)};
    }

private:
    void fit_scaling(StudentScorer& scorer, const std::vector<std::size_t>& ids) const {
        const std::size_t f = kFeatureNames.size();
        std::vector<double> sum(f, 0.0), sum_sq(f, 0.0);
        double count = 0.0;
        for (std::size_t id : ids) {
            for (const auto& fv : dataset_[id].features) {
                for (std::size_t i = 0; i < f; ++i) {
                    sum[i] += fv[i];
                    sum_sq[i] += fv[i] * fv[i];
                }
                count += 1.0;
            }
        }
        for (std::size_t i = 0; i < f; ++i) {
            if (count == 0.0) break;
            const double mean = sum[i] / count;
            const double var = std::max(sum_sq[i] / count - mean * mean, 0.0);
            scorer.offsets_[i] = mean;
            scorer.scales_[i] = var > 1e-12 ? std::sqrt(var) : 1.0;
        }
    }

    struct Forward {
        double score = 0.0;
        std::vector<double> activations;
    };

    static Forward forward(const StudentScorer& s, const std::vector<double>& x) {
        Forward out;
        out.score = s.bias_;
        for (std::size_t i = 0; i < x.size(); ++i) out.score += s.weights_[i] * x[i];
        const std::size_t f = x.size();
        out.activations.resize(s.hidden_bias_.size());
        for (std::size_t h = 0; h < s.hidden_bias_.size(); ++h) {
            double z = s.hidden_bias_[h];
            for (std::size_t i = 0; i < f; ++i) z += s.hidden_weights_[h * f + i] * x[i];
            out.activations[h] = std::tanh(z);
            out.score += s.output_weights_[h] * out.activations[h];
        }
        return out;
    }

    // Adds coefficient * d score / d params into the gradient buffers.
    static void accumulate(const StudentScorer& s, const std::vector<double>& x, const Forward& fw, double coefficient,
                           std::vector<double>& g_w, std::vector<double>& g_hw, std::vector<double>& g_hb,
                           std::vector<double>& g_out) {
        const std::size_t f = x.size();
        for (std::size_t i = 0; i < f; ++i) g_w[i] += coefficient * x[i];
        for (std::size_t h = 0; h < s.hidden_bias_.size(); ++h) {
            const double a = fw.activations[h];
            g_out[h] += coefficient * a;
            const double back = coefficient * s.output_weights_[h] * (1.0 - a * a);
            g_hb[h] += back;
            for (std::size_t i = 0; i < f; ++i) g_hw[h * f + i] += back * x[i];
        }
    }

    double sgd_step(StudentScorer& s, const std::vector<std::vector<std::vector<double>>>& x,
                    std::span<const PairIndex> batch, double lr) const {
        std::vector<double> g_w(s.weights_.size(), 0.0);
        std::vector<double> g_hw(s.hidden_weights_.size(), 0.0);
        std::vector<double> g_hb(s.hidden_bias_.size(), 0.0);
        std::vector<double> g_out(s.output_weights_.size(), 0.0);
        double loss = 0.0;
        const double inv = 1.0 / static_cast<double>(batch.size());
        for (const auto& p : batch) {
            const auto& xp = x[p.example][p.preferred];
            const auto& xo = x[p.example][p.other];
            const Forward fp = forward(s, xp);
            const Forward fo = forward(s, xo);
            loss += ranknet_loss(fp.score, fo.score);
            const double g = ranknet_gradient(fp.score, fo.score) * inv;
            accumulate(s, xp, fp, g, g_w, g_hw, g_hb, g_out);
            accumulate(s, xo, fo, -g, g_w, g_hw, g_hb, g_out);
        }
        const double wd = config_.weight_decay;
        for (std::size_t i = 0; i < s.weights_.size(); ++i) s.weights_[i] -= lr * (g_w[i] + wd * s.weights_[i]);
        for (std::size_t i = 0; i < s.hidden_weights_.size(); ++i)
            s.hidden_weights_[i] -= lr * (g_hw[i] + wd * s.hidden_weights_[i]);
        for (std::size_t i = 0; i < s.hidden_bias_.size(); ++i) s.hidden_bias_[i] -= lr * g_hb[i];
        for (std::size_t i = 0; i < s.output_weights_.size(); ++i)
            s.output_weights_[i] -= lr * (g_out[i] + wd * s.output_weights_[i]);
        return loss * inv;
    }

    const std::vector<RankingExample>& dataset_;
    TrainConfig config_;
};

TrainResult train(const std::vector<RankingExample>& dataset, const TrainConfig& config) {
    return Trainer(dataset, config).run();
}

double pairwise_accuracy(const StudentScorer& scorer, std::span<const RankingExample> examples) {
    double correct = 0.0;
    std::size_t total = 0;
    for (std::size_t e = 0; e < examples.size(); ++e) {
        const auto& ex = examples[e];
        std::vector<double> scores;
        for (const auto& fv : ex.features) scores.push_back(scorer.score(fv));
        for (const auto& p : index_pairs(ex, e)) {
            const double sp = scores[p.preferred];
            const double so = scores[p.other];
            correct += sp > so ? 1.0 : (sp == so ? 0.5 : 0.0);
            ++total;
        }
    }
    return total == 0 ? 0.0 : correct / static_cast<double>(total);
}

void write_report(std::ostream& out, const TrainReport& report) {
    for (std::size_t i = 0; i < report.step_loss.size(); ++i) {
        jsonl::write_record(out, {{"step", i + 1}, {"lr", report.step_learning_rate[i]}, {"loss", report.step_loss[i]}});
    }
    jsonl::json summary{{"summary", true},
                        {"steps", report.steps},
                        {"train_examples", report.train_examples},
                        {"validation_examples", report.validation_examples},
                        {"train_pairs", report.train_pairs}};
    summary["validation_pairwise_accuracy"] =
        report.validation_accuracy ? jsonl::json(*report.validation_accuracy) : jsonl::json(nullptr);
    jsonl::write_record(out, summary);
}

void write_examples(std::ostream& out, const std::vector<RankingExample>& examples) {
    for (const auto& ex : examples) {
        jsonl::write_record(out, {{"question", question_to_json(ex.question)},
                                  {"candidates", refs_to_json(ex.candidates)},
                                  {"teacher_scores", ex.teacher_scores},
                                  {"target_order", refs_to_json(ex.target_order)},
                                  {"features", ex.features}});
    }
}

std::vector<RankingExample> read_examples(std::istream& in) {
    std::vector<RankingExample> examples;
    jsonl::for_each_record(in, [&](const jsonl::json& j, std::size_t) {
        RankingExample ex;
        const auto& q = j.at("question");
        ex.question = SyntheticQuestion{q.at("text").get<std::string>(), jsonl::ref_from_json(q.at("source")),
                                        q.value("generator", "")};
        ex.candidates = refs_from_json(j.at("candidates"));
        ex.teacher_scores = j.at("teacher_scores").get<std::vector<double>>();
        ex.target_order = refs_from_json(j.at("target_order"));
        ex.features = j.value("features", std::vector<FeatureVector>{});
        if (ex.teacher_scores.size() != ex.candidates.size() || ex.target_order.size() != ex.candidates.size())
            throw Error("ranking example arrays differ in length");
        if (ex.target_order.empty() || ex.target_order.front() != ex.question.source_ref)
            throw Error("target order must start with the source chunk");
        examples.push_back(std::move(ex));
    });
    return examples;
}

// ---------------------------------------------------------------------------
// Reranking

std::vector<SearchHit> rerank(std::span<const SearchHit> hits, std::span<const FeatureVector> features,
                              const StudentScorer& scorer) {
    if (hits.size() != features.size()) throw Error("one feature vector per hit required");
    std::vector<std::size_t> order(hits.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return hits[a].rank < hits[b].rank; });
    std::vector<double> scores(hits.size());
    for (std::size_t i = 0; i < hits.size(); ++i) scores[i] = scorer.score(features[i]);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<SearchHit> out;
    out.reserve(hits.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        out.push_back(SearchHit{hits[order[i]].ref, scores[order[i]], static_cast<int>(i + 1)});
    }
    return out;
}

std::vector<SearchHit> rerank(std::string_view query, std::span<const SearchHit> hits, const StudentScorer& scorer,
                              const index::SearchIndex& index) {
    const auto features = candidate_features(query, hits, index);
    return rerank(hits, features, scorer);
}

}  // namespace askdesk::rerank
