#include "askdesk/synthetic.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <unordered_set>

#include "askdesk/text.hpp"

namespace askdesk::synthetic {
namespace {

constexpr std::string_view kConsonants = "bdfgklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

template <typename T>
const T& pick(const std::vector<T>& pool, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> d(0, pool.size() - 1);
    return pool[d(rng)];
}

// Draws k distinct items from pool.
std::vector<std::string> sample(const std::vector<std::string>& pool, std::size_t k, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> d(i, idx.size() - 1);
        std::swap(idx[i], idx[d(rng)]);
    }
    std::vector<std::string> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back(pool[idx[i]]);
    return out;
}

}  // namespace

std::vector<std::string> pseudo_words(std::size_t count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> syllables(2, 4);
    std::uniform_int_distribution<std::size_t> consonant(0, kConsonants.size() - 1);
    std::uniform_int_distribution<std::size_t> vowel(0, kVowels.size() - 1);
    std::unordered_set<std::string> seen;
    std::vector<std::string> out;
    out.reserve(count);
    while (out.size() < count) {
        std::string w;
        const std::size_t n = syllables(rng);
        for (std::size_t i = 0; i < n; ++i) {
            w.push_back(kConsonants[consonant(rng)]);
            w.push_back(kVowels[vowel(rng)]);
        }
        if (text::is_stopword(w) || !seen.insert(w).second) continue;
        out.push_back(std::move(w));
    }
    return out;
}

corpus::RawDocument fixed_word_document(std::string origin_id, std::size_t words) {
    corpus::RawDocument doc;
    doc.origin_id = std::move(origin_id);
    doc.title = "Fixed length fixture";
    for (std::size_t i = 0; i < words; ++i) {
        if (i > 0) doc.body.push_back(' ');
        doc.body.push_back(kConsonants[i % kConsonants.size()]);
        doc.body.push_back(kVowels[(i / kConsonants.size()) % kVowels.size()]);
    }
    return doc;
}

DistillationFixture make_distillation_fixture(const DistillationConfig& config) {
    if (config.documents == 0 || config.chunks_per_document == 0) throw Error("empty fixture requested");
    const std::size_t block_words = config.sentences_per_chunk * config.words_per_sentence;
    if (config.keywords_per_chunk > block_words) throw Error("more keywords than words per chunk");

    const std::size_t title_pool_size = std::max<std::size_t>(config.title_words * 2, config.documents * 2);
    const std::size_t keyword_count = config.documents * config.chunks_per_document * config.keywords_per_chunk;
    auto words = pseudo_words(config.filler_vocabulary + title_pool_size + keyword_count, config.seed);
    const std::vector<std::string> filler(words.begin(), words.begin() + static_cast<std::ptrdiff_t>(config.filler_vocabulary));
    const std::vector<std::string> title_pool(words.begin() + static_cast<std::ptrdiff_t>(config.filler_vocabulary),
                                              words.begin() + static_cast<std::ptrdiff_t>(config.filler_vocabulary + title_pool_size));
    std::size_t next_keyword = config.filler_vocabulary + title_pool_size;

    std::mt19937_64 rng(config.seed ^ 0x5eedULL);
    DistillationFixture fixture;
    fixture.chunking.clean_header_footer = false;
    fixture.chunking.split_length = block_words;
    fixture.chunking.split_overlap = 0;
    fixture.chunking.split_respect_sentence_boundary = false;
    fixture.chunking.max_chars_check = 100000;

    for (std::size_t d = 0; d < config.documents; ++d) {
        corpus::RawDocument doc;
        doc.origin_id = "doc-" + std::to_string(d);
        doc.source_uri = "https://kb.example.com/articles/" + std::to_string(d);
        doc.allowed_roles = {"agent"};
        std::string title;
        for (const auto& w : sample(title_pool, config.title_words, rng)) title += (title.empty() ? "" : " ") + w;
        doc.title = title;
        for (std::size_t c = 0; c < config.chunks_per_document; ++c) {
            std::vector<std::string> block(block_words);
            for (auto& w : block) w = pick(filler, rng);
            std::vector<std::size_t> slots(block_words);
            for (std::size_t i = 0; i < block_words; ++i) slots[i] = i;
            std::shuffle(slots.begin(), slots.end(), rng);
            for (std::size_t k = 0; k < config.keywords_per_chunk; ++k) block[slots[k]] = words[next_keyword++];
            for (std::size_t i = 0; i < block_words; ++i) {
                if (!doc.body.empty()) doc.body.push_back(' ');
                doc.body += block[i];
                if ((i + 1) % config.words_per_sentence == 0) doc.body.push_back('.');
            }
        }
        fixture.documents.push_back(std::move(doc));
    }
    fixture.chunks = corpus::chunk_documents(fixture.documents, fixture.chunking);
    const auto train_docs = static_cast<std::size_t>(config.train_fraction * static_cast<double>(config.documents));
    for (const auto& chunk : fixture.chunks) {
        const auto doc_number = static_cast<std::size_t>(std::stoul(chunk.origin_id.substr(4)));
        (doc_number < train_docs ? fixture.train_chunks : fixture.heldout_chunks).push_back(chunk);
    }
    return fixture;
}

std::vector<evalkit::EvalQuery> as_eval_queries(const std::vector<rerank::SyntheticQuestion>& questions) {
    std::vector<evalkit::EvalQuery> out;
    out.reserve(questions.size());
    for (std::size_t i = 0; i < questions.size(); ++i) {
        out.push_back(evalkit::EvalQuery{"q" + std::to_string(i), questions[i].text, {}});
    }
    return out;
}

std::vector<evalkit::EvalQuery> as_eval_queries(const std::vector<rerank::SyntheticQuestion>& questions,
                                                const std::vector<corpus::Chunk>& chunks) {
    std::map<ChunkRef, const corpus::Chunk*> by_ref;
    for (const auto& c : chunks) by_ref[c.ref()] = &c;
    auto out = as_eval_queries(questions);
    for (std::size_t i = 0; i < questions.size(); ++i) {
        const auto it = by_ref.find(questions[i].source_ref);
        if (it == by_ref.end()) throw Error("question source not among chunks: " + questions[i].source_ref.origin_id);
        const auto wanted = text::token_set(questions[i].text);
        std::size_t best_overlap = 0;
        std::string_view rest = it->second->text;
        while (!rest.empty()) {
            const auto end = rest.find('.');
            const auto sentence = text::trim(rest.substr(0, end));
            rest = end == std::string_view::npos ? std::string_view{} : rest.substr(end + 1);
            std::size_t overlap = 0;
            for (const auto& t : text::content_tokens(sentence)) overlap += wanted.contains(t);
            if (overlap > best_overlap) {
                best_overlap = overlap;
                out[i].reference_answer = std::string(sentence);
            }
        }
    }
    return out;
}

evalkit::QrelSet graded_qrels(const std::vector<evalkit::EvalQuery>& queries,
                              const std::vector<rerank::SyntheticQuestion>& questions,
                              const std::vector<corpus::Chunk>& chunks) {
    if (queries.size() != questions.size()) throw Error("queries and questions differ in length");
    evalkit::QrelSet out;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        std::map<ChunkRef, int> grades;
        for (const auto& chunk : chunks) {
            if (chunk.origin_id == questions[i].source_ref.origin_id) grades[chunk.ref()] = 1;
        }
        grades[questions[i].source_ref] = 2;
        out.emplace(queries[i].query_id, evalkit::Qrel::graded(queries[i].query_id, std::move(grades)));
    }
    return out;
}

ParaphraseFixture make_paraphrase_fixture(std::size_t chunks, std::uint64_t seed) {
    constexpr std::size_t kConcepts = 600;
    constexpr std::size_t kPerChunk = 8;
    constexpr std::size_t kFiller = 200;
    constexpr std::size_t kQueryConcepts = 3;

    auto words = pseudo_words(2 * kConcepts + kFiller, seed);
    std::vector<std::string> form_a(words.begin(), words.begin() + kConcepts);
    std::vector<std::string> form_b(words.begin() + kConcepts, words.begin() + 2 * kConcepts);
    std::vector<std::string> filler(words.begin() + 2 * kConcepts, words.end());

    ParaphraseFixture fixture;
    for (std::size_t c = 0; c < kConcepts; ++c) {
        const std::string canonical = "concept" + std::to_string(c);
        fixture.synonyms[form_a[c]] = canonical;
        fixture.synonyms[form_b[c]] = canonical;
    }

    std::mt19937_64 rng(seed ^ 0xfaceULL);
    std::vector<std::size_t> ids(kConcepts);
    for (std::size_t i = 0; i < kConcepts; ++i) ids[i] = i;
    for (std::size_t n = 0; n < chunks; ++n) {
        std::shuffle(ids.begin(), ids.end(), rng);
        const std::vector<std::size_t> concepts(ids.begin(), ids.begin() + kPerChunk);

        corpus::Chunk chunk;
        chunk.origin_id = "para-" + std::to_string(n);
        chunk.title = form_a[concepts[0]] + " " + form_a[concepts[1]];
        for (std::size_t i = 2; i < kPerChunk; ++i) {
            chunk.text += form_a[concepts[i]] + " " + pick(filler, rng) + " ";
        }
        chunk.text += pick(filler, rng) + ".";
        chunk.char_count = chunk.text.size();
        chunk.allowed_roles = {"agent"};

        std::string paraphrase = "how do I";
        std::string keywords = "how do I";
        for (std::size_t i = 0; i < kQueryConcepts; ++i) {
            const std::size_t id = concepts[2 + i];
            paraphrase += " " + form_b[id];
            keywords += " " + form_a[id];
        }
        fixture.paraphrase_queries.push_back(LabeledQuery{paraphrase + "?", chunk.ref()});
        fixture.keyword_queries.push_back(LabeledQuery{keywords + "?", chunk.ref()});
        fixture.chunks.push_back(std::move(chunk));
    }
    return fixture;
}

}  // namespace askdesk::synthetic
