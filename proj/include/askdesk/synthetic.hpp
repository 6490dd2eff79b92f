#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "askdesk/corpus.hpp"
#include "askdesk/evalkit.hpp"
#include "askdesk/rerank.hpp"

namespace askdesk::synthetic {

/// Distinct lowercase pseudo-words of at least four letters built from
/// consonant-vowel syllables.
std::vector<std::string> pseudo_words(std::size_t count, std::uint64_t seed);

/// n two-letter words separated by single spaces, no punctuation.
corpus::RawDocument fixed_word_document(std::string origin_id, std::size_t words);

struct DistillationConfig {
    std::size_t documents = 60;
    std::size_t chunks_per_document = 4;
    std::size_t sentences_per_chunk = 3;
    std::size_t words_per_sentence = 12;
    std::size_t title_words = 3;
    std::size_t keywords_per_chunk = 6;
    std::size_t filler_vocabulary = 400;
    // Share of documents whose chunks feed training questions; the rest are held out.
    double train_fraction = 0.75;
    std::uint64_t seed = 7;
};

struct DistillationFixture {
    std::vector<corpus::RawDocument> documents;
    corpus::ChunkingConfig chunking;
    std::vector<corpus::Chunk> chunks;
    std::vector<corpus::Chunk> train_chunks;
    std::vector<corpus::Chunk> heldout_chunks;
};

/// Documents made of chunk-sized blocks; every block carries its own rare
/// keywords among shared filler words, and a chunking config that cuts the
/// bodies exactly at block boundaries.
DistillationFixture make_distillation_fixture(const DistillationConfig& config = {});

// Grade 2 for the source chunk, 1 for other chunks of its document.
evalkit::QrelSet graded_qrels(const std::vector<evalkit::EvalQuery>& queries,
                              const std::vector<rerank::SyntheticQuestion>& questions,
                              const std::vector<corpus::Chunk>& chunks);

// Query ids "q<i>" in question order.
std::vector<evalkit::EvalQuery> as_eval_queries(const std::vector<rerank::SyntheticQuestion>& questions);
// Same, with the source chunk's sentence sharing most question tokens as the
// reference answer.
std::vector<evalkit::EvalQuery> as_eval_queries(const std::vector<rerank::SyntheticQuestion>& questions,
                                                const std::vector<corpus::Chunk>& chunks);

struct LabeledQuery {
    std::string text;
    ChunkRef target;
};

struct ParaphraseFixture {
    std::vector<corpus::Chunk> chunks;
    // Surface forms mapped to a shared canonical token.
    std::unordered_map<std::string, std::string> synonyms;
    // Only second surface forms, so no keyword is shared with the target.
    std::vector<LabeledQuery> paraphrase_queries;
    // Rare keywords copied from the target.
    std::vector<LabeledQuery> keyword_queries;
};

ParaphraseFixture make_paraphrase_fixture(std::size_t chunks = 200, std::uint64_t seed = 11);

}  // namespace askdesk::synthetic
