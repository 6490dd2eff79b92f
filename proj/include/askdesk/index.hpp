#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "askdesk/corpus.hpp"
#include "askdesk/types.hpp"

namespace askdesk::index {

/// Text-to-vector model. Implementations must be deterministic and return
/// finite values of exactly dimension() entries.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::string name() const = 0;
    virtual std::size_t dimension() const = 0;
    virtual std::vector<float> embed(std::string_view text) const = 0;
};

/// Seeded hashed bag-of-words projection. Every token maps to a fixed
/// pseudo-random vector; a text embeds to the sum over its tokens. An optional
/// synonym table maps surface forms onto a shared canonical token so that
/// paraphrases land near each other.
class HashingEmbeddingProvider final : public EmbeddingProvider {
public:
    HashingEmbeddingProvider(std::size_t dimension, std::uint64_t seed,
                             std::unordered_map<std::string, std::string> synonyms = {});

    std::string name() const override { return "hashing"; }
    std::size_t dimension() const override { return dimension_; }
    std::vector<float> embed(std::string_view text) const override;

    std::vector<float> token_vector(std::string_view token) const;

private:
    std::size_t dimension_;
    std::uint64_t seed_;
    std::unordered_map<std::string, std::string> synonyms_;
};

struct VectorRecord {
    ChunkRef chunk_ref;
    std::vector<float> vector;
    std::string title;
};

/// Embeds title and text separately and stores their (normalized) sum.
/// Throws askdesk::Error("degenerate embedding") when the sum has zero norm.
VectorRecord embed_chunk(const corpus::Chunk& chunk, const EmbeddingProvider& provider,
                         bool normalize = true);

/// Flat vector table scored exhaustively by cosine similarity.
class DenseIndex {
public:
    DenseIndex() = default;
    explicit DenseIndex(std::size_t dimension) : dimension_(dimension) {}

    void add(VectorRecord record);

    std::size_t dimension() const noexcept { return dimension_; }
    std::size_t size() const noexcept { return records_.size(); }
    const std::vector<VectorRecord>& records() const noexcept { return records_; }

    std::vector<SearchHit> search(std::span<const float> query, std::size_t k) const;

private:
    std::size_t dimension_ = 0;
    std::vector<VectorRecord> records_;
    std::vector<double> norms_;
};

std::vector<SearchHit> dense_search(std::string_view query, const DenseIndex& index, std::size_t k,
                                    const EmbeddingProvider& provider);

struct Bm25Params {
    double k1 = 1.0;
    double b = 0.5;

    void validate() const;
};

/// Inverted index with per-document lengths for Okapi BM25.
class Bm25Index {
public:
    struct Posting {
        std::uint32_t doc = 0;
        std::uint32_t tf = 0;
    };

    // Indexes the title and text of each chunk as a single field.
    static Bm25Index build(const std::vector<corpus::Chunk>& chunks);

    void add(ChunkRef ref, std::string_view content);

    // New documents stay searchable but N, avgdl and df stop changing.
    void freeze_statistics();

    // Restricts to the given documents (positions in this index), recomputing
    // statistics for the subset.
    Bm25Index subset(std::span<const std::size_t> docs) const;

    std::size_t size() const noexcept { return refs_.size(); }
    const std::vector<ChunkRef>& refs() const noexcept { return refs_; }
    const std::vector<std::uint32_t>& doc_lengths() const noexcept { return lengths_; }
    const std::unordered_map<std::string, std::vector<Posting>>& postings() const noexcept {
        return postings_;
    }

    double average_length() const noexcept;
    std::size_t document_frequency(const std::string& term) const;
    double idf(const std::string& term) const;

    // BM25 of one indexed document against already-tokenized query terms.
    double score(std::span<const std::string> query_terms, std::size_t doc, const Bm25Params& params) const;

    // Scores every document; zero for documents sharing no term.
    std::vector<double> score_all(std::span<const std::string> query_terms, const Bm25Params& params) const;

    static Bm25Index from_parts(std::vector<ChunkRef> refs, std::vector<std::uint32_t> lengths,
                                std::unordered_map<std::string, std::vector<Posting>> postings);

private:
    std::uint32_t term_frequency(const std::string& term, std::size_t doc) const;

    std::vector<ChunkRef> refs_;
    std::vector<std::uint32_t> lengths_;
    std::unordered_map<std::string, std::vector<Posting>> postings_;

    bool frozen_ = false;
    std::size_t stat_docs_ = 0;
    std::uint64_t stat_total_length_ = 0;
    std::unordered_map<std::string, std::size_t> frozen_df_;
};

// Distinct query terms in first-occurrence order.
std::vector<std::string> query_terms(std::string_view query);

/// Throws askdesk::Error("empty query") when the query has no tokens.
std::vector<SearchHit> bm25_search(std::string_view query, const Bm25Index& index, std::size_t k,
                                   const Bm25Params& params = {});

/// k distinct refs drawn uniformly under the seed. Scores decrease with rank.
std::vector<SearchHit> random_search(std::span<const ChunkRef> pool, std::size_t k, std::uint64_t seed);

/// 100 * (variant - baseline) / baseline. Throws when baseline is zero.
double relative_difference(double baseline, double variant);

/// Chunks plus dense and sparse indexes over exactly those chunks.
class SearchIndex {
public:
    SearchIndex() = default;
    SearchIndex(std::vector<corpus::Chunk> chunks, DenseIndex dense, Bm25Index bm25);

    const std::vector<corpus::Chunk>& chunks() const noexcept { return chunks_; }
    const DenseIndex& dense() const noexcept { return dense_; }
    const Bm25Index& bm25() const noexcept { return bm25_; }
    const corpus::Chunk* find(const ChunkRef& ref) const;
    // Position of the chunk in chunks(), which is also its BM25 document id.
    std::optional<std::size_t> position(const ChunkRef& ref) const;
    std::vector<ChunkRef> refs() const;
    std::size_t size() const noexcept { return chunks_.size(); }

private:
    std::vector<corpus::Chunk> chunks_;
    DenseIndex dense_;
    Bm25Index bm25_;
    std::unordered_map<ChunkRef, std::size_t, ChunkRefHash> by_ref_;
};

/// Immutable, versioned set of indexes with one role-filtered view per role.
/// On disk a snapshot is a directory holding manifest.json, chunks.jsonl,
/// vectors.bin and postings.jsonl.
class IndexSnapshot {
public:
    static constexpr int kFormatVersion = 1;

    static IndexSnapshot build(std::vector<corpus::Chunk> chunks, const EmbeddingProvider& provider,
                               std::uint64_t version = 1, bool normalize = true);
    // Uses precomputed vectors; records[i] belongs to chunks[i].
    static IndexSnapshot from_records(std::vector<corpus::Chunk> chunks, std::vector<VectorRecord> records,
                                      std::string provider_name, std::size_t dimension,
                                      std::uint64_t version);

    std::uint64_t version() const noexcept { return version_; }
    const std::string& provider_name() const noexcept { return provider_name_; }
    std::size_t dimension() const noexcept { return dimension_; }

    const SearchIndex& all() const noexcept { return all_; }
    // Only chunks visible to the role; an empty index for unknown roles.
    const SearchIndex& for_role(std::string_view role) const;

    void save(const std::filesystem::path& dir) const;
    static IndexSnapshot load(const std::filesystem::path& dir);

private:
    void build_role_views();

    std::uint64_t version_ = 1;
    std::string provider_name_;
    std::size_t dimension_ = 0;
    SearchIndex all_;
    std::map<std::string, SearchIndex, std::less<>> by_role_;
    SearchIndex empty_;
};

// Versioned layout under root: snapshots/v<N>/ plus a CURRENT pointer file
// replaced by rename, so readers see either the old or the new snapshot.
void publish_snapshot(const std::filesystem::path& root, const IndexSnapshot& snapshot);
IndexSnapshot load_current(const std::filesystem::path& root);
bool has_current(const std::filesystem::path& root);

}  // namespace askdesk::index
