#include "askdesk/index.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_set>

#include "askdesk/jsonl.hpp"
#include "askdesk/text.hpp"

namespace askdesk::index {
namespace {

constexpr char kVectorMagic[8] = {'A', 'D', 'V', 'E', 'C', '0', '0', '1'};

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t basis = 0xcbf29ce484222325ULL) {
    std::uint64_t h = basis;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

double l2_norm(std::span<const float> v) {
    double sum = 0.0;
    for (float x : v) sum += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(sum);
}

double dot(std::span<const float> a, std::span<const float> b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return sum;
}

}  // namespace

// ---------------------------------------------------------------------------
// Embeddings

HashingEmbeddingProvider::HashingEmbeddingProvider(std::size_t dimension, std::uint64_t seed,
                                                   std::unordered_map<std::string, std::string> synonyms)
    : dimension_(dimension), seed_(seed), synonyms_(std::move(synonyms)) {
    if (dimension_ == 0) throw Error("embedding dimension must be positive");
}

std::vector<float> HashingEmbeddingProvider::token_vector(std::string_view token) const {
    std::string canonical(token);
    if (auto it = synonyms_.find(canonical); it != synonyms_.end()) canonical = it->second;
    const std::uint64_t base = splitmix64(fnv1a(canonical) ^ splitmix64(seed_));
    std::vector<float> v(dimension_);
    for (std::size_t d = 0; d < dimension_; ++d) {
        const std::uint64_t bits = splitmix64(base + (d + 1) * 0x9e3779b97f4a7c15ULL);
        const double unit = static_cast<double>(bits >> 11) * 0x1.0p-53;
        v[d] = static_cast<float>(2.0 * unit - 1.0);
    }
    return v;
}

std::vector<float> HashingEmbeddingProvider::embed(std::string_view input) const {
    std::vector<double> sum(dimension_, 0.0);
    for (const auto& token : text::tokenize(input)) {
        auto v = token_vector(token);
        for (std::size_t d = 0; d < dimension_; ++d) sum[d] += v[d];
    }
    return {sum.begin(), sum.end()};
}

VectorRecord embed_chunk(const corpus::Chunk& chunk, const EmbeddingProvider& provider, bool normalize) {
    const auto title = provider.embed(chunk.title);
    const auto body = provider.embed(chunk.text);
    if (title.size() != provider.dimension() || body.size() != provider.dimension())
        throw Error("embedding provider returned wrong dimension");
    std::vector<double> sum(provider.dimension());
    double norm2 = 0.0;
    for (std::size_t d = 0; d < sum.size(); ++d) {
        sum[d] = static_cast<double>(title[d]) + static_cast<double>(body[d]);
        if (!std::isfinite(sum[d])) throw Error("embedding provider returned non-finite value");
        norm2 += sum[d] * sum[d];
    }
    const double norm = std::sqrt(norm2);
    if (norm <= 1e-12) throw Error("degenerate embedding for " + to_string(chunk.ref()));
    VectorRecord record{chunk.ref(), std::vector<float>(sum.size()), chunk.title};
    const double scale = normalize ? 1.0 / norm : 1.0;
    for (std::size_t d = 0; d < sum.size(); ++d) record.vector[d] = static_cast<float>(sum[d] * scale);
    return record;
}

// ---------------------------------------------------------------------------
// Dense

void DenseIndex::add(VectorRecord record) {
    if (dimension_ == 0) dimension_ = record.vector.size();
    if (record.vector.size() != dimension_) throw Error("vector dimension does not match index");
    norms_.push_back(l2_norm(record.vector));
    records_.push_back(std::move(record));
}

std::vector<SearchHit> DenseIndex::search(std::span<const float> query, std::size_t k) const {
    if (k == 0) throw Error("k must be at least 1");
    if (query.size() != dimension_ && !records_.empty()) throw Error("query dimension does not match index");
    const double qnorm = l2_norm(query);
    if (qnorm <= 1e-12) throw Error("degenerate query embedding");
    std::vector<ScoredRef> scored;
    scored.reserve(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i) {
        const double denom = qnorm * norms_[i];
        const double cosine = denom > 0.0 ? dot(query, records_[i].vector) / denom : 0.0;
        scored.push_back(ScoredRef{records_[i].chunk_ref, cosine});
    }
    return rank_top_k(std::move(scored), k);
}

std::vector<SearchHit> dense_search(std::string_view query, const DenseIndex& index, std::size_t k,
                                    const EmbeddingProvider& provider) {
    const auto q = provider.embed(query);
    return index.search(q, k);
}

// ---------------------------------------------------------------------------
// BM25

void Bm25Params::validate() const {
    if (!(k1 >= 0.0)) throw Error("bm25 k1 must be non-negative");
    if (!(b >= 0.0 && b <= 1.0)) throw Error("bm25 b must lie in [0, 1]");
}

Bm25Index Bm25Index::build(const std::vector<corpus::Chunk>& chunks) {
    Bm25Index index;
    for (const auto& chunk : chunks) index.add(chunk.ref(), chunk.title + "\n" + chunk.text);
    return index;
}

void Bm25Index::add(ChunkRef ref, std::string_view content) {
    const auto doc = static_cast<std::uint32_t>(refs_.size());
    const auto tokens = text::tokenize(content);
    std::unordered_map<std::string, std::uint32_t> counts;
    std::vector<std::string> order;
    for (const auto& t : tokens) {
        if (counts[t]++ == 0) order.push_back(t);
    }
    for (const auto& t : order) postings_[t].push_back(Posting{doc, counts[t]});
    refs_.push_back(std::move(ref));
    lengths_.push_back(static_cast<std::uint32_t>(tokens.size()));
    if (!frozen_) {
        ++stat_docs_;
        stat_total_length_ += tokens.size();
    }
}

void Bm25Index::freeze_statistics() {
    if (frozen_) return;
    frozen_ = true;
    for (const auto& [term, list] : postings_) frozen_df_[term] = list.size();
}

Bm25Index Bm25Index::subset(std::span<const std::size_t> docs) const {
    std::vector<std::uint32_t> remap(refs_.size(), UINT32_MAX);
    std::vector<ChunkRef> refs;
    std::vector<std::uint32_t> lengths;
    for (std::size_t d : docs) {
        remap.at(d) = static_cast<std::uint32_t>(refs.size());
        refs.push_back(refs_[d]);
        lengths.push_back(lengths_[d]);
    }
    std::unordered_map<std::string, std::vector<Posting>> postings;
    for (const auto& [term, list] : postings_) {
        std::vector<Posting> kept;
        for (const auto& p : list) {
            if (remap[p.doc] != UINT32_MAX) kept.push_back(Posting{remap[p.doc], p.tf});
        }
        if (!kept.empty()) {
            std::sort(kept.begin(), kept.end(), [](const Posting& a, const Posting& b) { return a.doc < b.doc; });
            postings.emplace(term, std::move(kept));
        }
    }
    return from_parts(std::move(refs), std::move(lengths), std::move(postings));
}

Bm25Index Bm25Index::from_parts(std::vector<ChunkRef> refs, std::vector<std::uint32_t> lengths,
                                std::unordered_map<std::string, std::vector<Posting>> postings) {
    if (refs.size() != lengths.size()) throw Error("bm25 refs and lengths differ in size");
    Bm25Index index;
    index.refs_ = std::move(refs);
    index.lengths_ = std::move(lengths);
    index.postings_ = std::move(postings);
    index.stat_docs_ = index.refs_.size();
    index.stat_total_length_ = std::accumulate(index.lengths_.begin(), index.lengths_.end(), std::uint64_t{0});
    return index;
}

double Bm25Index::average_length() const noexcept {
    return stat_docs_ == 0 ? 0.0 : static_cast<double>(stat_total_length_) / static_cast<double>(stat_docs_);
}

std::size_t Bm25Index::document_frequency(const std::string& term) const {
    if (frozen_) {
        auto it = frozen_df_.find(term);
        return it == frozen_df_.end() ? 0 : it->second;
    }
    auto it = postings_.find(term);
    return it == postings_.end() ? 0 : it->second.size();
}

double Bm25Index::idf(const std::string& term) const {
    const double n = static_cast<double>(stat_docs_);
    const double df = static_cast<double>(document_frequency(term));
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

std::uint32_t Bm25Index::term_frequency(const std::string& term, std::size_t doc) const {
    auto it = postings_.find(term);
    if (it == postings_.end()) return 0;
    const auto& list = it->second;
    auto pos = std::lower_bound(list.begin(), list.end(), doc,
                                [](const Posting& p, std::size_t d) { return p.doc < d; });
    return (pos != list.end() && pos->doc == doc) ? pos->tf : 0;
}

double Bm25Index::score(std::span<const std::string> terms, std::size_t doc, const Bm25Params& params) const {
    const double avgdl = average_length();
    const double length_ratio = avgdl > 0.0 ? static_cast<double>(lengths_.at(doc)) / avgdl : 1.0;
    const double norm = params.k1 * (1.0 - params.b + params.b * length_ratio);
    double total = 0.0;
    for (const auto& term : terms) {
        const double tf = term_frequency(term, doc);
        if (tf == 0.0) continue;
        total += idf(term) * tf * (params.k1 + 1.0) / (tf + norm);
    }
    return total;
}

std::vector<double> Bm25Index::score_all(std::span<const std::string> terms, const Bm25Params& params) const {
    std::vector<double> scores(refs_.size(), 0.0);
    const double avgdl = average_length();
    for (const auto& term : terms) {
        auto it = postings_.find(term);
        if (it == postings_.end()) continue;
        const double weight = idf(term);
        for (const auto& p : it->second) {
            const double length_ratio = avgdl > 0.0 ? static_cast<double>(lengths_[p.doc]) / avgdl : 1.0;
            const double norm = params.k1 * (1.0 - params.b + params.b * length_ratio);
            const double tf = p.tf;
            scores[p.doc] += weight * tf * (params.k1 + 1.0) / (tf + norm);
        }
    }
    return scores;
}

std::vector<std::string> query_terms(std::string_view query) {
    std::vector<std::string> terms;
    std::unordered_set<std::string> seen;
    for (auto& t : text::tokenize(query)) {
        if (seen.insert(t).second) terms.push_back(std::move(t));
    }
    return terms;
}

std::vector<SearchHit> bm25_search(std::string_view query, const Bm25Index& index, std::size_t k,
                                   const Bm25Params& params) {
    params.validate();
    if (k == 0) throw Error("k must be at least 1");
    const auto terms = query_terms(query);
    if (terms.empty()) throw Error("empty query");
    const auto scores = index.score_all(terms, params);
    std::vector<ScoredRef> scored;
    scored.reserve(scores.size());
    for (std::size_t d = 0; d < scores.size(); ++d) scored.push_back(ScoredRef{index.refs()[d], scores[d]});
    return rank_top_k(std::move(scored), k);
}

// ---------------------------------------------------------------------------
// Random baseline and reporting

std::vector<SearchHit> random_search(std::span<const ChunkRef> pool, std::size_t k, std::uint64_t seed) {
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    const std::size_t n = std::min(k, pool.size());
    for (std::size_t i = 0; i < n; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
        std::swap(order[i], order[pick(rng)]);
    }
    std::vector<SearchHit> hits;
    hits.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        hits.push_back(SearchHit{pool[order[i]], static_cast<double>(n - i), static_cast<int>(i + 1)});
    }
    return hits;
}

double relative_difference(double baseline, double variant) {
    if (baseline == 0.0) throw Error("relative difference undefined for a zero baseline");
    return 100.0 * (variant - baseline) / baseline;
}

// ---------------------------------------------------------------------------
// SearchIndex / IndexSnapshot

SearchIndex::SearchIndex(std::vector<corpus::Chunk> chunks, DenseIndex dense, Bm25Index bm25)
    : chunks_(std::move(chunks)), dense_(std::move(dense)), bm25_(std::move(bm25)) {
    for (std::size_t i = 0; i < chunks_.size(); ++i) {
        if (!by_ref_.emplace(chunks_[i].ref(), i).second)
            throw Error("duplicate chunk " + to_string(chunks_[i].ref()));
    }
}

const corpus::Chunk* SearchIndex::find(const ChunkRef& ref) const {
    auto it = by_ref_.find(ref);
    return it == by_ref_.end() ? nullptr : &chunks_[it->second];
}

std::optional<std::size_t> SearchIndex::position(const ChunkRef& ref) const {
    auto it = by_ref_.find(ref);
    if (it == by_ref_.end()) return std::nullopt;
    return it->second;
}

std::vector<ChunkRef> SearchIndex::refs() const {
    std::vector<ChunkRef> out;
    out.reserve(chunks_.size());
    for (const auto& c : chunks_) out.push_back(c.ref());
    return out;
}

IndexSnapshot IndexSnapshot::build(std::vector<corpus::Chunk> chunks, const EmbeddingProvider& provider,
                                   std::uint64_t version, bool normalize) {
    std::vector<VectorRecord> records;
    records.reserve(chunks.size());
    for (const auto& chunk : chunks) records.push_back(embed_chunk(chunk, provider, normalize));
    return from_records(std::move(chunks), std::move(records), provider.name(), provider.dimension(), version);
}

IndexSnapshot IndexSnapshot::from_records(std::vector<corpus::Chunk> chunks, std::vector<VectorRecord> records,
                                          std::string provider_name, std::size_t dimension,
                                          std::uint64_t version) {
    if (chunks.size() != records.size()) throw Error("chunk and vector counts differ");
    DenseIndex dense(dimension);
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].chunk_ref != chunks[i].ref()) throw Error("vector record out of order");
        dense.add(std::move(records[i]));
    }
    auto bm25 = Bm25Index::build(chunks);
    IndexSnapshot snapshot;
    snapshot.version_ = version;
    snapshot.provider_name_ = std::move(provider_name);
    snapshot.dimension_ = dimension;
    snapshot.all_ = SearchIndex(std::move(chunks), std::move(dense), std::move(bm25));
    snapshot.empty_ = SearchIndex({}, DenseIndex(dimension), Bm25Index{});
    snapshot.build_role_views();
    return snapshot;
}

void IndexSnapshot::build_role_views() {
    std::map<std::string, std::vector<std::size_t>> members;
    const auto& chunks = all_.chunks();
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        for (const auto& role : chunks[i].allowed_roles) members[role].push_back(i);
    }
    by_role_.clear();
    for (const auto& [role, docs] : members) {
        std::vector<corpus::Chunk> visible;
        DenseIndex dense(dimension_);
        for (std::size_t i : docs) {
            visible.push_back(chunks[i]);
            dense.add(all_.dense().records()[i]);
        }
        by_role_.emplace(role, SearchIndex(std::move(visible), std::move(dense), all_.bm25().subset(docs)));
    }
}

const SearchIndex& IndexSnapshot::for_role(std::string_view role) const {
    auto it = by_role_.find(role);
    return it == by_role_.end() ? empty_ : it->second;
}

void IndexSnapshot::save(const std::filesystem::path& dir) const {
    static_assert(std::endian::native == std::endian::little, "vector table is little-endian");
    std::filesystem::create_directories(dir);
    const auto& chunks = all_.chunks();
    {
        std::ofstream out(dir / "manifest.json");
        out << jsonl::json{{"format", "askdesk-index"},
                           {"format_version", kFormatVersion},
                           {"snapshot_version", version_},
                           {"provider", provider_name_},
                           {"dimension", dimension_},
                           {"chunks", chunks.size()},
                           {"bm25_field", "title+text"}}
                   .dump(2)
            << '\n';
    }
    {
        std::ofstream out(dir / "chunks.jsonl");
        for (const auto& c : chunks) jsonl::write_record(out, corpus::chunk_to_json(c));
    }
    {
        std::ofstream out(dir / "vectors.bin", std::ios::binary);
        out.write(kVectorMagic, sizeof(kVectorMagic));
        const std::uint64_t count = chunks.size();
        const std::uint64_t dim = dimension_;
        out.write(reinterpret_cast<const char*>(&count), sizeof(count));
        out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
        for (const auto& record : all_.dense().records()) {
            out.write(reinterpret_cast<const char*>(record.vector.data()),
                      static_cast<std::streamsize>(record.vector.size() * sizeof(float)));
        }
        if (!out) throw Error("failed writing vectors.bin");
    }
    {
        std::ofstream out(dir / "postings.jsonl");
        const auto& bm25 = all_.bm25();
        jsonl::write_record(out, {{"doc_lengths", bm25.doc_lengths()}});
        std::vector<std::string> terms;
        for (const auto& [term, list] : bm25.postings()) terms.push_back(term);
        std::sort(terms.begin(), terms.end());
        for (const auto& term : terms) {
            auto list = jsonl::json::array();
            for (const auto& p : bm25.postings().at(term)) list.push_back({p.doc, p.tf});
            jsonl::write_record(out, {{"term", term}, {"postings", list}});
        }
    }
}

IndexSnapshot IndexSnapshot::load(const std::filesystem::path& dir) {
    std::ifstream manifest_in(dir / "manifest.json");
    if (!manifest_in) throw Error("missing manifest in " + dir.string());
    const auto manifest = jsonl::json::parse(manifest_in);
    if (manifest.value("format", "") != "askdesk-index") throw Error("not an index snapshot: " + dir.string());
    if (manifest.at("format_version").get<int>() != kFormatVersion)
        throw Error("unsupported index format version");
    const auto dimension = manifest.at("dimension").get<std::size_t>();

    std::vector<corpus::Chunk> chunks;
    jsonl::for_each_record(dir / "chunks.jsonl",
                           [&](const jsonl::json& j, std::size_t) { chunks.push_back(corpus::chunk_from_json(j)); });

    std::ifstream vin(dir / "vectors.bin", std::ios::binary);
    char magic[sizeof(kVectorMagic)];
    std::uint64_t count = 0;
    std::uint64_t dim = 0;
    vin.read(magic, sizeof(magic));
    vin.read(reinterpret_cast<char*>(&count), sizeof(count));
    vin.read(reinterpret_cast<char*>(&dim), sizeof(dim));
    if (!vin || !std::equal(std::begin(magic), std::end(magic), std::begin(kVectorMagic)) ||
        count != chunks.size() || dim != dimension)
        throw Error("corrupt vector table in " + dir.string());
    std::vector<VectorRecord> records;
    records.reserve(chunks.size());
    for (const auto& chunk : chunks) {
        VectorRecord record{chunk.ref(), std::vector<float>(dimension), chunk.title};
        vin.read(reinterpret_cast<char*>(record.vector.data()),
                 static_cast<std::streamsize>(dimension * sizeof(float)));
        records.push_back(std::move(record));
    }
    if (!vin) throw Error("truncated vector table in " + dir.string());

    std::vector<std::uint32_t> lengths;
    std::unordered_map<std::string, std::vector<Bm25Index::Posting>> postings;
    jsonl::for_each_record(dir / "postings.jsonl", [&](const jsonl::json& j, std::size_t) {
        if (j.contains("doc_lengths")) {
            lengths = j.at("doc_lengths").get<std::vector<std::uint32_t>>();
            return;
        }
        auto& list = postings[j.at("term").get<std::string>()];
        for (const auto& p : j.at("postings")) list.push_back({p.at(0).get<std::uint32_t>(), p.at(1).get<std::uint32_t>()});
    });
    std::vector<ChunkRef> refs;
    for (const auto& c : chunks) refs.push_back(c.ref());

    IndexSnapshot snapshot;
    snapshot.version_ = manifest.at("snapshot_version").get<std::uint64_t>();
    snapshot.provider_name_ = manifest.at("provider").get<std::string>();
    snapshot.dimension_ = dimension;
    DenseIndex dense(dimension);
    for (auto& r : records) dense.add(std::move(r));
    snapshot.all_ = SearchIndex(std::move(chunks), std::move(dense),
                                Bm25Index::from_parts(std::move(refs), std::move(lengths), std::move(postings)));
    snapshot.empty_ = SearchIndex({}, DenseIndex(dimension), Bm25Index{});
    snapshot.build_role_views();
    return snapshot;
}

void publish_snapshot(const std::filesystem::path& root, const IndexSnapshot& snapshot) {
    namespace fs = std::filesystem;
    const auto name = "v" + std::to_string(snapshot.version());
    const auto target = root / "snapshots" / name;
    const auto staging = root / "snapshots" / (name + ".tmp");
    fs::remove_all(staging);
    snapshot.save(staging);
    fs::remove_all(target);
    fs::rename(staging, target);
    const auto pointer_tmp = root / "CURRENT.tmp";
    {
        std::ofstream out(pointer_tmp);
        out << name << '\n';
    }
    fs::rename(pointer_tmp, root / "CURRENT");
}

bool has_current(const std::filesystem::path& root) {
    return std::filesystem::exists(root / "CURRENT");
}

IndexSnapshot load_current(const std::filesystem::path& root) {
    std::ifstream in(root / "CURRENT");
    std::string name;
    if (!(in >> name)) throw Error("no CURRENT snapshot under " + root.string());
    return IndexSnapshot::load(root / "snapshots" / name);
}

}  // namespace askdesk::index
