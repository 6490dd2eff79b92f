#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "askdesk/index.hpp"
#include "askdesk/synthetic.hpp"
#include "askdesk/text.hpp"

using namespace askdesk;
using namespace askdesk::index;

namespace {

corpus::Chunk make_chunk(std::string origin, std::uint32_t local, std::string title, std::string text,
                         corpus::RoleSet roles = {"agent"}) {
    corpus::Chunk c;
    c.origin_id = std::move(origin);
    c.local_id = local;
    c.title = std::move(title);
    c.text = std::move(text);
    c.char_count = c.text.size();
    c.allowed_roles = std::move(roles);
    return c;
}

// Returns a fixed vector for the title and its negation for any other text.
class MirrorProvider final : public EmbeddingProvider {
public:
    std::string name() const override { return "mirror"; }
    std::size_t dimension() const override { return 3; }
    std::vector<float> embed(std::string_view text) const override {
        return text == "up" ? std::vector<float>{1, 2, 3} : std::vector<float>{-1, -2, -3};
    }
};

// Sorted (score desc, ref asc) with ranks, computed without the library ranking helper.
std::vector<SearchHit> oracle_rank(std::vector<std::pair<ChunkRef, double>> scored, std::size_t k) {
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<SearchHit> hits;
    for (std::size_t i = 0; i < std::min(k, scored.size()); ++i)
        hits.push_back(SearchHit{scored[i].first, scored[i].second, static_cast<int>(i + 1)});
    return hits;
}

std::vector<corpus::Chunk> random_chunks(std::size_t n, std::uint64_t seed) {
    const auto vocab = synthetic::pseudo_words(400, seed);
    std::mt19937_64 rng(seed);
    std::vector<corpus::Chunk> chunks;
    for (std::size_t i = 0; i < n; ++i) {
        std::string text;
        const std::size_t len = 5 + rng() % 40;
        for (std::size_t w = 0; w < len; ++w) {
            // Skewed draws so term frequencies and document frequencies vary.
            const std::size_t idx = static_cast<std::size_t>(std::pow(static_cast<double>(rng() % 10000) / 10000.0, 2) * 400);
            text += vocab[idx] + " ";
        }
        chunks.push_back(make_chunk("doc-" + std::to_string(i / 4), static_cast<std::uint32_t>(i % 4),
                                    vocab[rng() % vocab.size()], text));
    }
    return chunks;
}

void check_same_hits(const std::vector<SearchHit>& got, const std::vector<SearchHit>& want, double tol) {
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].ref == want[i].ref);
        CHECK(got[i].rank == want[i].rank);
        CHECK(std::abs(got[i].score - want[i].score) <= tol);
    }
}

}  // namespace

TEST_CASE("hashing provider is deterministic and seed dependent") {
    HashingEmbeddingProvider a(64, 1), b(64, 1), c(64, 2);
    CHECK(a.embed("reset the modem") == b.embed("reset the modem"));
    CHECK(a.embed("reset the modem") != c.embed("reset the modem"));
    CHECK(a.embed("").size() == 64);
}

TEST_CASE("embed_chunk sums title and text projections") {
    HashingEmbeddingProvider provider(32, 7);
    const auto chunk = make_chunk("d", 0, "billing", "late fee");
    const auto record = embed_chunk(chunk, provider);

    std::vector<double> expected(32, 0.0);
    for (const auto* token : {"billing", "late", "fee"}) {
        const auto v = provider.token_vector(token);
        for (std::size_t d = 0; d < 32; ++d) expected[d] += v[d];
    }
    double norm = 0.0;
    for (double x : expected) norm += x * x;
    norm = std::sqrt(norm);
    REQUIRE(record.vector.size() == 32);
    for (std::size_t d = 0; d < 32; ++d) CHECK(record.vector[d] == doctest::Approx(expected[d] / norm).epsilon(1e-6));
    CHECK(record.chunk_ref == chunk.ref());
}

TEST_CASE("embed_chunk with identical title and text is the normalized text embedding") {
    HashingEmbeddingProvider provider(32, 3);
    const auto record = embed_chunk(make_chunk("d", 0, "modem lights", "modem lights"), provider);
    const auto single = provider.embed("modem lights");
    double norm = 0.0;
    for (float x : single) norm += static_cast<double>(x) * x;
    norm = std::sqrt(norm);
    double unit = 0.0;
    for (std::size_t d = 0; d < 32; ++d) {
        CHECK(record.vector[d] == doctest::Approx(single[d] / norm).epsilon(1e-6));
        unit += static_cast<double>(record.vector[d]) * record.vector[d];
    }
    CHECK(unit == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("embed_chunk rejects a zero-norm sum") {
    MirrorProvider provider;
    CHECK_THROWS_AS(embed_chunk(make_chunk("d", 0, "up", "down"), provider), Error);
}

TEST_CASE("dense search orders by cosine") {
    DenseIndex index(2);
    const double cosines[] = {0.9, 0.2, 0.5};
    for (std::uint32_t i = 0; i < 3; ++i) {
        const double c = cosines[i];
        index.add(VectorRecord{ChunkRef{"d", i}, {static_cast<float>(c), static_cast<float>(std::sqrt(1 - c * c))}, ""});
    }
    const std::vector<float> query{1.0f, 0.0f};
    const auto hits = index.search(query, 3);
    REQUIRE(hits.size() == 3);
    CHECK(hits[0].ref.local_id == 0);
    CHECK(hits[1].ref.local_id == 2);
    CHECK(hits[2].ref.local_id == 1);
    CHECK(hits[0].score == doctest::Approx(0.9).epsilon(1e-6));

    CHECK(index.search(query, 1).size() == 1);
    CHECK(index.search(query, 1)[0].rank == 1);
    CHECK(index.search(query, 50).size() == 3);
    CHECK_THROWS_AS(index.search(query, 0), Error);
}

TEST_CASE("a chunk's own title and text retrieve it first") {
    HashingEmbeddingProvider provider(128, 5);
    const auto chunks = random_chunks(200, 5);
    DenseIndex index(128);
    for (const auto& c : chunks) index.add(embed_chunk(c, provider));
    for (std::size_t i = 0; i < chunks.size(); i += 17) {
        const auto hits = dense_search(chunks[i].title + " " + chunks[i].text, index, 1, provider);
        CHECK(hits[0].ref == chunks[i].ref());
    }
}

TEST_CASE("dense search equals an exhaustive cosine scan") {
    HashingEmbeddingProvider provider(64, 11);
    const auto chunks = random_chunks(1000, 11);
    DenseIndex index(64);
    for (const auto& c : chunks) index.add(embed_chunk(c, provider));

    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const auto& probe = chunks[rng() % chunks.size()];
        const std::string query = probe.text.substr(0, probe.text.size() / 2);
        const auto q = provider.embed(query);
        double qn = 0.0;
        for (float x : q) qn += static_cast<double>(x) * x;
        qn = std::sqrt(qn);
        std::vector<std::pair<ChunkRef, double>> scored;
        for (const auto& c : chunks) {
            const auto v = embed_chunk(c, provider).vector;
            double dot = 0.0, vn = 0.0;
            for (std::size_t d = 0; d < v.size(); ++d) {
                dot += static_cast<double>(q[d]) * v[d];
                vn += static_cast<double>(v[d]) * v[d];
            }
            scored.emplace_back(c.ref(), dot / (qn * std::sqrt(vn)));
        }
        check_same_hits(dense_search(query, index, 20, provider), oracle_rank(scored, 20), 1e-9);
    }
}

TEST_CASE("bm25 single-document closed form") {
    Bm25Index index;
    index.add(ChunkRef{"d", 0}, "modem");
    const auto hits = bm25_search("modem", index, 5);
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].score == doctest::Approx(std::log(4.0 / 3.0)).epsilon(1e-12));
    CHECK(std::abs(hits[0].score - 0.287682) < 1e-6);
}

TEST_CASE("bm25 term frequency is monotone at equal length") {
    Bm25Index index;
    index.add(ChunkRef{"a", 0}, "router cable port jack");
    index.add(ChunkRef{"b", 0}, "router router router jack");
    index.add(ChunkRef{"c", 0}, "billing invoice fee late");
    const auto hits = bm25_search("router", index, 3);
    CHECK(hits[0].ref.origin_id == "b");
    CHECK(hits[1].ref.origin_id == "a");
    CHECK(hits[2].score == 0.0);
}

TEST_CASE("bm25 absent terms and empty queries") {
    Bm25Index index;
    index.add(ChunkRef{"a", 0}, "router cable");
    index.add(ChunkRef{"b", 0}, "billing invoice");
    for (const auto& hit : bm25_search("zebra", index, 2)) CHECK(hit.score == 0.0);
    CHECK_THROWS_AS(bm25_search("  ?! ", index, 2), Error);
    CHECK_THROWS_AS(bm25_search("router", index, 2, Bm25Params{1.0, 1.5}), Error);
}

TEST_CASE("bm25 search equals a brute-force scorer") {
    const auto chunks = random_chunks(1000, 21);
    const auto index = Bm25Index::build(chunks);

    std::vector<std::vector<std::string>> docs;
    for (const auto& c : chunks) docs.push_back(text::tokenize(c.title + " " + c.text));
    double avgdl = 0.0;
    for (const auto& d : docs) avgdl += static_cast<double>(d.size());
    avgdl /= static_cast<double>(docs.size());
    const double n = static_cast<double>(docs.size());

    std::mt19937_64 rng(8);
    const auto vocab = synthetic::pseudo_words(400, 21);
    for (int trial = 0; trial < 20; ++trial) {
        std::set<std::string> terms;
        for (int t = 0; t < 3; ++t) terms.insert(vocab[rng() % 60]);
        std::string query;
        for (const auto& t : terms) query += t + " ";

        std::vector<std::pair<ChunkRef, double>> scored;
        for (std::size_t i = 0; i < docs.size(); ++i) {
            double s = 0.0;
            for (const auto& t : index::query_terms(query)) {
                double df = 0.0;
                for (const auto& d : docs) df += std::count(d.begin(), d.end(), t) > 0;
                const double tf = static_cast<double>(std::count(docs[i].begin(), docs[i].end(), t));
                if (tf == 0.0) continue;
                const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
                const double dl = static_cast<double>(docs[i].size());
                s += idf * tf * 2.0 / (tf + 1.0 * (1.0 - 0.5 + 0.5 * dl / avgdl));
            }
            scored.emplace_back(chunks[i].ref(), s);
        }
        check_same_hits(bm25_search(query, index, 20), oracle_rank(scored, 20), 1e-9);
    }
}

TEST_CASE("frozen statistics keep existing pairs in order") {
    const auto chunks = random_chunks(100, 4);
    auto index = Bm25Index::build(chunks);
    index.freeze_statistics();
    const auto vocab = synthetic::pseudo_words(400, 4);
    const std::string query = vocab[1] + " " + vocab[5];
    const auto before = bm25_search(query, index, 100);
    index.add(ChunkRef{"new", 0}, vocab[1] + " " + vocab[1] + " " + vocab[5]);
    auto after = bm25_search(query, index, 101);
    after.erase(std::remove_if(after.begin(), after.end(), [](const SearchHit& h) { return h.ref.origin_id == "new"; }),
                after.end());
    REQUIRE(after.size() == before.size());
    for (std::size_t i = 0; i < before.size(); ++i) {
        CHECK(after[i].ref == before[i].ref);
        CHECK(after[i].score == before[i].score);
    }
}

TEST_CASE("random search") {
    std::vector<ChunkRef> pool;
    for (std::uint32_t i = 0; i < 100; ++i) pool.push_back(ChunkRef{"d", i});
    const auto a = random_search(pool, 10, 42);
    const auto b = random_search(pool, 10, 42);
    REQUIRE(a.size() == 10);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].ref == b[i].ref);

    const auto all = random_search(pool, 100, 1);
    std::set<ChunkRef> seen;
    for (const auto& h : all) seen.insert(h.ref);
    CHECK(seen.size() == 100);

    std::map<ChunkRef, int> first;
    for (std::uint64_t trial = 0; trial < 10000; ++trial) ++first[random_search(pool, 1, trial)[0].ref];
    for (const auto& ref : pool) {
        const double freq = first[ref] / 10000.0;
        CHECK(freq >= 0.005);
        CHECK(freq <= 0.015);
    }
}

TEST_CASE("relative difference") {
    CHECK(relative_difference(0.5, 0.45) == doctest::Approx(-10.0));
    CHECK(relative_difference(0.37, 0.37) == 0.0);
    const double m = 0.4213;
    CHECK(relative_difference(m, 1.15 * m) == doctest::Approx(15.0));
    CHECK_THROWS_AS(relative_difference(0.0, 0.2), Error);
}

TEST_CASE("dense beats bm25 on paraphrases, bm25 beats random on keywords") {
    const auto fixture = synthetic::make_paraphrase_fixture();
    HashingEmbeddingProvider provider(128, 2, fixture.synonyms);
    const auto snapshot = IndexSnapshot::build(fixture.chunks, provider);
    const auto& view = snapshot.all();
    const auto refs = view.refs();

    auto recall = [](const std::vector<SearchHit>& hits, const ChunkRef& target) {
        return std::any_of(hits.begin(), hits.end(), [&](const SearchHit& h) { return h.ref == target; }) ? 1.0 : 0.0;
    };
    double dense = 0.0, sparse = 0.0;
    for (const auto& q : fixture.paraphrase_queries) {
        dense += recall(dense_search(q.text, view.dense(), 3, provider), q.target);
        sparse += recall(bm25_search(q.text, view.bm25(), 3), q.target);
    }
    const double nq = static_cast<double>(fixture.paraphrase_queries.size());
    CHECK(dense / nq > sparse / nq);

    double keyword = 0.0, random = 0.0;
    std::uint64_t seed = 0;
    for (const auto& q : fixture.keyword_queries) {
        keyword += recall(bm25_search(q.text, view.bm25(), 3), q.target);
        random += recall(random_search(refs, 3, seed++), q.target);
    }
    const double nk = static_cast<double>(fixture.keyword_queries.size());
    CHECK(keyword / nk >= random / nk + 0.5);
}

TEST_CASE("snapshot role views") {
    HashingEmbeddingProvider provider(32, 1);
    std::vector<corpus::Chunk> chunks{make_chunk("a", 0, "late fee", "billing late fee waiver", {"billing"}),
                                      make_chunk("b", 0, "modem", "modem restart steps", {"tech"}),
                                      make_chunk("c", 0, "refund", "refund for late fee", {"billing", "tech"})};
    const auto snapshot = IndexSnapshot::build(chunks, provider);
    CHECK(snapshot.all().size() == 3);
    const auto& billing = snapshot.for_role("billing");
    CHECK(billing.size() == 2);
    CHECK(billing.find(ChunkRef{"b", 0}) == nullptr);
    for (const auto& hit : bm25_search("late fee modem", billing.bm25(), 5)) CHECK(hit.ref.origin_id != "b");
    for (const auto& hit : dense_search("modem restart", billing.dense(), 5, provider)) CHECK(hit.ref.origin_id != "b");
    CHECK(snapshot.for_role("legal").size() == 0);
}

TEST_CASE("snapshots persist and publish by version") {
    const auto dir = std::filesystem::temp_directory_path() / "askdesk_test_index";
    std::filesystem::remove_all(dir);
    HashingEmbeddingProvider provider(48, 9);
    const auto chunks = random_chunks(60, 9);

    CHECK_FALSE(has_current(dir));
    const auto v1 = IndexSnapshot::build(chunks, provider, 1);
    publish_snapshot(dir, v1);
    REQUIRE(has_current(dir));
    const auto loaded = load_current(dir);
    CHECK(loaded.version() == 1);
    CHECK(loaded.dimension() == 48);
    CHECK(loaded.all().size() == chunks.size());

    const std::string query = chunks[7].text;
    check_same_hits(dense_search(query, loaded.all().dense(), 10, provider),
                    dense_search(query, v1.all().dense(), 10, provider), 0.0);
    check_same_hits(bm25_search(query, loaded.all().bm25(), 10), bm25_search(query, v1.all().bm25(), 10), 0.0);

    auto fewer = chunks;
    fewer.resize(30);
    publish_snapshot(dir, IndexSnapshot::build(fewer, provider, 2));
    const auto v2 = load_current(dir);
    CHECK(v2.version() == 2);
    CHECK(v2.all().size() == 30);
    std::filesystem::remove_all(dir);
}
