#include <doctest.h>

#include <random>
#include <sstream>

#include "askdesk/corpus.hpp"
#include "askdesk/jsonl.hpp"
#include "askdesk/synthetic.hpp"

using namespace askdesk;
using namespace askdesk::corpus;

namespace {

std::vector<std::string> words_of(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

std::string join(const std::vector<std::string>& words, std::size_t begin, std::size_t end) {
    std::string out;
    for (std::size_t i = begin; i < end; ++i) {
        if (i > begin) out += ' ';
        out += words[i];
    }
    return out;
}

ChunkingConfig plain_windows(std::size_t length, std::size_t overlap) {
    ChunkingConfig config;
    config.split_length = length;
    config.split_overlap = overlap;
    config.split_respect_sentence_boundary = false;
    config.max_chars_check = 100000;
    return config;
}

}  // namespace

TEST_CASE("clean_text collapses blank lines") {
    ChunkingConfig config;
    CHECK(clean_text("", config).empty());
    CHECK(clean_text("a\n\n\n\nb", config) == "a\n\nb");
}

TEST_CASE("clean_text normalizes whitespace per line") {
    ChunkingConfig config;
    config.clean_empty_lines = false;
    CHECK(clean_text("  alpha   beta  \n gamma ", config) == "alpha beta\ngamma");
}

TEST_CASE("clean_text removes a header repeated on three pages") {
    ChunkingConfig config;
    const std::string body = "ACME Support Guide\nfirst page text\f"
                             "ACME Support Guide\nsecond page text\f"
                             "ACME Support Guide\nthird page text";
    const auto cleaned = clean_text(body, config);
    CHECK(cleaned.find("ACME Support Guide") == std::string::npos);
    CHECK(cleaned.find("first page text") != std::string::npos);
    CHECK(cleaned.find("third page text") != std::string::npos);

    config.clean_header_footer = false;
    CHECK(clean_text(body, config).find("ACME Support Guide") != std::string::npos);
}

TEST_CASE("clean_text keeps a line repeated on only two pages") {
    ChunkingConfig config;
    const auto cleaned = clean_text("Header\none\fHeader\ntwo", config);
    CHECK(cleaned.find("Header") != std::string::npos);
}

TEST_CASE("650-word document under settings A and B") {
    const auto doc = synthetic::fixed_word_document("d", 650);
    const auto words = words_of(doc.body);
    REQUIRE(words.size() == 650);

    const auto a = split_into_chunks(doc, plain_windows(300, 50));
    REQUIRE(a.size() == 3);
    CHECK(a[0].text == join(words, 0, 300));
    CHECK(a[1].text == join(words, 250, 550));
    CHECK(a[2].text == join(words, 500, 650));

    const auto b = split_into_chunks(doc, plain_windows(100, 25));
    REQUIRE(b.size() == 9);
    for (std::size_t i = 0; i + 1 < b.size(); ++i) CHECK(b[i].text == join(words, 75 * i, 75 * i + 100));
    CHECK(b.back().text == join(words, 600, 650));
}

TEST_CASE("short document is a single chunk") {
    const auto doc = synthetic::fixed_word_document("d", 10);
    const auto chunks = split_into_chunks(doc, ChunkingConfig{});
    REQUIRE(chunks.size() == 1);
    CHECK(chunks[0].text == doc.body);
    CHECK(chunks[0].local_id == 0);
}

TEST_CASE("empty document yields no chunks") {
    RawDocument doc{"d", "t", "", "", {}, {}};
    CHECK(split_into_chunks(doc, ChunkingConfig{}).empty());
}

TEST_CASE("chunks copy document metadata") {
    RawDocument doc{"doc-1", "Reset modem", "Unplug it. Wait. Plug it in.", "https://kb/1", {"agent"}, {}};
    const auto chunks = split_into_chunks(doc, ChunkingConfig{});
    REQUIRE(chunks.size() == 1);
    CHECK(chunks[0].title == "Reset modem");
    CHECK(chunks[0].source_uri == "https://kb/1");
    CHECK(chunks[0].allowed_roles == RoleSet{"agent"});
    CHECK(chunks[0].char_count == chunks[0].text.size());
}

TEST_CASE("sentence boundary retracts past the midpoint only") {
    auto config = plain_windows(10, 2);
    config.split_respect_sentence_boundary = true;
    // Terminator after word 7 (past the midpoint): the first window ends there.
    RawDocument late{"d", "", "w1 w2 w3 w4 w5 w6 w7. w8 w9 w10 w11 w12", "", {}, {}};
    auto chunks = split_into_chunks(late, config);
    REQUIRE(chunks.size() >= 2);
    CHECK(chunks[0].text == "w1 w2 w3 w4 w5 w6 w7.");
    CHECK(chunks[1].text.rfind("w6 w7. w8", 0) == 0);

    // Terminator after word 2 (before the midpoint): the window is kept whole.
    RawDocument early{"d", "", "w1 w2. w3 w4 w5 w6 w7 w8 w9 w10 w11 w12", "", {}, {}};
    chunks = split_into_chunks(early, config);
    CHECK(words_of(chunks[0].text).size() == 10);
}

TEST_CASE("enforce_max_chars") {
    const std::string short_text(500, 'x');
    CHECK(enforce_max_chars(short_text, 1000) == std::vector<std::string>{short_text});
    CHECK(enforce_max_chars("", 1000) == std::vector<std::string>{""});

    std::string long_text = "abcde";
    while (long_text.size() < 2500) long_text += " abcde";
    REQUIRE(long_text.size() == 2501);
    const auto pieces = enforce_max_chars(long_text, 1000);
    REQUIRE(pieces.size() == 3);
    // 166 words fit in 1000 characters, leaving 85 for the last piece.
    CHECK(pieces[0].size() == 995);
    CHECK(pieces[1].size() == 995);
    CHECK(pieces[2].size() == 509);
    std::vector<std::string> rejoined;
    for (const auto& p : pieces) {
        CHECK(p.size() <= 1000);
        for (auto& w : words_of(p)) rejoined.push_back(w);
    }
    CHECK(rejoined == words_of(long_text));
}

TEST_CASE("enforce_max_chars splits an oversized token") {
    const auto pieces = enforce_max_chars(std::string(25, 'z'), 10);
    REQUIRE(pieces.size() == 3);
    CHECK(pieces[0] == std::string(10, 'z'));
    CHECK(pieces[2] == std::string(5, 'z'));
    CHECK_THROWS_AS(enforce_max_chars("abc", 0), Error);
}

TEST_CASE("filter_by_role") {
    std::vector<Chunk> chunks(4);
    chunks[0].origin_id = "a", chunks[0].allowed_roles = {"billing"};
    chunks[1].origin_id = "b", chunks[1].allowed_roles = {"tech"};
    chunks[2].origin_id = "c", chunks[2].allowed_roles = {"billing", "tech"};
    chunks[3].origin_id = "d", chunks[3].allowed_roles = {"tech"};

    const auto billing = filter_by_role(chunks, "billing");
    REQUIRE(billing.size() == 2);
    CHECK(billing[0].origin_id == "a");
    CHECK(billing[1].origin_id == "c");
    CHECK(filter_by_role(chunks, "legal").empty());
    CHECK(filter_by_role(billing, "billing").size() == billing.size());
}

TEST_CASE("config validation") {
    CHECK_NOTHROW(ChunkingConfig::setting_a().validate());
    CHECK(ChunkingConfig::setting_b().split_length == 100);
    CHECK(ChunkingConfig::setting_b().split_overlap == 25);
    CHECK(ChunkingConfig::setting_c().max_chars_check == 3000);
    auto bad = plain_windows(10, 10);
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = plain_windows(10, 2);
    bad.max_chars_check = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("parse_corpus") {
    std::istringstream two(
        R"({"origin_id":"a","title":"A","body":"x","source_uri":"u","allowed_roles":["agent"],"metadata":{"k":"v"}})"
        "\n"
        R"({"origin_id":"b","title":"B","body":"y"})"
        "\n");
    const auto docs = parse_corpus(two);
    REQUIRE(docs.size() == 2);
    CHECK(docs[0].allowed_roles == RoleSet{"agent"});
    CHECK(docs[0].metadata.at("k") == "v");

    std::istringstream empty("");
    CHECK(parse_corpus(empty).empty());

    std::istringstream dup(R"({"origin_id":"a","body":"x"})" "\n" R"({"origin_id":"a","body":"y"})" "\n");
    try {
        parse_corpus(dup);
        FAIL("expected a duplicate error");
    } catch (const jsonl::ParseError& e) {
        CHECK(e.line() == 2);
        CHECK(std::string(e.what()).find("duplicate origin_id") != std::string::npos);
    }

    std::istringstream broken(R"({"origin_id":"a","body":"x"})" "\n{not json\n");
    CHECK_THROWS_AS(parse_corpus(broken), jsonl::ParseError);
}

TEST_CASE("corpus and chunks round-trip through JSONL") {
    RawDocument doc{"doc-1", "T", "one two three. four five.", "https://kb/1", {"agent", "billing"}, {{"k", "v"}}};
    std::stringstream out;
    write_corpus(out, {doc});
    const auto back = parse_corpus(out);
    REQUIRE(back.size() == 1);
    CHECK(back[0].body == doc.body);
    CHECK(back[0].allowed_roles == doc.allowed_roles);

    const auto chunks = chunk_documents({doc}, ChunkingConfig{});
    std::stringstream chunk_out;
    write_chunks(chunk_out, chunks);
    const auto chunks_back = read_chunks(chunk_out);
    REQUIRE(chunks_back.size() == chunks.size());
    CHECK(chunks_back[0].ref() == chunks[0].ref());
    CHECK(chunks_back[0].text == chunks[0].text);
}

TEST_CASE("chunk count formula and overlap property") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n_words = 1 + rng() % 900;
        const std::size_t length = 5 + rng() % 300;
        const std::size_t overlap = rng() % length;
        const std::size_t stride = length - overlap;
        const auto doc = synthetic::fixed_word_document("d", n_words);
        const auto chunks = split_into_chunks(doc, plain_windows(length, overlap));

        const std::size_t expected =
            n_words <= length ? 1 : (n_words - length + stride - 1) / stride + 1;
        REQUIRE(chunks.size() == expected);
        for (std::size_t i = 0; i < chunks.size(); ++i) {
            CHECK(chunks[i].local_id == i);
            if (i + 1 < chunks.size()) {
                const auto cur = words_of(chunks[i].text);
                const auto next = words_of(chunks[i + 1].text);
                REQUIRE(cur.size() == length);
                CHECK(std::equal(cur.end() - static_cast<long>(overlap), cur.end(), next.begin()));
            }
        }
    }
}

TEST_CASE("char cap and determinism hold for random configs") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 100; ++trial) {
        auto config = plain_windows(5 + rng() % 200, 0);
        config.split_overlap = rng() % config.split_length;
        config.split_respect_sentence_boundary = rng() % 2;
        config.max_chars_check = 20 + rng() % 400;
        std::string body;
        const auto vocab = synthetic::pseudo_words(50, trial);
        for (int i = 0; i < 400; ++i) {
            body += vocab[rng() % vocab.size()];
            body += (rng() % 9 == 0) ? ". " : " ";
        }
        RawDocument doc{"d", "t", body, "", {}, {}};
        const auto a = split_into_chunks(doc, config);
        const auto b = split_into_chunks(doc, config);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].text == b[i].text);
            CHECK(a[i].char_count <= config.max_chars_check);
            CHECK(a[i].char_count == a[i].text.size());
            CHECK(a[i].local_id == i);
        }
    }
}
