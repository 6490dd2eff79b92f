#include <doctest.h>

#include <expat.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "askdesk/answer.hpp"
#include "askdesk/synthetic.hpp"

using namespace askdesk;
using namespace askdesk::answer;

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

struct Store {
    std::map<ChunkRef, corpus::Chunk> chunks;

    void add(corpus::Chunk c) { chunks.emplace(c.ref(), std::move(c)); }
    rerank::ChunkLookup lookup() const {
        return [this](const ChunkRef& ref) -> const corpus::Chunk* {
            auto it = chunks.find(ref);
            return it == chunks.end() ? nullptr : &it->second;
        };
    }
};

std::vector<SearchHit> ranked(const std::vector<ChunkRef>& refs) {
    std::vector<SearchHit> hits;
    for (std::size_t i = 0; i < refs.size(); ++i)
        hits.push_back(SearchHit{refs[i], 1.0 / static_cast<double>(i + 1), static_cast<int>(i + 1)});
    return hits;
}

struct ParsedBlock {
    std::string tag;
    std::string title;
    std::string content;
};

// Parses the documents XML with expat and returns the blocks in document order.
std::vector<ParsedBlock> parse_documents(const std::string& xml) {
    struct State {
        std::vector<ParsedBlock> blocks;
        std::string field;
        int depth = 0;
    } state;
    XML_Parser parser = XML_ParserCreate("UTF-8");
    XML_SetUserData(parser, &state);
    XML_SetElementHandler(
        parser,
        [](void* data, const XML_Char* name, const XML_Char**) {
            auto* s = static_cast<State*>(data);
            ++s->depth;
            if (s->depth == 2) s->blocks.push_back(ParsedBlock{name, {}, {}});
            if (s->depth == 3) s->field = name;
        },
        [](void* data, const XML_Char*) {
            auto* s = static_cast<State*>(data);
            if (s->depth == 3) s->field.clear();
            --s->depth;
        });
    XML_SetCharacterDataHandler(parser, [](void* data, const XML_Char* text, int len) {
        auto* s = static_cast<State*>(data);
        if (s->field == "title") s->blocks.back().title.append(text, static_cast<std::size_t>(len));
        if (s->field == "content") s->blocks.back().content.append(text, static_cast<std::size_t>(len));
    });
    const bool ok = XML_Parse(parser, xml.data(), static_cast<int>(xml.size()), 1) == XML_STATUS_OK;
    XML_ParserFree(parser);
    if (!ok) throw std::runtime_error("invalid XML");
    return state.blocks;
}

class DownReader final : public ReaderClient {
public:
    std::string name() const override { return "down"; }
    std::string complete(const PromptBundle&) const override { throw ReaderUnavailable("connection refused"); }
};

class ScriptedReader final : public ReaderClient {
public:
    explicit ScriptedReader(std::string reply) : reply_(std::move(reply)) {}
    std::string name() const override { return "scripted"; }
    std::string complete(const PromptBundle&) const override { return reply_; }

private:
    std::string reply_;
};

}  // namespace

TEST_CASE("prompt blocks are reversed and indexed by rank") {
    Store store;
    store.add(make_chunk("d1", 0, "First", "one"));
    store.add(make_chunk("d2", 0, "Second", "two"));
    store.add(make_chunk("d3", 0, "Third", "three"));
    const auto hits = ranked({{"d1", 0}, {"d2", 0}, {"d3", 0}});
    const auto bundle = assemble_prompt("q?", hits, store.lookup());

    REQUIRE(bundle.document_blocks.size() == 3);
    CHECK(bundle.document_blocks[0].doc_index == 2);
    CHECK(bundle.document_blocks[1].doc_index == 1);
    CHECK(bundle.document_blocks[2].doc_index == 0);
    CHECK(bundle.document_blocks[2].title == "First");
    CHECK(bundle.doc_index_map == std::vector<ChunkRef>{{"d1", 0}, {"d2", 0}, {"d3", 0}});

    const auto blocks = parse_documents(bundle.documents_xml());
    REQUIRE(blocks.size() == 3);
    CHECK(blocks[0].tag == "Document2");
    CHECK(blocks[2].tag == "Document0");
    CHECK(blocks[2].content == "one");

    CHECK(bundle.system_preamble.find(kCitationInstruction) != std::string::npos);
    const auto rendered = bundle.render();
    CHECK(rendered.find("Question: q?") != std::string::npos);
    CHECK(rendered.find("Answer the question above using the search results.") > rendered.find("</documents>"));
}

TEST_CASE("hit order in the input does not matter") {
    Store store;
    store.add(make_chunk("a", 0, "A", "x"));
    store.add(make_chunk("b", 0, "B", "y"));
    auto hits = ranked({{"a", 0}, {"b", 0}});
    std::swap(hits[0], hits[1]);
    const auto bundle = assemble_prompt("q", hits, store.lookup());
    CHECK(bundle.doc_index_map.front() == ChunkRef{"a", 0});
}

TEST_CASE("single block and empty input") {
    Store store;
    store.add(make_chunk("a", 0, "A", "x"));
    const auto bundle = assemble_prompt("q", ranked({{"a", 0}}), store.lookup());
    REQUIRE(bundle.document_blocks.size() == 1);
    CHECK(parse_documents(bundle.documents_xml())[0].tag == "Document0");
    CHECK_THROWS_AS(assemble_prompt("q", {}, store.lookup()), NothingToGround);
    CHECK_THROWS_AS(assemble_prompt("q", ranked({{"missing", 0}}), store.lookup()), Error);
}

TEST_CASE("markup in content is escaped and parses back") {
    Store store;
    const std::string nasty = "if a < b && c > d then \"quote\" 'apos' </content><x>";
    store.add(make_chunk("a", 0, "R&D <team>", nasty));
    store.add(make_chunk("b", 0, "plain", "text"));
    const auto bundle = assemble_prompt("q", ranked({{"a", 0}, {"b", 0}}), store.lookup());
    const auto blocks = parse_documents(bundle.documents_xml());
    REQUIRE(blocks.size() == 2);
    CHECK(blocks[1].title == "R&D <team>");
    CHECK(blocks[1].content == nasty);
    CHECK(xml_escape("<&>\"'") == "&lt;&amp;&gt;&quot;&apos;");
}

TEST_CASE("reading blocks back and reversing recovers retrieval order") {
    Store store;
    std::vector<ChunkRef> refs;
    for (std::uint32_t i = 0; i < 7; ++i) {
        store.add(make_chunk("d", i, "t" + std::to_string(i), "c" + std::to_string(i)));
        refs.push_back(ChunkRef{"d", i});
    }
    std::mt19937 rng(4);
    std::shuffle(refs.begin(), refs.end(), rng);
    const auto bundle = assemble_prompt("q", ranked(refs), store.lookup());
    auto blocks = parse_documents(bundle.documents_xml());
    std::reverse(blocks.begin(), blocks.end());
    REQUIRE(blocks.size() == refs.size());
    for (std::size_t i = 0; i < refs.size(); ++i) {
        CHECK(blocks[i].tag == "Document" + std::to_string(i));
        CHECK(blocks[i].content == store.chunks.at(refs[i]).text);
    }
}

TEST_CASE("parse_citations") {
    auto p = parse_citations("Restart the gateway. [Document0][Document2]");
    CHECK(p.indices == std::vector<std::size_t>{0, 2});
    CHECK(p.stripped_text == "Restart the gateway.");

    const std::string apology = "I'm sorry. I was unable to find the answer in the documents";
    p = parse_citations(apology);
    CHECK(p.indices.empty());
    CHECK(p.stripped_text == apology);

    p = parse_citations("[Document1] then [Document1]");
    CHECK(p.indices == std::vector<std::size_t>{1});
    CHECK(p.stripped_text == "then");

    p = parse_citations("Use port 8 [Document3] , then reboot [Document1].");
    CHECK(p.indices == std::vector<std::size_t>{3, 1});
    CHECK(p.stripped_text == "Use port 8, then reboot.");

    p = parse_citations("broken [Document tag and [Document[Document0]]");
    CHECK(p.stripped_text.find("[Document") == std::string::npos);
}

TEST_CASE("citation rail") {
    PromptBundle bundle;
    bundle.doc_index_map = {{"a", 0}, {"b", 1}, {"c", 2}};

    auto env = apply_citation_rail("Answer [Document0]", bundle);
    CHECK_FALSE(env.no_answer);
    CHECK(env.citations == std::vector<ChunkRef>{{"a", 0}});
    CHECK(env.answer_text == "Answer");
    CHECK(env.raw_reader_output == "Answer [Document0]");

    env = apply_citation_rail("Answer with no source.", bundle);
    CHECK(env.no_answer);
    CHECK(env.answer_text.empty());

    env = apply_citation_rail("Answer [Document7]", bundle);
    CHECK(env.no_answer);
    CHECK(env.citations.empty());

    env = apply_citation_rail("Answer [Document7][Document2]", bundle);
    CHECK_FALSE(env.no_answer);
    CHECK(env.citations == std::vector<ChunkRef>{{"c", 2}});

    env = apply_citation_rail(kApology, bundle);
    CHECK(env.no_answer);
    env = apply_citation_rail("I'm sorry. I was unable to find the answer in the documents", bundle);
    CHECK(env.no_answer);
}

TEST_CASE("citation rail invariants on fuzzed reader output") {
    PromptBundle bundle;
    bundle.doc_index_map = {{"a", 0}, {"b", 1}, {"c", 2}};
    const std::vector<std::string> pieces{"[Document", "]", "0", "1", "2", "7", "42", "[", "Document", " ", "  ",
                                          "word", ".", ",", "\n", "[Document0]", "[Document2]", "[Document9]",
                                          "[document1]", "[Document-1]", "99999999999999999999999", "[[", "]]",
                                          "\xc3\xa9", "?"};
    std::mt19937_64 rng(17);
    std::size_t answered = 0;
    for (int trial = 0; trial < 20000; ++trial) {
        std::string out;
        const std::size_t n = rng() % 14;
        for (std::size_t i = 0; i < n; ++i) out += pieces[rng() % pieces.size()];
        const auto env = apply_citation_rail(out, bundle);
        CHECK(env.no_answer == env.citations.empty());
        CHECK(env.answer_text.find("[Document") == std::string::npos);
        if (env.no_answer) CHECK(env.answer_text.empty());
        for (const auto& c : env.citations)
            CHECK(std::find(bundle.doc_index_map.begin(), bundle.doc_index_map.end(), c) != bundle.doc_index_map.end());
        answered += !env.no_answer;
    }
    CHECK(answered > 0);
}

TEST_CASE("mock reader cites a block from the prompt") {
    Store store;
    store.add(make_chunk("modem", 0, "Reset modem", "Hold the reset button for ten seconds. Lights will blink."));
    store.add(make_chunk("bill", 0, "Late fee", "Late fees are waived once per year."));
    const MockReader reader;
    const auto bundle = assemble_prompt("how do I reset the modem", ranked({{"bill", 0}, {"modem", 0}}), store.lookup());
    const auto out = reader.complete(bundle);
    CHECK(out == "Hold the reset button for ten seconds. [Document1]");
    const auto env = apply_citation_rail(out, bundle);
    CHECK(env.citations == std::vector<ChunkRef>{{"modem", 0}});

    const auto zero = assemble_prompt("zebra giraffe", ranked({{"bill", 0}}), store.lookup());
    CHECK(reader.complete(zero) == kApology);
    // Two of three content tokens covered: answered at 0.5, apology at 0.9.
    const auto partial =
        assemble_prompt("how do I reset the modem thunderstorm", ranked({{"modem", 0}}), store.lookup());
    CHECK(MockReader(0.5).complete(partial) != kApology);
    CHECK(MockReader(0.9).complete(partial) == kApology);
}

TEST_CASE("answer pipeline") {
    std::vector<corpus::Chunk> chunks{
        make_chunk("modem", 0, "Reset modem", "Hold the reset button for ten seconds. Lights will blink."),
        make_chunk("bill", 0, "Late fee", "Late fees are waived once per year.", {"billing"}),
        make_chunk("dns", 0, "DNS errors", "Flush the resolver cache and retry.")};
    index::HashingEmbeddingProvider provider(64, 1);
    const auto snapshot = index::IndexSnapshot::build(chunks, provider);
    const MockReader reader;
    const auto log_path = std::filesystem::temp_directory_path() / "askdesk_answer_trace.jsonl";
    std::filesystem::remove(log_path);
    jsonl::AppendLog trace(log_path);
    const AnswerPipeline pipeline(provider, reader, nullptr, PipelineConfig{}, &trace);

    auto result = pipeline.answer_question("how do I reset the modem", "agent", snapshot, false, "q-1");
    CHECK_FALSE(result.envelope.no_answer);
    CHECK(result.envelope.citations == std::vector<ChunkRef>{{"modem", 0}});
    CHECK(result.trace.hits.size() == 2);
    CHECK(result.trace.latency_ms >= 0.0);

    result = pipeline.answer_question("zebra giraffe", "agent", snapshot, false);
    CHECK(result.envelope.no_answer);

    // The billing chunk is invisible to agents and the legal role sees nothing.
    result = pipeline.answer_question("late fees waived", "legal", snapshot, false);
    CHECK(result.envelope.no_answer);
    CHECK(result.trace.hits.empty());
    for (const auto& hit : pipeline.retrieve("late fees waived", snapshot.for_role("agent"), false))
        CHECK(hit.ref.origin_id != "bill");

    std::ifstream in(log_path);
    std::size_t lines = 0;
    for (std::string line; std::getline(in, line);) {
        const auto j = nlohmann::json::parse(line);
        if (lines == 0) CHECK(j.at("query_id") == "q-1");
        ++lines;
    }
    CHECK(lines == 3);

    const DownReader down;
    const AnswerPipeline broken(provider, down, nullptr);
    CHECK_THROWS_AS(broken.answer_question("reset modem", "agent", snapshot, false), ReaderUnavailable);
    std::filesystem::remove(log_path);
}

TEST_CASE("out-of-range citations from the reader become no-answers") {
    std::vector<corpus::Chunk> chunks{make_chunk("a", 0, "Reset modem", "Hold the reset button.")};
    index::HashingEmbeddingProvider provider(32, 1);
    const auto snapshot = index::IndexSnapshot::build(chunks, provider);
    const ScriptedReader reader("Do it. [Document5]");
    const AnswerPipeline pipeline(provider, reader, nullptr);
    const auto result = pipeline.answer_question("reset modem", "agent", snapshot, false);
    CHECK(result.envelope.no_answer);
    CHECK(result.envelope.raw_reader_output == "Do it. [Document5]");
}

TEST_CASE("reranking lowers the no-answer rate on the distillation fixture") {
    const auto fixture = synthetic::make_distillation_fixture();
    index::HashingEmbeddingProvider provider(64, 3);
    const auto train_index = index::IndexSnapshot::build(fixture.train_chunks, provider);
    std::vector<rerank::SyntheticQuestion> questions;
    for (std::uint64_t s = 1; s <= 4; ++s) {
        auto batch = rerank::generate_questions(fixture.train_chunks, rerank::TemplateQuestionGenerator(2, s));
        questions.insert(questions.end(), batch.begin(), batch.end());
    }
    const auto data = rerank::build_distillation_dataset(questions, train_index.all(), provider,
                                                         rerank::LexicalOverlapTeacher{});
    rerank::TrainConfig config;
    config.seed = 1;
    const auto scorer = rerank::train(data.examples, config).scorer;

    const auto snapshot = index::IndexSnapshot::build(fixture.heldout_chunks, provider);
    const auto eval_questions =
        rerank::generate_questions(fixture.heldout_chunks, rerank::TemplateQuestionGenerator(2, 99));
    const MockReader reader(0.8);
    const AnswerPipeline pipeline(provider, reader, &scorer);
    double off = 0.0, on = 0.0;
    for (const auto& q : eval_questions) {
        off += pipeline.answer_question(q.text, "agent", snapshot, false).envelope.no_answer;
        on += pipeline.answer_question(q.text, "agent", snapshot, true).envelope.no_answer;
    }
    CHECK(on < off);
}
