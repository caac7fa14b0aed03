#include <doctest.h>

#include <random>
#include <sstream>

#include "apprag/corpus.hpp"
#include "apprag/errors.hpp"

using namespace apprag;

namespace {

KnowledgeItem item_of(std::string id, std::string text) {
    KnowledgeItem item;
    item.id = std::move(id);
    item.text = std::move(text);
    return item;
}

std::string words(int n, const std::string& word = "tok") {
    std::string out;
    for (int i = 0; i < n; ++i) {
        if (i > 0) out += ' ';
        out += word + std::to_string(i);
    }
    return out;
}

}  // namespace

TEST_CASE("ingest maps well-formed records and defaults kind to unclassified") {
    std::istringstream in(R"({"id": "a", "text": "alpha"}
{"id": "b", "text": "beta", "kind": "procedural"}
{"id": "c", "text": "gamma", "category": "math"}
)");
    const auto corpus = ingest_knowledge(in, "test");
    REQUIRE(corpus.size() == 3);
    CHECK(corpus.at("a").kind == Kind::unclassified);
    CHECK(corpus.at("b").kind == Kind::procedural);
    CHECK(corpus.at("c").category == "math");
    CHECK(corpus.at("a").source == "test:1");
}

TEST_CASE("ingest of an empty stream yields an empty corpus") {
    std::istringstream in("");
    CHECK(ingest_knowledge(in, "test").size() == 0);
}

TEST_CASE("ingest rejects duplicate ids naming both sources") {
    std::istringstream in(R"({"id": "a", "text": "x"}
{"id": "b", "text": "y"}
{"id": "a", "text": "z"}
)");
    try {
        ingest_knowledge(in, "test");
        FAIL("expected ParseError");
    } catch (const ParseError& ex) {
        const std::string what = ex.what();
        CHECK(what.find("'a'") != std::string::npos);
        CHECK(what.find("test:3") != std::string::npos);
        CHECK(what.find("test:1") != std::string::npos);
    }
}

TEST_CASE("ingest names the line of a malformed record") {
    std::istringstream in("{\"id\": \"a\", \"text\": \"x\"}\nnot json\n");
    try {
        ingest_knowledge(in, "test");
        FAIL("expected ParseError");
    } catch (const ParseError& ex) {
        CHECK(std::string(ex.what()).find("test:2") != std::string::npos);
    }
}

TEST_CASE("ingest rejects records missing required fields") {
    std::istringstream in("{\"id\": \"a\"}\n");
    CHECK_THROWS_AS(ingest_knowledge(in, "test"), ParseError);
}

TEST_CASE("application ingest enforces the origin/source_problem_id invariant") {
    std::istringstream matched_without(R"({"id": "a", "text": "x", "origin": "matched"}
)");
    CHECK_THROWS_AS(ingest_applications(matched_without, "test"), ParseError);

    std::istringstream generated_with(
        R"({"id": "a", "text": "x", "origin": "generated", "source_problem_id": "p"}
)");
    CHECK_THROWS_AS(ingest_applications(generated_with, "test"), ParseError);

    std::istringstream ok(R"({"id": "a", "text": "x", "origin": "matched", "source_problem_id": "p"}
{"id": "b", "text": "y", "origin": "generated"}
)");
    const auto corpus = ingest_applications(ok, "test");
    CHECK(corpus.at("a").source_problem_id == "p");
    CHECK(!corpus.at("b").source_problem_id.has_value());
}

TEST_CASE("a short item stays a single chunk identical to its text") {
    const auto item = item_of("k", words(10));
    const auto chunks = chunk_item(item, ChunkOptions{800});
    REQUIRE(chunks.size() == 1);
    CHECK(chunks[0].text == item.text);
    CHECK(chunks[0].token_count == 10);
    CHECK(chunks[0].chunk_id() == "k#0");
}

TEST_CASE("whitespace-only text chunks to nothing") {
    const auto chunks = chunk_item(item_of("k", "   \n\t  "), ChunkOptions{800});
    CHECK(chunks.empty());
}

TEST_CASE("1700 plain tokens split 800/800/100 under the whitespace tokenizer") {
    // Derived with the reference tokenizer: 1700 single-weight tokens and no
    // sentence punctuation force hard cuts at the budget.
    const auto item = item_of("k", words(1700));
    REQUIRE(default_tokenizer().count(item.text) == 1700);
    const auto chunks = chunk_item(item, ChunkOptions{800});
    REQUIRE(chunks.size() == 3);
    CHECK(chunks[0].token_count == 800);
    CHECK(chunks[1].token_count == 800);
    CHECK(chunks[2].token_count == 100);
    std::string joined;
    for (const auto& chunk : chunks) joined += chunk.text;
    CHECK(joined == item.text);
}

TEST_CASE("chunking prefers a sentence boundary in the window tail") {
    // 30 tokens, budget 20; token 18 (1-based) ends a sentence inside the
    // last 15% of the window, so the first cut lands after it.
    std::string text;
    for (int i = 1; i <= 30; ++i) {
        if (i > 1) text += ' ';
        text += "w" + std::to_string(i);
        if (i == 18) text += '.';
    }
    const auto chunks = chunk_item(item_of("k", text), ChunkOptions{20});
    REQUIRE(chunks.size() == 2);
    CHECK(chunks[0].token_count == 18);
    CHECK(chunks[1].token_count == 12);

    // Without the period the same text cuts hard at 20.
    std::string flat;
    for (int i = 1; i <= 30; ++i) {
        if (i > 1) flat += ' ';
        flat += "w" + std::to_string(i);
    }
    const auto hard = chunk_item(item_of("k", flat), ChunkOptions{20});
    REQUIRE(hard.size() == 2);
    CHECK(hard[0].token_count == 20);
}

namespace {

// Weighs tokens by byte length; lets a single token blow the budget.
class ByteWeightTokenizer final : public Tokenizer {
public:
    std::vector<TokenSpan> spans(std::string_view text) const override {
        return WhitespaceTokenizer{}.spans(text);
    }
    int weight(std::string_view token) const override { return static_cast<int>(token.size()); }
    std::string name() const override { return "bytes"; }
};

}  // namespace

TEST_CASE("a token exceeding the budget becomes its own flagged chunk") {
    const ByteWeightTokenizer tokenizer;
    const auto chunks = chunk_item(item_of("k", "ab enormoustoken cd"), ChunkOptions{5}, tokenizer);
    REQUIRE(chunks.size() == 3);
    CHECK(!chunks[0].oversize);
    CHECK(chunks[1].oversize);
    CHECK(chunks[1].token_count == 13);
    CHECK(!chunks[2].oversize);
    std::string joined;
    for (const auto& chunk : chunks) joined += chunk.text;
    CHECK(joined == "ab enormoustoken cd");
}

TEST_CASE("chunk rejects max_tokens < 1") {
    CHECK_THROWS_AS(chunk_item(item_of("k", "a b"), ChunkOptions{0}), UsageError);
}

TEST_CASE("property: chunks partition the text and respect the budget") {
    std::mt19937 rng(42);
    std::uniform_int_distribution<int> token_count(0, 120);
    std::uniform_int_distribution<int> word_len(1, 9);
    std::uniform_int_distribution<int> space_kind(0, 5);
    std::uniform_int_distribution<int> budget(1, 40);
    const std::string letters = "abcdefghijklmnop.!?";
    std::uniform_int_distribution<std::size_t> letter(0, letters.size() - 1);

    for (int round = 0; round < 200; ++round) {
        std::string text;
        const int n = token_count(rng);
        for (int t = 0; t < n; ++t) {
            const int len = word_len(rng);
            for (int c = 0; c < len; ++c) text += letters[letter(rng)];
            switch (space_kind(rng)) {
                case 0: text += "  "; break;
                case 1: text += '\n'; break;
                case 2: text += '\t'; break;
                default: text += ' '; break;
            }
        }
        const int max_tokens = budget(rng);
        const auto chunks = chunk_item(item_of("k", text), ChunkOptions{max_tokens});

        std::string joined;
        int previous_index = -1;
        for (const auto& chunk : chunks) {
            joined += chunk.text;
            CHECK(chunk.token_count <= max_tokens);  // weights are all 1 here
            CHECK(chunk.index == previous_index + 1);
            previous_index = chunk.index;
        }
        CHECK(joined == (chunks.empty() ? "" : text));
        if (default_tokenizer().count(text) == 0) CHECK(chunks.empty());
    }
}

TEST_CASE("property: persist then reload is item-for-item identical") {
    std::mt19937 rng(7);
    std::uniform_int_distribution<int> size(0, 30);
    std::uniform_int_distribution<int> kind_pick(0, 2);
    std::uniform_int_distribution<int> flag(0, 1);

    const auto dir = std::filesystem::temp_directory_path() / "apprag_corpus_rt";
    std::filesystem::create_directories(dir);

    for (int round = 0; round < 25; ++round) {
        KnowledgeCorpus corpus;
        const int n = size(rng);
        for (int i = 0; i < n; ++i) {
            KnowledgeItem item;
            item.id = "k" + std::to_string(i);
            item.text = "text with spaces " + std::to_string(rng());
            item.kind = static_cast<Kind>(kind_pick(rng));
            if (flag(rng)) item.category = "cat" + std::to_string(rng() % 3);
            corpus.add(item);
        }
        const auto path = dir / ("corpus" + std::to_string(round) + ".jsonl");
        save_knowledge(corpus, path);
        const auto reloaded = load_knowledge(path);
        REQUIRE(reloaded.size() == corpus.size());
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            const auto& a = corpus.items()[i];
            const auto& b = reloaded.items()[i];
            CHECK(a.id == b.id);
            CHECK(a.text == b.text);
            CHECK(a.kind == b.kind);
            CHECK(a.category == b.category);
        }
    }
}
