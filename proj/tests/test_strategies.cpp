#include <doctest.h>

#include <atomic>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "apprag/errors.hpp"
#include "apprag/strategies.hpp"
#include "support/fixtures.hpp"
#include "support/mocks.hpp"
#include "support/random_pipeline.hpp"

using namespace apprag;
using namespace apprag::testing;

namespace {

StrategyContext context_for(const PipelineFixture& fx, Gateway* gateway = nullptr) {
    StrategyContext ctx;
    ctx.index = &fx.index;
    ctx.knowledge = &fx.knowledge;
    ctx.applications = &fx.applications;
    ctx.store = &fx.store;
    ctx.templates = &repo_templates();
    ctx.gateway = gateway;
    return ctx;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), "missing file: " << path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

const std::filesystem::path kGoldenDir = std::filesystem::path(APPRAG_TEST_DATA_DIR) / "golden";

}  // namespace

TEST_CASE("run_rag in plain mode fills knowledge slots only") {
    const auto fx = make_pipeline_fixture();
    StrategyConfig config;
    config.k_retrieve = 3;
    const auto bundle = run_rag(root_question(), root_question_options(), config, context_for(fx));
    REQUIRE(bundle.knowledge_slots.size() == 3);
    CHECK(bundle.knowledge_ids[0] == "k1");  // bisection vocabulary wins
    CHECK(bundle.application_slots.empty());
    CHECK(bundle.template_id == "answer_plain");
    CHECK(bundle.rendered.find(root_question()) != std::string::npos);
    CHECK(bundle.rendered.find("A. Bisection") != std::string::npos);
}

TEST_CASE("run_rag in plus mode attaches aligned applications per slot") {
    const auto fx = make_pipeline_fixture();
    StrategyConfig config;
    config.augmentation = Augmentation::plus;
    config.k_retrieve = 1;
    config.app_cap = 2;
    const auto bundle = run_rag(root_question(), root_question_options(), config, context_for(fx));
    REQUIRE(bundle.knowledge_ids == std::vector<std::string>{"k1"});
    REQUIRE(bundle.application_slots.size() == 1);
    // k1 carries two links: confidence 1.0 (app-g-k1) then 0.5 (app-m-p7).
    REQUIRE(bundle.application_slots[0].size() == 2);
    CHECK(bundle.application_slots[0][0] == fx.applications.at("app-g-k1").text);
    CHECK(bundle.application_slots[0][1] == fx.applications.at("app-m-p7").text);
    CHECK(bundle.template_id == "answer_plus");
}

TEST_CASE("plus mode leaves an empty slot for an unlinked item") {
    const auto fx = make_pipeline_fixture();
    const auto slots = attach_applications({"k3"}, fx.knowledge, fx.applications, fx.store,
                                           Augmentation::plus, 2);
    REQUIRE(slots.size() == 1);
    CHECK(slots[0].empty());
}

TEST_CASE("attach_applications honors the three modes") {
    const auto fx = make_pipeline_fixture();
    const std::vector<std::string> ids = {"k1", "k2", "k4"};
    CHECK(attach_applications(ids, fx.knowledge, fx.applications, fx.store, Augmentation::plain, 2)
              .empty());
    const auto plus =
        attach_applications(ids, fx.knowledge, fx.applications, fx.store, Augmentation::plus, 1);
    REQUIRE(plus.size() == 3);
    for (const auto& slot : plus) CHECK(slot.size() == 1);
    const auto only = attach_applications(ids, fx.knowledge, fx.applications, fx.store,
                                          Augmentation::application_only, 1);
    CHECK(only == plus);  // same applications; the caller drops the knowledge
}

TEST_CASE("application-only mode empties knowledge slots but keeps retrieved ids") {
    const auto fx = make_pipeline_fixture();
    StrategyConfig config;
    config.augmentation = Augmentation::application_only;
    config.k_retrieve = 3;
    const auto bundle = run_rag(root_question(), root_question_options(), config, context_for(fx));
    CHECK(bundle.knowledge_slots.empty());
    CHECK(bundle.knowledge_ids.size() == 3);
    CHECK(bundle.application_slots.size() == 3);
    CHECK(bundle.template_id == "answer_app_only");
    // Applications render; knowledge texts do not.
    CHECK(bundle.rendered.find(fx.applications.at("app-g-k1").text) != std::string::npos);
    CHECK(bundle.rendered.find(fx.knowledge.at("k1").text) == std::string::npos);
}

TEST_CASE("an empty index degrades to a bare-question bundle") {
    PipelineFixture fx = make_pipeline_fixture();
    fx.index = build_index({});
    StrategyConfig config;
    const auto bundle = run_rag(root_question(), root_question_options(), config, context_for(fx));
    CHECK(bundle.knowledge_slots.empty());
    CHECK(bundle.rendered.find(root_question()) != std::string::npos);
}

TEST_CASE("run_afrag retrieves with the preliminary answer, verbatim") {
    const auto fx = make_pipeline_fixture();
    const std::string preliminary = "newton divided differences interpolation table";
    auto backend = std::make_shared<ScriptedBackend>([&](const CompletionCall& call) {
        REQUIRE(call.messages.size() == 1);
        CHECK(call.messages[0].content.find("preliminary answer") != std::string::npos);
        CHECK(call.messages[0].content.find(root_question()) != std::string::npos);
        return preliminary;
    });
    Gateway gateway(one_model("m"), backend, fast_options());
    StrategyConfig config;
    config.base = StrategyBase::afrag;
    config.model = "m";
    config.k_retrieve = 1;
    const auto bundle =
        run_afrag(root_question(), root_question_options(), config, context_for(fx, &gateway));
    // The A* text retrieves k4, not the question's k1.
    CHECK(bundle.knowledge_ids == std::vector<std::string>{"k4"});
    // A* itself must not appear in the final prompt.
    CHECK(bundle.rendered.find(preliminary) == std::string::npos);
    CHECK(bundle.rendered.find(root_question()) != std::string::npos);
    CHECK(bundle.degradations.empty());
}

TEST_CASE("afrag stage-1 failure falls back to run_rag with a flag") {
    const auto fx = make_pipeline_fixture();
    auto failing = std::make_shared<ScriptedBackend>(
        [](const CompletionCall&) -> std::string { throw TransportError("down"); });
    auto options = fast_options();
    options.max_attempts = 2;
    Gateway gateway(one_model("m"), failing, options);
    StrategyConfig config;
    config.base = StrategyBase::afrag;
    config.model = "m";
    config.k_retrieve = 2;

    const auto fallback =
        run_afrag(root_question(), root_question_options(), config, context_for(fx, &gateway));
    StrategyConfig rag_config = config;
    rag_config.base = StrategyBase::rag;
    const auto plain =
        run_rag(root_question(), root_question_options(), rag_config, context_for(fx));

    CHECK(fallback.degradations == std::vector<std::string>{"afrag_fallback"});
    CHECK(fallback.knowledge_slots == plain.knowledge_slots);
    CHECK(fallback.rendered == plain.rendered);
}

TEST_CASE("afrag in plus mode attaches applications of the A*-retrieved items") {
    // Differential fixture: question retrieves k1, A* retrieves k4; the two
    // are disjoint, so the attached applications separate the paths.
    const auto fx = make_pipeline_fixture();
    auto backend = std::make_shared<ScriptedBackend>([](const CompletionCall&) {
        return std::string("newton divided differences interpolation table");
    });
    Gateway gateway(one_model("m"), backend, fast_options());
    StrategyConfig config;
    config.base = StrategyBase::afrag;
    config.augmentation = Augmentation::plus;
    config.model = "m";
    config.k_retrieve = 1;
    const auto bundle =
        run_afrag(root_question(), root_question_options(), config, context_for(fx, &gateway));
    REQUIRE(bundle.application_slots.size() == 1);
    REQUIRE(bundle.application_slots[0].size() == 1);
    CHECK(bundle.application_slots[0][0] == fx.applications.at("app-g-k4").text);
    CHECK(bundle.rendered.find(fx.applications.at("app-g-k1").text) == std::string::npos);
}

TEST_CASE("parse_rerank_reply extracts the first maximal run of valid indices") {
    CHECK(parse_rerank_reply("3,1,2", 10) == std::vector<int>{3, 1, 2});
    CHECK(parse_rerank_reply("3, 1; 2.\n", 10) == std::vector<int>{3, 1, 2});
    CHECK(parse_rerank_reply("The ranking is: 2, 5, 7, 1", 10) == std::vector<int>{2, 5, 7, 1});
    // Duplicates keep the first occurrence; out-of-range values drop.
    CHECK(parse_rerank_reply("2, 2, 11, 3", 10) == std::vector<int>{2, 3});
    // The run after prose wins only if it is the first one with a valid index.
    CHECK(parse_rerank_reply("I pick option 4 because 9 > 2", 10) == std::vector<int>{4});
    CHECK(parse_rerank_reply("no digits here", 10).empty());
    CHECK(parse_rerank_reply("", 10).empty());
    CHECK(parse_rerank_reply("0, 99", 10).empty());  // nothing in range
}

namespace {

/// Scripted reranker: serves canned replies in order; any later prompt gets
/// the last reply again.
std::shared_ptr<ScriptedBackend> reply_sequence(std::vector<std::string> replies) {
    auto counter = std::make_shared<std::atomic<std::size_t>>(0);
    return std::make_shared<ScriptedBackend>(
        [replies = std::move(replies), counter](const CompletionCall&) {
            const std::size_t i = counter->fetch_add(1);
            return replies[std::min(i, replies.size() - 1)];
        });
}

StrategyConfig rerank_config() {
    StrategyConfig config;
    config.base = StrategyBase::rerank;
    config.augmentation = Augmentation::plain;
    config.k_retrieve = 3;
    config.k_rerank_pool = 10;
    config.max_rerank_attempts = 3;
    config.model = "m";
    return config;
}

}  // namespace

TEST_CASE("rerank with a compliant model reorders the pool") {
    const auto fx = make_rerank_fixture();
    auto backend = reply_sequence({"3,1,2,9,4"});
    Gateway gateway(one_model("m"), backend, fast_options());
    const auto bundle = run_rerank("which passage is common?", {}, rerank_config(),
                                   context_for(fx, &gateway));
    // Pool is ra..rj in chunk-id order; candidates 3,1,2 are rc, ra, rb.
    CHECK(bundle.knowledge_ids == std::vector<std::string>{"rc", "ra", "rb"});
    CHECK(bundle.rerank_attempts == 1);
    CHECK(bundle.degradations.empty());
    // The rerank prompt carried ten numbered candidates.
    const auto calls = backend->calls();
    REQUIRE(calls.size() == 1);
    CHECK(calls[0].messages[0].content.find("[10]") != std::string::npos);
    CHECK(calls[0].messages[0].content.find("[11]") == std::string::npos);
}

TEST_CASE("rerank re-prompts on unparseable replies and succeeds on attempt 3") {
    const auto fx = make_rerank_fixture();
    auto backend = reply_sequence({"I would choose the most relevant passages for you.",
                                   "Definitely the first few.", "2,5,7"});
    Gateway gateway(one_model("m"), backend, fast_options());
    const auto bundle = run_rerank("which passage is common?", {}, rerank_config(),
                                   context_for(fx, &gateway));
    CHECK(bundle.rerank_attempts == 3);
    CHECK(bundle.degradations.empty());
    CHECK(bundle.knowledge_ids == std::vector<std::string>{"rb", "re", "rg"});
    // Each re-prompt extends the conversation instead of repeating it.
    const auto calls = backend->calls();
    REQUIRE(calls.size() == 3);
    CHECK(calls[0].messages.size() == 1);
    CHECK(calls[1].messages.size() == 3);
    CHECK(calls[2].messages.size() == 5);
}

TEST_CASE("a never-compliant reranker degrades to similarity order") {
    const auto fx = make_rerank_fixture();
    auto backend = reply_sequence({"Answer: B"});  // parses to nothing valid... or too few
    Gateway gateway(one_model("m"), backend, fast_options());
    const auto bundle = run_rerank("which passage is common?", {}, rerank_config(),
                                   context_for(fx, &gateway));
    CHECK(bundle.rerank_attempts == 3);
    CHECK(bundle.degradations == std::vector<std::string>{"rerank_fallback"});
    CHECK(bundle.knowledge_ids == std::vector<std::string>{"ra", "rb", "rc"});
}

TEST_CASE("rerank slots are always a subset of the pool, at most k_retrieve") {
    const auto fx = make_rerank_fixture();
    std::mt19937 rng(17);
    const std::vector<std::string> replies = {"3,1,2",      "junk",          "10,9,8,7,6,5",
                                              "1",          "2 then 2 then", "11,12,13",
                                              "4;4;4;5;6;", "0 0 0",         "7.3.9"};
    for (const auto& reply : replies) {
        auto backend = reply_sequence({reply});
        Gateway gateway(one_model("m"), backend, fast_options());
        const auto bundle = run_rerank("which passage is common?", {}, rerank_config(),
                                       context_for(fx, &gateway));
        CHECK(bundle.knowledge_slots.size() <= 3);
        std::set<std::string> pool_ids;
        for (const auto& [chunk_id, entry] : fx.index.entries()) {
            pool_ids.insert(entry.knowledge_id);
        }
        for (const auto& id : bundle.knowledge_ids) CHECK(pool_ids.count(id) == 1);
    }
}

TEST_CASE("graph adapter includes external blocks and fuzzy-matched knowledge") {
    const auto fx = make_pipeline_fixture();
    StrategyConfig config;
    config.base = StrategyBase::graph_adapter;
    config.augmentation = Augmentation::plus;
    config.app_cap = 2;

    SUBCASE("a block equal to an item's text attaches its applications") {
        const std::vector<std::string> blocks = {fx.knowledge.at("k1").text};
        const auto bundle = adapt_graph_output(blocks, root_question(), root_question_options(),
                                               config, context_for(fx));
        REQUIRE(bundle.knowledge_ids.size() == 2);  // the block plus the match
        CHECK(bundle.knowledge_ids[0].empty());
        CHECK(bundle.knowledge_ids[1] == "k1");
        CHECK(bundle.rendered.find(fx.applications.at("app-g-k1").text) != std::string::npos);
    }

    SUBCASE("a block below the threshold passes through unaugmented") {
        const std::vector<std::string> blocks = {"entity graph community summary unrelated"};
        const auto bundle = adapt_graph_output(blocks, root_question(), root_question_options(),
                                               config, context_for(fx));
        CHECK(bundle.knowledge_ids == std::vector<std::string>{""});
        CHECK(bundle.knowledge_slots == blocks);
        for (const auto& slot : bundle.application_slots) CHECK(slot.empty());
    }

    SUBCASE("two blocks matching the same item attach it once") {
        const std::vector<std::string> blocks = {fx.knowledge.at("k1").text,
                                                 fx.knowledge.at("k1").text + " extra"};
        const auto bundle = adapt_graph_output(blocks, root_question(), root_question_options(),
                                               config, context_for(fx));
        int k1_count = 0;
        for (const auto& id : bundle.knowledge_ids) {
            if (id == "k1") ++k1_count;
        }
        CHECK(k1_count == 1);
        const std::string app = fx.applications.at("app-g-k1").text;
        // The application renders exactly once.
        const auto first = bundle.rendered.find(app);
        REQUIRE(first != std::string::npos);
        CHECK(bundle.rendered.find(app, first + 1) == std::string::npos);
    }

    SUBCASE("empty external context is a usage error") {
        CHECK_THROWS_AS(adapt_graph_output({}, root_question(), root_question_options(), config,
                                           context_for(fx)),
                        UsageError);
    }
}

TEST_CASE("overlay orthogonality: plus never changes what is retrieved") {
    const auto fx = make_pipeline_fixture();
    StrategyConfig plain_config;
    plain_config.k_retrieve = 3;
    StrategyConfig plus_config = plain_config;
    plus_config.augmentation = Augmentation::plus;
    const auto plain =
        run_rag(root_question(), root_question_options(), plain_config, context_for(fx));
    const auto plus =
        run_rag(root_question(), root_question_options(), plus_config, context_for(fx));
    CHECK(plain.knowledge_slots == plus.knowledge_slots);
    CHECK(plain.knowledge_ids == plus.knowledge_ids);
}

TEST_CASE("assemble_prompt is a pure function of its inputs") {
    const auto fx = make_pipeline_fixture();
    const std::vector<std::string> knowledge = {"fact one", "fact two"};
    const std::vector<std::vector<std::string>> apps = {{"use one"}, {}};
    const auto once = assemble_prompt(repo_templates(), "answer_plus", "q?",
                                      root_question_options(), knowledge, apps);
    for (int i = 0; i < 5; ++i) {
        CHECK(assemble_prompt(repo_templates(), "answer_plus", "q?", root_question_options(),
                              knowledge, apps) == once);
    }
    CHECK_THROWS_AS(assemble_prompt(repo_templates(), "no_such_template", "q?", {}, {}, {}),
                    UsageError);
}

TEST_CASE("golden prompts: zero slots render the bare-question form") {
    const auto rendered = assemble_prompt(repo_templates(), "answer_plain", root_question(),
                                          root_question_options(), {}, {});
    CHECK(rendered == read_file(kGoldenDir / "bare.txt"));
}

TEST_CASE("golden prompts: rag, rag+, afrag+ match their frozen files") {
    const auto fx = make_pipeline_fixture();

    StrategyConfig plain_config;
    plain_config.k_retrieve = 2;
    const auto plain =
        run_rag(root_question(), root_question_options(), plain_config, context_for(fx));
    CHECK(plain.rendered == read_file(kGoldenDir / "rag_plain.txt"));

    StrategyConfig plus_config = plain_config;
    plus_config.augmentation = Augmentation::plus;
    plus_config.app_cap = 2;
    const auto plus =
        run_rag(root_question(), root_question_options(), plus_config, context_for(fx));
    CHECK(plus.rendered == read_file(kGoldenDir / "rag_plus.txt"));

    auto backend = std::make_shared<ScriptedBackend>([](const CompletionCall&) {
        return std::string("newton divided differences interpolation table");
    });
    Gateway gateway(one_model("m"), backend, fast_options());
    StrategyConfig afrag_config = plus_config;
    afrag_config.base = StrategyBase::afrag;
    afrag_config.model = "m";
    afrag_config.k_retrieve = 1;
    const auto afrag = run_afrag(root_question(), root_question_options(), afrag_config,
                                 context_for(fx, &gateway));
    CHECK(afrag.rendered == read_file(kGoldenDir / "afrag_plus.txt"));
}

TEST_CASE("property: every rendered application is store-linked to a bundled item") {
    std::mt19937 rng(321);
    auto backend = std::make_shared<ScriptedBackend>(
        [](const CompletionCall&) { return std::string("topic0 detail"); });
    for (int round = 0; round < 100; ++round) {
        const auto fx = random_pipeline(rng);
        Gateway gateway(one_model("m"), backend, fast_options());
        StrategyConfig config;
        config.base = static_cast<StrategyBase>(rng() % 3);  // rag/afrag/rerank
        config.augmentation =
            (rng() % 2) ? Augmentation::plus : Augmentation::application_only;
        config.k_retrieve = 1 + static_cast<int>(rng() % 3);
        config.k_rerank_pool = config.k_retrieve + static_cast<int>(rng() % 5);
        config.app_cap = static_cast<int>(rng() % 3);
        config.model = "m";
        const auto bundle = run_strategy("question about topic" + std::to_string(rng() % 8), {},
                                         config, context_for(fx, &gateway));
        std::string what;
        const bool ok = check_alignment_fidelity(bundle, fx, config.app_cap, &what);
        CHECK_MESSAGE(ok, what);
    }
}

TEST_CASE("strategy names follow the base and augmentation") {
    StrategyConfig config;
    CHECK(strategy_name(config) == "rag");
    config.augmentation = Augmentation::plus;
    CHECK(strategy_name(config) == "rag+");
    config.augmentation = Augmentation::application_only;
    CHECK(strategy_name(config) == "rag-");
    config.base = StrategyBase::graph_adapter;
    config.augmentation = Augmentation::plus;
    CHECK(strategy_name(config) == "graph+");
    config.base = StrategyBase::rerank;
    CHECK(strategy_name(config) == "rerank+");
}

TEST_CASE("config validation catches bad knob combinations") {
    StrategyConfig config;
    config.k_retrieve = 0;
    CHECK_THROWS_AS(config.validate(), UsageError);
    config.k_retrieve = 5;
    config.base = StrategyBase::rerank;
    config.k_rerank_pool = 4;
    CHECK_THROWS_AS(config.validate(), UsageError);
}
