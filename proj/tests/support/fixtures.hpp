#pragma once

// Shared pipeline fixtures: a small corpus with controllable vocabulary, its
// aligned applications, and the repo's shipped templates.

#include <string>
#include <vector>

#include "apprag/alignment.hpp"
#include "apprag/corpus.hpp"
#include "apprag/retrieval.hpp"
#include "apprag/strategies.hpp"
#include "apprag/templates.hpp"

#ifndef APPRAG_TEMPLATES_DIR
#error "APPRAG_TEMPLATES_DIR must point at the repo templates directory"
#endif

namespace apprag::testing {

inline const TemplateEngine& repo_templates() {
    static const TemplateEngine engine = TemplateEngine::load_directory(APPRAG_TEMPLATES_DIR);
    return engine;
}

struct PipelineFixture {
    KnowledgeCorpus knowledge;
    ApplicationCorpus applications;
    AlignmentStore store;
    std::vector<Chunk> chunks;
    Index index;
};

/// Four knowledge items with disjoint vocabularies, three of them linked to
/// applications (k3 stays unlinked); one matched application links two items.
inline PipelineFixture make_pipeline_fixture() {
    PipelineFixture fx;

    auto add_knowledge = [&](const std::string& id, const std::string& text, Kind kind) {
        KnowledgeItem item;
        item.id = id;
        item.text = text;
        item.kind = kind;
        fx.knowledge.add(item);
    };
    add_knowledge("k1",
                  "Bisection repeatedly halves a bracketing interval until the root is boxed in.",
                  Kind::procedural);
    add_knowledge("k2",
                  "A continuous function with a sign change on an interval has a root inside it.",
                  Kind::conceptual);
    add_knowledge("k3", "Fixed point iteration converges when the mapping contracts distances.",
                  Kind::conceptual);
    add_knowledge("k4",
                  "Newton divided differences build interpolation coefficients from a table "
                  "recursively.",
                  Kind::procedural);

    auto add_app = [&](const std::string& id, const std::string& text, AppOrigin origin,
                       const std::string& problem_id = "") {
        ApplicationItem app;
        app.id = id;
        app.text = text;
        app.origin = origin;
        if (!problem_id.empty()) app.source_problem_id = problem_id;
        fx.applications.add(app);
    };
    add_app("app-g-k1",
            "Example: bracketing [1,2] for x*x-2, three halvings leave [1.25,1.375].",
            AppOrigin::generated);
    add_app("app-g-k2",
            "Interpretation: f(1)=-1 and f(2)=5 for f(x)=x*x*x-x-2 guarantee a root between 1 "
            "and 2.",
            AppOrigin::generated);
    add_app("app-m-p7",
            "Problem: show x*x*x-x-2 has a root in [1,2] and isolate it by halving.",
            AppOrigin::matched, "p7");
    add_app("app-g-k4",
            "Example: a divided difference table for points (0,1),(1,2),(3,10) gives "
            "coefficients 1,1,1.",
            AppOrigin::generated);

    fx.store.link(fx.knowledge, fx.applications, "k1", "app-g-k1", LinkMethod::generated, 1.0);
    fx.store.link(fx.knowledge, fx.applications, "k2", "app-g-k2", LinkMethod::generated, 1.0);
    fx.store.link(fx.knowledge, fx.applications, "k1", "app-m-p7", LinkMethod::matched, 0.5);
    fx.store.link(fx.knowledge, fx.applications, "k2", "app-m-p7", LinkMethod::matched, 0.75);
    fx.store.link(fx.knowledge, fx.applications, "k4", "app-g-k4", LinkMethod::generated, 1.0);

    fx.chunks = chunk_corpus(fx.knowledge, ChunkOptions{800});
    fx.index = build_index(fx.chunks);
    return fx;
}

inline std::vector<LabeledOption> root_question_options() {
    return {{"A", "Bisection"}, {"B", "Newton iteration"}, {"C", "Secant"}, {"D", "Quadrature"}};
}

inline std::string root_question() {
    return "Which method halves a bracketing interval to isolate a root?";
}

/// Twelve one-chunk items sharing the token "common" so a query for it ties
/// everything and the rerank pool fills to ten in chunk-id order.
inline PipelineFixture make_rerank_fixture() {
    PipelineFixture fx;
    for (int i = 0; i < 12; ++i) {
        KnowledgeItem item;
        item.id = "r" + std::string(1, static_cast<char>('a' + i));
        item.text = "common passage " + item.id + " filler" + std::to_string(i);
        item.kind = Kind::conceptual;
        fx.knowledge.add(item);

        ApplicationItem app;
        app.id = "app-" + item.id;
        app.text = "application for " + item.id;
        app.origin = AppOrigin::generated;
        fx.applications.add(app);
        fx.store.link(fx.knowledge, fx.applications, item.id, app.id, LinkMethod::generated, 1.0);
    }
    fx.chunks = chunk_corpus(fx.knowledge, ChunkOptions{800});
    fx.index = build_index(fx.chunks);
    return fx;
}

}  // namespace apprag::testing
