#include <doctest.h>

#include <fstream>

#include "apprag/errors.hpp"
#include "apprag/templates.hpp"

using namespace apprag;

TEST_CASE("scalar substitution and literal braces") {
    TemplateEngine engine;
    engine.register_template("t", "Q: {question} {{not a tag}}");
    RenderContext context;
    context.scalars["question"] = "why?";
    CHECK(engine.render("t", context) == "Q: why? {not a tag}");
}

TEST_CASE("unknown template id errors naming the id") {
    TemplateEngine engine;
    RenderContext context;
    try {
        engine.render("missing_one", context);
        FAIL("expected UsageError");
    } catch (const UsageError& ex) {
        CHECK(std::string(ex.what()).find("missing_one") != std::string::npos);
    }
}

TEST_CASE("unknown placeholder errors naming the placeholder") {
    TemplateEngine engine;
    engine.register_template("t", "{nope}");
    try {
        engine.render("t", RenderContext{});
        FAIL("expected ParseError");
    } catch (const ParseError& ex) {
        CHECK(std::string(ex.what()).find("nope") != std::string::npos);
    }
}

TEST_CASE("loops iterate with text and 1-based index") {
    TemplateEngine engine;
    engine.register_template("t", "{#items}[{index}] {text}\n{/items}");
    RenderContext context;
    context.sections["items"] = {{"alpha", {}, {}}, {"beta", {}, {}}};
    CHECK(engine.render("t", context) == "[1] alpha\n[2] beta\n");
}

TEST_CASE("zero-iteration loops and false conditionals emit nothing") {
    TemplateEngine engine;
    engine.register_template("t", "start|{?items}HEADER\n{#items}{text}\n{/items}{/items}end");
    RenderContext context;
    context.sections["items"] = {};
    CHECK(engine.render("t", context) == "start|end");

    context.sections["items"] = {{"x", {}, {}}};
    CHECK(engine.render("t", context) == "start|HEADER\nx\nend");
}

TEST_CASE("nested loops see the parent item's children") {
    TemplateEngine engine;
    engine.register_template("t", "{#knowledge}K{index}:{text}({#applications}{text};{/applications})\n{/knowledge}");
    RenderContext context;
    TemplateItem first{"k-one", {}, {{"applications", {{"a1", {}, {}}, {"a2", {}, {}}}}}};
    TemplateItem second{"k-two", {}, {{"applications", {}}}};
    context.sections["knowledge"] = {first, second};
    CHECK(engine.render("t", context) == "K1:k-one(a1;a2;)\nK2:k-two()\n");
}

TEST_CASE("item scalars are visible inside their loop body") {
    TemplateEngine engine;
    engine.register_template("t", "{#candidates}{id}={text} {/candidates}");
    RenderContext context;
    TemplateItem item{"descr", {{"id", "k9"}}, {}};
    context.sections["candidates"] = {item};
    CHECK(engine.render("t", context) == "k9=descr ");
}

TEST_CASE("inner scopes shadow outer scalars") {
    TemplateEngine engine;
    engine.register_template("t", "{text}|{#items}{text}{/items}");
    RenderContext context;
    context.scalars["text"] = "outer";
    context.sections["items"] = {{"inner", {}, {}}};
    CHECK(engine.render("t", context) == "outer|inner");
}

TEST_CASE("malformed templates fail at registration") {
    TemplateEngine engine;
    CHECK_THROWS_AS(engine.register_template("bad", "{#open}never closed"), ParseError);
    CHECK_THROWS_AS(engine.register_template("bad", "{/stray}"), ParseError);
    CHECK_THROWS_AS(engine.register_template("bad", "{#a}{/b}{/a}"), ParseError);
    CHECK_THROWS_AS(engine.register_template("bad", "unterminated {tag"), ParseError);
}

TEST_CASE("rendering is referentially transparent") {
    TemplateEngine engine;
    engine.register_template("t", "{question}:{#items}{text}{/items}");
    RenderContext context;
    context.scalars["question"] = "q";
    context.sections["items"] = {{"a", {}, {}}, {"b", {}, {}}};
    const std::string once = engine.render("t", context);
    for (int i = 0; i < 5; ++i) CHECK(engine.render("t", context) == once);
}

TEST_CASE("load_directory reads *.tmpl files by stem") {
    const auto dir = std::filesystem::temp_directory_path() / "apprag_templates";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "greet.tmpl");
        out << "hello {question}";
    }
    {
        std::ofstream out(dir / "ignored.txt");
        out << "not a template";
    }
    const auto engine = TemplateEngine::load_directory(dir);
    CHECK(engine.ids() == std::vector<std::string>{"greet"});
    RenderContext context;
    context.scalars["question"] = "there";
    CHECK(engine.render("greet", context) == "hello there");

    CHECK_THROWS_AS(TemplateEngine::load_directory(dir / "nope"), IoError);
}
