// Exercises the real HTTP transports against an in-process server.

#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "apprag/errors.hpp"
#include "apprag/llm.hpp"
#include "apprag/retrieval.hpp"
#include "support/mocks.hpp"

using namespace apprag;
using namespace apprag::testing;
using nlohmann::json;

namespace {

struct LocalServer {
    httplib::Server server;
    std::thread thread;
    int port = 0;

    LocalServer() {
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }

    ~LocalServer() {
        server.stop();
        thread.join();
    }

    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port) + "/v1"; }
};

}  // namespace

TEST_CASE("http backend speaks the chat-completions protocol") {
    LocalServer local;
    json seen_body;
    std::string seen_auth;
    local.server.Post("/v1/chat/completions",
                      [&](const httplib::Request& req, httplib::Response& res) {
                          seen_body = json::parse(req.body);
                          seen_auth = req.get_header_value("Authorization");
                          json reply = {
                              {"choices",
                               {{{"message", {{"role", "assistant"}, {"content", "pong"}}}}}}};
                          res.set_content(reply.dump(), "application/json");
                      });

    setenv("APPRAG_TEST_TOKEN", "sekret", 1);
    EndpointRegistry registry;
    registry.add("local", ModelEndpoint{local.base_url(), "APPRAG_TEST_TOKEN",
                                        ProfileClass::deterministic, 256});
    Gateway gateway(registry, make_http_backend(), fast_options());

    CHECK(gateway.complete("local", user_message("ping")) == "pong");
    CHECK(seen_body.at("model") == "local");
    CHECK(seen_body.at("temperature") == 0.0);
    CHECK(seen_body.at("top_p") == 1.0);
    CHECK(seen_body.at("max_tokens") == 256);
    CHECK(seen_body.at("messages").at(0).at("content") == "ping");
    CHECK(seen_auth == "Bearer sekret");
}

TEST_CASE("http backend retries 5xx and surfaces 4xx as fatal") {
    LocalServer local;
    std::atomic<int> hits{0};
    local.server.Post("/v1/chat/completions",
                      [&](const httplib::Request&, httplib::Response& res) {
                          if (hits.fetch_add(1) < 2) {
                              res.status = 503;
                              res.set_content("overloaded", "text/plain");
                              return;
                          }
                          json reply = {
                              {"choices",
                               {{{"message", {{"role", "assistant"}, {"content", "ok"}}}}}}};
                          res.set_content(reply.dump(), "application/json");
                      });
    local.server.Post("/v1/bad/chat/completions",
                      [](const httplib::Request&, httplib::Response& res) {
                          res.status = 400;
                          res.set_content("nope", "text/plain");
                      });

    EndpointRegistry registry;
    registry.add("flaky",
                 ModelEndpoint{local.base_url(), "", ProfileClass::deterministic, 64});
    registry.add("bad", ModelEndpoint{local.base_url() + "/bad", "",
                                      ProfileClass::deterministic, 64});
    Gateway gateway(registry, make_http_backend(), fast_options());

    CHECK(gateway.complete("flaky", user_message("x")) == "ok");
    CHECK(hits.load() == 3);
    CHECK(gateway.last_transcript().attempts == 3);

    CHECK_THROWS_AS(gateway.complete("bad", user_message("x")), ProviderError);
}

TEST_CASE("connection refusal exhausts retries into provider-unavailable") {
    EndpointRegistry registry;
    registry.add("ghost",
                 ModelEndpoint{"http://127.0.0.1:1/v1", "", ProfileClass::deterministic, 64});
    auto options = fast_options();
    options.max_attempts = 2;
    Gateway gateway(registry, make_http_backend(std::chrono::milliseconds(500)), options);
    CHECK_THROWS_AS(gateway.complete("ghost", user_message("x")), ProviderUnavailableError);
}

TEST_CASE("http embedding provider round-trips vectors over the wire") {
    LocalServer local;
    local.server.Post("/v1/embeddings", [](const httplib::Request& req, httplib::Response& res) {
        const json body = json::parse(req.body);
        json data = json::array();
        for (std::size_t i = 0; i < body.at("input").size(); ++i) {
            // A fixed 3-dim embedding keyed by text length.
            const double n = static_cast<double>(body.at("input")[i].get<std::string>().size());
            data.push_back({{"embedding", {n, 1.0, 0.0}}, {"index", i}});
        }
        res.set_content(json{{"data", data}, {"model", body.at("model")}}.dump(),
                        "application/json");
    });

    auto provider = make_http_embedding_provider(local.base_url(), "embedder");
    const auto vectors = provider->embed({"ab", "abcd"});
    REQUIRE(vectors.size() == 2);
    CHECK(vectors[0] == std::vector<double>{2.0, 1.0, 0.0});
    CHECK(vectors[1] == std::vector<double>{4.0, 1.0, 0.0});

    ProviderVectorizer vectorizer(provider);
    const auto v = vectorizer.vectorize("ab");
    CHECK(l2_norm(v) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(provider->tag() == "embed:embedder");
}
