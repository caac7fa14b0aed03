// HTTP transports: the OpenAI-compatible chat-completions backend and the
// matching /embeddings client. Both speak the same wire-protocol family.

#include <cstdlib>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "apprag/errors.hpp"
#include "apprag/llm.hpp"
#include "apprag/retrieval.hpp"

namespace apprag {

namespace {

struct SplitUrl {
    std::string host;  // scheme://host[:port]
    std::string path;  // leading path, no trailing slash
};

SplitUrl split_base_url(const std::string& base_url) {
    if (base_url.empty()) throw UsageError("model endpoint has empty base_url");
    const auto scheme_end = base_url.find("://");
    const auto path_start =
        base_url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    SplitUrl split;
    if (path_start == std::string::npos) {
        split.host = base_url;
    } else {
        split.host = base_url.substr(0, path_start);
        split.path = base_url.substr(path_start);
    }
    while (!split.path.empty() && split.path.back() == '/') split.path.pop_back();
    return split;
}

httplib::Headers auth_headers(const std::string& auth_env) {
    httplib::Headers headers{{"Content-Type", "application/json"}};
    if (!auth_env.empty()) {
        const char* token = std::getenv(auth_env.c_str());
        if (token && *token) headers.emplace("Authorization", std::string("Bearer ") + token);
    }
    return headers;
}

bool retryable_status(int status) {
    return status == 408 || status == 429 || status >= 500;
}

nlohmann::json post_json(const std::string& base_url, const std::string& endpoint,
                         const std::string& auth_env, const nlohmann::json& body,
                         std::chrono::milliseconds timeout) {
    const SplitUrl url = split_base_url(base_url);
    httplib::Client client(url.host);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);

    auto result = client.Post(url.path + endpoint, auth_headers(auth_env), body.dump(),
                              "application/json");
    if (!result) {
        throw TransportError("request to " + base_url + endpoint + " failed: " +
                             httplib::to_string(result.error()));
    }
    if (result->status >= 400) {
        const std::string message = "HTTP " + std::to_string(result->status) + " from " +
                                    base_url + endpoint + ": " + result->body;
        if (retryable_status(result->status)) throw TransportError(message);
        throw ProviderError(message);
    }
    try {
        return nlohmann::json::parse(result->body);
    } catch (const nlohmann::json::exception& ex) {
        throw ProviderError("unparseable response from " + base_url + endpoint + ": " +
                            ex.what());
    }
}

class HttpBackend final : public Backend {
public:
    explicit HttpBackend(std::chrono::milliseconds timeout) : timeout_(timeout) {}

    std::string send(const CompletionCall& call) override {
        nlohmann::json body;
        body["model"] = call.model;
        body["temperature"] = call.profile.temperature;
        body["top_p"] = call.profile.top_p;
        body["max_tokens"] = call.profile.max_output_tokens;
        nlohmann::json messages = nlohmann::json::array();
        for (const auto& message : call.messages) {
            messages.push_back({{"role", message.role}, {"content", message.content}});
        }
        body["messages"] = std::move(messages);

        const nlohmann::json response =
            post_json(call.base_url, "/chat/completions", call.auth_env, body, timeout_);
        try {
            return response.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception&) {
            throw ProviderError("chat completion response lacks choices[0].message.content");
        }
    }

    std::string name() const override { return "http"; }

private:
    std::chrono::milliseconds timeout_;
};

class HttpEmbeddingProvider final : public EmbeddingProvider {
public:
    HttpEmbeddingProvider(std::string base_url, std::string model, std::string auth_env)
        : base_url_(std::move(base_url)), model_(std::move(model)),
          auth_env_(std::move(auth_env)) {}

    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) const override {
        nlohmann::json body;
        body["model"] = model_;
        body["input"] = texts;
        const nlohmann::json response = post_json(base_url_, "/embeddings", auth_env_, body,
                                                  std::chrono::milliseconds(120000));
        std::vector<std::vector<double>> vectors;
        try {
            for (const auto& row : response.at("data")) {
                vectors.push_back(row.at("embedding").get<std::vector<double>>());
            }
        } catch (const nlohmann::json::exception&) {
            throw ProviderError("embedding response lacks data[].embedding");
        }
        if (vectors.size() != texts.size()) {
            throw ProviderError("embedding response length " + std::to_string(vectors.size()) +
                                " does not match request length " + std::to_string(texts.size()));
        }
        return vectors;
    }

    std::string tag() const override { return "embed:" + model_; }

private:
    std::string base_url_;
    std::string model_;
    std::string auth_env_;
};

}  // namespace

std::shared_ptr<Backend> make_http_backend(std::chrono::milliseconds timeout) {
    return std::make_shared<HttpBackend>(timeout);
}

std::shared_ptr<EmbeddingProvider> make_http_embedding_provider(const std::string& base_url,
                                                                const std::string& model,
                                                                const std::string& auth_env) {
    return std::make_shared<HttpEmbeddingProvider>(base_url, model, auth_env);
}

}  // namespace apprag
