#include "apprag/llm.hpp"

#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "apprag/errors.hpp"
#include "apprag/jsonl.hpp"

namespace apprag {

std::string to_string(ProfileClass c) {
    return c == ProfileClass::deterministic ? "deterministic" : "long_form";
}

std::optional<ProfileClass> profile_class_from_string(std::string_view s) {
    if (s == "deterministic") return ProfileClass::deterministic;
    if (s == "long_form") return ProfileClass::long_form;
    return std::nullopt;
}

DecodingProfile DecodingProfile::deterministic(int max_output_tokens) {
    return {0.0, 1.0, max_output_tokens, ProfileClass::deterministic};
}

DecodingProfile DecodingProfile::long_form(int max_output_tokens) {
    return {1.0, 1.0, max_output_tokens, ProfileClass::long_form};
}

DecodingProfile DecodingProfile::sampling(double temperature, int max_output_tokens) {
    if (temperature <= 0.0) return deterministic(max_output_tokens);
    return {temperature, 1.0, max_output_tokens, ProfileClass::long_form};
}

DecodingProfile normalize_profile(DecodingProfile profile) {
    profile.top_p = 1.0;
    if (profile.profile_class == ProfileClass::deterministic) {
        profile.temperature = 0.0;
    } else if (profile.temperature <= 0.0) {
        profile.temperature = 1.0;
    }
    return profile;
}

Messages user_message(std::string content) {
    return {ChatMessage{"user", std::move(content)}};
}

namespace {

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t hash = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 1099511628211ull;
    }
    return hash;
}

}  // namespace

std::string request_fingerprint(const std::string& model, const Messages& messages,
                                const DecodingProfile& profile, int sample_index) {
    nlohmann::json canonical;
    canonical["model"] = model;
    canonical["class"] = to_string(profile.profile_class);
    canonical["temperature"] = profile.temperature;
    canonical["top_p"] = profile.top_p;
    canonical["max_output_tokens"] = profile.max_output_tokens;
    canonical["sample_index"] = sample_index;
    nlohmann::json msgs = nlohmann::json::array();
    for (const auto& message : messages) {
        msgs.push_back({{"role", message.role}, {"content", message.content}});
    }
    canonical["messages"] = std::move(msgs);

    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(canonical.dump())));
    return buf;
}

void EndpointRegistry::add(const std::string& model, ModelEndpoint endpoint) {
    endpoints_[model] = std::move(endpoint);
}

bool EndpointRegistry::contains(const std::string& model) const {
    return endpoints_.count(model) != 0;
}

const ModelEndpoint& EndpointRegistry::require(const std::string& model) const {
    auto it = endpoints_.find(model);
    if (it == endpoints_.end()) throw UsageError("model '" + model + "' is not configured");
    return it->second;
}

std::vector<std::string> EndpointRegistry::models() const {
    std::vector<std::string> names;
    names.reserve(endpoints_.size());
    for (const auto& [name, endpoint] : endpoints_) names.push_back(name);
    return names;
}

EndpointRegistry EndpointRegistry::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    nlohmann::json config;
    try {
        in >> config;
    } catch (const nlohmann::json::exception& ex) {
        throw ParseError(path.string() + ": " + ex.what());
    }
    EndpointRegistry registry;
    if (!config.contains("models") || !config.at("models").is_object()) {
        throw ParseError(path.string() + ": expected top-level 'models' object");
    }
    for (const auto& [name, spec] : config.at("models").items()) {
        ModelEndpoint endpoint;
        endpoint.base_url = spec.value("base_url", std::string());
        endpoint.auth_env = spec.value("auth_env", std::string());
        const auto class_str = spec.value("class", std::string("deterministic"));
        auto profile_class = profile_class_from_string(class_str);
        if (!profile_class) {
            throw ParseError(path.string() + ": model '" + name + "' has unknown class '" +
                             class_str + "'");
        }
        endpoint.profile_class = *profile_class;
        endpoint.max_output_tokens = spec.value("max_output_tokens", 2048);
        registry.add(name, std::move(endpoint));
    }
    return registry;
}

namespace {

class Semaphore {
public:
    explicit Semaphore(int count) : count_(count > 0 ? count : 1) {}

    void acquire() {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return count_ > 0; });
        --count_;
    }

    void release() {
        {
            std::lock_guard lock(mutex_);
            ++count_;
        }
        cv_.notify_one();
    }

private:
    std::mutex mutex_;
    std::condition_variable cv_;
    int count_;
};

struct SemaphoreGuard {
    explicit SemaphoreGuard(Semaphore& semaphore) : semaphore_(semaphore) {
        semaphore_.acquire();
    }
    ~SemaphoreGuard() { semaphore_.release(); }
    Semaphore& semaphore_;
};

std::filesystem::path fixture_path(const std::filesystem::path& dir,
                                   const std::string& fingerprint) {
    return dir / (fingerprint + ".json");
}

}  // namespace

void write_replay_fixture(const std::filesystem::path& dir, const CompletionCall& call,
                          const std::string& response, std::chrono::milliseconds latency,
                          int attempts) {
    std::filesystem::create_directories(dir);
    nlohmann::json fixture;
    fixture["fingerprint"] = call.fingerprint;
    fixture["model"] = call.model;
    nlohmann::json msgs = nlohmann::json::array();
    for (const auto& message : call.messages) {
        msgs.push_back({{"role", message.role}, {"content", message.content}});
    }
    fixture["messages"] = std::move(msgs);
    fixture["temperature"] = call.profile.temperature;
    fixture["top_p"] = call.profile.top_p;
    fixture["max_output_tokens"] = call.profile.max_output_tokens;
    fixture["class"] = to_string(call.profile.profile_class);
    fixture["sample_index"] = call.sample_index;
    fixture["response"] = response;
    fixture["latency_ms"] = latency.count();
    fixture["attempts"] = attempts;

    const auto path = fixture_path(dir, call.fingerprint);
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp);
        out << fixture.dump(2) << '\n';
    }
    std::filesystem::rename(tmp, path);
}

std::optional<std::string> read_replay_fixture(const std::filesystem::path& dir,
                                               const std::string& fingerprint) {
    const auto path = fixture_path(dir, fingerprint);
    std::ifstream in(path);
    if (!in) return std::nullopt;
    nlohmann::json fixture;
    try {
        in >> fixture;
    } catch (const nlohmann::json::exception& ex) {
        throw ParseError(path.string() + ": " + ex.what());
    }
    if (!fixture.contains("response") || !fixture.at("response").is_string()) {
        throw ParseError(path.string() + ": fixture lacks a string 'response'");
    }
    return fixture.at("response").get<std::string>();
}

Gateway::Gateway(EndpointRegistry endpoints, std::shared_ptr<Backend> backend,
                 GatewayOptions options)
    : endpoints_(std::move(endpoints)), backend_(std::move(backend)),
      options_(std::move(options)) {
    if (!options_.warn) {
        options_.warn = [](const std::string& message) {
            std::cerr << "warning: " << message << '\n';
        };
    }
    if (!options_.sleeper) {
        options_.sleeper = [](std::chrono::milliseconds delay) {
            std::this_thread::sleep_for(delay);
        };
    }
    limiter_ = std::make_shared<Semaphore>(options_.parallelism);
}

DecodingProfile Gateway::profile_for(const std::string& model) const {
    const ModelEndpoint& endpoint = endpoints_.require(model);
    DecodingProfile profile = endpoint.profile_class == ProfileClass::deterministic
                                  ? DecodingProfile::deterministic(endpoint.max_output_tokens)
                                  : DecodingProfile::long_form(endpoint.max_output_tokens);
    return profile;
}

std::string Gateway::complete(const std::string& model, const Messages& messages,
                              int sample_index) {
    return run(model, messages, profile_for(model), sample_index);
}

std::string Gateway::complete(const std::string& model, const Messages& messages,
                              const DecodingProfile& profile, int sample_index) {
    return run(model, messages, profile, sample_index);
}

std::vector<std::string> Gateway::sample_n(const std::string& model, const Messages& messages,
                                           int n, const DecodingProfile& profile) {
    if (n < 1) throw UsageError("sample_n requires n >= 1");
    const DecodingProfile normalized = normalize_profile(profile);
    if (normalized.temperature == 0.0 && n > 1) {
        options_.warn("sample_n with temperature 0 yields " + std::to_string(n) +
                      " identical samples");
    }
    std::vector<std::string> samples;
    samples.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) samples.push_back(run(model, messages, normalized, i));
    return samples;
}

std::vector<std::string> Gateway::sample_n(const std::string& model, const Messages& messages,
                                           int n) {
    return sample_n(model, messages, n, profile_for(model));
}

Transcript Gateway::last_transcript() const {
    std::lock_guard lock(transcript_mutex_);
    return last_transcript_;
}

void Gateway::set_transcript(Transcript transcript) {
    std::lock_guard lock(transcript_mutex_);
    last_transcript_ = std::move(transcript);
}

std::string Gateway::run(const std::string& model, const Messages& messages,
                         DecodingProfile profile, int sample_index) {
    const ModelEndpoint& endpoint = endpoints_.require(model);
    profile = normalize_profile(profile);

    CompletionCall call;
    call.model = model;
    call.messages = messages;
    call.profile = profile;
    call.sample_index = sample_index;
    call.fingerprint = request_fingerprint(model, messages, profile, sample_index);
    call.base_url = endpoint.base_url;
    call.auth_env = endpoint.auth_env;

    if (options_.replay_dir) {
        auto response = read_replay_fixture(*options_.replay_dir, call.fingerprint);
        if (!response) throw ReplayMissError(call.fingerprint);
        set_transcript({call.fingerprint, *response, std::chrono::milliseconds{0}, 0});
        return *response;
    }

    if (!backend_) {
        throw UsageError("model '" + model + "' has no backend and no replay store");
    }

    const auto start = std::chrono::steady_clock::now();
    std::string last_error;
    for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
        try {
            std::string response;
            {
                SemaphoreGuard guard(*static_cast<Semaphore*>(limiter_.get()));
                response = backend_->send(call);
            }
            const auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(
                std::chrono::steady_clock::now() - start);
            set_transcript({call.fingerprint, response, latency, attempt});
            if (options_.record_dir) {
                write_replay_fixture(*options_.record_dir, call, response, latency, attempt);
            }
            return response;
        } catch (const TransportError& ex) {
            last_error = ex.what();
            if (attempt == options_.max_attempts) break;
            const auto delay = std::chrono::milliseconds(static_cast<long long>(
                static_cast<double>(options_.backoff_base.count()) *
                std::pow(options_.backoff_factor, attempt - 1)));
            options_.sleeper(delay);
        }
    }
    throw ProviderUnavailableError("provider unavailable after " +
                                   std::to_string(options_.max_attempts) +
                                   " attempts (model '" + model + "'): " + last_error);
}

}  // namespace apprag
