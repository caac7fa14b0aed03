#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace apprag {

enum class ProfileClass { deterministic, long_form };

std::string to_string(ProfileClass c);
std::optional<ProfileClass> profile_class_from_string(std::string_view s);

/// Decoding settings sent with every request. The class pins the sampling
/// knobs: deterministic decodes at temperature 0 / top_p 1, long_form at
/// temperature 1 (or an explicit positive override) / top_p 1.
struct DecodingProfile {
    double temperature = 0.0;
    double top_p = 1.0;
    int max_output_tokens = 2048;
    ProfileClass profile_class = ProfileClass::deterministic;

    static DecodingProfile deterministic(int max_output_tokens = 2048);
    static DecodingProfile long_form(int max_output_tokens = 4096);
    /// long_form profile with an explicit sampling temperature (> 0).
    static DecodingProfile sampling(double temperature, int max_output_tokens = 2048);
};

/// Reasserts the class invariants on a profile before it leaves the gateway.
DecodingProfile normalize_profile(DecodingProfile profile);

struct ChatMessage {
    std::string role;  // "system" | "user" | "assistant"
    std::string content;
};

using Messages = std::vector<ChatMessage>;

Messages user_message(std::string content);

/// Stable across runs and platforms: FNV-1a 64 over the canonical JSON of
/// (model, messages, profile, sample index), rendered as 16 hex digits.
std::string request_fingerprint(const std::string& model, const Messages& messages,
                                const DecodingProfile& profile, int sample_index);

struct ModelEndpoint {
    std::string base_url;  // may be empty for replay-only models
    std::string auth_env;  // name of the env var holding the token
    ProfileClass profile_class = ProfileClass::deterministic;
    int max_output_tokens = 2048;
};

class EndpointRegistry {
public:
    void add(const std::string& model, ModelEndpoint endpoint);
    bool contains(const std::string& model) const;
    const ModelEndpoint& require(const std::string& model) const;
    std::vector<std::string> models() const;

    /// JSON config: {"models": {"<name>": {"base_url", "auth_env", "class",
    /// "max_output_tokens"}}}.
    static EndpointRegistry from_file(const std::filesystem::path& path);

private:
    std::map<std::string, ModelEndpoint> endpoints_;
};

/// One fully resolved request as handed to a backend.
struct CompletionCall {
    std::string model;
    Messages messages;
    DecodingProfile profile;  // already normalized
    int sample_index = 0;
    std::string fingerprint;
    std::string base_url;
    std::string auth_env;
};

/// Provider transport. Implementations throw TransportError for retryable
/// failures and ProviderError for fatal ones.
class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string send(const CompletionCall& call) = 0;
    virtual std::string name() const = 0;
};

/// OpenAI-compatible /chat/completions client over HTTP.
std::shared_ptr<Backend> make_http_backend(std::chrono::milliseconds timeout =
                                               std::chrono::milliseconds(120000));

struct Transcript {
    std::string fingerprint;
    std::string response;
    std::chrono::milliseconds latency{0};
    int attempts = 1;
};

struct GatewayOptions {
    int max_attempts = 3;
    std::chrono::milliseconds backoff_base{1000};
    double backoff_factor = 2.0;
    int parallelism = 4;
    std::optional<std::filesystem::path> record_dir;  // write fixtures after live calls
    std::optional<std::filesystem::path> replay_dir;  // serve fixtures, never touch the backend
    std::function<void(const std::string&)> warn;     // defaults to stderr
    std::function<void(std::chrono::milliseconds)> sleeper;  // injectable for tests
};

/// Uniform access to chat-completion providers. In replay mode every request
/// resolves against the fixture directory by fingerprint and the backend is
/// never invoked; a missing fixture is an error, not a live fallback.
class Gateway {
public:
    Gateway(EndpointRegistry endpoints, std::shared_ptr<Backend> backend,
            GatewayOptions options = {});

    std::string complete(const std::string& model, const Messages& messages,
                         int sample_index = 0);
    std::string complete(const std::string& model, const Messages& messages,
                         const DecodingProfile& profile, int sample_index = 0);

    /// n independent completions; the sample index keys each one separately
    /// in the replay store.
    std::vector<std::string> sample_n(const std::string& model, const Messages& messages, int n,
                                      const DecodingProfile& profile);
    std::vector<std::string> sample_n(const std::string& model, const Messages& messages, int n);

    /// Default profile for a model, derived from its configured class.
    DecodingProfile profile_for(const std::string& model) const;

    const EndpointRegistry& endpoints() const { return endpoints_; }
    int parallelism() const { return options_.parallelism; }
    bool replay_mode() const { return options_.replay_dir.has_value(); }
    Transcript last_transcript() const;

private:
    std::string run(const std::string& model, const Messages& messages,
                    DecodingProfile profile, int sample_index);
    void set_transcript(Transcript transcript);

    EndpointRegistry endpoints_;
    std::shared_ptr<Backend> backend_;
    GatewayOptions options_;
    Transcript last_transcript_;
    mutable std::mutex transcript_mutex_;
    std::shared_ptr<void> limiter_;  // bounded-parallelism semaphore
};

/// Replay fixture helpers; files are named `<fingerprint>.json`.
void write_replay_fixture(const std::filesystem::path& dir, const CompletionCall& call,
                          const std::string& response, std::chrono::milliseconds latency,
                          int attempts);
std::optional<std::string> read_replay_fixture(const std::filesystem::path& dir,
                                               const std::string& fingerprint);

}  // namespace apprag
