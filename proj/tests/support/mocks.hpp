#pragma once

// Test doubles shared by the unit and acceptance suites.

#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include "apprag/errors.hpp"
#include "apprag/llm.hpp"

namespace apprag::testing {

/// Backend driven by a function of the call; records every call it serves.
class ScriptedBackend final : public Backend {
public:
    using Script = std::function<std::string(const CompletionCall&)>;

    explicit ScriptedBackend(Script script) : script_(std::move(script)) {}

    std::string send(const CompletionCall& call) override {
        std::lock_guard lock(mutex_);
        calls_.push_back(call);
        return script_(call);
    }

    std::string name() const override { return "scripted"; }

    std::vector<CompletionCall> calls() const {
        std::lock_guard lock(mutex_);
        return calls_;
    }

    std::size_t call_count() const {
        std::lock_guard lock(mutex_);
        return calls_.size();
    }

private:
    Script script_;
    std::vector<CompletionCall> calls_;
    mutable std::mutex mutex_;
};

/// Fails the first `failures` sends with TransportError, then delegates.
class FlakyBackend final : public Backend {
public:
    FlakyBackend(int failures, std::string response)
        : failures_(failures), response_(std::move(response)) {}

    std::string send(const CompletionCall&) override {
        std::lock_guard lock(mutex_);
        ++attempts_;
        if (attempts_ <= failures_) throw TransportError("scripted transport failure");
        return response_;
    }

    std::string name() const override { return "flaky"; }

    int attempts() const {
        std::lock_guard lock(mutex_);
        return attempts_;
    }

private:
    int failures_;
    std::string response_;
    int attempts_ = 0;
    mutable std::mutex mutex_;
};

/// Counts sends; used to assert that replay mode never touches the backend.
class CountingBackend final : public Backend {
public:
    std::string send(const CompletionCall&) override {
        std::lock_guard lock(mutex_);
        ++count_;
        return "counted";
    }

    std::string name() const override { return "counting"; }

    int count() const {
        std::lock_guard lock(mutex_);
        return count_;
    }

private:
    int count_ = 0;
    mutable std::mutex mutex_;
};

inline EndpointRegistry one_model(const std::string& name,
                                  ProfileClass cls = ProfileClass::deterministic) {
    EndpointRegistry registry;
    registry.add(name, ModelEndpoint{"", "", cls, 2048});
    return registry;
}

inline GatewayOptions fast_options() {
    GatewayOptions options;
    options.backoff_base = std::chrono::milliseconds(0);
    options.sleeper = [](std::chrono::milliseconds) {};
    options.warn = [](const std::string&) {};
    return options;
}

}  // namespace apprag::testing
