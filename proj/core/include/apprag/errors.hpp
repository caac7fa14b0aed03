#pragma once

#include <stdexcept>
#include <string>

namespace apprag {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input: a bad record, a bad file, an invalid template.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Filesystem or stream failure.
class IoError : public Error {
public:
    using Error::Error;
};

/// A caller-side precondition was violated (maps to CLI exit code 2).
class UsageError : public Error {
public:
    using Error::Error;
};

/// Retryable transport-level failure while talking to a provider.
class TransportError : public Error {
public:
    using Error::Error;
};

/// Non-retryable provider failure (bad request, rejected auth, ...).
class ProviderError : public Error {
public:
    using Error::Error;
};

/// Retries exhausted; the provider could not be reached.
class ProviderUnavailableError : public ProviderError {
public:
    using ProviderError::ProviderError;
};

/// The replay store has no fixture for a request fingerprint.
class ReplayMissError : public Error {
public:
    explicit ReplayMissError(std::string fingerprint)
        : Error("replay miss: no fixture for fingerprint " + fingerprint),
          fingerprint_(std::move(fingerprint)) {}

    const std::string& fingerprint() const { return fingerprint_; }

private:
    std::string fingerprint_;
};

}  // namespace apprag
