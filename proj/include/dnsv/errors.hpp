#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace dnsv {

// Base class for all toolkit errors. `code()` is a stable machine-readable
// identifier; the CLI emits it on its error line.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

struct UtteranceTooShort : Error {
    explicit UtteranceTooShort(const std::string& m) : Error("UtteranceTooShort", m) {}
};

struct DegenerateNorm : Error {
    explicit DegenerateNorm(const std::string& m) : Error("DegenerateNorm", m) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error("ConfigError", m) {}
};

struct TapPointUnavailable : Error {
    explicit TapPointUnavailable(const std::string& m) : Error("TapPointUnavailable", m) {}
};

struct TrainingDataError : Error {
    explicit TrainingDataError(const std::string& m) : Error("TrainingDataError", m) {}
};

struct ModelDegenerate : Error {
    explicit ModelDegenerate(const std::string& m) : Error("ModelDegenerate", m) {}
};

struct MetricUndefined : Error {
    explicit MetricUndefined(const std::string& m) : Error("MetricUndefined", m) {}
};

struct DomainError : Error {
    explicit DomainError(const std::string& m) : Error("DomainError", m) {}
};

struct IoError : Error {
    explicit IoError(const std::string& m) : Error("IoError", m) {}
};

}  // namespace dnsv
