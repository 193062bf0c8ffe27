#pragma once

#include <stdexcept>
#include <string>

namespace titan {

// Raised when vector or matrix dimensions do not compose.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class LabelError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Candidate set or plan cannot produce a batch.
class SelectionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class StatsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// The closed-form decomposition is undefined for the given plan.
class DecompositionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Exhaustive search would exceed the desk-scale enumeration budget.
class GuardError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid experiment configuration. `key()` names the offending entry.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& message)
        : std::runtime_error(key.empty() ? message : key + ": " + message), key_(std::move(key)) {}

    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

}  // namespace titan
