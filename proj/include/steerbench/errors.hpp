#pragma once

#include <stdexcept>
#include <string>

namespace steerbench {

// Caller broke a precondition (dimension mismatch, index out of range, ...).
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Input is well-formed but mathematically degenerate (zero norm, zero variance).
class DegenerateInputError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Archive, config, tokenizer or dataset could not be loaded.
class LoadError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Generation or forward pass would exceed the model context.
class ContextOverflowError : public std::length_error {
public:
    using std::length_error::length_error;
};

// An external backend (judge, grammar checker, language detector) is missing.
class BackendUnavailableError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string &what) {
    if (!cond) throw ContractError(what);
}

} // namespace steerbench
