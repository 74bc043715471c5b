#pragma once

#include <stdexcept>
#include <string>

namespace vaal {

/// Invalid or inconsistent configuration. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition.
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Non-finite values or otherwise impossible arithmetic. Maps to exit code 3.
class NumericFailure : public std::runtime_error {
public:
    explicit NumericFailure(const std::string& what, long long batch_index = -1)
        : std::runtime_error(what), batch_index_(batch_index) {}

    long long batch_index() const noexcept { return batch_index_; }

private:
    long long batch_index_;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Service-level errors; each maps onto one HTTP status.
class NotFound : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Conflict : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class PreconditionFailed : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& what) {
    if (!ok) throw ContractViolation(what);
}

}  // namespace vaal
