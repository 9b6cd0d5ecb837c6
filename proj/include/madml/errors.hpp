#pragma once

#include <stdexcept>
#include <string>

namespace madml {

// Error categories map onto CLI exit codes: usage/config -> 2,
// data validation -> 3, numerical/computation failure -> 1.
enum class ErrorKind { usage, data, compute };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void throw_usage(const std::string& msg) { throw Error(ErrorKind::usage, msg); }
[[noreturn]] inline void throw_data(const std::string& msg) { throw Error(ErrorKind::data, msg); }
[[noreturn]] inline void throw_compute(const std::string& msg) { throw Error(ErrorKind::compute, msg); }

}  // namespace madml
