#pragma once

#include <stdexcept>
#include <string>

namespace spinefuse {

/// Broad failure class; the CLI maps each one to its exit code.
enum class ErrorKind {
    config,   // bad parameters or violated preconditions (exit 2)
    data,     // malformed or missing input data (exit 3)
    numeric,  // degenerate geometry or singular systems (exit 4)
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail_config(const std::string& msg) { throw Error(ErrorKind::config, msg); }
[[noreturn]] inline void fail_data(const std::string& msg) { throw Error(ErrorKind::data, msg); }
[[noreturn]] inline void fail_numeric(const std::string& msg) { throw Error(ErrorKind::numeric, msg); }

inline int exit_code(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::config: return 2;
    case ErrorKind::data: return 3;
    case ErrorKind::numeric: return 4;
    }
    return 1;
}

} // namespace spinefuse
