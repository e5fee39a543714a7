#pragma once

#include <stdexcept>
#include <string>

namespace sabma {

// Error taxonomy used across the library. The CLI maps kinds to exit codes:
// Config/Io -> 2, Numeric -> 3.
enum class ErrorKind { Config, Numeric, Io };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail_config(const std::string& msg) { throw Error(ErrorKind::Config, msg); }
[[noreturn]] inline void fail_numeric(const std::string& msg) { throw Error(ErrorKind::Numeric, msg); }
[[noreturn]] inline void fail_io(const std::string& msg) { throw Error(ErrorKind::Io, msg); }

} // namespace sabma
