#pragma once

#include <stdexcept>
#include <string>

namespace sa {

// Error categories. The C API and the CLI exit codes are derived from these,
// so additions here must be mirrored in capi.h.
enum class ErrKind {
    config,
    data,
    io,
    dimension,
    numeric,
    contract,
    label,
    batch_size,
    metric,
};

class Error : public std::runtime_error {
public:
    Error(ErrKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrKind kind() const noexcept { return kind_; }

private:
    ErrKind kind_;
};

[[noreturn]] inline void fail(ErrKind kind, const std::string& msg) { throw Error(kind, msg); }

inline void require(bool cond, ErrKind kind, const std::string& msg) {
    if (!cond) fail(kind, msg);
}

}  // namespace sa
