#pragma once

#include <stdexcept>
#include <string>

namespace vitp {

// One exception type for the whole library. The kind decides the CLI exit
// code (config -> 1, missing artifact -> 2, everything else -> 3).
class Error : public std::runtime_error {
public:
    enum class Kind {
        config,      // bad config key/value, invariant violation
        input,       // bad runtime input (labels out of range, malformed rows)
        shape,       // tensor dimension mismatch
        usage,       // API misuse (e.g. backward on a non-scalar)
        format,      // malformed file (dataset, checkpoint magic)
        version,     // checkpoint version mismatch
        truncation,  // file shorter than its own header promises
        missing,     // required artifact not found (checkpoint path)
        internal,    // broken internal invariant, training divergence
    };

    Error(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}

    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

[[noreturn]] inline void fail(Error::Kind kind, const std::string& msg) {
    throw Error(kind, msg);
}

} // namespace vitp
