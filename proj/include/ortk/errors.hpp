#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace ortk {

/* Round-trip-exact decimal rendering, shared by error messages, CSV output
 * and the config serializer. */
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

/* Error taxonomy mirrors the CLI exit codes:
 *   ConfigError  -> 2   bad configuration / malformed input
 *   AuditError   -> 1   a post-hoc validation gate failed
 *   NumericError -> 3   a solver or iteration failed
 * ShapeError is a usage bug (mismatched dimensions) and maps to 2 as well. */

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct ShapeError : ConfigError {
    explicit ShapeError(const std::string& what) : ConfigError(what) {}
};

struct AuditError : std::runtime_error {
    explicit AuditError(const std::string& what) : std::runtime_error(what) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ortk
