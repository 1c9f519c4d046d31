#pragma once

#include <stdexcept>
#include <string>

namespace forgeloc {

// Error taxonomy shared by all modules. The CLI maps these onto exit codes:
// usage/config -> 2, data/parse/domain -> 3, missing artifact -> 4, rest -> 5.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
    ParseError(const std::string& what, long line) : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line(line) {}
    long line;
};

struct MissingArtifactError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace forgeloc
