#pragma once

#include <stdexcept>
#include <string>

namespace rfrec {

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct DegenerateClientError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown when a model update produces NaN/Inf; carries client and iteration.
struct DivergenceError : std::runtime_error {
    int client;
    long long iter;
    DivergenceError(int client_, long long iter_, const std::string& what_)
        : std::runtime_error(what_), client(client_), iter(iter_) {}
};

}  // namespace rfrec
