#pragma once

#include <stdexcept>
#include <string>

namespace moeplace {

// Bad parameters or configuration (CLI exit code 2).
class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Disconnected or otherwise unusable cluster graph.
class TopologyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// No placement satisfies the capacity constraints (CLI exit code 3).
class InfeasibleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input file (CLI exit code 4). Line is 1-based, 0 when unknown.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : std::runtime_error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
          line_(line) {}

    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

// File could not be opened or written (CLI exit code 4).
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace moeplace
