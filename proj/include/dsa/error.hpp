#pragma once

#include <stdexcept>
#include <string>

namespace dsa {

// Error taxonomy. Shape/config/contract violations are programmer or
// configuration mistakes; parse/io/numeric are runtime data problems.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct EmptySequenceError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct BatchSizeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace dsa
