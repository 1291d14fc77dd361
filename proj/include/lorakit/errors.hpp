#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lorakit {

// Base class for every error raised by the toolkit. Subclasses map to the
// exit-code categories the CLI reports.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shape disagreement (e.g. matmul inner dimensions).
struct DimensionError : Error {
    using Error::Error;
};

// Invalid configuration value or combination.
struct ConfigError : Error {
    using Error::Error;
};

// Bad input data: malformed files, unknown ids, out-of-range labels.
struct DataError : Error {
    using Error::Error;
};

// API misuse: violated precondition that is not a data or config problem.
struct ContractError : Error {
    using Error::Error;
};

// An operation produced NaN or Inf.
struct NumericError : Error {
    using Error::Error;
};

// Malformed structured text, with the position that broke the parse.
struct ParseError : Error {
    ParseError(const std::string& msg, std::size_t line, std::size_t column)
        : Error(msg + " (line " + std::to_string(line) + ", column " + std::to_string(column) + ")"),
          line(line),
          column(column) {}

    std::size_t line = 0;
    std::size_t column = 0;
};

}  // namespace lorakit
