#pragma once

#include <stdexcept>
#include <string>

namespace vitssp {

// Error taxonomy mirrors the CLI exit codes: config 2, data 3, shape 4,
// everything else internal 5.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct DataError : Error {
    using Error::Error;
};

struct ShapeError : Error {
    using Error::Error;
};

// Forward op produced NaN/Inf from finite inputs, or a numeric contract broke.
struct NumericError : Error {
    using Error::Error;
};

// API misuse: double backward, non-scalar loss, mismatched accumulation, ...
struct ContractError : Error {
    using Error::Error;
};

inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const DataError*>(&e)) return 3;
    if (dynamic_cast<const ShapeError*>(&e)) return 4;
    return 5;
}

}  // namespace vitssp
