#pragma once

#include <stdexcept>
#include <string>

namespace mgi {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Bad command line, bad config file, contradictory options. Exit code 1.
class UsageError : public Error {
public:
    explicit UsageError(const std::string& what) : Error(what) {}
};

/// Unreadable, malformed or inconsistent input data. Exit code 2.
class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(what) {}
};

/// Numeric failure during training or evaluation (NaN loss etc). Exit code 3.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(what) {}
};

} // namespace mgi
