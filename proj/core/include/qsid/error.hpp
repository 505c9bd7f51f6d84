#pragma once

#include <stdexcept>
#include <string>

namespace qsid {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or out-of-range input data. Message names row/column when known.
class ParseError : public Error {
public:
    ParseError(std::size_t row, std::size_t column, const std::string& what)
        : Error("row " + std::to_string(row) + ", column " + std::to_string(column) + ": " + what),
          row_(row),
          column_(column) {}
    explicit ParseError(const std::string& what) : Error(what) {}

    std::size_t row() const noexcept { return row_; }
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t row_ = 0;
    std::size_t column_ = 0;
};

/// Every row of the exam was removed by preprocessing.
class EmptyExamError : public Error {
public:
    using Error::Error;
};

/// A local median IM of zero makes collusion scores undefined.
class DegenerateExamError : public Error {
public:
    DegenerateExamError(std::size_t lo_rank, std::size_t hi_rank)
        : Error("local median IM is zero for test-score ranks " + std::to_string(lo_rank) + "-" +
                std::to_string(hi_rank) + "; the exam has no discriminating signal"),
          lo_rank_(lo_rank),
          hi_rank_(hi_rank) {}

    std::size_t lo_rank() const noexcept { return lo_rank_; }
    std::size_t hi_rank() const noexcept { return hi_rank_; }

private:
    std::size_t lo_rank_;
    std::size_t hi_rank_;
};

/// Bad thresholds, grids, anchors or other configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A precondition the caller was responsible for did not hold.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// An internal invariant was violated.
class InternalError : public Error {
public:
    using Error::Error;
};

}  // namespace qsid
