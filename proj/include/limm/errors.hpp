#pragma once

#include <stdexcept>
#include <string>

namespace limm {

enum class ErrorCode {
    InvalidArgument,
    InvalidDimension,
    NotAvailable,
    DegenerateGrid,
    Inadmissible,
    InvalidHistory,
    SingularMatrix,
    ConvergenceFailure,
    MinimumStepsize,
    StepFailure,
    Io,
    Parse,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Raised by lu_factor; column is the zero-based pivot column that vanished.
class SingularMatrixError : public Error {
public:
    SingularMatrixError(int column, const std::string& what)
        : Error(ErrorCode::SingularMatrix, what), column_(column) {}
    int column() const noexcept { return column_; }

private:
    int column_;
};

}  // namespace limm
