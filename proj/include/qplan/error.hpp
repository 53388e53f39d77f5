#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qplan {

enum class ErrorCode {
    InvalidInput,
    UnsupportedDimension,
    RankExceedsDimension,
    InvalidBlockSize,
    ShapeError,
    NoFeasibleConfig,
    EmptyActiveSet,
    InfeasibleBudget,
    EmptyTrace,
    FormatError,
    CorruptFile,
    IoError,
    ValidationError,
};

constexpr std::string_view to_string(ErrorCode code)
{
    switch (code) {
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::UnsupportedDimension: return "UnsupportedDimension";
    case ErrorCode::RankExceedsDimension: return "RankExceedsDimension";
    case ErrorCode::InvalidBlockSize: return "InvalidBlockSize";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::NoFeasibleConfig: return "NoFeasibleConfig";
    case ErrorCode::EmptyActiveSet: return "EmptyActiveSet";
    case ErrorCode::InfeasibleBudget: return "InfeasibleBudget";
    case ErrorCode::EmptyTrace: return "EmptyTrace";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ValidationError: return "ValidationError";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code)
    {
    }

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace qplan
