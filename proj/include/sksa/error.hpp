#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sksa {

// Numeric values are mirrored by sksa_status in sksa.h; keep them in sync.
enum class ErrorCode : int {
    Ok = 0,
    InvalidArgument = 1,
    ZeroVector = 2,
    NonFinite = 3,
    DimensionMismatch = 4,
    DuplicateId = 5,
    EmptyIndex = 6,
    IoFailure = 7,
    BadMagic = 8,
    UnsupportedVersion = 9,
    TruncatedFile = 10,
    BackendTimeout = 11,
    MalformedResponse = 12,
    BackendRefusal = 13,
    BackendError = 14,
    ParseFailure = 15,
    UnknownTool = 16,
    BadArguments = 17,
    MaxIterationsExceeded = 18,
    EmptyUpdate = 19,
    MissingSketch = 20,
    UnknownMode = 21,
    FixtureMissing = 22,
    Busy = 23,
    UnknownSession = 24,
    ParseError = 25,
    MissingField = 26,
    ImageReadError = 27,
    EmptyCatalog = 28,
    BuildInterrupted = 29,
    NotFound = 30,
    JudgeConflict = 31,
};

std::string_view error_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_name(code)) + ": " + message), code_(code), detail_(message) {}

    ErrorCode code() const noexcept { return code_; }
    /// Message without the code-name prefix.
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorCode code_;
    std::string detail_;
};

}  // namespace sksa
