#include "sksa/error.hpp"

namespace sksa {

std::string_view error_name(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::Ok: return "Ok";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::EmptyIndex: return "EmptyIndex";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::BackendTimeout: return "BackendTimeout";
    case ErrorCode::MalformedResponse: return "MalformedResponse";
    case ErrorCode::BackendRefusal: return "BackendRefusal";
    case ErrorCode::BackendError: return "BackendError";
    case ErrorCode::ParseFailure: return "ParseFailure";
    case ErrorCode::UnknownTool: return "UnknownTool";
    case ErrorCode::BadArguments: return "BadArguments";
    case ErrorCode::MaxIterationsExceeded: return "MaxIterationsExceeded";
    case ErrorCode::EmptyUpdate: return "EmptyUpdate";
    case ErrorCode::MissingSketch: return "MissingSketch";
    case ErrorCode::UnknownMode: return "UnknownMode";
    case ErrorCode::FixtureMissing: return "FixtureMissing";
    case ErrorCode::Busy: return "Busy";
    case ErrorCode::UnknownSession: return "UnknownSession";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::MissingField: return "MissingField";
    case ErrorCode::ImageReadError: return "ImageReadError";
    case ErrorCode::EmptyCatalog: return "EmptyCatalog";
    case ErrorCode::BuildInterrupted: return "BuildInterrupted";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::JudgeConflict: return "JudgeConflict";
    }
    return "Unknown";
}

}  // namespace sksa
