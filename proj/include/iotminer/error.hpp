#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace iotminer {

enum class ErrorCode {
    // ingestion
    NoDelimiterFound,
    NoTimestampColumn,
    TimestampParseError,
    RaggedRow,
    NoSensorColumns,
    UnknownChannel,
    // featurization
    SeriesTooShort,
    NonPositiveDt,
    EmptySeries,
    ColumnCountMismatch,
    MissingValues,
    // clustering
    KExceedsN,
    UndefinedIndex,
    AllConfigsDegenerate,
    // profiling
    EmptyCluster,
    DegenerateRank,
    // labeling
    MissingContext,
    AuthError,
    RateLimited,
    Timeout,
    MalformedResponse,
    BackendError,
    MissingCluster,
    DuplicateCluster,
    UnparseableResponse,
    EmptyAfterSanitize,
    AmbiguousLabel,
    // eventlog
    UnlabeledCluster,
    LengthMismatch,
    EmptyTimeline,
    XesParseError,
    // evaluation
    EmptyInstances,
    ProviderUnavailable,
    // pipeline
    InvalidConfig,
    IoError,
};

inline std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::NoDelimiterFound: return "NoDelimiterFound";
    case ErrorCode::NoTimestampColumn: return "NoTimestampColumn";
    case ErrorCode::TimestampParseError: return "TimestampParseError";
    case ErrorCode::RaggedRow: return "RaggedRow";
    case ErrorCode::NoSensorColumns: return "NoSensorColumns";
    case ErrorCode::UnknownChannel: return "UnknownChannel";
    case ErrorCode::SeriesTooShort: return "SeriesTooShort";
    case ErrorCode::NonPositiveDt: return "NonPositiveDt";
    case ErrorCode::EmptySeries: return "EmptySeries";
    case ErrorCode::ColumnCountMismatch: return "ColumnCountMismatch";
    case ErrorCode::MissingValues: return "MissingValues";
    case ErrorCode::KExceedsN: return "KExceedsN";
    case ErrorCode::UndefinedIndex: return "UndefinedIndex";
    case ErrorCode::AllConfigsDegenerate: return "AllConfigsDegenerate";
    case ErrorCode::EmptyCluster: return "EmptyCluster";
    case ErrorCode::DegenerateRank: return "DegenerateRank";
    case ErrorCode::MissingContext: return "MissingContext";
    case ErrorCode::AuthError: return "AuthError";
    case ErrorCode::RateLimited: return "RateLimited";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::MalformedResponse: return "MalformedResponse";
    case ErrorCode::BackendError: return "BackendError";
    case ErrorCode::MissingCluster: return "MissingCluster";
    case ErrorCode::DuplicateCluster: return "DuplicateCluster";
    case ErrorCode::UnparseableResponse: return "UnparseableResponse";
    case ErrorCode::EmptyAfterSanitize: return "EmptyAfterSanitize";
    case ErrorCode::AmbiguousLabel: return "AmbiguousLabel";
    case ErrorCode::UnlabeledCluster: return "UnlabeledCluster";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyTimeline: return "EmptyTimeline";
    case ErrorCode::XesParseError: return "XesParseError";
    case ErrorCode::EmptyInstances: return "EmptyInstances";
    case ErrorCode::ProviderUnavailable: return "ProviderUnavailable";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

/// Single exception type for the library; `code()` identifies the failure class.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

    /// True for failures that originate in a remote language-model or embedding backend.
    bool is_backend_failure() const noexcept {
        switch (code_) {
        case ErrorCode::AuthError:
        case ErrorCode::RateLimited:
        case ErrorCode::Timeout:
        case ErrorCode::MalformedResponse:
        case ErrorCode::BackendError:
        case ErrorCode::ProviderUnavailable:
            return true;
        default:
            return false;
        }
    }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

} // namespace iotminer
