#pragma once

#include <stdexcept>
#include <string>

namespace derivare {

// Every failure the library can signal, so callers and tests can branch on
// the kind instead of matching message text.
enum class ErrorKind {
    // core
    ArityMismatch,
    UnknownLabel,
    UnknownRule,
    TreeAlreadyFinal,
    EmptyConclusion,
    // ingest / config
    IoError,
    EmptyCorpus,
    InvalidConfig,
    // provider
    TransportError,
    RateLimited,
    ScriptExhausted,
    ScriptMismatch,
    DimensionMismatch,
    // retrieval
    EmptyInput,
    ZeroVector,
    // engine
    EmptyHypotheses,
    MalformedLine,
    BadFinalityMarker,
    ForwardReference,
    MissingFinal,
    StepsAfterFinal,
    StepBudgetExceeded,
    ContextOverflow,
    // eval
    MissingReference,
    NoResultMarker,
    ScoreOutOfRange,
    AllRecordsFailed,
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message), kind_(kind),
          message_(message) {}

    ErrorKind kind() const { return kind_; }

    // The message without the kind prefix that what() carries.
    const std::string& message() const { return message_; }

private:
    ErrorKind kind_;
    std::string message_;
};

// Provider/transport failures map to a distinct process exit code.
bool is_provider_failure(ErrorKind kind);

} // namespace derivare
