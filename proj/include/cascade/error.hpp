#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cascade {

enum class ErrorKind {
    MalformedRecord,
    DuplicateId,
    UnknownLabel,
    EmptySplit,
    EmptyTrainSplit,
    NonFiniteInput,
    InvalidDistribution,
    BackendUnavailable,
    MissingPrediction,
    ParseFailure,
    AuthMissing,
    HttpStatus,
    MissingRegionTag,
    DuplicateBackend,
    UnknownBackend,
    InvalidPlan,
    InfeasibleBudget,
    InconsistentLabelSpace,
    IncompleteLmCoverage,
    ProvenanceMismatch,
    SchemaError,
    TraceDatasetMismatch,
    InvalidConfig,
    Io,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Domain error raised by every module. `kind()` is the stable error name
/// surfaced by the CLI; `code()` carries the HTTP status for HttpStatus and
/// the 1-based line number for MalformedRecord, 0 otherwise.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message, int code = 0);

    ErrorKind kind() const noexcept { return kind_; }
    int code() const noexcept { return code_; }

private:
    ErrorKind kind_;
    int code_;
};

}  // namespace cascade
