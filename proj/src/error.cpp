#include "cascade/error.hpp"

namespace cascade {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::MalformedRecord: return "MalformedRecord";
        case ErrorKind::DuplicateId: return "DuplicateId";
        case ErrorKind::UnknownLabel: return "UnknownLabel";
        case ErrorKind::EmptySplit: return "EmptySplit";
        case ErrorKind::EmptyTrainSplit: return "EmptyTrainSplit";
        case ErrorKind::NonFiniteInput: return "NonFiniteInput";
        case ErrorKind::InvalidDistribution: return "InvalidDistribution";
        case ErrorKind::BackendUnavailable: return "BackendUnavailable";
        case ErrorKind::MissingPrediction: return "MissingPrediction";
        case ErrorKind::ParseFailure: return "ParseFailure";
        case ErrorKind::AuthMissing: return "AuthMissing";
        case ErrorKind::HttpStatus: return "HttpStatus";
        case ErrorKind::MissingRegionTag: return "MissingRegionTag";
        case ErrorKind::DuplicateBackend: return "DuplicateBackend";
        case ErrorKind::UnknownBackend: return "UnknownBackend";
        case ErrorKind::InvalidPlan: return "InvalidPlan";
        case ErrorKind::InfeasibleBudget: return "InfeasibleBudget";
        case ErrorKind::InconsistentLabelSpace: return "InconsistentLabelSpace";
        case ErrorKind::IncompleteLmCoverage: return "IncompleteLmCoverage";
        case ErrorKind::ProvenanceMismatch: return "ProvenanceMismatch";
        case ErrorKind::SchemaError: return "SchemaError";
        case ErrorKind::TraceDatasetMismatch: return "TraceDatasetMismatch";
        case ErrorKind::InvalidConfig: return "InvalidConfig";
        case ErrorKind::Io: return "Io";
    }
    return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& message, int code)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), code_(code) {}

}  // namespace cascade
