#include "fedmme/errors.hpp"

namespace fedmme {

std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::ManifestMalformed: return "ManifestMalformed";
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::MissingClass: return "MissingClass";
    case ErrorCode::PlanDatasetMismatch: return "PlanDatasetMismatch";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptyShard: return "EmptyShard";
    case ErrorCode::ProtocolViolation: return "ProtocolViolation";
    case ErrorCode::HeterogeneousShapes: return "HeterogeneousShapes";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::BadStatus: return "BadStatus";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::MalformedResponse: return "MalformedResponse";
    case ErrorCode::InvalidAxisValue: return "InvalidAxisValue";
    }
    return "Unknown";
}

bool is_validation_error(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidSpec:
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidAxisValue:
    case ErrorCode::TooFewSamples:
    case ErrorCode::MissingClass:
        return true;
    default:
        return false;
    }
}

} // namespace fedmme
