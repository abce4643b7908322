#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fedmme {

enum class ErrorCode {
    // dataset
    ManifestMalformed,
    SizeMismatch,
    LabelOutOfRange,
    NonFiniteValue,
    IoFailure,
    InvalidSpec,
    // partition
    TooFewSamples,
    MissingClass,
    PlanDatasetMismatch,
    // model
    InvalidConfig,
    ShapeMismatch,
    EmptyBatch,
    NonFiniteLoss,
    EmptyShard,
    // federation
    ProtocolViolation,
    HeterogeneousShapes,
    // ingest service
    Timeout,
    BadStatus,
    DimMismatch,
    MalformedResponse,
    // experiment
    InvalidAxisValue,
};

std::string_view to_string(ErrorCode code);

/// True for errors caused by bad user input rather than a failure while running.
bool is_validation_error(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), detail_(what) {}

    ErrorCode code() const noexcept { return code_; }
    /// The message without the leading code name.
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorCode code_;
    std::string detail_;
};

} // namespace fedmme
