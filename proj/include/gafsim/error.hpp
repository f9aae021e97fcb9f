#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gafsim
{

enum class ErrorCode
{
    InvalidArgument,
    QuadratureFailure,
    NoBracket,
    DivisionByZeroMass,
    TruncationBudgetExceeded,
    OutOfCertifiedDomain,
    UnsupportedWeight,
    CoverageFailure,
    RegionNotPadded,
    UnboundedDensity,
    BoundaryZeroSuspected,
    NewtonDivergence,
    SupportEscapesRegion,
    InsufficientHoles,
    InsufficientDeviations,
    PreconditionFailed,
    TooManyFlaggedTrials,
    ConfigError,
};

constexpr std::string_view to_string(ErrorCode code)
{
    switch (code)
    {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::QuadratureFailure: return "QuadratureFailure";
        case ErrorCode::NoBracket: return "NoBracket";
        case ErrorCode::DivisionByZeroMass: return "DivisionByZeroMass";
        case ErrorCode::TruncationBudgetExceeded: return "TruncationBudgetExceeded";
        case ErrorCode::OutOfCertifiedDomain: return "OutOfCertifiedDomain";
        case ErrorCode::UnsupportedWeight: return "UnsupportedWeight";
        case ErrorCode::CoverageFailure: return "CoverageFailure";
        case ErrorCode::RegionNotPadded: return "RegionNotPadded";
        case ErrorCode::UnboundedDensity: return "UnboundedDensity";
        case ErrorCode::BoundaryZeroSuspected: return "BoundaryZeroSuspected";
        case ErrorCode::NewtonDivergence: return "NewtonDivergence";
        case ErrorCode::SupportEscapesRegion: return "SupportEscapesRegion";
        case ErrorCode::InsufficientHoles: return "InsufficientHoles";
        case ErrorCode::InsufficientDeviations: return "InsufficientDeviations";
        case ErrorCode::PreconditionFailed: return "PreconditionFailed";
        case ErrorCode::TooManyFlaggedTrials: return "TooManyFlaggedTrials";
        case ErrorCode::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

/// Library-wide exception; the code identifies the failure mode.
class Error : public std::runtime_error
{
  public:
    Error(ErrorCode code, std::string const& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what)
        , code_(code)
    {
    }

    ErrorCode code() const noexcept { return code_; }

  private:
    ErrorCode code_;
};

#define GAFSIM_REQUIRE(cond, code, msg)                                        \
    do                                                                         \
    {                                                                          \
        if (!(cond))                                                           \
            throw ::gafsim::Error((code), (msg));                              \
    } while (0)

}  // namespace gafsim
